//! RSA blind signatures with a full-domain hash.
//!
//! A statement is mapped into `Z_N` by [`PublicKey::fdh`]; the signature is
//! `fdh(m)^d mod N`. The Buyer blinds with `r^e`, the Seller signs the blinded
//! value without seeing `m`, and unblinding by `r^{-1}` yields exactly the
//! signature the Seller would have produced on `m` directly.

use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::{CryptoRng, RngCore};
use rayon::prelude::*;
use rsa::traits::{PrivateKeyParts, PublicKeyParts};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::wire::{WireError, WireReader, WireWriter};

pub const MIN_MODULUS_BITS: usize = 2048;
pub const DEFAULT_MODULUS_BITS: usize = 2048;

const FDH_DOMAIN: &[u8] = b"kgtrade/fdh/v1";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SigError {
    #[error("modulus must have at least {MIN_MODULUS_BITS} bits, got {0}")]
    ModulusTooSmall(usize),
    #[error("key generation failed: {0}")]
    KeyGen(String),
    #[error("blinding factor is not invertible modulo N")]
    NotInvertible,
    #[error("value is not below the modulus")]
    OutOfRange,
    #[error("inconsistent key material: {0}")]
    InconsistentKey(String),
    #[error(transparent)]
    Wire(#[from] WireError),
}

fn from_dig(v: &rsa::BigUint) -> BigUint {
    BigUint::from_bytes_be(&v.to_bytes_be())
}

/// Left-pads a big-endian integer to `width` bytes.
pub fn to_fixed_be(v: &BigUint, width: usize) -> Vec<u8> {
    let raw = v.to_bytes_be();
    assert!(raw.len() <= width, "integer wider than {width} bytes");
    let mut out = vec![0u8; width - raw.len()];
    out.extend_from_slice(&raw);
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicKey {
    modulus: BigUint,
    exponent: BigUint,
}

impl PublicKey {
    pub fn new(modulus: BigUint, exponent: BigUint) -> Result<Self, SigError> {
        if modulus.bits() < 3 || exponent < BigUint::from(3u32) {
            return Err(SigError::InconsistentKey("degenerate public key".into()));
        }
        Ok(Self { modulus, exponent })
    }

    pub fn modulus(&self) -> &BigUint {
        &self.modulus
    }

    pub fn exponent(&self) -> &BigUint {
        &self.exponent
    }

    /// Fixed serialization width of values modulo N.
    pub fn width(&self) -> usize {
        (self.modulus.bits() as usize).div_ceil(8)
    }

    /// Full-domain hash: counter-mode SHA-256 expanded to `|N| + 256` bits,
    /// reduced modulo N.
    pub fn fdh(&self, msg: &[u8]) -> BigUint {
        let want = self.width() + 32;
        let mut out = Vec::with_capacity(want + 32);
        let mut counter = 0u32;
        while out.len() < want {
            let mut h = Sha256::new();
            h.update(FDH_DOMAIN);
            h.update(counter.to_be_bytes());
            h.update(msg);
            out.extend_from_slice(&h.finalize());
            counter += 1;
        }
        out.truncate(want);
        BigUint::from_bytes_be(&out) % &self.modulus
    }

    /// `x^e mod N`.
    pub fn apply(&self, x: &BigUint) -> BigUint {
        x.modpow(&self.exponent, &self.modulus)
    }

    pub fn blind(&self, msg: &[u8], factor: &BlindingFactor) -> BigUint {
        (self.fdh(msg) * self.apply(&factor.value)) % &self.modulus
    }

    pub fn unblind(&self, blind_signature: &BigUint, factor: &BlindingFactor) -> Signature {
        Signature {
            value: (blind_signature * &factor.inverse) % &self.modulus,
            width: self.width(),
        }
    }

    pub fn verify(&self, msg: &[u8], sig: &Signature) -> bool {
        sig.value < self.modulus && self.apply(&sig.value) == self.fdh(msg)
    }

    pub fn encode_into(&self, w: &mut WireWriter) {
        w.biguint(&self.modulus).biguint(&self.exponent);
    }

    pub fn decode_from(r: &mut WireReader<'_>) -> Result<Self, SigError> {
        let modulus = r.biguint()?;
        let exponent = r.biguint()?;
        Self::new(modulus, exponent)
    }
}

/// A random `r` in `[2, N-1]`, invertible modulo N, with its inverse cached.
#[derive(Clone, PartialEq, Eq)]
pub struct BlindingFactor {
    value: BigUint,
    inverse: BigUint,
}

impl std::fmt::Debug for BlindingFactor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("BlindingFactor(..)")
    }
}

impl BlindingFactor {
    pub fn new(value: BigUint, key: &PublicKey) -> Result<Self, SigError> {
        if value < BigUint::from(2u32) || value >= key.modulus {
            return Err(SigError::OutOfRange);
        }
        let inverse = value.modinv(&key.modulus).ok_or(SigError::NotInvertible)?;
        Ok(Self { value, inverse })
    }

    pub fn random<R: RngCore + ?Sized>(key: &PublicKey, rng: &mut R) -> Self {
        let two = BigUint::from(2u32);
        loop {
            let r = rng.gen_biguint_range(&two, &key.modulus);
            if let Ok(f) = Self::new(r, key) {
                return f;
            }
        }
    }

    pub fn value(&self) -> &BigUint {
        &self.value
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature {
    value: BigUint,
    width: usize,
}

impl Signature {
    pub fn value(&self) -> &BigUint {
        &self.value
    }

    /// Big-endian, left-padded to the modulus width.
    pub fn to_bytes(&self) -> Vec<u8> {
        to_fixed_be(&self.value, self.width)
    }
}

/// `SHA-256(signature || statement)`: the value both parties insert into or
/// test against the filters.
pub fn signed_digest(message: &[u8], sig: &Signature) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(sig.to_bytes());
    h.update(message);
    h.finalize().into()
}

#[derive(Clone, PartialEq, Eq)]
pub struct BlindKeyPair {
    public: PublicKey,
    private_exponent: BigUint,
    p: BigUint,
    q: BigUint,
    dp: BigUint,
    dq: BigUint,
    q_inv: BigUint,
}

impl std::fmt::Debug for BlindKeyPair {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BlindKeyPair")
            .field("public", &self.public)
            .finish_non_exhaustive()
    }
}

impl BlindKeyPair {
    pub fn generate<R: RngCore + CryptoRng>(bits: usize, rng: &mut R) -> Result<Self, SigError> {
        if bits < MIN_MODULUS_BITS {
            return Err(SigError::ModulusTooSmall(bits));
        }
        let key = rsa::RsaPrivateKey::new(rng, bits).map_err(|e| SigError::KeyGen(e.to_string()))?;
        let primes = key.primes();
        if primes.len() != 2 {
            return Err(SigError::KeyGen(format!("{} prime factors", primes.len())));
        }
        Self::from_components(
            from_dig(key.n()),
            from_dig(key.e()),
            from_dig(key.d()),
            from_dig(&primes[0]),
            from_dig(&primes[1]),
        )
    }

    /// Rebuilds a key from `(N, e, d, p, q)`, checking `N = pq` and
    /// `ed ≡ 1 mod λ(N)`.
    pub fn from_components(
        modulus: BigUint,
        exponent: BigUint,
        private_exponent: BigUint,
        p: BigUint,
        q: BigUint,
    ) -> Result<Self, SigError> {
        let one = BigUint::one();
        if p <= one || q <= one || &p * &q != modulus {
            return Err(SigError::InconsistentKey("N != p·q".into()));
        }
        let lambda = (&p - 1u32).lcm(&(&q - 1u32));
        if (&exponent * &private_exponent) % &lambda != one {
            return Err(SigError::InconsistentKey("e·d != 1 mod λ(N)".into()));
        }
        let q_inv = q
            .modinv(&p)
            .ok_or_else(|| SigError::InconsistentKey("q not invertible mod p".into()))?;
        Ok(Self {
            dp: &private_exponent % (&p - 1u32),
            dq: &private_exponent % (&q - 1u32),
            q_inv,
            public: PublicKey::new(modulus, exponent)?,
            private_exponent,
            p,
            q,
        })
    }

    pub fn public(&self) -> &PublicKey {
        &self.public
    }

    pub fn private_exponent(&self) -> &BigUint {
        &self.private_exponent
    }

    pub fn primes(&self) -> (&BigUint, &BigUint) {
        (&self.p, &self.q)
    }

    /// `x^d mod N` via the CRT; identical to the direct exponentiation.
    pub fn private_apply(&self, x: &BigUint) -> Result<BigUint, SigError> {
        if x >= &self.public.modulus {
            return Err(SigError::OutOfRange);
        }
        let m1 = (x % &self.p).modpow(&self.dp, &self.p);
        let m2 = (x % &self.q).modpow(&self.dq, &self.q);
        let diff = if m1 >= m2 {
            &m1 - &m2
        } else {
            &self.p - ((&m2 - &m1) % &self.p)
        };
        let h = (&self.q_inv * diff) % &self.p;
        Ok(m2 + h * &self.q)
    }

    pub fn sign_direct(&self, msg: &[u8]) -> Signature {
        let value = self
            .private_apply(&self.public.fdh(msg))
            .expect("fdh output is reduced modulo N");
        Signature {
            value,
            width: self.public.width(),
        }
    }

    pub fn sign_blinded(&self, blinded: &BigUint) -> Result<BigUint, SigError> {
        self.private_apply(blinded)
    }

    /// Writes `(N, e, d, p, q)`.
    pub fn encode_into(&self, w: &mut WireWriter) {
        self.public.encode_into(w);
        w.biguint(&self.private_exponent).biguint(&self.p).biguint(&self.q);
    }

    pub fn decode_from(r: &mut WireReader<'_>) -> Result<Self, SigError> {
        let modulus = r.biguint()?;
        let exponent = r.biguint()?;
        let d = r.biguint()?;
        let p = r.biguint()?;
        let q = r.biguint()?;
        Self::from_components(modulus, exponent, d, p, q)
    }
}

/// Signs many blinded values on a pool of `workers` threads. Output order
/// always matches input order.
pub fn sign_batch(
    key: &BlindKeyPair,
    blinded: &[BigUint],
    workers: usize,
) -> Result<Vec<BigUint>, SigError> {
    if blinded.len() < 2 || workers <= 1 {
        return blinded.iter().map(|b| key.sign_blinded(b)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| SigError::KeyGen(e.to_string()))?;
    pool.install(|| blinded.par_iter().map(|b| key.sign_blinded(b)).collect())
}

/// Signs each message directly, in parallel, preserving order.
pub fn sign_direct_batch(key: &BlindKeyPair, messages: &[Vec<u8>], workers: usize) -> Vec<Signature> {
    if messages.len() < 2 || workers <= 1 {
        return messages.iter().map(|m| key.sign_direct(m)).collect();
    }
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(|| messages.par_iter().map(|m| key.sign_direct(m)).collect()),
        Err(_) => messages.iter().map(|m| key.sign_direct(m)).collect(),
    }
}

/// Uniform element of `Z_N*`, used for decoy requests.
pub fn random_unit<R: RngCore + ?Sized>(key: &PublicKey, rng: &mut R) -> BigUint {
    loop {
        let v = rng.gen_biguint_below(&key.modulus);
        if !v.is_zero() && v.gcd(&key.modulus).is_one() {
            return v;
        }
    }
}

#[cfg(test)]
pub(crate) mod test_keys {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use std::sync::OnceLock;

    /// One 2048-bit key per test binary; generation dominates otherwise.
    pub fn shared() -> &'static BlindKeyPair {
        static KEY: OnceLock<BlindKeyPair> = OnceLock::new();
        KEY.get_or_init(|| {
            BlindKeyPair::generate(2048, &mut ChaCha20Rng::seed_from_u64(0x5eed)).unwrap()
        })
    }

    pub fn second() -> &'static BlindKeyPair {
        static KEY: OnceLock<BlindKeyPair> = OnceLock::new();
        KEY.get_or_init(|| {
            BlindKeyPair::generate(2048, &mut ChaCha20Rng::seed_from_u64(0xfeed)).unwrap()
        })
    }
}

#[cfg(test)]
mod tests {
    use super::test_keys::shared;
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use std::collections::HashSet;

    #[test]
    fn keygen_rejects_small_moduli() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        assert_eq!(
            BlindKeyPair::generate(1024, &mut rng).unwrap_err(),
            SigError::ModulusTooSmall(1024)
        );
    }

    #[test]
    fn generated_key_signs_and_verifies() {
        let key = shared();
        assert_eq!(key.public().modulus().bits(), 2048);
        let sig = key.sign_direct(b"test message");
        assert!(key.public().verify(b"test message", &sig));
        assert!(!key.public().verify(b"test messagf", &sig));
        assert_ne!(key.public().modulus(), test_keys::second().public().modulus());
    }

    #[test]
    fn crt_matches_plain_exponentiation() {
        let key = shared();
        let x = key.public().fdh(b"crt");
        let plain = x.modpow(key.private_exponent(), key.public().modulus());
        assert_eq!(key.private_apply(&x).unwrap(), plain);
    }

    #[test]
    fn fdh_is_deterministic_and_reduced() {
        let pk = shared().public();
        assert_eq!(pk.fdh(b"abc"), pk.fdh(b"abc"));
        let mut seen = HashSet::new();
        for i in 0..10_000u32 {
            let msg = i.to_be_bytes();
            let v = pk.fdh(&msg);
            assert!(&v < pk.modulus());
            if i < 256 {
                // distinct 1-byte messages
                assert!(seen.insert(pk.fdh(&[i as u8])));
            }
            seen.insert(v);
        }
        assert_eq!(seen.len(), 10_000 + 256);
    }

    #[test]
    fn blinding_differs_across_factors() {
        let pk = shared().public();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let r1 = BlindingFactor::random(pk, &mut rng);
        let r2 = BlindingFactor::random(pk, &mut rng);
        assert_ne!(pk.blind(b"m", &r1), pk.blind(b"m", &r2));
    }

    #[test]
    fn non_invertible_factor_is_rejected() {
        let key = shared();
        let (p, _) = key.primes();
        assert_eq!(
            BlindingFactor::new(p.clone(), key.public()).unwrap_err(),
            SigError::NotInvertible
        );
        assert_eq!(
            BlindingFactor::new(BigUint::one(), key.public()).unwrap_err(),
            SigError::OutOfRange
        );
    }

    #[test]
    fn signed_digest_parity_and_sensitivity() {
        let key = shared();
        let pk = key.public();
        let msg = b"<http://a> <http://p> <http://b>".to_vec();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let r = BlindingFactor::random(pk, &mut rng);
        let via_buyer = pk.unblind(&key.sign_blinded(&pk.blind(&msg, &r)).unwrap(), &r);
        let via_seller = key.sign_direct(&msg);
        assert_eq!(signed_digest(&msg, &via_buyer), signed_digest(&msg, &via_seller));
        assert_eq!(signed_digest(&msg, &via_seller), signed_digest(&msg, &via_seller));

        let mut other = msg.clone();
        *other.last_mut().unwrap() ^= 1;
        let d1 = signed_digest(&msg, &via_seller);
        let d2 = signed_digest(&other, &key.sign_direct(&other));
        let differing_bits: u32 = d1.iter().zip(&d2).map(|(a, b)| (a ^ b).count_ones()).sum();
        assert!((64..=192).contains(&differing_bits), "{differing_bits} bits differ");
    }

    #[test]
    fn batch_signing_is_order_preserving() {
        let key = shared();
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let values: Vec<BigUint> = (0..24).map(|_| random_unit(key.public(), &mut rng)).collect();
        let serial = sign_batch(key, &values, 1).unwrap();
        let parallel = sign_batch(key, &values, 8).unwrap();
        assert_eq!(serial, parallel);
        assert!(sign_batch(key, &[], 8).unwrap().is_empty());
        let too_big = vec![key.public().modulus().clone()];
        assert_eq!(sign_batch(key, &too_big, 1), Err(SigError::OutOfRange));
    }

    #[test]
    fn key_material_round_trips() {
        let key = shared();
        let mut w = WireWriter::new();
        key.encode_into(&mut w);
        let bytes = w.finish();
        let back = BlindKeyPair::decode_from(&mut WireReader::new(&bytes)).unwrap();
        assert_eq!(&back, key);

        let (p, q) = key.primes();
        let wrong_d = key.private_exponent() + 2u32;
        assert!(matches!(
            BlindKeyPair::from_components(
                key.public().modulus().clone(),
                key.public().exponent().clone(),
                wrong_d,
                p.clone(),
                q.clone()
            ),
            Err(SigError::InconsistentKey(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn unblind_sign_blind_is_direct_signature(msg in any::<Vec<u8>>(), seed in any::<u64>()) {
            let key = shared();
            let pk = key.public();
            let r = BlindingFactor::random(pk, &mut ChaCha20Rng::seed_from_u64(seed));
            let blind_sig = key.sign_blinded(&pk.blind(&msg, &r)).unwrap();
            let sig = pk.unblind(&blind_sig, &r);
            prop_assert_eq!(&sig, &key.sign_direct(&msg));
            prop_assert!(pk.verify(&msg, &sig));
        }
    }
}
