//! Step 4: k-out-of-n oblivious transfer of part keys.
//!
//! Every part is encrypted under its own AES-256 key and sent in shuffled,
//! equal-length envelopes. The keys travel through k parallel runs of an
//! RSA-based 1-out-of-n transfer: the Buyer hides its index `i` in
//! `v = x_i + r^e`, the Seller masks every key `K_t` with
//! `H((v - x_t)^d)`, and only the row matching `i` unmasks to `r`.

use aes::cipher::{block_padding::Pkcs7, BlockDecryptMut, BlockEncryptMut, KeyIvInit};
use num_bigint::{BigUint, RandBigInt};
use num_traits::One;
use rand::seq::{index, SliceRandom};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::blindsig::{to_fixed_be, BlindKeyPair, PublicKey, SigError};
use crate::kg::{parse_ntriples, KnowledgeGraph};
use crate::wire::{WireError, WireReader, WireWriter};

type Aes256CbcEnc = cbc::Encryptor<aes::Aes256>;
type Aes256CbcDec = cbc::Decryptor<aes::Aes256>;

pub const PART_KEY_LEN: usize = 32;
pub type PartKey = [u8; PART_KEY_LEN];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OtError {
    #[error("cannot choose {k} of {n} parts")]
    InvalidChoice { k: usize, n: usize },
    #[error("expected {expected} transfer requests, got {got}")]
    RequestSize { expected: usize, got: usize },
    #[error("request value is not below the modulus")]
    OutOfRange,
    #[error("malformed transfer response: {0}")]
    Shape(String),
    #[error("envelope failed its integrity check")]
    Integrity,
    #[error("seller misbehavior: {0}")]
    Misbehavior(String),
    #[error("part does not parse: {0}")]
    Part(String),
    #[error(transparent)]
    Sig(#[from] SigError),
    #[error(transparent)]
    Wire(#[from] WireError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartEnvelope {
    pub iv: [u8; 16],
    pub ciphertext: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OtSetup {
    pub key: PublicKey,
    pub nonces: Vec<BigUint>,
    pub envelopes: Vec<PartEnvelope>,
}

/// Seller-side secrets, indexed by envelope position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OtSecrets {
    pub keys: Vec<PartKey>,
    /// `permutation[j]` is the part stored in envelope `j`.
    pub permutation: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OtRequest {
    pub values: Vec<BigUint>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OtResponse {
    /// `rows[j][t]`: key `t` masked for request `j`.
    pub rows: Vec<Vec<PartKey>>,
}

#[derive(Debug, Clone)]
pub struct OtBuyerSecrets {
    indices: Vec<usize>,
    blinds: Vec<BigUint>,
}

impl OtBuyerSecrets {
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecoveredPart {
    /// Envelope position.
    pub index: usize,
    pub key: PartKey,
    pub statements: KnowledgeGraph,
}

fn mask(value: &BigUint, width: usize, t: usize, j: usize) -> PartKey {
    let mut h = Sha256::new();
    h.update(to_fixed_be(value, width));
    h.update((t as u32).to_be_bytes());
    h.update((j as u32).to_be_bytes());
    h.finalize().into()
}

fn xor(a: &PartKey, b: &PartKey) -> PartKey {
    let mut out = [0u8; PART_KEY_LEN];
    for (o, (x, y)) in out.iter_mut().zip(a.iter().zip(b)) {
        *o = x ^ y;
    }
    out
}

/// Digest, length, payload, zero padding up to `padded_len` payload bytes.
fn envelope_plaintext(payload: &[u8], padded_len: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(40 + padded_len);
    out.extend_from_slice(&Sha256::digest(payload));
    out.extend_from_slice(&(payload.len() as u64).to_be_bytes());
    out.extend_from_slice(payload);
    out.resize(40 + padded_len, 0);
    out
}

pub fn encrypt_envelope(payload: &[u8], padded_len: usize, key: &PartKey, iv: [u8; 16]) -> PartEnvelope {
    let plaintext = envelope_plaintext(payload, padded_len);
    let ciphertext =
        Aes256CbcEnc::new(key.into(), &iv.into()).encrypt_padded_vec_mut::<Pkcs7>(&plaintext);
    PartEnvelope { iv, ciphertext }
}

/// Returns the payload if `key` opens the envelope and the digest matches.
pub fn decrypt_envelope(envelope: &PartEnvelope, key: &PartKey) -> Result<Vec<u8>, OtError> {
    let plain = Aes256CbcDec::new(key.into(), &envelope.iv.into())
        .decrypt_padded_vec_mut::<Pkcs7>(&envelope.ciphertext)
        .map_err(|_| OtError::Integrity)?;
    if plain.len() < 40 {
        return Err(OtError::Integrity);
    }
    let len = u64::from_be_bytes(plain[32..40].try_into().expect("8 bytes"));
    let end = usize::try_from(len)
        .ok()
        .and_then(|l| l.checked_add(40))
        .filter(|e| *e <= plain.len())
        .ok_or(OtError::Integrity)?;
    let payload = &plain[40..end];
    if Sha256::digest(payload).as_slice() != &plain[..32] || plain[end..].iter().any(|b| *b != 0) {
        return Err(OtError::Integrity);
    }
    Ok(payload.to_vec())
}

/// Encrypts every part under a fresh key and shuffles the envelopes. All
/// randomness comes from `seed`, so the result can be replayed.
pub fn seller_prepare(
    parts: &[KnowledgeGraph],
    ot_key: &BlindKeyPair,
    seed: u64,
) -> Result<(OtSetup, OtSecrets), OtError> {
    let n = parts.len();
    if n == 0 {
        return Err(OtError::InvalidChoice { k: 0, n });
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut permutation: Vec<usize> = (0..n).collect();
    permutation.shuffle(&mut rng);

    let mut keys = Vec::with_capacity(n);
    let mut ivs = Vec::with_capacity(n);
    for _ in 0..n {
        let mut k = [0u8; PART_KEY_LEN];
        let mut iv = [0u8; 16];
        rng.fill_bytes(&mut k);
        rng.fill_bytes(&mut iv);
        keys.push(k);
        ivs.push(iv);
    }
    let modulus = ot_key.public().modulus();
    let mut nonces: Vec<BigUint> = Vec::with_capacity(n);
    while nonces.len() < n {
        let x = rng.gen_biguint_below(modulus);
        if !nonces.contains(&x) {
            nonces.push(x);
        }
    }

    let payloads: Vec<Vec<u8>> = parts.iter().map(|p| p.to_ntriples().into_bytes()).collect();
    let padded_len = payloads.iter().map(Vec::len).max().unwrap_or(0);
    let envelopes = permutation
        .par_iter()
        .zip(keys.par_iter().zip(&ivs))
        .map(|(part, (key, iv))| encrypt_envelope(&payloads[*part], padded_len, key, *iv))
        .collect();

    Ok((
        OtSetup {
            key: ot_key.public().clone(),
            nonces,
            envelopes,
        },
        OtSecrets { keys, permutation },
    ))
}

/// `k` distinct envelope positions drawn uniformly, sorted.
pub fn buyer_choose<R: RngCore + ?Sized>(k: usize, n: usize, rng: &mut R) -> Result<Vec<usize>, OtError> {
    if k == 0 || k > n {
        return Err(OtError::InvalidChoice { k, n });
    }
    let mut chosen = index::sample(rng, n, k).into_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

pub fn buyer_request<R: RngCore + ?Sized>(
    indices: &[usize],
    setup: &OtSetup,
    rng: &mut R,
) -> Result<(OtRequest, OtBuyerSecrets), OtError> {
    let n = setup.nonces.len();
    if indices.is_empty() || indices.iter().any(|i| *i >= n) {
        return Err(OtError::InvalidChoice { k: indices.len(), n });
    }
    let modulus = setup.key.modulus();
    let mut values = Vec::with_capacity(indices.len());
    let mut blinds = Vec::with_capacity(indices.len());
    for &i in indices {
        let r = rng.gen_biguint_range(&BigUint::one(), modulus);
        values.push((&setup.nonces[i] + setup.key.apply(&r)) % modulus);
        blinds.push(r);
    }
    Ok((
        OtRequest { values },
        OtBuyerSecrets {
            indices: indices.to_vec(),
            blinds,
        },
    ))
}

/// Masks every key for every request. The Seller never learns which index a
/// request encodes: this function has no access to it.
pub fn seller_respond(
    request: &OtRequest,
    setup: &OtSetup,
    secrets: &OtSecrets,
    ot_key: &BlindKeyPair,
    expected: usize,
) -> Result<OtResponse, OtError> {
    if request.values.len() != expected {
        return Err(OtError::RequestSize {
            expected,
            got: request.values.len(),
        });
    }
    let modulus = ot_key.public().modulus();
    if request.values.iter().any(|v| v >= modulus) {
        return Err(OtError::OutOfRange);
    }
    let n = secrets.keys.len();
    let width = ot_key.public().width();
    let cells: Vec<(usize, usize)> = (0..request.values.len())
        .flat_map(|j| (0..n).map(move |t| (j, t)))
        .collect();
    let masked: Vec<PartKey> = cells
        .par_iter()
        .map(|(j, t)| {
            let diff = (&request.values[*j] + modulus - &setup.nonces[*t]) % modulus;
            let m = ot_key.private_apply(&diff)?;
            Ok(xor(&secrets.keys[*t], &mask(&m, width, *t, *j)))
        })
        .collect::<Result<_, OtError>>()?;
    Ok(OtResponse {
        rows: masked.chunks(n.max(1)).map(<[PartKey]>::to_vec).collect(),
    })
}

fn check_shape(response: &OtResponse, k: usize, n: usize) -> Result<(), OtError> {
    if response.rows.len() != k {
        return Err(OtError::Shape(format!("{} rows for {k} requests", response.rows.len())));
    }
    if let Some(row) = response.rows.iter().find(|r| r.len() != n) {
        return Err(OtError::Shape(format!("row of {} keys for {n} envelopes", row.len())));
    }
    Ok(())
}

/// Unmasks the chosen keys, opens the chosen envelopes and parses the parts.
pub fn buyer_recover(
    response: &OtResponse,
    secrets: &OtBuyerSecrets,
    setup: &OtSetup,
) -> Result<Vec<RecoveredPart>, OtError> {
    check_shape(response, secrets.indices.len(), setup.envelopes.len())?;
    let width = setup.key.width();
    secrets
        .indices
        .iter()
        .zip(&secrets.blinds)
        .enumerate()
        .map(|(j, (&i, r))| {
            let key = xor(&response.rows[j][i], &mask(r, width, i, j));
            let payload = decrypt_envelope(&setup.envelopes[i], &key).map_err(|_| {
                OtError::Misbehavior(format!("envelope {i} does not open with its transferred key"))
            })?;
            let text = String::from_utf8(payload).map_err(|e| OtError::Part(e.to_string()))?;
            let statements = parse_ntriples(&text)
                .map_err(|e| OtError::Part(e.to_string()))?
                .graph;
            Ok(RecoveredPart {
                index: i,
                key,
                statements,
            })
        })
        .collect()
}

/// Every key the Buyer can compute from its secrets, one row per request.
pub fn buyer_derivable_keys(
    response: &OtResponse,
    secrets: &OtBuyerSecrets,
    setup: &OtSetup,
) -> Result<Vec<Vec<PartKey>>, OtError> {
    check_shape(response, secrets.indices.len(), setup.envelopes.len())?;
    let width = setup.key.width();
    Ok(response
        .rows
        .iter()
        .zip(&secrets.blinds)
        .enumerate()
        .map(|(j, (row, r))| {
            row.iter()
                .enumerate()
                .map(|(t, y)| xor(y, &mask(r, width, t, j)))
                .collect()
        })
        .collect())
}

impl OtSetup {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = WireWriter::new();
        self.key.encode_into(&mut w);
        w.u32(self.nonces.len() as u32);
        for x in &self.nonces {
            w.biguint(x);
        }
        w.u32(self.envelopes.len() as u32);
        for e in &self.envelopes {
            w.raw(&e.iv).bytes(&e.ciphertext);
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, OtError> {
        let mut r = WireReader::new(bytes);
        let key = PublicKey::decode_from(&mut r)?;
        let n = r.count(4)?;
        let nonces = (0..n).map(|_| r.biguint()).collect::<Result<Vec<_>, _>>()?;
        let m = r.count(20)?;
        if m != n {
            return Err(OtError::Shape(format!("{n} nonces for {m} envelopes")));
        }
        let envelopes = (0..m)
            .map(|_| {
                Ok(PartEnvelope {
                    iv: r.array()?,
                    ciphertext: r.bytes()?.to_vec(),
                })
            })
            .collect::<Result<Vec<_>, WireError>>()?;
        r.finish()?;
        Ok(Self {
            key,
            nonces,
            envelopes,
        })
    }
}

impl OtRequest {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = WireWriter::new();
        w.u32(self.values.len() as u32);
        for v in &self.values {
            w.biguint(v);
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, OtError> {
        let mut r = WireReader::new(bytes);
        let n = r.count(4)?;
        let values = (0..n).map(|_| r.biguint()).collect::<Result<Vec<_>, _>>()?;
        r.finish()?;
        Ok(Self { values })
    }
}

impl OtResponse {
    /// `k`, `n`, then the `k × n` masked keys row-major.
    pub fn encode(&self) -> Vec<u8> {
        let n = self.rows.first().map_or(0, Vec::len);
        let mut w = WireWriter::with_capacity(8 + self.rows.len() * n * PART_KEY_LEN);
        w.u32(self.rows.len() as u32).u32(n as u32);
        for row in &self.rows {
            for y in row {
                w.raw(y);
            }
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, OtError> {
        let mut r = WireReader::new(bytes);
        let k = r.u32()? as usize;
        let n = r.u32()? as usize;
        if k.saturating_mul(n).saturating_mul(PART_KEY_LEN) != r.remaining() {
            return Err(OtError::Shape(format!("{k}×{n} grid in {} bytes", r.remaining())));
        }
        let rows = (0..k)
            .map(|_| (0..n).map(|_| r.array()).collect::<Result<Vec<_>, _>>())
            .collect::<Result<Vec<_>, _>>()?;
        r.finish()?;
        Ok(Self { rows })
    }
}
