//! Everything the Seller computes, as pure functions of its graph, the
//! session configuration and its secrets. The live session and the Buyer's
//! replay both go through here.

use num_bigint::BigUint;
use rand::{CryptoRng, RngCore};
use thiserror::Error;

use super::config::SessionConfig;
use crate::blindsig::{sign_batch, BlindKeyPair, SigError};
use crate::bloom::{BloomError, BloomFilter, CountingBloomFilter};
use crate::entropy::{derive_multiset, seller_build_counting_filter, EntropyError, MetricId};
use crate::kg::{compute_statistics, parse_ntriples, GraphStatistics, KnowledgeGraph};
use crate::ot::{seller_prepare, seller_respond, OtError, OtRequest, OtResponse, OtSecrets, OtSetup, PartKey};
use crate::partition::{partition, Partition, PartitionError};
use crate::psi::{seller_build_filter, PsiError};
use crate::wire::{WireError, WireReader, WireWriter};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Sig(#[from] SigError),
    #[error(transparent)]
    Psi(#[from] PsiError),
    #[error(transparent)]
    Entropy(#[from] EntropyError),
    #[error(transparent)]
    Bloom(#[from] BloomError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Ot(#[from] OtError),
}

/// Seller keys and the seeds behind every randomized Seller operation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SellerSecrets {
    pub blind_key: BlindKeyPair,
    /// Kept apart from `blind_key`: transfer responses apply the private
    /// exponent to Buyer-chosen values.
    pub ot_key: BlindKeyPair,
    pub ot_seed: u64,
    pub noise_seed: u64,
    pub partition_seed: u64,
}

impl SellerSecrets {
    pub fn generate<R: RngCore + CryptoRng>(bits: usize, rng: &mut R) -> Result<Self, SigError> {
        let blind_key = BlindKeyPair::generate(bits, rng)?;
        let ot_key = BlindKeyPair::generate(bits, rng)?;
        Ok(Self::with_keys(blind_key, ot_key, rng))
    }

    pub fn with_keys<R: RngCore>(blind_key: BlindKeyPair, ot_key: BlindKeyPair, rng: &mut R) -> Self {
        Self {
            blind_key,
            ot_key,
            ot_seed: rng.next_u64(),
            noise_seed: rng.next_u64(),
            partition_seed: rng.next_u64(),
        }
    }
}

/// Deterministic Seller computations over the processed graph.
#[derive(Debug, Clone)]
pub struct SellerEngine<'a> {
    config: &'a SessionConfig,
    graph: KnowledgeGraph,
    secrets: &'a SellerSecrets,
    workers: usize,
}

impl<'a> SellerEngine<'a> {
    /// Applies the agreed exclusions to `graph`.
    pub fn new(config: &'a SessionConfig, graph: &KnowledgeGraph, secrets: &'a SellerSecrets, workers: usize) -> Self {
        Self::processed(config, graph.without_predicates(&config.excluded_predicates), secrets, workers)
    }

    /// `graph` has already had the exclusions applied.
    pub fn processed(config: &'a SessionConfig, graph: KnowledgeGraph, secrets: &'a SellerSecrets, workers: usize) -> Self {
        Self {
            config,
            graph,
            secrets,
            workers: workers.max(1),
        }
    }

    pub fn graph(&self) -> &KnowledgeGraph {
        &self.graph
    }

    pub fn secrets(&self) -> &SellerSecrets {
        self.secrets
    }

    pub fn statistics(&self) -> GraphStatistics {
        compute_statistics(&self.graph)
    }

    pub fn sign(&self, blinded: &[BigUint]) -> Result<Vec<BigUint>, EngineError> {
        Ok(sign_batch(&self.secrets.blind_key, blinded, self.workers)?)
    }

    pub fn psi_filter(&self) -> Result<BloomFilter, EngineError> {
        let c = self.config;
        let mut f = seller_build_filter(&self.graph, &self.secrets.blind_key, c.psi_fpr, c.psi_seed, self.workers)?;
        if c.psi_noise > 0.0 {
            f.add_noise(c.psi_noise, self.secrets.noise_seed)?;
        }
        Ok(f)
    }

    pub fn counting_filter(&self, metric: MetricId) -> Result<CountingBloomFilter, EngineError> {
        let ms = derive_multiset(&self.graph, metric);
        let c = self.config;
        Ok(seller_build_counting_filter(
            &ms,
            &self.secrets.blind_key,
            c.counting_fpr,
            c.counting_seed,
            self.workers,
        )?)
    }

    pub fn partition(&self) -> Result<Partition, EngineError> {
        Ok(partition(
            &self.graph,
            self.config.parts,
            self.config.partition,
            self.secrets.partition_seed,
        )?)
    }

    pub fn ot_setup(&self) -> Result<(OtSetup, OtSecrets), EngineError> {
        let p = self.partition()?;
        Ok(seller_prepare(&p.parts, &self.secrets.ot_key, self.secrets.ot_seed)?)
    }

    pub fn ot_respond(&self, request: &OtRequest, setup: &OtSetup, ot: &OtSecrets) -> Result<OtResponse, EngineError> {
        Ok(seller_respond(request, setup, ot, &self.secrets.ot_key, self.config.buy)?)
    }
}

/// What the Seller releases once the session is over. Every field is
/// optional on the wire so that an incomplete release can still be read and
/// reported as such.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Disclosure {
    /// The graph after exclusions, i.e. the one the session ran on.
    pub graph: Option<KnowledgeGraph>,
    pub blind_key: Option<BlindKeyPair>,
    pub ot_key: Option<BlindKeyPair>,
    pub ot_seed: Option<u64>,
    pub noise_seed: Option<u64>,
    pub partition_seed: Option<u64>,
    pub part_keys: Option<Vec<PartKey>>,
    pub nonces: Option<Vec<BigUint>>,
    pub permutation: Option<Vec<usize>>,
}

fn opt<T>(w: &mut WireWriter, v: &Option<T>, f: impl FnOnce(&mut WireWriter, &T)) {
    match v {
        Some(v) => {
            w.u8(1);
            f(w, v);
        }
        None => {
            w.u8(0);
        }
    }
}

fn read_opt<'a, T>(
    r: &mut WireReader<'a>,
    f: impl FnOnce(&mut WireReader<'a>) -> Result<T, WireError>,
) -> Result<Option<T>, WireError> {
    match r.u8()? {
        0 => Ok(None),
        1 => f(r).map(Some),
        other => Err(WireError::Invalid(format!("presence flag {other}"))),
    }
}

fn read_key(r: &mut WireReader<'_>) -> Result<BlindKeyPair, WireError> {
    BlindKeyPair::decode_from(r).map_err(|e| WireError::Invalid(e.to_string()))
}

impl Disclosure {
    pub fn complete(engine: &SellerEngine<'_>, ot: &OtSecrets, setup: &OtSetup) -> Self {
        let s = engine.secrets();
        Self {
            graph: Some(engine.graph().clone()),
            blind_key: Some(s.blind_key.clone()),
            ot_key: Some(s.ot_key.clone()),
            ot_seed: Some(s.ot_seed),
            noise_seed: Some(s.noise_seed),
            partition_seed: Some(s.partition_seed),
            part_keys: Some(ot.keys.clone()),
            nonces: Some(setup.nonces.clone()),
            permutation: Some(ot.permutation.clone()),
        }
    }

    /// Name of the first absent field, if any.
    pub fn missing_field(&self) -> Option<&'static str> {
        [
            ("graph", self.graph.is_none()),
            ("blind_key", self.blind_key.is_none()),
            ("ot_key", self.ot_key.is_none()),
            ("ot_seed", self.ot_seed.is_none()),
            ("noise_seed", self.noise_seed.is_none()),
            ("partition_seed", self.partition_seed.is_none()),
            ("part_keys", self.part_keys.is_none()),
            ("nonces", self.nonces.is_none()),
            ("permutation", self.permutation.is_none()),
        ]
        .into_iter()
        .find(|(_, missing)| *missing)
        .map(|(name, _)| name)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = WireWriter::new();
        opt(&mut w, &self.graph, |w, g| {
            w.str(&g.to_ntriples());
        });
        opt(&mut w, &self.blind_key, |w, k| k.encode_into(w));
        opt(&mut w, &self.ot_key, |w, k| k.encode_into(w));
        for seed in [self.ot_seed, self.noise_seed, self.partition_seed] {
            opt(&mut w, &seed, |w, s| {
                w.u64(*s);
            });
        }
        opt(&mut w, &self.part_keys, |w, keys| {
            w.u32(keys.len() as u32);
            for k in keys {
                w.raw(k);
            }
        });
        opt(&mut w, &self.nonces, |w, nonces| {
            w.u32(nonces.len() as u32);
            for n in nonces {
                w.biguint(n);
            }
        });
        opt(&mut w, &self.permutation, |w, perm| {
            w.u32(perm.len() as u32);
            for p in perm {
                w.u32(*p as u32);
            }
        });
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = WireReader::new(bytes);
        let graph = read_opt(&mut r, |r| {
            let text = r.str()?;
            parse_ntriples(text)
                .map(|p| p.graph)
                .map_err(|e| WireError::Invalid(e.to_string()))
        })?;
        let blind_key = read_opt(&mut r, read_key)?;
        let ot_key = read_opt(&mut r, read_key)?;
        let ot_seed = read_opt(&mut r, WireReader::u64)?;
        let noise_seed = read_opt(&mut r, WireReader::u64)?;
        let partition_seed = read_opt(&mut r, WireReader::u64)?;
        let part_keys = read_opt(&mut r, |r| {
            let n = r.count(32)?;
            (0..n).map(|_| r.array::<32>()).collect()
        })?;
        let nonces = read_opt(&mut r, |r| {
            let n = r.count(4)?;
            (0..n).map(|_| r.biguint()).collect()
        })?;
        let permutation = read_opt(&mut r, |r| {
            let n = r.count(4)?;
            (0..n).map(|_| r.u32().map(|v| v as usize)).collect()
        })?;
        r.finish()?;
        Ok(Self {
            graph,
            blind_key,
            ot_key,
            ot_seed,
            noise_seed,
            partition_seed,
            part_keys,
            nonces,
            permutation,
        })
    }

    /// Rebuilds the Seller secrets from a complete disclosure.
    pub fn secrets(&self) -> Option<SellerSecrets> {
        Some(SellerSecrets {
            blind_key: self.blind_key.clone()?,
            ot_key: self.ot_key.clone()?,
            ot_seed: self.ot_seed?,
            noise_seed: self.noise_seed?,
            partition_seed: self.partition_seed?,
        })
    }
}

/// Deliberate Seller deviations, for exercising detection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tamper {
    /// Flip one bit of the PSI filter before sending it.
    FilterBitFlip,
    /// Report the first statistic 10% higher than computed.
    InflateStatistic,
    /// Answer transfer requests with envelope keys 0 and 1 swapped.
    SwapOtKey,
    /// Corrupt one ciphertext byte of envelope 0.
    ModifyEnvelope,
    /// Leave one statement out of the disclosed graph.
    OmitStatement,
    /// Send the PSI filter before the signed batches.
    FilterBeforeSignatures,
}

impl Tamper {
    /// The five deviations verification is expected to catch.
    pub const DETECTABLE: [Tamper; 5] = [
        Tamper::FilterBitFlip,
        Tamper::OmitStatement,
        Tamper::InflateStatistic,
        Tamper::SwapOtKey,
        Tamper::ModifyEnvelope,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Tamper::FilterBitFlip => "filter-bit-flip",
            Tamper::InflateStatistic => "inflate-statistic",
            Tamper::SwapOtKey => "swap-ot-key",
            Tamper::ModifyEnvelope => "modify-envelope",
            Tamper::OmitStatement => "omit-statement",
            Tamper::FilterBeforeSignatures => "filter-before-signatures",
        }
    }
}
