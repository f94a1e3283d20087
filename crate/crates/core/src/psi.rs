//! Step 2: statement-set intersection through a Bloom filter of signed
//! digests.
//!
//! The Seller inserts `signed_digest(s, sign(s))` for each own statement. The
//! Buyer obtains the same digests for its statements through blind
//! signatures and tests them against the filter.

use num_bigint::BigUint;
use rand::seq::SliceRandom;
use rand::RngCore;
use rayon::prelude::*;
use thiserror::Error;

use crate::blindsig::{
    random_unit, sign_direct_batch, signed_digest, BlindKeyPair, BlindingFactor, PublicKey,
    SigError, Signature,
};
use crate::bloom::{BloomError, BloomFilter, FilterParams};
use crate::kg::KnowledgeGraph;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PsiError {
    #[error("seller misbehavior: {0}")]
    Misbehavior(String),
    #[error("expected {expected} signed values, got {got}")]
    Shape { expected: usize, got: usize },
    #[error(transparent)]
    Sig(#[from] SigError),
    #[error(transparent)]
    Bloom(#[from] BloomError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntersectionResult {
    pub statements: KnowledgeGraph,
    /// Estimated number of items in the Seller filter; `None` when saturated.
    pub filter_cardinality_estimate: Option<f64>,
}

/// Sign-and-digest every statement; digest order follows graph order.
pub fn seller_digests(g: &KnowledgeGraph, keys: &BlindKeyPair, workers: usize) -> Vec<[u8; 32]> {
    let messages: Vec<Vec<u8>> = g.iter().map(|s| s.canonical_bytes()).collect();
    digests_for(&messages, keys, workers)
}

pub(crate) fn digests_for(messages: &[Vec<u8>], keys: &BlindKeyPair, workers: usize) -> Vec<[u8; 32]> {
    let sigs = sign_direct_batch(keys, messages, workers);
    messages
        .iter()
        .zip(&sigs)
        .map(|(m, s)| signed_digest(m, s))
        .collect()
}

pub fn seller_build_filter(
    g: &KnowledgeGraph,
    keys: &BlindKeyPair,
    fpr: f64,
    seed: [u8; 16],
    workers: usize,
) -> Result<BloomFilter, PsiError> {
    let params = FilterParams::optimal(g.len().max(1) as u64, fpr, seed)?;
    let mut filter = BloomFilter::new(params);
    for d in seller_digests(g, keys, workers) {
        filter.insert(&d);
    }
    Ok(filter)
}

#[derive(Debug, Clone)]
enum Slot {
    Item { index: usize, factor: BlindingFactor },
    Decoy { value: BigUint },
}

/// Blinded requests for a list of messages, optionally padded with decoys.
///
/// The wire order is shuffled; the mapping back to message indices and the
/// blinding factors never leave this struct.
#[derive(Debug, Clone)]
pub struct BlindRequestBatch {
    messages: Vec<Vec<u8>>,
    slots: Vec<Slot>,
    blinded: Vec<BigUint>,
}

impl BlindRequestBatch {
    pub fn prepare<R: RngCore>(
        messages: Vec<Vec<u8>>,
        key: &PublicKey,
        decoy_count: usize,
        rng: &mut R,
    ) -> Self {
        let mut slots: Vec<Slot> = Vec::with_capacity(messages.len() + decoy_count);
        for index in 0..messages.len() {
            slots.push(Slot::Item {
                index,
                factor: BlindingFactor::random(key, rng),
            });
        }
        for _ in 0..decoy_count {
            slots.push(Slot::Decoy {
                value: random_unit(key, rng),
            });
        }
        slots.shuffle(rng);
        let blinded = slots
            .par_iter()
            .map(|slot| match slot {
                Slot::Item { index, factor } => key.blind(&messages[*index], factor),
                Slot::Decoy { value } => value.clone(),
            })
            .collect();
        Self {
            messages,
            slots,
            blinded,
        }
    }

    pub fn blinded(&self) -> &[BigUint] {
        &self.blinded
    }

    pub fn messages(&self) -> &[Vec<u8>] {
        &self.messages
    }

    pub fn len(&self) -> usize {
        self.blinded.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blinded.is_empty()
    }

    /// Unblinds and verifies every response, decoys included. Returns one
    /// signature per message in message order.
    pub fn finish(&self, key: &PublicKey, signed: &[BigUint]) -> Result<Vec<Signature>, PsiError> {
        if signed.len() != self.slots.len() {
            return Err(PsiError::Shape {
                expected: self.slots.len(),
                got: signed.len(),
            });
        }
        let checked: Vec<Result<Option<(usize, Signature)>, PsiError>> = self
            .slots
            .par_iter()
            .zip(signed)
            .enumerate()
            .map(|(pos, (slot, response))| {
                if response >= key.modulus() {
                    return Err(PsiError::Misbehavior(format!(
                        "response {pos} is not reduced modulo N"
                    )));
                }
                match slot {
                    Slot::Item { index, factor } => {
                        let sig = key.unblind(response, factor);
                        if !key.verify(&self.messages[*index], &sig) {
                            return Err(PsiError::Misbehavior(format!(
                                "signature at request {pos} does not verify"
                            )));
                        }
                        Ok(Some((*index, sig)))
                    }
                    Slot::Decoy { value } => {
                        if key.apply(response) != *value {
                            return Err(PsiError::Misbehavior(format!(
                                "signature at request {pos} does not verify"
                            )));
                        }
                        Ok(None)
                    }
                }
            })
            .collect();
        let mut out: Vec<Option<Signature>> = vec![None; self.messages.len()];
        for r in checked {
            if let Some((index, sig)) = r? {
                out[index] = Some(sig);
            }
        }
        Ok(out.into_iter().map(|s| s.expect("every message has a slot")).collect())
    }
}

/// Blind requests for every statement of `g`, in graph order, plus decoys.
pub fn buyer_prepare_requests<R: RngCore>(
    g: &KnowledgeGraph,
    key: &PublicKey,
    decoy_count: usize,
    rng: &mut R,
) -> BlindRequestBatch {
    let messages = g.iter().map(|s| s.canonical_bytes()).collect();
    BlindRequestBatch::prepare(messages, key, decoy_count, rng)
}

/// Statements of `g` whose signed digest tests positive. `signatures` must be
/// verified and in graph order.
pub fn buyer_compute_intersection(
    g: &KnowledgeGraph,
    signatures: &[Signature],
    filter: &BloomFilter,
) -> Result<IntersectionResult, PsiError> {
    if signatures.len() != g.len() {
        return Err(PsiError::Shape {
            expected: g.len(),
            got: signatures.len(),
        });
    }
    let statements: Vec<_> = g.iter().collect();
    let hits: Vec<bool> = statements
        .par_iter()
        .zip(signatures)
        .map(|(s, sig)| filter.contains(&signed_digest(&s.canonical_bytes(), sig)))
        .collect();
    let statements = statements
        .into_iter()
        .zip(hits)
        .filter(|(_, hit)| *hit)
        .map(|(s, _)| s.clone())
        .collect();
    Ok(IntersectionResult {
        statements,
        filter_cardinality_estimate: filter.estimate_cardinality().ok(),
    })
}
