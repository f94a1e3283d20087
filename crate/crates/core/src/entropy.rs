//! Step 3: entropy-gain metrics over merged multisets.
//!
//! Each metric projects every statement onto one or more elements. The
//! Seller publishes its element counts in a counting Bloom filter keyed by
//! signed digests; the Buyer merges its own counts, minus the part already
//! known to be shared, and estimates the entropy of the union.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::blindsig::{signed_digest, BlindKeyPair, Signature};
use crate::bloom::{BloomError, CountingBloomFilter, FilterParams};
use crate::kg::{KnowledgeGraph, Statement, Term};
use crate::psi::{digests_for, IntersectionResult};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EntropyError {
    #[error("unknown entropy metric {0:?}")]
    UnknownMetric(String),
    #[error("no verified signature for element {0}")]
    MissingSignature(String),
    #[error("counter overflow: element multiplicity {0} exceeds u32")]
    Multiplicity(u64),
    #[error(transparent)]
    Bloom(#[from] BloomError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MetricId {
    Subjects,
    Predicates,
    Objects,
    Resources,
    SubjPred,
    PredObjDesc,
    SubjObj,
    Statements,
    Literals,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum Position {
    Subject,
    Predicate,
    Object,
}

impl MetricId {
    pub const ALL: [MetricId; 9] = [
        MetricId::Subjects,
        MetricId::Predicates,
        MetricId::Objects,
        MetricId::Resources,
        MetricId::SubjPred,
        MetricId::PredObjDesc,
        MetricId::SubjObj,
        MetricId::Statements,
        MetricId::Literals,
    ];

    pub fn wire_id(self) -> u8 {
        Self::ALL.iter().position(|m| *m == self).expect("listed") as u8 + 1
    }

    pub fn from_wire_id(id: u8) -> Option<Self> {
        Self::ALL.get(usize::from(id).checked_sub(1)?).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            MetricId::Subjects => "SUBJECTS",
            MetricId::Predicates => "PREDICATES",
            MetricId::Objects => "OBJECTS",
            MetricId::Resources => "RESOURCES",
            MetricId::SubjPred => "SUBJ_PRED",
            MetricId::PredObjDesc => "PRED_OBJ_DESC",
            MetricId::SubjObj => "SUBJ_OBJ",
            MetricId::Statements => "STATEMENTS",
            MetricId::Literals => "LITERALS",
        }
    }

    /// Statement positions that make up one element.
    pub fn positions(self) -> &'static [Position] {
        use Position::*;
        match self {
            MetricId::Subjects => &[Subject],
            MetricId::Predicates => &[Predicate],
            MetricId::Objects | MetricId::Literals => &[Object],
            MetricId::Resources => &[Subject, Predicate, Object],
            MetricId::SubjPred => &[Subject, Predicate],
            MetricId::PredObjDesc => &[Predicate, Object],
            MetricId::SubjObj => &[Subject, Object],
            MetricId::Statements => &[Subject, Predicate, Object],
        }
    }

    /// Terms per element.
    pub fn arity(self) -> usize {
        match self {
            MetricId::Resources => 1,
            other => other.positions().len(),
        }
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricId {
    type Err = EntropyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let wanted = s.trim().to_ascii_uppercase();
        let wanted = match wanted.as_str() {
            "DESC" => "PRED_OBJ_DESC",
            other => other,
        };
        Self::ALL
            .iter()
            .copied()
            .find(|m| m.name() == wanted)
            .ok_or_else(|| EntropyError::UnknownMetric(s.to_string()))
    }
}

/// One multiset element with the terms it was built from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Element {
    pub parts: Vec<(Position, String)>,
}

impl Element {
    /// Canonical terms joined by single spaces.
    pub fn bytes(&self) -> Vec<u8> {
        let mut out = String::new();
        for (i, (_, term)) in self.parts.iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(term);
        }
        out.into_bytes()
    }
}

fn term_at(s: &Statement, pos: Position) -> String {
    match pos {
        Position::Subject => s.subject.to_string(),
        Position::Predicate => s.predicate.to_string(),
        Position::Object => s.object.canonical(),
    }
}

/// The elements `metric` derives from one statement.
pub fn statement_elements(metric: MetricId, s: &Statement) -> Vec<Element> {
    let single = |pos| Element {
        parts: vec![(pos, term_at(s, pos))],
    };
    match metric {
        MetricId::Resources => metric.positions().iter().map(|p| single(*p)).collect(),
        MetricId::Literals => match s.object {
            Term::Literal(_) => vec![single(Position::Object)],
            Term::Iri(_) => Vec::new(),
        },
        _ => vec![Element {
            parts: metric.positions().iter().map(|p| (*p, term_at(s, *p))).collect(),
        }],
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Multiset {
    counts: BTreeMap<Vec<u8>, u64>,
    cardinality: u64,
}

impl Multiset {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, element: Vec<u8>, count: u64) {
        if count == 0 {
            return;
        }
        *self.counts.entry(element).or_default() += count;
        self.cardinality += count;
    }

    pub fn count(&self, element: &[u8]) -> u64 {
        self.counts.get(element).copied().unwrap_or(0)
    }

    /// Sum of all counts.
    pub fn cardinality(&self) -> u64 {
        self.cardinality
    }

    /// Number of distinct elements.
    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&[u8], u64)> {
        self.counts.iter().map(|(k, v)| (k.as_slice(), *v))
    }
}

impl FromIterator<Vec<u8>> for Multiset {
    fn from_iter<I: IntoIterator<Item = Vec<u8>>>(iter: I) -> Self {
        let mut ms = Multiset::new();
        for e in iter {
            ms.add(e, 1);
        }
        ms
    }
}

pub fn derive_multiset(g: &KnowledgeGraph, metric: MetricId) -> Multiset {
    let statements: Vec<&Statement> = g.iter().collect();
    let per_statement: Vec<Vec<Vec<u8>>> = statements
        .par_iter()
        .map(|s| statement_elements(metric, s).iter().map(Element::bytes).collect())
        .collect();
    per_statement.into_iter().flatten().collect()
}

fn entropy_of_counts(counts: impl Iterator<Item = f64>, total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    let h: f64 = counts
        .filter(|c| *c > 0.0)
        .map(|c| {
            let p = c / total;
            -p * p.log2()
        })
        .sum();
    h.max(0.0)
}

/// Shannon entropy in bits; 0 for the empty multiset.
pub fn shannon_entropy(ms: &Multiset) -> f64 {
    entropy_of_counts(ms.iter().map(|(_, c)| c as f64), ms.cardinality() as f64)
}

/// Entropy of the nonzero counter distribution minus `log2(k)`.
pub fn entropy_from_counters(counters: &[u32], k: u32) -> f64 {
    assert!(k >= 1, "hash count must be positive");
    let total: f64 = counters.iter().map(|c| f64::from(*c)).sum();
    if total == 0.0 {
        return 0.0;
    }
    let h = entropy_of_counts(counters.iter().map(|c| f64::from(*c)), total);
    (h - f64::from(k).log2()).max(0.0)
}

/// Inserts every distinct element with its multiplicity under its signed
/// digest.
pub fn seller_build_counting_filter(
    ms: &Multiset,
    keys: &BlindKeyPair,
    fpr: f64,
    seed: [u8; 16],
    workers: usize,
) -> Result<CountingBloomFilter, EntropyError> {
    let params = FilterParams::counting(ms.distinct().max(1) as u64, fpr, seed)?;
    let mut filter = CountingBloomFilter::new(params);
    let elements: Vec<Vec<u8>> = ms.iter().map(|(e, _)| e.to_vec()).collect();
    let digests = digests_for(&elements, keys, workers);
    for ((_, count), digest) in ms.iter().zip(digests) {
        let count = u32::try_from(count).map_err(|_| EntropyError::Multiplicity(count))?;
        filter.insert(&digest, count)?;
    }
    Ok(filter)
}

/// Distinct elements the Buyer must get signed for `metric`, sorted.
pub fn buyer_metric_messages(g: &KnowledgeGraph, metric: MetricId) -> Vec<Vec<u8>> {
    derive_multiset(g, metric).iter().map(|(e, _)| e.to_vec()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyResult {
    pub metric: MetricId,
    pub h_buyer: f64,
    pub h_merged_estimate: f64,
    pub gain: f64,
    /// Set when no intersection was available to compensate for.
    pub uncorrected: bool,
}

/// What a Buyer can read off the Seller's counting filter for its own
/// elements.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchObservation {
    /// Residual Buyer elements with a nonzero, unclaimed Seller count.
    pub matched: Vec<Element>,
    /// Sum of the Seller counts attributed to `matched`.
    pub matched_seller_count: u64,
    pub nonzero_cells: u64,
    pub filter_total: u64,
    pub buyer_distinct: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergedEntropy {
    pub result: EntropyResult,
    pub observation: MatchObservation,
}

/// Estimates the entropy of `seller ⊎ (buyer \ intersection)` for `metric`.
///
/// Each residual Buyer element claims its cells and adds the Seller count
/// found there; cells no Buyer element claims count as Seller-only elements.
/// A cell is credited at most once, so colliding elements cannot double a
/// Seller count. `signatures` maps element bytes to verified signatures.
pub fn buyer_merged_entropy(
    buyer_graph: &KnowledgeGraph,
    intersection: Option<&IntersectionResult>,
    metric: MetricId,
    filter: &CountingBloomFilter,
    signatures: &HashMap<Vec<u8>, Signature>,
) -> Result<MergedEntropy, EntropyError> {
    let h_buyer = shannon_entropy(&derive_multiset(buyer_graph, metric));
    let residual_graph = match intersection {
        Some(i) => buyer_graph.difference(&i.statements),
        None => buyer_graph.clone(),
    };

    let mut residual: BTreeMap<Vec<u8>, (u64, Element)> = BTreeMap::new();
    for s in &residual_graph {
        for e in statement_elements(metric, s) {
            residual.entry(e.bytes()).or_insert((0, e)).0 += 1;
        }
    }

    let params = filter.params();
    let counters = filter.counters();
    let k = f64::from(params.hashes);
    let mut claimed: HashSet<u64> = HashSet::new();
    let mut merged: Vec<f64> = Vec::with_capacity(residual.len());
    let mut observation = MatchObservation {
        filter_total: filter.total(),
        nonzero_cells: counters.iter().filter(|c| **c > 0).count() as u64,
        buyer_distinct: residual.len() as u64,
        ..Default::default()
    };
    let mut residual_total = 0u64;

    for (bytes, (count, element)) in residual {
        let sig = signatures
            .get(&bytes)
            .ok_or_else(|| EntropyError::MissingSignature(String::from_utf8_lossy(&bytes).into()))?;
        let digest = signed_digest(&bytes, sig);
        let cells: Vec<u64> = params.positions(&digest).collect();
        let fresh = cells.iter().all(|c| !claimed.contains(c));
        let seller_count = if fresh {
            cells.iter().map(|c| counters[*c as usize]).min().unwrap_or(0)
        } else {
            0
        };
        claimed.extend(cells);
        if seller_count > 0 {
            observation.matched.push(element);
            observation.matched_seller_count += u64::from(seller_count);
        }
        residual_total += count;
        merged.push((count + u64::from(seller_count)) as f64);
    }
    for (cell, c) in counters.iter().enumerate() {
        if *c > 0 && !claimed.contains(&(cell as u64)) {
            merged.push(f64::from(*c) / k);
        }
    }

    let total = (filter.total() + residual_total) as f64;
    let h_merged = entropy_of_counts(merged.into_iter(), total);
    Ok(MergedEntropy {
        result: EntropyResult {
            metric,
            h_buyer,
            h_merged_estimate: h_merged,
            gain: h_merged - h_buyer,
            uncorrected: intersection.is_none(),
        },
        observation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blindsig::test_keys::shared;
    use crate::blindsig::sign_direct_batch;
    use crate::kg::{Literal, Statement};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn st(s: &str, p: &str, o: &str) -> Statement {
        Statement::iris(&format!("http://ex/{s}"), &format!("http://ex/{p}"), &format!("http://ex/{o}"))
            .unwrap()
    }

    fn ms(pairs: &[(&str, u64)]) -> Multiset {
        let mut m = Multiset::new();
        for (e, c) in pairs {
            m.add(e.as_bytes().to_vec(), *c);
        }
        m
    }

    #[test]
    fn wire_ids_and_names() {
        for (i, m) in MetricId::ALL.iter().enumerate() {
            assert_eq!(m.wire_id() as usize, i + 1);
            assert_eq!(MetricId::from_wire_id(m.wire_id()), Some(*m));
            assert_eq!(m.name().parse::<MetricId>().unwrap(), *m);
        }
        assert_eq!("desc".parse::<MetricId>().unwrap(), MetricId::PredObjDesc);
        assert!(MetricId::from_wire_id(0).is_none());
        assert!(MetricId::from_wire_id(10).is_none());
        assert!("NOPE".parse::<MetricId>().is_err());
    }

    #[test]
    fn desc_and_subject_projections() {
        let g: KnowledgeGraph = [st("a", "p", "b"), st("c", "p", "b")].into_iter().collect();
        let desc = derive_multiset(&g, MetricId::PredObjDesc);
        assert_eq!(desc.distinct(), 1);
        assert_eq!(desc.count(b"<http://ex/p> <http://ex/b>"), 2);
        let subjects = derive_multiset(&g, MetricId::Subjects);
        assert_eq!(subjects.count(b"<http://ex/a>"), 1);
        assert_eq!(subjects.count(b"<http://ex/c>"), 1);
        for m in MetricId::ALL {
            let card = derive_multiset(&g, m).cardinality();
            match m {
                MetricId::Resources => assert_eq!(card, 6),
                MetricId::Literals => assert_eq!(card, 0),
                _ => assert_eq!(card, 2),
            }
        }
    }

    #[test]
    fn literal_projection_only_counts_literals() {
        let mut g: KnowledgeGraph = [st("a", "p", "b")].into_iter().collect();
        g.insert(Statement::new(
            crate::kg::Iri::new("http://ex/a").unwrap(),
            crate::kg::Iri::new("http://ex/name").unwrap(),
            Literal::plain("x"),
        ));
        let lits = derive_multiset(&g, MetricId::Literals);
        assert_eq!(lits.cardinality(), 1);
        assert_eq!(lits.count(b"\"x\""), 1);
    }

    #[test]
    fn shannon_examples() {
        assert_eq!(shannon_entropy(&ms(&[("a", 1), ("b", 1), ("c", 1), ("d", 1)])), 2.0);
        assert_eq!(shannon_entropy(&ms(&[("a", 2), ("b", 1), ("c", 1)])), 1.5);
        assert_eq!(shannon_entropy(&ms(&[("a", 5)])), 0.0);
        assert_eq!(shannon_entropy(&Multiset::new()), 0.0);
    }

    #[test]
    fn counter_entropy_examples() {
        assert_eq!(entropy_from_counters(&[2, 1, 0, 1], 1), 1.5);
        assert_eq!(entropy_from_counters(&[1, 1, 1, 1], 2), 1.0);
        assert_eq!(entropy_from_counters(&[0, 0, 0], 3), 0.0);
    }

    fn signatures_for(g: &KnowledgeGraph, metric: MetricId) -> HashMap<Vec<u8>, Signature> {
        let messages = buyer_metric_messages(g, metric);
        let sigs = sign_direct_batch(shared(), &messages, 2);
        messages.into_iter().zip(sigs).collect()
    }

    fn random_graph(rng: &mut ChaCha20Rng, n: usize, universe: usize) -> KnowledgeGraph {
        let mut g = KnowledgeGraph::new();
        while g.len() < n {
            g.insert(st(
                &format!("s{}", rng.gen_range(0..universe)),
                &format!("p{}", rng.gen_range(0..8)),
                &format!("o{}", rng.gen_range(0..universe / 2 + 1)),
            ));
        }
        g
    }

    fn merged(
        seller: &KnowledgeGraph,
        buyer: &KnowledgeGraph,
        metric: MetricId,
        with_intersection: bool,
    ) -> MergedEntropy {
        let filter = seller_build_counting_filter(
            &derive_multiset(seller, metric),
            shared(),
            1e-6,
            [3; 16],
            2,
        )
        .unwrap();
        let inter = IntersectionResult {
            statements: seller.intersection(buyer),
            filter_cardinality_estimate: None,
        };
        let sigs = signatures_for(buyer, metric);
        buyer_merged_entropy(buyer, with_intersection.then_some(&inter), metric, &filter, &sigs)
            .unwrap()
    }

    #[test]
    fn counting_filter_total_and_determinism() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let g = random_graph(&mut rng, 50, 30);
        let m = derive_multiset(&g, MetricId::PredObjDesc);
        let a = seller_build_counting_filter(&m, shared(), 1e-6, [1; 16], 1).unwrap();
        let b = seller_build_counting_filter(&m, shared(), 1e-6, [1; 16], 2).unwrap();
        assert_eq!(a.total(), m.cardinality());
        assert_eq!(a.encode(), b.encode());
        let empty = seller_build_counting_filter(&Multiset::new(), shared(), 1e-6, [1; 16], 1).unwrap();
        assert_eq!(empty.total(), 0);
    }

    #[test]
    fn identical_graphs_have_no_gain() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let g = random_graph(&mut rng, 80, 40);
        for metric in [MetricId::PredObjDesc, MetricId::Subjects, MetricId::Resources] {
            let r = merged(&g, &g, metric, true).result;
            assert!(r.gain.abs() <= 0.01, "{metric}: gain {}", r.gain);
            assert!(!r.uncorrected);
        }
    }

    #[test]
    fn empty_seller_keeps_buyer_entropy() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let g = random_graph(&mut rng, 60, 30);
        let r = merged(&KnowledgeGraph::new(), &g, MetricId::PredObjDesc, true).result;
        assert_eq!(r.h_merged_estimate, r.h_buyer);
    }

    #[test]
    fn merged_estimate_tracks_plaintext_union() {
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let seller = random_graph(&mut rng, 90, 30);
        let buyer = random_graph(&mut rng, 70, 30);
        for metric in MetricId::ALL {
            let est = merged(&seller, &buyer, metric, true);
            let truth = shannon_entropy(&derive_multiset(&seller.union(&buyer), metric));
            assert!(
                (est.result.h_merged_estimate - truth).abs() <= 0.02,
                "{metric}: {} vs {truth}",
                est.result.h_merged_estimate
            );
        }
    }

    #[test]
    fn skipping_the_intersection_is_flagged() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let buyer = random_graph(&mut rng, 40, 20);
        let seller: KnowledgeGraph = buyer.iter().take(20).cloned().collect();
        let truth = shannon_entropy(&derive_multiset(&buyer, MetricId::Statements));
        let raw = merged(&seller, &buyer, MetricId::Statements, false).result;
        assert!(raw.uncorrected);
        // shared statements are counted twice
        assert!((raw.h_merged_estimate - truth).abs() > 0.05, "{} vs {truth}", raw.h_merged_estimate);
        let fixed = merged(&seller, &buyer, MetricId::Statements, true).result;
        assert!((fixed.h_merged_estimate - truth).abs() <= 0.01);
    }

    #[test]
    fn missing_signature_is_an_error() {
        let g: KnowledgeGraph = [st("a", "p", "b")].into_iter().collect();
        let filter = CountingBloomFilter::new(FilterParams::new(16, 1, [0; 16]).unwrap());
        assert!(matches!(
            buyer_merged_entropy(&g, None, MetricId::Subjects, &filter, &HashMap::new()),
            Err(EntropyError::MissingSignature(_))
        ));
    }
}
