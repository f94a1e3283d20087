//! Scaling benchmark: synthetic graph pairs of growing size, one loopback
//! session each, with time and traffic fitted against the statement count.

use std::collections::{BTreeMap, HashSet};
use std::thread;
use std::time::Instant;

use kgtrade_core::blindsig::BlindKeyPair;
use kgtrade_core::entropy::derive_multiset;
use kgtrade_core::kg::{Iri, KnowledgeGraph, Literal, Statement};
use kgtrade_core::net::loopback_pair;
use kgtrade_core::protocol::{
    run_buyer, run_seller, AlwaysContinue, BuyerOptions, BuyerOutcome, SellerOptions, SellerOutcome, SellerSecrets,
    SessionConfig, SessionState,
};
use kgtrade_core::role::Direction;
use kgtrade_core::wire::WireWriter;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

const SUBJECTS_PER_CLUSTER: usize = 8;
const PREDICATES: usize = 12;
const LITERAL_VOCABULARY: usize = 400;

/// Statements grouped in clusters of `SUBJECTS_PER_CLUSTER` subjects whose
/// resource objects stay inside the cluster. Returned in generation order,
/// so any contiguous slice keeps whole clusters together.
pub fn cluster_statements(count: usize, seed: u64) -> Vec<Statement> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let iri = |s: String| Iri::new(s).expect("generated IRI is valid");
    let mut seen = HashSet::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    let mut cluster = 0usize;
    while out.len() < count {
        let base = cluster * SUBJECTS_PER_CLUSTER;
        let per_subject = rng.gen_range(4..=12);
        for s in 0..SUBJECTS_PER_CLUSTER {
            let subject = iri(format!("http://bench.example/node/{}", base + s));
            for _ in 0..per_subject {
                let predicate = iri(format!("http://bench.example/p/{}", rng.gen_range(0..PREDICATES)));
                let st = if rng.gen_bool(0.5) {
                    let target = base + rng.gen_range(0..SUBJECTS_PER_CLUSTER);
                    Statement::new(subject.clone(), predicate, iri(format!("http://bench.example/node/{target}")))
                } else {
                    let word = rng.gen_range(0..LITERAL_VOCABULARY);
                    Statement::new(subject.clone(), predicate, Literal::plain(format!("value {word}")))
                };
                if out.len() < count && seen.insert(st.clone()) {
                    out.push(st);
                }
            }
        }
        cluster += 1;
    }
    out
}

/// Seller and Buyer graphs of `size` statements each, sharing
/// `round(overlap * size)` of them.
pub fn generate_pair(size: usize, overlap: f64, seed: u64) -> (KnowledgeGraph, KnowledgeGraph) {
    let shared = ((overlap.clamp(0.0, 1.0) * size as f64).round() as usize).min(size);
    let universe = cluster_statements(2 * size - shared, seed);
    let seller = universe[..size].iter().cloned().collect();
    let buyer = universe[size - shared..].iter().cloned().collect();
    (seller, buyer)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares of `ys` on `xs`. `None` with fewer than two
/// distinct x values.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Option<LinearFit> {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return None;
    }
    let mx = xs[..n].iter().sum::<f64>() / n as f64;
    let my = ys[..n].iter().sum::<f64>() / n as f64;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxx += (x - mx) * (x - mx);
        sxy += (x - mx) * (y - my);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Some(LinearFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
    })
}

/// Both ends of one session over an in-process pipe.
pub fn loopback_session(
    config: &SessionConfig,
    seller_graph: &KnowledgeGraph,
    buyer_graph: &KnowledgeGraph,
    secrets: SellerSecrets,
    workers: usize,
    seed: u64,
) -> (SellerOutcome, BuyerOutcome) {
    let (seller_end, buyer_end) = loopback_pair();
    let (c, g) = (config.clone(), seller_graph.clone());
    let seller = thread::spawn(move || {
        let options = SellerOptions {
            workers,
            ..SellerOptions::default()
        };
        run_seller(&c, &g, &secrets, seller_end, &mut AlwaysContinue, &options)
    });
    let options = BuyerOptions {
        workers,
        seed: Some(seed),
        ..BuyerOptions::default()
    };
    let buyer = run_buyer(config, buyer_graph, buyer_end, &mut AlwaysContinue, &options);
    (seller.join().expect("seller thread"), buyer)
}

/// Payload bytes of the same five steps with every protection removed: the
/// Buyer ships its statements and metric multisets in the clear, the Seller
/// answers with a membership bitmap, one merged entropy per metric and the
/// bought parts as plain statements. Nothing is disclosed afterwards, since
/// there is nothing to verify. Step 1 is taken from the measured session,
/// as it carries no protected data.
pub fn plain_exchange_bytes(outcome: &BuyerOutcome) -> BTreeMap<Direction, u64> {
    let mut b2s = outcome.meter.get(1, Direction::BuyerToSeller);
    let mut s2b = outcome.meter.get(1, Direction::SellerToBuyer);
    let len = |w: WireWriter| w.finish().len() as u64;

    let mut w = WireWriter::new();
    w.u32(outcome.graph.len() as u32);
    for s in outcome.graph.iter() {
        w.bytes(&s.canonical_bytes());
    }
    b2s += len(w);
    s2b += 4 + outcome.graph.len().div_ceil(8) as u64;

    for metric in &outcome.results.metrics {
        let multiset = derive_multiset(&outcome.graph, *metric);
        let mut w = WireWriter::new();
        w.u8(metric.wire_id()).u32(multiset.distinct() as u32);
        for (element, count) in multiset.iter() {
            w.bytes(element).u64(count);
        }
        b2s += len(w);
        s2b += 1 + 8;
    }

    b2s += 4 + 4 * outcome.config.buy as u64;
    let mut w = WireWriter::new();
    for part in &outcome.results.parts {
        w.u32(part.statements.len() as u32);
        for s in part.statements.iter() {
            w.bytes(&s.canonical_bytes());
        }
    }
    s2b += len(w);
    BTreeMap::from([(Direction::SellerToBuyer, s2b), (Direction::BuyerToSeller, b2s)])
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub sizes: Vec<usize>,
    pub trials: usize,
    pub overlap: f64,
    pub seed: u64,
    pub workers: usize,
    pub plain_baseline: bool,
    /// Leave wall times and memory out, making reports reproducible.
    pub omit_timing: bool,
    pub config: SessionConfig,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            sizes: vec![1000, 2000, 4000, 8000],
            trials: 1,
            overlap: 0.5,
            seed: 1,
            workers: 1,
            plain_baseline: false,
            omit_timing: false,
            config: SessionConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    /// Statements per party.
    pub statements: usize,
    pub intersection: usize,
    pub state: SessionState,
    /// Median wall time of a whole session over the trials.
    pub seconds: Option<f64>,
    /// Mean payload bytes over the trials.
    pub bytes: BTreeMap<Direction, f64>,
    pub plain_bytes: Option<BTreeMap<Direction, f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchFits {
    pub seconds: Option<LinearFit>,
    pub seller_to_buyer_bytes: Option<LinearFit>,
    pub buyer_to_seller_bytes: Option<LinearFit>,
    pub total_bytes: Option<LinearFit>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub overlap: f64,
    pub trials: usize,
    pub seed: u64,
    pub config: BTreeMap<String, String>,
    pub rows: Vec<BenchRow>,
    pub fits: BenchFits,
    /// Traffic slope per direction in KB (1000 bytes) per statement.
    pub kb_per_statement: BTreeMap<Direction, f64>,
    /// Secure over plain total traffic, summed over all sizes.
    pub plain_overhead_ratio: Option<f64>,
    pub peak_memory_kib: Option<u64>,
}

impl BenchReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn table(&self) -> String {
        let mut out = String::from("statements  shared   seconds      S->B bytes    B->S bytes   state\n");
        for r in &self.rows {
            let secs = r.seconds.map_or("-".to_string(), |s| format!("{s:.2}"));
            out += &format!(
                "{:>10}  {:>6}  {:>8}  {:>14.0}  {:>12.0}   {}\n",
                r.statements,
                r.intersection,
                secs,
                r.bytes[&Direction::SellerToBuyer],
                r.bytes[&Direction::BuyerToSeller],
                r.state
            );
        }
        let fit = |name: &str, f: &Option<LinearFit>| match f {
            Some(f) => format!("{name}: slope {:.4e}, R^2 {:.4}\n", f.slope, f.r_squared),
            None => format!("{name}: -\n"),
        };
        out += &fit("time", &self.fits.seconds);
        out += &fit("S->B", &self.fits.seller_to_buyer_bytes);
        out += &fit("B->S", &self.fits.buyer_to_seller_bytes);
        for (d, kb) in &self.kb_per_statement {
            out += &format!("{d}: {kb:.3} KB/statement\n");
        }
        if let Some(ratio) = self.plain_overhead_ratio {
            out += &format!("secure/plain traffic: {ratio:.2}x\n");
        }
        out
    }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

/// Upper median, so one trial slowed by outside load does not move it.
fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    xs.get(xs.len() / 2).copied().unwrap_or(0.0)
}

/// Runs every size `trials` times with keys fixed up front, so key
/// generation stays out of the measurements.
pub fn run_bench(options: &BenchOptions, keys: &(BlindKeyPair, BlindKeyPair)) -> BenchReport {
    let trials = options.trials.max(1);
    let mut rows = Vec::with_capacity(options.sizes.len());
    for (i, &size) in options.sizes.iter().enumerate() {
        let mut seconds = Vec::new();
        let mut bytes: BTreeMap<Direction, Vec<f64>> = BTreeMap::new();
        let mut plain: BTreeMap<Direction, Vec<f64>> = BTreeMap::new();
        let mut state = SessionState::Closed;
        let mut intersection = 0;
        for t in 0..trials {
            let seed = options.seed.wrapping_add((i * trials + t) as u64);
            let (seller_graph, buyer_graph) = generate_pair(size, options.overlap, seed);
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let secrets = SellerSecrets::with_keys(keys.0.clone(), keys.1.clone(), &mut rng);
            let started = Instant::now();
            let (_, buyer) = loopback_session(
                &options.config,
                &seller_graph,
                &buyer_graph,
                secrets,
                options.workers,
                seed,
            );
            seconds.push(started.elapsed().as_secs_f64());
            if !buyer.state.is_closed() {
                state = buyer.state;
            }
            intersection = buyer.results.intersection.as_ref().map_or(0, |r| r.statements.len());
            for d in Direction::BOTH {
                bytes.entry(d).or_default().push(buyer.meter.total(d) as f64);
            }
            if options.plain_baseline {
                for (d, b) in plain_exchange_bytes(&buyer) {
                    plain.entry(d).or_default().push(b as f64);
                }
            }
        }
        rows.push(BenchRow {
            statements: size,
            intersection,
            state,
            seconds: (!options.omit_timing).then(|| median(&mut seconds)),
            bytes: bytes.iter().map(|(d, v)| (*d, mean(v))).collect(),
            plain_bytes: options
                .plain_baseline
                .then(|| plain.iter().map(|(d, v)| (*d, mean(v))).collect()),
        });
    }

    let xs: Vec<f64> = rows.iter().map(|r| r.statements as f64).collect();
    let column = |d: Direction| -> Vec<f64> { rows.iter().map(|r| r.bytes[&d]).collect() };
    let s2b = column(Direction::SellerToBuyer);
    let b2s = column(Direction::BuyerToSeller);
    let total: Vec<f64> = s2b.iter().zip(&b2s).map(|(a, b)| a + b).collect();
    let secs: Option<Vec<f64>> = rows.iter().map(|r| r.seconds).collect();
    let fits = BenchFits {
        seconds: secs.and_then(|s| linear_fit(&xs, &s)),
        seller_to_buyer_bytes: linear_fit(&xs, &s2b),
        buyer_to_seller_bytes: linear_fit(&xs, &b2s),
        total_bytes: linear_fit(&xs, &total),
    };
    let mut kb_per_statement = BTreeMap::new();
    for (d, f) in [
        (Direction::SellerToBuyer, fits.seller_to_buyer_bytes),
        (Direction::BuyerToSeller, fits.buyer_to_seller_bytes),
    ] {
        if let Some(f) = f {
            kb_per_statement.insert(d, f.slope / 1000.0);
        }
    }
    let plain_overhead_ratio = options.plain_baseline.then(|| {
        let plain_total: f64 = rows
            .iter()
            .filter_map(|r| r.plain_bytes.as_ref())
            .flat_map(|m| m.values())
            .sum();
        total.iter().sum::<f64>() / plain_total
    });
    BenchReport {
        overlap: options.overlap,
        trials,
        seed: options.seed,
        config: crate::report::config_map(&options.config),
        rows,
        fits,
        kb_per_statement,
        plain_overhead_ratio,
        peak_memory_kib: if options.omit_timing {
            None
        } else {
            crate::report::peak_memory_kib()
        },
    }
}
