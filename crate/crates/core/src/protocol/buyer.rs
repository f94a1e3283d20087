use std::collections::{BTreeMap, HashMap};
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::engine::Disclosure;
use super::message::{Message, Purpose, PROTOCOL_VERSION};
use super::verify::{verify_disclosure, VerificationReport, VerifyError, VerifyMode};
use super::{advance, unexpected, AbortReason, Checkpoint, Decider, Decision, Halt, Link, SessionConfig, SessionState};
use crate::blindsig::{PublicKey, Signature};
use crate::entropy::{buyer_merged_entropy, buyer_metric_messages, EntropyResult, MetricId};
use crate::kg::{GraphStatistics, KnowledgeGraph};
use crate::leak::{AdversaryModel, LeakLedger, MetricSizes, TermTally};
use crate::net::{Channel, TrafficMeter};
use crate::ot::{buyer_choose, buyer_recover, buyer_request, OtError, OtSetup, RecoveredPart};
use crate::protocol::transcript::Transcript;
use crate::psi::{buyer_compute_intersection, buyer_prepare_requests, BlindRequestBatch, IntersectionResult, PsiError};
use crate::role::Role;

#[derive(Debug, Clone)]
pub struct BuyerOptions {
    pub workers: usize,
    pub model: AdversaryModel,
    /// Seed for blinding factors and the part choice; `None` draws one from
    /// the operating system.
    pub seed: Option<u64>,
}

impl Default for BuyerOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            model: AdversaryModel::Curious,
            seed: None,
        }
    }
}

/// What the Buyer learned, step by step.
#[derive(Debug, Clone, Default)]
pub struct SessionResults {
    pub statistics: Option<GraphStatistics>,
    pub seller_key: Option<PublicKey>,
    pub intersection: Option<IntersectionResult>,
    /// False-positive rate implied by the received PSI filter's fill.
    pub psi_false_positive_rate: Option<f64>,
    /// Metrics actually computed in step 3.
    pub metrics: Vec<MetricId>,
    pub entropy: Vec<EntropyResult>,
    pub ot_setup: Option<OtSetup>,
    pub parts: Vec<RecoveredPart>,
}

#[derive(Debug)]
pub struct BuyerOutcome {
    pub state: SessionState,
    pub abort_detail: Option<String>,
    pub transcript: Transcript,
    pub meter: TrafficMeter,
    pub ledger: LeakLedger,
    pub config: SessionConfig,
    /// The Buyer graph after exclusions.
    pub graph: KnowledgeGraph,
    pub results: SessionResults,
    pub disclosure: Option<Disclosure>,
    pub step_times: BTreeMap<u8, Duration>,
}

impl BuyerOutcome {
    pub fn verify(&self, mode: VerifyMode, workers: usize) -> Result<VerificationReport, VerifyError> {
        let disclosure = self.disclosure.as_ref().ok_or(VerifyError::NotClosed)?;
        verify_disclosure(disclosure, &self.transcript, &self.graph, &self.results, mode, workers)
    }
}

struct BuyerRun<'a, C: Channel> {
    link: Link<C>,
    state: SessionState,
    ledger: LeakLedger,
    config: &'a SessionConfig,
    graph: KnowledgeGraph,
    decider: &'a mut dyn Decider,
    rng: ChaCha20Rng,
    results: SessionResults,
    disclosure: Option<Disclosure>,
    step_times: BTreeMap<u8, Duration>,
}

fn psi_halt(step: u8, e: PsiError) -> Halt {
    let reason = match e {
        PsiError::Misbehavior(_) => AbortReason::Misbehavior,
        _ => AbortReason::ProtocolViolation,
    };
    Halt::new(step, reason, e.to_string())
}

/// Runs the Buyer side to completion or abort. `decider` is asked at each
/// step boundary.
pub fn run_buyer<C: Channel>(
    config: &SessionConfig,
    graph: &KnowledgeGraph,
    channel: C,
    decider: &mut dyn Decider,
    options: &BuyerOptions,
) -> BuyerOutcome {
    let rng = match options.seed {
        Some(seed) => ChaCha20Rng::seed_from_u64(seed),
        None => ChaCha20Rng::from_entropy(),
    };
    let mut run = BuyerRun {
        link: Link::new(channel, Role::Buyer, true),
        state: SessionState::Init,
        ledger: LeakLedger::new(options.model),
        config,
        graph: graph.without_predicates(&config.excluded_predicates),
        decider,
        rng,
        results: SessionResults::default(),
        disclosure: None,
        step_times: BTreeMap::new(),
    };
    let mut abort_detail = None;
    if let Err(halt) = run.run() {
        run.link.abort(&halt);
        run.state = SessionState::Aborted {
            step: halt.step,
            reason: halt.reason,
        };
        abort_detail = Some(halt.detail);
    }
    let (transcript, meter) = run.link.finish();
    BuyerOutcome {
        state: run.state,
        abort_detail,
        transcript,
        meter,
        ledger: run.ledger,
        config: config.clone(),
        graph: run.graph,
        results: run.results,
        disclosure: run.disclosure,
        step_times: run.step_times,
    }
}

impl<C: Channel> BuyerRun<'_, C> {
    fn decline(step: u8) -> Halt {
        Halt::new(step, AbortReason::UserDecline, "declined by the Buyer")
    }

    fn run(&mut self) -> Result<(), Halt> {
        let t = Instant::now();
        let key = self.step1()?;
        self.step_times.insert(1, t.elapsed());

        let t = Instant::now();
        let signatures = self.step2(&key)?;
        self.step_times.insert(2, t.elapsed());

        let t = Instant::now();
        self.step3(signatures)?;
        self.step_times.insert(3, t.elapsed());

        let t = Instant::now();
        self.step4()?;
        self.step_times.insert(4, t.elapsed());

        let t = Instant::now();
        match self.link.recv(5)? {
            Message::Disclosure(d) => self.disclosure = Some(*d),
            other => return Err(unexpected(5, "DISCLOSURE", &other)),
        }
        advance(&mut self.state, SessionState::Closed, 5)?;
        self.step_times.insert(5, t.elapsed());
        Ok(())
    }

    fn step1(&mut self) -> Result<PublicKey, Halt> {
        self.link.send(
            1,
            &Message::Hello {
                version: PROTOCOL_VERSION,
                role: Role::Buyer,
            },
        )?;
        match self.link.recv(1)? {
            Message::Hello {
                version: PROTOCOL_VERSION,
                role: Role::Seller,
            } => {}
            Message::Hello { version, role } => {
                return Err(Halt::new(
                    1,
                    AbortReason::ProtocolViolation,
                    format!("peer announced version {version} as {role:?}"),
                ))
            }
            other => return Err(unexpected(1, "HELLO", &other)),
        }
        let text = self.config.to_text();
        self.link.send(
            1,
            &Message::Config {
                text: text.clone(),
                key: None,
            },
        )?;
        let key = match self.link.recv(1)? {
            Message::Config { text: echoed, key: Some(key) } if echoed == text => key,
            Message::Config { .. } => {
                return Err(Halt::new(1, AbortReason::ConfigMismatch, "Seller did not accept the proposal as sent"))
            }
            other => return Err(unexpected(1, "CONFIG", &other)),
        };
        let bits = key.modulus().bits() as usize;
        if bits != self.config.modulus_bits {
            return Err(Halt::new(
                1,
                AbortReason::ConfigMismatch,
                format!("signing key has {bits} bits, agreed {}", self.config.modulus_bits),
            ));
        }
        self.results.seller_key = Some(key.clone());

        let stats = match self.link.recv(1)? {
            Message::Stats(s) => s,
            other => return Err(unexpected(1, "STATS", &other)),
        };
        self.ledger.record_statistics_shared(stats.len() as u64);
        let decision = self.decider.decide(&Checkpoint::Statistics(&stats));
        self.results.statistics = Some(stats);
        if decision == Decision::Abort {
            return Err(Self::decline(1));
        }
        self.link.send(1, &Message::Continue { step: 1, metrics: vec![] })?;
        advance(&mut self.state, SessionState::Step1Done, 1)?;
        Ok(key)
    }

    /// Returns per-metric signature maps for step 3.
    fn step2(&mut self, key: &PublicKey) -> Result<Vec<HashMap<Vec<u8>, Signature>>, Halt> {
        let decoys = self.config.decoy_count;
        let psi_batch = buyer_prepare_requests(&self.graph, key, decoys, &mut self.rng);
        let mut batches: Vec<(Purpose, BlindRequestBatch)> = vec![(Purpose::Intersection, psi_batch)];
        for &m in &self.config.metrics {
            let messages = buyer_metric_messages(&self.graph, m);
            batches.push((Purpose::Metric(m), BlindRequestBatch::prepare(messages, key, decoys, &mut self.rng)));
        }
        for (purpose, batch) in &batches {
            self.link.send(
                purpose.step(),
                &Message::BlindBatch {
                    purpose: *purpose,
                    values: batch.blinded().to_vec(),
                },
            )?;
        }

        let mut signed: Vec<Vec<Signature>> = Vec::with_capacity(batches.len());
        for (purpose, batch) in &batches {
            let step = purpose.step();
            match self.link.recv(step)? {
                Message::SignedBatch { purpose: p, values } if p == *purpose => {
                    signed.push(batch.finish(key, &values).map_err(|e| psi_halt(step, e))?);
                }
                other => return Err(unexpected(step, "SIGNED_BATCH", &other)),
            }
        }
        advance(&mut self.state, SessionState::SignaturesServed, 2)?;

        let filter = match self.link.recv(2)? {
            Message::PsiFilter(f) => f,
            other => return Err(unexpected(2, "PSI_FILTER", &other)),
        };
        if filter.params().seed != self.config.psi_seed {
            return Err(Halt::new(2, AbortReason::ProtocolViolation, "PSI filter uses a different seed"));
        }
        advance(&mut self.state, SessionState::FiltersSent, 2)?;

        let mut signed = signed.into_iter();
        let psi_sigs = signed.next().expect("intersection batch first");
        let intersection = buyer_compute_intersection(&self.graph, &psi_sigs, &filter).map_err(|e| psi_halt(2, e))?;
        let p = filter.params();
        let fill = filter.popcount() as f64 / p.cells as f64;
        self.results.psi_false_positive_rate = Some(fill.powi(p.hashes as i32));
        self.ledger.record_intersection(
            intersection.statements.len() as u64,
            TermTally::of_graph(&intersection.statements),
        );

        let decision = self.decider.decide(&Checkpoint::Intersection {
            result: &intersection,
            metrics: &self.config.metrics,
        });
        self.results.intersection = Some(intersection);
        let selected = match decision {
            Decision::Abort => return Err(Self::decline(2)),
            Decision::Continue => self.config.metrics.clone(),
            Decision::SelectMetrics(m) => {
                if let Some(bad) = m.iter().find(|x| !self.config.metrics.contains(x)) {
                    return Err(Halt::new(2, AbortReason::Parameter, format!("metric {bad} was not agreed")));
                }
                self.config.metrics.iter().copied().filter(|x| m.contains(x)).collect()
            }
        };
        self.link.send(
            2,
            &Message::Continue {
                step: 2,
                metrics: selected.clone(),
            },
        )?;

        let mut maps = Vec::with_capacity(selected.len());
        for ((purpose, batch), sigs) in batches.into_iter().skip(1).zip(signed) {
            if matches!(purpose, Purpose::Metric(m) if selected.contains(&m)) {
                maps.push(batch.messages().iter().cloned().zip(sigs).collect());
            }
        }
        self.results.metrics = selected;
        Ok(maps)
    }

    fn step3(&mut self, signatures: Vec<HashMap<Vec<u8>, Signature>>) -> Result<(), Halt> {
        if self.results.metrics.is_empty() {
            return advance(&mut self.state, SessionState::Step3Done, 3);
        }
        let metrics = self.results.metrics.clone();
        for (metric, sigs) in metrics.into_iter().zip(signatures) {
            let filter = match self.link.recv(3)? {
                Message::CountingFilter { metric: m, filter } if m == metric => filter,
                other => return Err(unexpected(3, &format!("COUNTING_FILTER for {metric}"), &other)),
            };
            if filter.params().seed != self.config.counting_seed {
                return Err(Halt::new(3, AbortReason::ProtocolViolation, "counting filter uses a different seed"));
            }
            let merged = buyer_merged_entropy(&self.graph, self.results.intersection.as_ref(), metric, &filter, &sigs)
                .map_err(|e| Halt::new(3, AbortReason::ProtocolViolation, e.to_string()))?;
            let obs = &merged.observation;
            let sizes = MetricSizes {
                seller_cardinality: obs.filter_total / u64::from(filter.params().hashes),
                seller_distinct: obs.nonzero_cells,
                buyer_distinct: obs.buyer_distinct,
            };
            self.ledger.record_entropy_metric(metric, sizes, Some(obs));
            self.results.entropy.push(merged.result);
        }
        advance(&mut self.state, SessionState::Step3Done, 3)?;
        if self.decider.decide(&Checkpoint::Entropy(&self.results.entropy)) == Decision::Abort {
            return Err(Self::decline(3));
        }
        self.link.send(3, &Message::Continue { step: 3, metrics: vec![] })
    }

    fn step4(&mut self) -> Result<(), Halt> {
        let setup = match self.link.recv(4)? {
            Message::OtSetup(s) => s,
            other => return Err(unexpected(4, "OT_SETUP", &other)),
        };
        let n = self.config.parts;
        if setup.nonces.len() != n || setup.envelopes.len() != n {
            return Err(Halt::new(
                4,
                AbortReason::ProtocolViolation,
                format!("{} nonces and {} envelopes for {n} parts", setup.nonces.len(), setup.envelopes.len()),
            ));
        }
        let ot_err = |e: OtError| Halt::new(4, AbortReason::Parameter, e.to_string());
        let chosen = buyer_choose(self.config.buy, n, &mut self.rng).map_err(ot_err)?;
        let (request, secrets) = buyer_request(&chosen, &setup, &mut self.rng).map_err(ot_err)?;
        self.link.send(4, &Message::OtRequest(request))?;
        let response = match self.link.recv(4)? {
            Message::OtResponse(r) => r,
            other => return Err(unexpected(4, "OT_RESPONSE", &other)),
        };
        let parts = buyer_recover(&response, &secrets, &setup).map_err(|e| {
            let reason = match e {
                OtError::Shape(_) => AbortReason::ProtocolViolation,
                _ => AbortReason::Misbehavior,
            };
            Halt::new(4, reason, e.to_string())
        })?;
        let graphs: Vec<KnowledgeGraph> = parts.iter().map(|p| p.statements.clone()).collect();
        self.ledger.record_ot(&graphs);
        self.results.ot_setup = Some(setup);
        self.results.parts = parts;
        advance(&mut self.state, SessionState::Step4Done, 4)?;
        if self.decider.decide(&Checkpoint::Parts(&self.results.parts)) == Decision::Abort {
            return Err(Self::decline(4));
        }
        self.link.send(4, &Message::Continue { step: 4, metrics: vec![] })
    }
}
