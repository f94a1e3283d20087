use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use super::engine::{Disclosure, EngineError, SellerEngine, SellerSecrets, Tamper};
use super::message::{Message, Purpose, PROTOCOL_VERSION};
use super::{advance, unexpected, AbortReason, Checkpoint, Decider, Decision, Halt, Link, SessionConfig, SessionState};
use crate::kg::KnowledgeGraph;
use crate::leak::{AdversaryModel, LeakLedger};
use crate::net::{Channel, TrafficMeter};
use crate::ot::OtError;
use crate::protocol::transcript::Transcript;
use crate::role::Role;

#[derive(Debug, Clone)]
pub struct SellerOptions {
    pub workers: usize,
    pub model: AdversaryModel,
    pub tamper: Option<Tamper>,
}

impl Default for SellerOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            model: AdversaryModel::Curious,
            tamper: None,
        }
    }
}

#[derive(Debug)]
pub struct SellerOutcome {
    pub state: SessionState,
    pub abort_detail: Option<String>,
    pub transcript: Transcript,
    pub meter: TrafficMeter,
    /// What the Buyer's requests revealed to the Seller.
    pub ledger: LeakLedger,
    pub signatures_issued: u64,
    pub step_times: BTreeMap<u8, Duration>,
}

struct SellerRun<'a, C: Channel> {
    link: Link<C>,
    state: SessionState,
    ledger: LeakLedger,
    config: &'a SessionConfig,
    engine: SellerEngine<'a>,
    decider: &'a mut dyn Decider,
    tamper: Option<Tamper>,
    signatures_issued: u64,
    step_times: BTreeMap<u8, Duration>,
}

fn engine_halt(step: u8, e: EngineError) -> Halt {
    let reason = match e {
        EngineError::Ot(OtError::RequestSize { .. } | OtError::OutOfRange) => AbortReason::ProtocolViolation,
        EngineError::Sig(_) => AbortReason::ProtocolViolation,
        _ => AbortReason::Parameter,
    };
    Halt::new(step, reason, e.to_string())
}

/// Runs the Seller side to completion or abort.
pub fn run_seller<C: Channel>(
    config: &SessionConfig,
    graph: &KnowledgeGraph,
    secrets: &SellerSecrets,
    channel: C,
    decider: &mut dyn Decider,
    options: &SellerOptions,
) -> SellerOutcome {
    let mut run = SellerRun {
        link: Link::new(channel, Role::Seller, false),
        state: SessionState::Init,
        ledger: LeakLedger::new(options.model),
        config,
        engine: SellerEngine::new(config, graph, secrets, options.workers),
        decider,
        tamper: options.tamper,
        signatures_issued: 0,
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
    SellerOutcome {
        state: run.state,
        abort_detail,
        transcript,
        meter,
        ledger: run.ledger,
        signatures_issued: run.signatures_issued,
        step_times: run.step_times,
    }
}

impl<C: Channel> SellerRun<'_, C> {
    fn release(&mut self, step: u8) -> Result<(), Halt> {
        match self.decider.decide(&Checkpoint::SellerRelease(step)) {
            Decision::Abort => Err(Halt::new(step, AbortReason::UserDecline, "declined by the Seller")),
            _ => Ok(()),
        }
    }

    fn expect_continue(&mut self, step: u8) -> Result<Vec<crate::entropy::MetricId>, Halt> {
        match self.link.recv(step)? {
            Message::Continue { step: s, metrics } if s == step => Ok(metrics),
            other => Err(unexpected(step, &format!("CONTINUE({step})"), &other)),
        }
    }

    fn run(&mut self) -> Result<(), Halt> {
        let t = Instant::now();
        self.step1()?;
        self.step_times.insert(1, t.elapsed());

        let t = Instant::now();
        let selected = self.step2()?;
        self.step_times.insert(2, t.elapsed());

        let t = Instant::now();
        self.step3(&selected)?;
        self.step_times.insert(3, t.elapsed());

        let t = Instant::now();
        let (setup, ot) = self.step4()?;
        self.step_times.insert(4, t.elapsed());

        let t = Instant::now();
        self.release(5)?;
        let mut disclosure = Disclosure::complete(&self.engine, &ot, &setup);
        if self.tamper == Some(Tamper::OmitStatement) {
            if let Some(g) = disclosure.graph.as_mut() {
                let first = g.iter().next().cloned();
                if let Some(first) = first {
                    g.remove(&first);
                }
            }
        }
        self.link.send(5, &Message::Disclosure(Box::new(disclosure)))?;
        advance(&mut self.state, SessionState::Closed, 5)?;
        self.step_times.insert(5, t.elapsed());
        Ok(())
    }

    fn step1(&mut self) -> Result<(), Halt> {
        match self.link.recv(1)? {
            Message::Hello {
                version: PROTOCOL_VERSION,
                role: Role::Buyer,
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
        self.link.send(
            1,
            &Message::Hello {
                version: PROTOCOL_VERSION,
                role: Role::Seller,
            },
        )?;
        let text = match self.link.recv(1)? {
            Message::Config { text, key: None } => text,
            other => return Err(unexpected(1, "CONFIG proposal", &other)),
        };
        match SessionConfig::from_text(&text) {
            Ok(proposed) if proposed == *self.config => {}
            Ok(_) => return Err(Halt::new(1, AbortReason::ConfigMismatch, "proposal differs from the local configuration")),
            Err(e) => return Err(Halt::new(1, AbortReason::ConfigMismatch, e.to_string())),
        }
        let statements = self.engine.graph().len();
        if self.config.parts > statements {
            return Err(Halt::new(
                1,
                AbortReason::Parameter,
                format!("{} parts requested but the graph has {statements} statements", self.config.parts),
            ));
        }
        self.link.send(
            1,
            &Message::Config {
                text: self.config.to_text(),
                key: Some(self.engine.secrets().blind_key.public().clone()),
            },
        )?;
        self.release(1)?;
        let mut stats = self.engine.statistics();
        if self.tamper == Some(Tamper::InflateStatistic) {
            stats.values_mut()[0] *= 1.1;
        }
        self.link.send(1, &Message::Stats(stats))?;
        self.expect_continue(1)?;
        advance(&mut self.state, SessionState::Step1Done, 1)
    }

    fn step2(&mut self) -> Result<Vec<crate::entropy::MetricId>, Halt> {
        let purposes: Vec<Purpose> = std::iter::once(Purpose::Intersection)
            .chain(self.config.metrics.iter().map(|m| Purpose::Metric(*m)))
            .collect();
        let mut batches = Vec::with_capacity(purposes.len());
        let mut requested = 0u64;
        for expected in &purposes {
            let step = expected.step();
            match self.link.recv(step)? {
                Message::BlindBatch { purpose, values } if purpose == *expected => {
                    let label = match purpose {
                        Purpose::Intersection => "intersection request count".to_string(),
                        Purpose::Metric(m) => format!("{m} request count"),
                    };
                    self.ledger.record_request_batch(step, label);
                    requested += values.len() as u64;
                    if requested > self.config.signature_budget {
                        return Err(Halt::new(
                            step,
                            AbortReason::BudgetExceeded,
                            format!("{requested} signatures requested, budget {}", self.config.signature_budget),
                        ));
                    }
                    batches.push((purpose, values));
                }
                other => return Err(unexpected(step, "BLIND_BATCH", &other)),
            }
        }
        self.release(2)?;

        let early_filter = self.tamper == Some(Tamper::FilterBeforeSignatures);
        if early_filter {
            let filter = self.engine.psi_filter().map_err(|e| engine_halt(2, e))?;
            self.link.send(2, &Message::PsiFilter(filter))?;
        }
        for (purpose, values) in batches {
            let signed = self.engine.sign(&values).map_err(|e| engine_halt(purpose.step(), e))?;
            self.signatures_issued += signed.len() as u64;
            self.link.send(purpose.step(), &Message::SignedBatch { purpose, values: signed })?;
        }
        advance(&mut self.state, SessionState::SignaturesServed, 2)?;

        if !early_filter {
            let mut filter = self.engine.psi_filter().map_err(|e| engine_halt(2, e))?;
            if self.tamper == Some(Tamper::FilterBitFlip) {
                filter.flip_bit(0);
            }
            self.link.send(2, &Message::PsiFilter(filter))?;
        }
        advance(&mut self.state, SessionState::FiltersSent, 2)?;

        let selected = self.expect_continue(2)?;
        for (i, m) in selected.iter().enumerate() {
            if !self.config.metrics.contains(m) || selected[..i].contains(m) {
                return Err(Halt::new(2, AbortReason::ProtocolViolation, format!("metric {m} was not agreed")));
            }
        }
        Ok(selected)
    }

    fn step3(&mut self, selected: &[crate::entropy::MetricId]) -> Result<(), Halt> {
        if selected.is_empty() {
            return advance(&mut self.state, SessionState::Step3Done, 3);
        }
        self.release(3)?;
        for &metric in selected {
            let filter = self.engine.counting_filter(metric).map_err(|e| engine_halt(3, e))?;
            self.link.send(3, &Message::CountingFilter { metric, filter })?;
        }
        advance(&mut self.state, SessionState::Step3Done, 3)?;
        self.expect_continue(3)?;
        Ok(())
    }

    fn step4(&mut self) -> Result<(crate::ot::OtSetup, crate::ot::OtSecrets), Halt> {
        self.release(4)?;
        let (setup, ot) = self.engine.ot_setup().map_err(|e| engine_halt(4, e))?;
        let mut sent = setup.clone();
        if self.tamper == Some(Tamper::ModifyEnvelope) {
            if let Some(byte) = sent.envelopes.first_mut().and_then(|e| e.ciphertext.first_mut()) {
                *byte ^= 1;
            }
        }
        self.link.send(4, &Message::OtSetup(sent))?;
        let request = match self.link.recv(4)? {
            Message::OtRequest(r) => r,
            other => return Err(unexpected(4, "OT_REQUEST", &other)),
        };
        self.ledger.record_request_batch(4, "transfer request count");
        let mut answer_with = ot.clone();
        if self.tamper == Some(Tamper::SwapOtKey) && answer_with.keys.len() > 1 {
            answer_with.keys.swap(0, 1);
        }
        let response = self
            .engine
            .ot_respond(&request, &setup, &answer_with)
            .map_err(|e| engine_halt(4, e))?;
        self.link.send(4, &Message::OtResponse(response))?;
        advance(&mut self.state, SessionState::Step4Done, 4)?;
        self.expect_continue(4)?;
        Ok((setup, ot))
    }
}
