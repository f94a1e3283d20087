//! Checking a closed session against the Seller's disclosure.
//!
//! Exact mode replays every Seller computation and compares content digests
//! with the transcript. Fast mode recomputes the results with plain sets and
//! multisets and compares values within tolerance.

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::buyer::SessionResults;
use super::config::SessionConfig;
use super::engine::{Disclosure, SellerEngine};
use super::message::{tag, tag_name, Message, Purpose, PROTOCOL_VERSION};
use super::transcript::{Transcript, TranscriptRecord};
use crate::entropy::{derive_multiset, shannon_entropy, MetricId};
use crate::kg::{compute_statistics, parse_ntriples, KnowledgeGraph};
use crate::ot::{decrypt_envelope, OtSecrets, OtSetup};
use crate::role::{Direction, Role};

/// Largest accepted gap between estimated and exact merged entropy, in bits.
pub const ENTROPY_TOLERANCE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum VerifyMode {
    Exact,
    Fast,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum VerifyError {
    #[error("session did not reach the disclosure")]
    NotClosed,
    #[error("incomplete disclosure: {0} missing")]
    IncompleteDisclosure(&'static str),
    #[error("transcript lacks the payload of {0}")]
    MissingPayload(&'static str),
    #[error("unreadable transcript payload: {0}")]
    BadPayload(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VerificationCheck {
    pub name: String,
    pub passed: bool,
    pub evidence: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct VerificationReport {
    pub mode: VerifyMode,
    pub checks: Vec<VerificationCheck>,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &VerificationCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    fn check(&mut self, name: impl Into<String>, passed: bool, evidence: impl Into<String>) {
        self.checks.push(VerificationCheck {
            name: name.into(),
            passed,
            evidence: evidence.into(),
        });
    }
}

fn hex(d: &[u8]) -> String {
    d.iter().map(|b| format!("{b:02x}")).collect()
}

fn outbound(transcript: &Transcript) -> impl Iterator<Item = &TranscriptRecord> {
    transcript
        .records()
        .iter()
        .filter(|r| r.direction == Direction::BuyerToSeller)
}

fn decode_outbound(r: &TranscriptRecord) -> Result<Message, VerifyError> {
    let payload = r.payload.as_deref().ok_or(VerifyError::MissingPayload(tag_name(r.tag)))?;
    Message::decode(r.tag, payload).map_err(|e| VerifyError::BadPayload(e.to_string()))
}

/// The configuration the Buyer proposed (and the Seller echoed).
fn agreed_config(transcript: &Transcript) -> Result<SessionConfig, VerifyError> {
    let record = outbound(transcript)
        .find(|r| r.tag == tag::CONFIG)
        .ok_or(VerifyError::MissingPayload("CONFIG"))?;
    match decode_outbound(record)? {
        Message::Config { text, .. } => {
            SessionConfig::from_text(&text).map_err(|e| VerifyError::BadPayload(e.to_string()))
        }
        _ => Err(VerifyError::BadPayload("CONFIG".into())),
    }
}

fn selected_metrics(transcript: &Transcript) -> Result<Vec<MetricId>, VerifyError> {
    for r in outbound(transcript).filter(|r| r.tag == tag::CONTINUE) {
        if let Message::Continue { step: 2, metrics } = decode_outbound(r)? {
            return Ok(metrics);
        }
    }
    Ok(Vec::new())
}

pub fn verify_disclosure(
    disclosure: &Disclosure,
    transcript: &Transcript,
    own_graph: &KnowledgeGraph,
    results: &SessionResults,
    mode: VerifyMode,
    workers: usize,
) -> Result<VerificationReport, VerifyError> {
    let config = agreed_config(transcript)?;
    match mode {
        VerifyMode::Exact => verify_exact(disclosure, transcript, &config, workers),
        VerifyMode::Fast => verify_fast(disclosure, &config, own_graph, results),
    }
}

fn verify_exact(
    disclosure: &Disclosure,
    transcript: &Transcript,
    config: &SessionConfig,
    workers: usize,
) -> Result<VerificationReport, VerifyError> {
    if let Some(field) = disclosure.missing_field() {
        return Err(VerifyError::IncompleteDisclosure(field));
    }
    let secrets = disclosure.secrets().ok_or(VerifyError::IncompleteDisclosure("secrets"))?;
    let graph = disclosure.graph.as_ref().ok_or(VerifyError::IncompleteDisclosure("graph"))?;
    let engine = SellerEngine::new(config, graph, &secrets, workers);

    let mut blind_batches = Vec::new();
    let mut ot_request = None;
    for r in outbound(transcript) {
        match r.tag {
            tag::BLIND_BATCH => match decode_outbound(r)? {
                Message::BlindBatch { purpose, values } => blind_batches.push((purpose, values)),
                _ => unreachable!("tag checked"),
            },
            tag::OT_REQUEST => match decode_outbound(r)? {
                Message::OtRequest(req) => ot_request = Some(req),
                _ => unreachable!("tag checked"),
            },
            _ => {}
        }
    }
    let metrics = selected_metrics(transcript)?;

    let mut report = VerificationReport {
        mode: VerifyMode::Exact,
        checks: Vec::new(),
    };
    let mut ot: Option<Result<(OtSetup, OtSecrets), String>> = None;
    let mut signed_seen = 0;
    let mut counting_seen = 0;

    for record in transcript.records().iter().filter(|r| r.direction == Direction::SellerToBuyer) {
        let name = tag_name(record.tag);
        let expected: Result<Message, String> = match record.tag {
            tag::HELLO => Ok(Message::Hello {
                version: PROTOCOL_VERSION,
                role: Role::Seller,
            }),
            tag::CONFIG => Ok(Message::Config {
                text: config.to_text(),
                key: Some(secrets.blind_key.public().clone()),
            }),
            tag::STATS => Ok(Message::Stats(engine.statistics())),
            tag::SIGNED_BATCH => {
                let i = signed_seen;
                signed_seen += 1;
                match blind_batches.get(i) {
                    Some((purpose, values)) => engine
                        .sign(values)
                        .map(|values| Message::SignedBatch {
                            purpose: *purpose,
                            values,
                        })
                        .map_err(|e| e.to_string()),
                    None => Err(format!("no request batch matches signed batch {i}")),
                }
            }
            tag::PSI_FILTER => engine.psi_filter().map(Message::PsiFilter).map_err(|e| e.to_string()),
            tag::COUNTING_FILTER => {
                let i = counting_seen;
                counting_seen += 1;
                match metrics.get(i) {
                    Some(&metric) => engine
                        .counting_filter(metric)
                        .map(|filter| Message::CountingFilter { metric, filter })
                        .map_err(|e| e.to_string()),
                    None => Err(format!("counting filter {i} was never requested")),
                }
            }
            tag::OT_SETUP | tag::OT_RESPONSE => {
                let replayed = ot.get_or_insert_with(|| engine.ot_setup().map_err(|e| e.to_string()));
                match (replayed, record.tag, &ot_request) {
                    (Err(e), _, _) => Err(e.clone()),
                    (Ok((setup, _)), tag::OT_SETUP, _) => Ok(Message::OtSetup(setup.clone())),
                    (Ok((setup, ot_secrets)), _, Some(req)) => engine
                        .ot_respond(req, setup, ot_secrets)
                        .map(Message::OtResponse)
                        .map_err(|e| e.to_string()),
                    (Ok(_), _, None) => Err("no transfer request recorded".into()),
                }
            }
            _ => continue,
        };
        let label = match record.tag {
            tag::SIGNED_BATCH => match blind_batches.get(signed_seen - 1) {
                Some((Purpose::Intersection, _)) => format!("{name} intersection"),
                Some((Purpose::Metric(m), _)) => format!("{name} {m}"),
                None => name.to_string(),
            },
            tag::COUNTING_FILTER => match metrics.get(counting_seen - 1) {
                Some(m) => format!("{name} {m}"),
                None => name.to_string(),
            },
            _ => name.to_string(),
        };
        match expected {
            Ok(msg) => {
                let digest: [u8; 32] = Sha256::digest(msg.encode()).into();
                let ok = digest == record.digest;
                let evidence = if ok {
                    format!("replayed digest {} matches", hex(&digest[..8]))
                } else {
                    format!(
                        "replayed digest {} differs from received {}",
                        hex(&digest[..8]),
                        hex(&record.digest[..8])
                    )
                };
                report.check(label, ok, evidence);
            }
            Err(e) => report.check(label, false, format!("replay failed: {e}")),
        }
    }

    if let Some(Ok((setup, ot_secrets))) = &ot {
        let keys_ok = disclosure.part_keys.as_ref() == Some(&ot_secrets.keys);
        let nonces_ok = disclosure.nonces.as_ref() == Some(&setup.nonces);
        let perm_ok = disclosure.permutation.as_ref() == Some(&ot_secrets.permutation);
        report.check(
            "disclosed transfer secrets",
            keys_ok && nonces_ok && perm_ok,
            format!("keys {keys_ok}, nonces {nonces_ok}, permutation {perm_ok}"),
        );
    }
    Ok(report)
}

fn verify_fast(
    disclosure: &Disclosure,
    config: &SessionConfig,
    own_graph: &KnowledgeGraph,
    results: &SessionResults,
) -> Result<VerificationReport, VerifyError> {
    let graph = disclosure
        .graph
        .as_ref()
        .ok_or(VerifyError::IncompleteDisclosure("graph"))?
        .without_predicates(&config.excluded_predicates);
    let own = own_graph.without_predicates(&config.excluded_predicates);
    let mut report = VerificationReport {
        mode: VerifyMode::Fast,
        checks: Vec::new(),
    };

    if let Some(stats) = &results.statistics {
        let truth = compute_statistics(&graph);
        let differing: Vec<usize> = (0..truth.len())
            .filter(|i| truth.values()[*i] != stats.values()[*i])
            .collect();
        report.check(
            "statistics",
            differing.is_empty(),
            if differing.is_empty() {
                "all statistics match the disclosed graph".to_string()
            } else {
                format!("statistics {differing:?} differ from the disclosed graph")
            },
        );
    }

    if let Some(result) = &results.intersection {
        let truth = own.intersection(&graph);
        let missing = truth.difference(&result.statements).len();
        let extras = result.statements.difference(&truth).len();
        let rate = results.psi_false_positive_rate.unwrap_or(config.psi_fpr);
        let expected = (own.len() - truth.len()) as f64 * rate;
        let allowed = (expected + 4.0 * expected.sqrt() + 1.0).floor() as usize;
        report.check(
            "intersection",
            missing == 0 && extras <= allowed,
            format!(
                "{} shared, {missing} missed, {extras} false positives (at most {allowed} expected)",
                truth.len()
            ),
        );
    }

    if !results.entropy.is_empty() {
        let union = own.union(&graph);
        for r in &results.entropy {
            let exact = shannon_entropy(&derive_multiset(&union, r.metric));
            let gap = (r.h_merged_estimate - exact).abs();
            report.check(
                format!("entropy {}", r.metric),
                gap <= ENTROPY_TOLERANCE,
                format!("estimate {:.4}, exact {exact:.4}, gap {gap:.4} bits", r.h_merged_estimate),
            );
        }
    }

    if let Some(setup) = &results.ot_setup {
        let keys = disclosure
            .part_keys
            .as_ref()
            .ok_or(VerifyError::IncompleteDisclosure("part_keys"))?;
        let (name, passed, evidence) = envelope_check(setup, keys, &graph, &results.parts);
        report.check(name, passed, evidence);
    }
    Ok(report)
}

fn envelope_check(
    setup: &OtSetup,
    keys: &[crate::ot::PartKey],
    graph: &KnowledgeGraph,
    recovered: &[crate::ot::RecoveredPart],
) -> (String, bool, String) {
    let name = "transfer envelopes".to_string();
    if keys.len() != setup.envelopes.len() {
        return (name, false, format!("{} keys for {} envelopes", keys.len(), setup.envelopes.len()));
    }
    let mut parts = Vec::with_capacity(keys.len());
    for (j, (env, key)) in setup.envelopes.iter().zip(keys).enumerate() {
        let opened = decrypt_envelope(env, key)
            .ok()
            .and_then(|bytes| String::from_utf8(bytes).ok())
            .and_then(|text| parse_ntriples(&text).ok());
        match opened {
            Some(p) => parts.push(p.graph),
            None => return (name, false, format!("envelope {j} does not open with its disclosed key")),
        }
    }
    let total: usize = parts.iter().map(KnowledgeGraph::len).sum();
    let union = parts.iter().fold(KnowledgeGraph::new(), |acc, p| acc.union(p));
    if total != graph.len() || &union != graph {
        return (name, false, format!("envelopes hold {total} statements, graph has {}", graph.len()));
    }
    if let Some(r) = recovered.iter().find(|r| parts.get(r.index) != Some(&r.statements)) {
        return (name, false, format!("received part {} differs from envelope contents", r.index));
    }
    (name, true, format!("{} envelopes partition the disclosed graph", parts.len()))
}
