//! JSON run reports. Field order is fixed by the struct layout and every map
//! is ordered, so equal runs serialize to equal bytes.

use std::collections::BTreeMap;
use std::time::Duration;

use kgtrade_core::entropy::EntropyResult;
use kgtrade_core::leak::LedgerReport;
use kgtrade_core::net::TrafficMeter;
use kgtrade_core::protocol::{
    BuyerOutcome, RecordSummary, SellerOutcome, SessionConfig, SessionState, VerificationReport, CONFIG_KEYS,
};
use kgtrade_core::role::{Direction, Role};
use serde::Serialize;

/// Process exit statuses, one per outcome category.
pub mod exit {
    pub const OK: i32 = 0;
    /// Local I/O or connection failure before a session could run.
    pub const IO: i32 = 1;
    pub const USAGE: i32 = 2;
    pub const ABORTED: i32 = 3;
    pub const VERIFICATION_FAILED: i32 = 4;
}

#[derive(Debug, Clone, Serialize)]
pub struct Outcome {
    pub state: SessionState,
    pub abort_detail: Option<String>,
    pub exit_code: i32,
}

#[derive(Debug, Clone, Serialize)]
pub struct Timing {
    pub step_seconds: BTreeMap<String, f64>,
    pub total_seconds: f64,
    /// Resident-set high-water mark of this process.
    pub peak_memory_kib: Option<u64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Traffic {
    pub total_bytes: BTreeMap<Direction, u64>,
    pub frames: u64,
    pub per_step: TrafficMeter,
}

impl Traffic {
    pub fn from_meter(meter: &TrafficMeter) -> Self {
        Self {
            total_bytes: Direction::BOTH.iter().map(|d| (*d, meter.total(*d))).collect(),
            frames: meter.frames(),
            per_step: meter.clone(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PartSummary {
    pub envelope: usize,
    pub statements: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Verification {
    pub passed: bool,
    pub error: Option<String>,
    pub report: Option<VerificationReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub role: Role,
    pub outcome: Outcome,
    pub config: BTreeMap<String, String>,
    /// Local graph size after exclusions.
    pub statements: usize,
    pub timing: Option<Timing>,
    pub traffic: Traffic,
    pub leak: LedgerReport,
    pub signatures_issued: Option<u64>,
    pub intersection_size: Option<usize>,
    pub psi_false_positive_rate: Option<f64>,
    pub entropy: Vec<EntropyResult>,
    pub parts_received: Vec<PartSummary>,
    pub verification: Option<Verification>,
    pub transcript: Vec<RecordSummary>,
}

pub fn config_map(config: &SessionConfig) -> BTreeMap<String, String> {
    let text = config.to_text();
    let map: BTreeMap<String, String> = text
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
    debug_assert_eq!(map.len(), CONFIG_KEYS.len());
    map
}

/// Peak resident memory from `/proc/self/status`, where available.
pub fn peak_memory_kib() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

pub fn timing(step_times: &BTreeMap<u8, Duration>, total: Duration) -> Timing {
    Timing {
        step_seconds: step_times
            .iter()
            .map(|(s, d)| (format!("step{s}"), d.as_secs_f64()))
            .collect(),
        total_seconds: total.as_secs_f64(),
        peak_memory_kib: peak_memory_kib(),
    }
}

pub fn state_exit_code(state: SessionState) -> i32 {
    if state.is_closed() {
        exit::OK
    } else {
        exit::ABORTED
    }
}

impl RunReport {
    pub fn seller(config: &SessionConfig, statements: usize, outcome: &SellerOutcome) -> Self {
        Self {
            role: Role::Seller,
            outcome: Outcome {
                state: outcome.state,
                abort_detail: outcome.abort_detail.clone(),
                exit_code: state_exit_code(outcome.state),
            },
            config: config_map(config),
            statements,
            timing: None,
            traffic: Traffic::from_meter(&outcome.meter),
            leak: outcome.ledger.report(),
            signatures_issued: Some(outcome.signatures_issued),
            intersection_size: None,
            psi_false_positive_rate: None,
            entropy: Vec::new(),
            parts_received: Vec::new(),
            verification: None,
            transcript: outcome.transcript.summary(),
        }
    }

    pub fn buyer(outcome: &BuyerOutcome, verification: Option<Verification>) -> Self {
        let failed = verification.as_ref().is_some_and(|v| !v.passed);
        let exit_code = match state_exit_code(outcome.state) {
            exit::OK if failed => exit::VERIFICATION_FAILED,
            code => code,
        };
        let results = &outcome.results;
        Self {
            role: Role::Buyer,
            outcome: Outcome {
                state: outcome.state,
                abort_detail: outcome.abort_detail.clone(),
                exit_code,
            },
            config: config_map(&outcome.config),
            statements: outcome.graph.len(),
            timing: None,
            traffic: Traffic::from_meter(&outcome.meter),
            leak: outcome.ledger.report(),
            signatures_issued: None,
            intersection_size: results.intersection.as_ref().map(|i| i.statements.len()),
            psi_false_positive_rate: results.psi_false_positive_rate,
            entropy: results.entropy.clone(),
            parts_received: results
                .parts
                .iter()
                .map(|p| PartSummary {
                    envelope: p.index,
                    statements: p.statements.len(),
                })
                .collect(),
            verification,
            transcript: outcome.transcript.summary(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        self.outcome.exit_code
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}
