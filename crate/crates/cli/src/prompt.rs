//! Terminal yes/no gating at each step boundary.

use std::io::{BufRead, Write};

use kgtrade_core::entropy::MetricId;
use kgtrade_core::protocol::{Checkpoint, Decider, Decision};

use crate::config_file::parse_bool;

/// Asks the operator at every checkpoint. End of input counts as "no".
pub struct PromptDecider<R, W> {
    input: R,
    output: W,
}

impl<R: BufRead, W: Write> PromptDecider<R, W> {
    pub fn new(input: R, output: W) -> Self {
        Self { input, output }
    }

    fn line(&mut self, question: &str) -> Option<String> {
        let _ = write!(self.output, "{question} ");
        let _ = self.output.flush();
        let mut answer = String::new();
        match self.input.read_line(&mut answer) {
            Ok(0) | Err(_) => None,
            Ok(_) => Some(answer.trim().to_string()),
        }
    }

    fn yes_no(&mut self, question: &str) -> bool {
        loop {
            let Some(answer) = self.line(&format!("{question} [y/n]")) else {
                return false;
            };
            match parse_bool(&answer) {
                Some(v) => return v,
                None => {
                    let _ = writeln!(self.output, "please answer y or n");
                }
            }
        }
    }

    /// `None` keeps every agreed metric.
    fn pick_metrics(&mut self, agreed: &[MetricId]) -> Option<Vec<MetricId>> {
        let names: Vec<&str> = agreed.iter().map(|m| m.name()).collect();
        loop {
            let answer = self.line(&format!(
                "metrics for the entropy step ({}; blank for all, 'none' to skip):",
                names.join(", ")
            ))?;
            if answer.is_empty() {
                return None;
            }
            if answer.eq_ignore_ascii_case("none") {
                return Some(Vec::new());
            }
            let picked: Result<Vec<MetricId>, _> = answer.split(',').map(|s| s.trim().parse::<MetricId>()).collect();
            match picked {
                Ok(p) if p.iter().all(|m| agreed.contains(m)) => {
                    return Some(agreed.iter().copied().filter(|m| p.contains(m)).collect())
                }
                _ => {
                    let _ = writeln!(self.output, "choose among: {}", names.join(", "));
                }
            }
        }
    }
}

impl<R: BufRead, W: Write> Decider for PromptDecider<R, W> {
    fn decide(&mut self, checkpoint: &Checkpoint<'_>) -> Decision {
        let summary = match checkpoint {
            Checkpoint::Statistics(stats) => format!(
                "step 1: Seller reports {} statements",
                stats.get("statements").unwrap_or(f64::NAN)
            ),
            Checkpoint::Intersection { result, .. } => {
                format!("step 2: {} statements shared with the Seller", result.statements.len())
            }
            Checkpoint::Entropy(results) => {
                let gains: Vec<String> = results.iter().map(|r| format!("{} gain {:.4} bits", r.metric, r.gain)).collect();
                format!("step 3: {}", gains.join("; "))
            }
            Checkpoint::Parts(parts) => {
                let sizes: Vec<String> = parts.iter().map(|p| p.statements.len().to_string()).collect();
                format!("step 4: received parts with {} statements", sizes.join(", "))
            }
            Checkpoint::SellerRelease(5) => "step 5: ready to disclose graph and secrets".to_string(),
            Checkpoint::SellerRelease(step) => format!("step {step}: ready to release"),
        };
        let _ = writeln!(self.output, "{summary}");
        if !self.yes_no("continue?") {
            return Decision::Abort;
        }
        match checkpoint {
            Checkpoint::Intersection { metrics, .. } if !metrics.is_empty() => match self.pick_metrics(metrics) {
                Some(picked) => Decision::SelectMetrics(picked),
                None => Decision::Continue,
            },
            _ => Decision::Continue,
        }
    }
}
