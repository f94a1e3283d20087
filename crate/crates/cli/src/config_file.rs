//! Flat `key = value` run files: session parameters plus the answers a
//! non-interactive run gives at each checkpoint.

use std::path::Path;

use kgtrade_core::entropy::MetricId;
use kgtrade_core::protocol::{Checkpoint, ConfigError, Decider, Decision, SessionConfig, CONFIG_KEYS};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunFileError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Checkpoint answers. `None` means continue.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Decisions {
    /// Buyer: `continue_after_step1` ..= `continue_after_step4`.
    pub continue_after: [Option<bool>; 4],
    /// Seller: `release_step1` ..= `release_step5`.
    pub release: [Option<bool>; 5],
    /// Buyer: metrics to compute in step 3, a subset of the agreed ones.
    pub select_metrics: Option<Vec<MetricId>>,
}

impl Decisions {
    pub const KEYS: [&'static str; 10] = [
        "continue_after_step1",
        "continue_after_step2",
        "continue_after_step3",
        "continue_after_step4",
        "release_step1",
        "release_step2",
        "release_step3",
        "release_step4",
        "release_step5",
        "select_metrics",
    ];

    /// Returns `Ok(false)` when `key` is not a decision key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool, ConfigError> {
        let value = value.trim();
        let bad = |reason: &str| ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
            reason: reason.to_string(),
        };
        let flag = || parse_bool(value).ok_or_else(|| bad("expected true or false"));
        let step = |prefix: &str| key.strip_prefix(prefix).and_then(|s| s.parse::<usize>().ok());
        if let Some(n) = step("continue_after_step").filter(|n| (1..=4).contains(n)) {
            self.continue_after[n - 1] = Some(flag()?);
        } else if let Some(n) = step("release_step").filter(|n| (1..=5).contains(n)) {
            self.release[n - 1] = Some(flag()?);
        } else if key == "select_metrics" {
            let metrics = value
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty() && *s != "none")
                .map(|s| s.parse::<MetricId>().map_err(|e| bad(&e.to_string())))
                .collect::<Result<_, _>>()?;
            self.select_metrics = Some(metrics);
        } else {
            return Ok(false);
        }
        Ok(true)
    }
}

pub fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "yes" | "y" | "1" => Some(true),
        "false" | "no" | "n" | "0" => Some(false),
        _ => None,
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunFile {
    pub session: SessionConfig,
    pub decisions: Decisions,
}

impl RunFile {
    /// Applies one `key = value` pair to whichever half owns the key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        if self.decisions.set(key, value)? {
            return Ok(());
        }
        if CONFIG_KEYS.contains(&key) {
            return self.session.set(key, value);
        }
        Err(ConfigError::UnknownKey(key.to_string()))
    }

    /// Lines over the defaults; validation is left to the caller, since
    /// flag overrides may still follow.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut file = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax(i + 1))?;
            file.set(key.trim(), value)?;
        }
        Ok(file)
    }

    pub fn load(path: &Path) -> Result<Self, RunFileError> {
        let text = std::fs::read_to_string(path).map_err(|source| RunFileError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Ok(Self::parse(&text)?)
    }
}

/// Answers checkpoints from a [`Decisions`] table.
#[derive(Debug, Clone)]
pub struct ScriptedDecider {
    decisions: Decisions,
}

impl ScriptedDecider {
    pub fn new(decisions: Decisions) -> Self {
        Self { decisions }
    }
}

impl Decider for ScriptedDecider {
    fn decide(&mut self, checkpoint: &Checkpoint<'_>) -> Decision {
        let step = checkpoint.step() as usize;
        let go = match checkpoint {
            Checkpoint::SellerRelease(_) => self.decisions.release.get(step - 1).copied().flatten(),
            _ => self.decisions.continue_after.get(step - 1).copied().flatten(),
        };
        if go == Some(false) {
            return Decision::Abort;
        }
        match (checkpoint, &self.decisions.select_metrics) {
            (Checkpoint::Intersection { metrics, .. }, Some(wanted)) => {
                Decision::SelectMetrics(metrics.iter().copied().filter(|m| wanted.contains(m)).collect())
            }
            _ => Decision::Continue,
        }
    }
}
