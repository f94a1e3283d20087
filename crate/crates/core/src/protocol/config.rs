use std::fmt::Write as _;

use thiserror::Error;

use crate::blindsig::MIN_MODULUS_BITS;
use crate::entropy::MetricId;
use crate::kg::Iri;
use crate::partition::Strategy;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ConfigError {
    #[error("unknown configuration key {0:?}")]
    UnknownKey(String),
    #[error("bad value {value:?} for {key}: {reason}")]
    BadValue {
        key: String,
        value: String,
        reason: String,
    },
    #[error("line {0}: expected key = value")]
    Syntax(usize),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// Parameters both parties must agree on before any graph data moves.
#[derive(Debug, Clone, PartialEq)]
pub struct SessionConfig {
    pub psi_fpr: f64,
    pub counting_fpr: f64,
    /// Entropy metrics to compute; empty disables the entropy step.
    pub metrics: Vec<MetricId>,
    pub parts: usize,
    pub buy: usize,
    /// Maximum number of blind signatures the Seller will issue.
    pub signature_budget: u64,
    /// Predicates stripped from both graphs before anything else happens.
    pub excluded_predicates: Vec<Iri>,
    pub decoy_count: usize,
    pub modulus_bits: usize,
    pub psi_seed: [u8; 16],
    pub counting_seed: [u8; 16],
    /// Fraction of unset PSI filter bits the Seller sets at random.
    pub psi_noise: f64,
    pub partition: Strategy,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            psi_fpr: 1e-9,
            counting_fpr: 1e-6,
            metrics: vec![MetricId::PredObjDesc],
            parts: 10,
            buy: 1,
            signature_budget: 10_000_000,
            excluded_predicates: Vec::new(),
            decoy_count: 0,
            modulus_bits: 2048,
            psi_seed: *b"kgtrade-psi-seed",
            counting_seed: *b"kgtrade-cbf-seed",
            psi_noise: 0.0,
            partition: Strategy::Clustered,
        }
    }
}

pub const CONFIG_KEYS: [&str; 13] = [
    "psi_fpr",
    "counting_fpr",
    "metrics",
    "parts",
    "buy",
    "signature_budget",
    "excluded_predicates",
    "decoy_count",
    "modulus_bits",
    "psi_seed",
    "counting_seed",
    "psi_noise",
    "partition",
];

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

fn unhex16(s: &str) -> Option<[u8; 16]> {
    if s.len() != 32 || !s.is_ascii() {
        return None;
    }
    let mut out = [0u8; 16];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).ok()?;
    }
    Some(out)
}

impl SessionConfig {
    /// Canonical `key = value` lines in fixed key order. Two configs are
    /// equal exactly when their texts are.
    pub fn to_text(&self) -> String {
        let metrics: Vec<&str> = self.metrics.iter().map(|m| m.name()).collect();
        let excluded: Vec<&str> = self.excluded_predicates.iter().map(Iri::as_str).collect();
        let mut out = String::new();
        for key in CONFIG_KEYS {
            let value = match key {
                "psi_fpr" => self.psi_fpr.to_string(),
                "counting_fpr" => self.counting_fpr.to_string(),
                "metrics" => metrics.join(","),
                "parts" => self.parts.to_string(),
                "buy" => self.buy.to_string(),
                "signature_budget" => self.signature_budget.to_string(),
                "excluded_predicates" => excluded.join(","),
                "decoy_count" => self.decoy_count.to_string(),
                "modulus_bits" => self.modulus_bits.to_string(),
                "psi_seed" => hex(&self.psi_seed),
                "counting_seed" => hex(&self.counting_seed),
                "psi_noise" => self.psi_noise.to_string(),
                "partition" => self.partition.to_string(),
                _ => unreachable!("listed key"),
            };
            let _ = writeln!(out, "{key} = {value}");
        }
        out
    }

    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let value = value.trim();
        let bad = |reason: &dyn std::fmt::Display| ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
            reason: reason.to_string(),
        };
        match key {
            "psi_fpr" => self.psi_fpr = value.parse().map_err(|e| bad(&e))?,
            "counting_fpr" => self.counting_fpr = value.parse().map_err(|e| bad(&e))?,
            "metrics" => {
                self.metrics = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty() && *s != "none")
                    .map(|s| s.parse::<MetricId>().map_err(|e| bad(&e)))
                    .collect::<Result<_, _>>()?
            }
            "parts" => self.parts = value.parse().map_err(|e| bad(&e))?,
            "buy" => self.buy = value.parse().map_err(|e| bad(&e))?,
            "signature_budget" => self.signature_budget = value.parse().map_err(|e| bad(&e))?,
            "excluded_predicates" => {
                self.excluded_predicates = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| Iri::new(s.trim_start_matches('<').trim_end_matches('>')).map_err(|e| bad(&e)))
                    .collect::<Result<_, _>>()?
            }
            "decoy_count" => self.decoy_count = value.parse().map_err(|e| bad(&e))?,
            "modulus_bits" => self.modulus_bits = value.parse().map_err(|e| bad(&e))?,
            "psi_seed" => self.psi_seed = unhex16(value).ok_or_else(|| bad(&"expected 32 hex digits"))?,
            "counting_seed" => {
                self.counting_seed = unhex16(value).ok_or_else(|| bad(&"expected 32 hex digits"))?
            }
            "psi_noise" => self.psi_noise = value.parse().map_err(|e| bad(&e))?,
            "partition" => self.partition = value.parse().map_err(|e| bad(&e))?,
            other => return Err(ConfigError::UnknownKey(other.to_string())),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn from_text(text: &str) -> Result<Self, ConfigError> {
        let mut config = Self::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::Syntax(i + 1))?;
            config.set(key.trim(), value)?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        for (name, p) in [("psi_fpr", self.psi_fpr), ("counting_fpr", self.counting_fpr)] {
            if !(p > 0.0 && p < 1.0) {
                return invalid(format!("{name} must lie in (0, 1)"));
            }
        }
        if !(0.0..1.0).contains(&self.psi_noise) {
            return invalid("psi_noise must lie in [0, 1)".into());
        }
        if self.buy == 0 || self.buy > self.parts {
            return invalid(format!("need 1 <= buy <= parts, got buy={} parts={}", self.buy, self.parts));
        }
        if self.modulus_bits < MIN_MODULUS_BITS {
            return invalid(format!("modulus_bits must be at least {MIN_MODULUS_BITS}"));
        }
        for (i, m) in self.metrics.iter().enumerate() {
            if self.metrics[..i].contains(m) {
                return invalid(format!("metric {m} listed twice"));
            }
        }
        Ok(())
    }

    pub fn entropy_enabled(&self) -> bool {
        !self.metrics.is_empty()
    }
}
