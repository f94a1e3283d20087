use serde::Serialize;
use sha2::{Digest, Sha256};

use super::message::{tag, tag_name};
use crate::role::Direction;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptRecord {
    pub step: u8,
    pub direction: Direction,
    pub tag: u8,
    pub length: u64,
    pub digest: [u8; 32],
    /// Kept only where a later replay needs the bytes themselves.
    pub payload: Option<Vec<u8>>,
}

/// Append-only log of every frame a party sent or received.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    records: Vec<TranscriptRecord>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&mut self, step: u8, direction: Direction, t: u8, payload: &[u8], retain: bool) {
        self.records.push(TranscriptRecord {
            step,
            direction,
            tag: t,
            length: payload.len() as u64,
            digest: Sha256::digest(payload).into(),
            payload: retain.then(|| payload.to_vec()),
        });
    }

    /// Drops every retained payload, keeping lengths and digests.
    pub fn strip_payloads(&mut self) {
        for r in &mut self.records {
            r.payload = None;
        }
    }

    pub fn records(&self) -> &[TranscriptRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn total_bytes(&self, direction: Direction) -> u64 {
        self.records
            .iter()
            .filter(|r| r.direction == direction)
            .map(|r| r.length)
            .sum()
    }

    pub fn with_tag(&self, t: u8) -> impl Iterator<Item = &TranscriptRecord> {
        self.records.iter().filter(move |r| r.tag == t)
    }

    /// No signed batch appears after the first filter of either kind.
    pub fn signatures_precede_filters(&self) -> bool {
        let first_filter = self
            .records
            .iter()
            .position(|r| r.tag == tag::PSI_FILTER || r.tag == tag::COUNTING_FILTER);
        let last_signed = self.records.iter().rposition(|r| r.tag == tag::SIGNED_BATCH);
        match (last_signed, first_filter) {
            (Some(s), Some(f)) => s < f,
            _ => true,
        }
    }

    pub fn summary(&self) -> Vec<RecordSummary> {
        self.records
            .iter()
            .map(|r| RecordSummary {
                step: r.step,
                direction: r.direction,
                message: tag_name(r.tag),
                bytes: r.length,
                sha256: r.digest.iter().map(|b| format!("{b:02x}")).collect(),
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecordSummary {
    pub step: u8,
    pub direction: Direction,
    pub message: &'static str,
    pub bytes: u64,
    pub sha256: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordering_check() {
        let mut t = Transcript::new();
        t.record(2, Direction::SellerToBuyer, tag::SIGNED_BATCH, b"a", false);
        t.record(2, Direction::SellerToBuyer, tag::PSI_FILTER, b"bb", false);
        t.record(3, Direction::SellerToBuyer, tag::COUNTING_FILTER, b"c", false);
        assert!(t.signatures_precede_filters());
        t.record(3, Direction::SellerToBuyer, tag::SIGNED_BATCH, b"d", false);
        assert!(!t.signatures_precede_filters());
        assert_eq!(t.total_bytes(Direction::SellerToBuyer), 5);
        assert_eq!(t.total_bytes(Direction::BuyerToSeller), 0);
    }

    #[test]
    fn retains_only_on_request() {
        let mut t = Transcript::new();
        t.record(1, Direction::BuyerToSeller, tag::CONFIG, b"x", true);
        t.record(1, Direction::SellerToBuyer, tag::CONFIG, b"y", false);
        assert_eq!(t.records()[0].payload.as_deref(), Some(&b"x"[..]));
        assert_eq!(t.records()[1].payload, None);
        assert_eq!(t.records()[1].digest, <[u8; 32]>::from(Sha256::digest(b"y")));
    }
}
