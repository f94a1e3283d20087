//! Bloom filters and counting Bloom filters.
//!
//! Cell positions use double hashing, `(h1 + i * h2) mod m`, where `h1` and
//! `h2` are the first two little-endian 64-bit words of
//! `SHA-256(seed || item)`. Both parties derive identical positions from the
//! same parameters, and a filter rebuilt from the same inputs is
//! byte-identical.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::wire::{WireError, WireReader, WireWriter};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BloomError {
    #[error("false-positive rate must lie in (0, 1), got {0}")]
    InvalidRate(f64),
    #[error("expected insertions must be at least 1")]
    NoInsertions,
    #[error("cells and hash count must be positive (cells={cells}, hashes={hashes})")]
    InvalidShape { cells: u64, hashes: u32 },
    #[error("noise fraction must lie in [0, 1), got {0}")]
    InvalidNoise(f64),
    #[error("counter overflow at cell {cell}: filter is undersized")]
    CounterOverflow { cell: u64 },
    #[error("multiplicity must be at least 1")]
    ZeroMultiplicity,
    #[error("filter is saturated; cardinality estimate unavailable")]
    Saturated,
    #[error("filter parameters differ")]
    ParamsMismatch,
    #[error(transparent)]
    Wire(#[from] WireError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FilterParams {
    pub cells: u64,
    pub hashes: u32,
    pub seed: [u8; 16],
}

impl FilterParams {
    pub fn new(cells: u64, hashes: u32, seed: [u8; 16]) -> Result<Self, BloomError> {
        if cells == 0 || hashes == 0 {
            return Err(BloomError::InvalidShape { cells, hashes });
        }
        Ok(Self { cells, hashes, seed })
    }

    /// Standard sizing: `m = ceil(-n ln p / ln² 2)`, `k = max(1, round(m/n · ln 2))`.
    pub fn optimal(expected: u64, fpr: f64, seed: [u8; 16]) -> Result<Self, BloomError> {
        if expected == 0 {
            return Err(BloomError::NoInsertions);
        }
        if !(fpr > 0.0 && fpr < 1.0) {
            return Err(BloomError::InvalidRate(fpr));
        }
        let n = expected as f64;
        let ln2 = std::f64::consts::LN_2;
        let cells = (-n * fpr.ln() / (ln2 * ln2)).ceil() as u64;
        let hashes = ((cells as f64 / n) * ln2).round().max(1.0) as u32;
        Self::new(cells, hashes, seed)
    }

    /// Single-hash sizing for counting filters: the cell budget of the optimal
    /// `k`-hash filter (`m · k`) spent on one hash, so a non-member lands on an
    /// occupied cell with probability about `1 / (k · m / n)`.
    pub fn counting(expected: u64, fpr: f64, seed: [u8; 16]) -> Result<Self, BloomError> {
        let opt = Self::optimal(expected, fpr, seed)?;
        Self::new(opt.cells * u64::from(opt.hashes), 1, seed)
    }

    /// Cell indices for `item`, one per hash function.
    pub fn positions(&self, item: &[u8]) -> impl Iterator<Item = u64> {
        let mut h = Sha256::new();
        h.update(self.seed);
        h.update(item);
        let d = h.finalize();
        let h1 = u64::from_le_bytes(d[0..8].try_into().expect("8 bytes"));
        let h2 = u64::from_le_bytes(d[8..16].try_into().expect("8 bytes"));
        let m = u128::from(self.cells);
        (0..self.hashes).map(move |i| {
            ((u128::from(h1) + u128::from(i) * u128::from(h2)) % m) as u64
        })
    }

    fn encode_into(&self, w: &mut WireWriter) {
        w.u64(self.cells).u32(self.hashes).raw(&self.seed);
    }

    fn decode_from(r: &mut WireReader<'_>) -> Result<Self, BloomError> {
        let cells = r.u64()?;
        let hashes = r.u32()?;
        let seed = r.array()?;
        Self::new(cells, hashes, seed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BloomFilter {
    params: FilterParams,
    bits: Vec<u8>,
    /// Local bookkeeping only; not part of the wire encoding.
    inserted: Option<u64>,
}

impl BloomFilter {
    pub fn new(params: FilterParams) -> Self {
        Self {
            params,
            bits: vec![0; params.cells.div_ceil(8) as usize],
            inserted: Some(0),
        }
    }

    pub fn params(&self) -> &FilterParams {
        &self.params
    }

    /// Number of `insert` calls, if this filter was built locally.
    pub fn inserted(&self) -> Option<u64> {
        self.inserted
    }

    fn get(&self, i: u64) -> bool {
        self.bits[(i / 8) as usize] & (1 << (i % 8)) != 0
    }

    fn set(&mut self, i: u64) {
        self.bits[(i / 8) as usize] |= 1 << (i % 8);
    }

    pub fn insert(&mut self, item: &[u8]) {
        for p in self.params.positions(item) {
            self.set(p);
        }
        if let Some(n) = self.inserted.as_mut() {
            *n += 1;
        }
    }

    pub fn contains(&self, item: &[u8]) -> bool {
        self.params.positions(item).all(|p| self.get(p))
    }

    pub fn popcount(&self) -> u64 {
        self.bits.iter().map(|b| u64::from(b.count_ones())).sum()
    }

    /// Sets `ceil(fraction · m)` additional bits, chosen uniformly among the
    /// currently unset ones (or all of them if fewer remain).
    pub fn add_noise(&mut self, fraction: f64, seed: u64) -> Result<(), BloomError> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(BloomError::InvalidNoise(fraction));
        }
        let wanted = (fraction * self.params.cells as f64).ceil() as usize;
        if wanted == 0 {
            return Ok(());
        }
        let unset: Vec<u64> = (0..self.params.cells).filter(|i| !self.get(*i)).collect();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let picks = index::sample(&mut rng, unset.len(), wanted.min(unset.len()));
        for i in picks.iter() {
            self.set(unset[i]);
        }
        Ok(())
    }

    /// `n̂ = -(m/k) ln(1 - X/m)` for popcount `X`.
    pub fn estimate_cardinality(&self) -> Result<f64, BloomError> {
        let m = self.params.cells as f64;
        let x = self.popcount() as f64;
        if x >= m {
            return Err(BloomError::Saturated);
        }
        Ok(-(m / f64::from(self.params.hashes)) * (1.0 - x / m).ln())
    }

    /// Packed bits, little-endian bit order within each byte.
    pub fn as_bytes(&self) -> &[u8] {
        &self.bits
    }

    /// Flips one bit in place. Exposed for fault-injection tests.
    pub fn flip_bit(&mut self, i: u64) {
        self.bits[(i / 8) as usize] ^= 1 << (i % 8);
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = WireWriter::with_capacity(self.bits.len() + 32);
        self.params.encode_into(&mut w);
        w.bytes(&self.bits);
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, BloomError> {
        let mut r = WireReader::new(bytes);
        let params = FilterParams::decode_from(&mut r)?;
        let bits = r.bytes()?;
        r.finish()?;
        if bits.len() as u64 != params.cells.div_ceil(8) {
            return Err(WireError::Invalid(format!(
                "bit array of {} bytes for {} cells",
                bits.len(),
                params.cells
            ))
            .into());
        }
        Ok(Self {
            params,
            bits: bits.to_vec(),
            inserted: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CountingBloomFilter {
    params: FilterParams,
    counters: Vec<u32>,
    total: u64,
}

impl CountingBloomFilter {
    pub fn new(params: FilterParams) -> Self {
        Self {
            params,
            counters: vec![0; params.cells as usize],
            total: 0,
        }
    }

    pub fn params(&self) -> &FilterParams {
        &self.params
    }

    pub fn counters(&self) -> &[u32] {
        &self.counters
    }

    /// Sum of all insert multiplicities.
    pub fn total(&self) -> u64 {
        self.total
    }

    /// Adds `multiplicity` to every cell of `item`. On overflow the filter is
    /// left unchanged.
    pub fn insert(&mut self, item: &[u8], multiplicity: u32) -> Result<(), BloomError> {
        if multiplicity == 0 {
            return Err(BloomError::ZeroMultiplicity);
        }
        let cells: Vec<u64> = self.params.positions(item).collect();
        // A cell hit twice by the same item receives the multiplicity twice.
        let mut pending: Vec<(u64, u64)> = Vec::with_capacity(cells.len());
        for c in cells {
            match pending.iter_mut().find(|(cell, _)| *cell == c) {
                Some((_, add)) => *add += u64::from(multiplicity),
                None => pending.push((c, u64::from(multiplicity))),
            }
        }
        for (cell, add) in &pending {
            if u64::from(self.counters[*cell as usize]) + add > u64::from(u32::MAX) {
                return Err(BloomError::CounterOverflow { cell: *cell });
            }
        }
        for (cell, add) in pending {
            self.counters[cell as usize] += add as u32;
        }
        self.total += u64::from(multiplicity);
        Ok(())
    }

    /// Minimum over the item's cells: never below the true multiplicity.
    pub fn count(&self, item: &[u8]) -> u32 {
        self.params
            .positions(item)
            .map(|p| self.counters[p as usize])
            .min()
            .unwrap_or(0)
    }

    /// Pointwise sum of two filters with equal parameters.
    pub fn merge(&self, other: &CountingBloomFilter) -> Result<CountingBloomFilter, BloomError> {
        if self.params != other.params {
            return Err(BloomError::ParamsMismatch);
        }
        let mut counters = Vec::with_capacity(self.counters.len());
        for (i, (a, b)) in self.counters.iter().zip(&other.counters).enumerate() {
            counters.push(
                a.checked_add(*b)
                    .ok_or(BloomError::CounterOverflow { cell: i as u64 })?,
            );
        }
        Ok(Self {
            params: self.params,
            counters,
            total: self.total + other.total,
        })
    }

    /// Header, then the nonzero cells as `(index, count)` pairs of `u32`s in
    /// increasing index order. A single-hash filter leaves almost every cell
    /// empty, so this is far smaller than the dense array.
    pub fn encode(&self) -> Vec<u8> {
        let nonzero: Vec<(usize, u32)> = self
            .counters
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != 0)
            .map(|(i, c)| (i, *c))
            .collect();
        let mut w = WireWriter::with_capacity(nonzero.len() * 8 + 40);
        self.params.encode_into(&mut w);
        w.u32(nonzero.len() as u32);
        for (i, c) in nonzero {
            w.u32(i as u32).u32(c);
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, BloomError> {
        let mut r = WireReader::new(bytes);
        let params = FilterParams::decode_from(&mut r)?;
        if params.cells > MAX_COUNTING_CELLS {
            return Err(WireError::Invalid(format!("{} cells exceed the limit of {MAX_COUNTING_CELLS}", params.cells)).into());
        }
        let entries = r.count(8)?;
        let mut counters = vec![0u32; params.cells as usize];
        let mut previous: Option<u32> = None;
        let mut sum = 0u64;
        for _ in 0..entries {
            let (index, count) = (r.u32()?, r.u32()?);
            if previous.is_some_and(|p| index <= p) || u64::from(index) >= params.cells || count == 0 {
                return Err(WireError::Invalid(format!("bad counter entry ({index}, {count})")).into());
            }
            previous = Some(index);
            counters[index as usize] = count;
            sum += u64::from(count);
        }
        r.finish()?;
        let k = u64::from(params.hashes);
        if sum % k != 0 {
            return Err(WireError::Invalid("counter sum is not a multiple of k".into()).into());
        }
        Ok(Self {
            params,
            counters,
            total: sum / k,
        })
    }
}

/// Largest counting filter accepted from the wire: what a dense array of
/// `u32` counters could carry in one frame.
pub const MAX_COUNTING_CELLS: u64 = u32::MAX as u64 / 4;

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, RngCore};

    const SEED: [u8; 16] = [7; 16];

    #[test]
    fn optimal_params_closed_form() {
        // -1000 ln 0.01 / ln²2 = 9585.06 -> 9586; 9.586 · ln 2 = 6.64 -> 7
        let p = FilterParams::optimal(1000, 0.01, SEED).unwrap();
        assert_eq!((p.cells, p.hashes), (9586, 7));
        // -ln 0.5 / ln²2 = 1.4427 -> 2; 2 · ln 2 = 1.386 -> 1
        let p = FilterParams::optimal(1, 0.5, SEED).unwrap();
        assert_eq!((p.cells, p.hashes), (2, 1));
    }

    #[test]
    fn optimal_params_monotone_in_rate() {
        let tight = FilterParams::optimal(500, 1e-6, SEED).unwrap();
        let loose = FilterParams::optimal(500, 1e-2, SEED).unwrap();
        assert!(tight.cells > loose.cells);
    }

    #[test]
    fn optimal_params_rejects_bad_rates() {
        for p in [0.0, 1.0, -0.1, 1.5, f64::NAN] {
            assert!(matches!(
                FilterParams::optimal(10, p, SEED),
                Err(BloomError::InvalidRate(_))
            ));
        }
        assert_eq!(FilterParams::optimal(0, 0.1, SEED), Err(BloomError::NoInsertions));
    }

    #[test]
    fn fresh_filter_contains_nothing() {
        let f = BloomFilter::new(FilterParams::optimal(100, 0.01, SEED).unwrap());
        assert!(!f.contains(b"anything"));
        assert_eq!(f.estimate_cardinality().unwrap(), 0.0);
    }

    #[test]
    fn observed_fpr_within_bound() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let mut f = BloomFilter::new(FilterParams::optimal(1000, 1e-3, SEED).unwrap());
        for _ in 0..1000 {
            f.insert(&rng.gen::<[u8; 16]>());
        }
        // Members are 16 bytes; probes are 17 bytes so none can be a member.
        let probes = 100_000;
        let fp = (0..probes)
            .filter(|_| f.contains(&rng.gen::<[u8; 17]>()))
            .count();
        assert!((fp as f64 / probes as f64) <= 2e-3, "fpr {}", fp as f64 / probes as f64);
        let est = f.estimate_cardinality().unwrap();
        assert!((est - 1000.0).abs() <= 50.0, "estimate {est}");
    }

    #[test]
    fn noise_sets_requested_bits() {
        let mut f = BloomFilter::new(FilterParams::new(100, 3, SEED).unwrap());
        f.add_noise(0.0, 1).unwrap();
        assert_eq!(f.popcount(), 0);
        f.add_noise(0.5, 1).unwrap();
        assert!(f.popcount() >= 50);

        let mut g = BloomFilter::new(FilterParams::new(1000, 3, SEED).unwrap());
        g.insert(b"member");
        let mut h = g.clone();
        g.add_noise(0.3, 9).unwrap();
        h.add_noise(0.3, 9).unwrap();
        assert_eq!(g, h);
        assert!(g.contains(b"member"));
        assert!(matches!(g.add_noise(1.0, 1), Err(BloomError::InvalidNoise(_))));
    }

    #[test]
    fn saturated_filter_has_no_estimate() {
        let mut f = BloomFilter::new(FilterParams::new(8, 1, SEED).unwrap());
        f.add_noise(0.99, 3).unwrap();
        assert_eq!(f.popcount(), 8);
        assert_eq!(f.estimate_cardinality(), Err(BloomError::Saturated));
    }

    #[test]
    fn counting_basics() {
        let mut f = CountingBloomFilter::new(FilterParams::counting(100, 1e-3, SEED).unwrap());
        assert_eq!(f.params().hashes, 1);
        assert_eq!(f.count(b"x"), 0);
        f.insert(b"x", 3).unwrap();
        assert_eq!(f.count(b"x"), 3);
        assert_eq!(f.insert(b"x", 0), Err(BloomError::ZeroMultiplicity));

        let mut a = CountingBloomFilter::new(*f.params());
        a.insert(b"y", 2).unwrap();
        a.insert(b"y", 1).unwrap();
        let mut b = CountingBloomFilter::new(*f.params());
        b.insert(b"y", 3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn counting_overflow_is_an_error() {
        let mut f = CountingBloomFilter::new(FilterParams::new(4, 1, SEED).unwrap());
        f.insert(b"x", u32::MAX).unwrap();
        let before = f.clone();
        assert!(matches!(f.insert(b"x", 1), Err(BloomError::CounterOverflow { .. })));
        assert_eq!(f, before);
    }

    #[test]
    fn counting_query_matches_exact_multiset() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let params = FilterParams::new(1 << 20, 1, SEED).unwrap();
        let mut f = CountingBloomFilter::new(params);
        let items: Vec<([u8; 8], u32)> = (0..100).map(|_| (rng.gen(), rng.gen_range(1..20))).collect();
        for (item, count) in &items {
            f.insert(item, *count).unwrap();
        }
        let exact = items.iter().filter(|(item, c)| f.count(item) == *c).count();
        assert!(exact >= 99);
        assert!(items.iter().all(|(item, c)| f.count(item) >= *c));
    }

    #[test]
    fn counter_sum_is_k_times_total() {
        let mut f = CountingBloomFilter::new(FilterParams::new(1 << 12, 3, SEED).unwrap());
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        for i in 0..200u32 {
            f.insert(&i.to_le_bytes(), rng.gen_range(1..5)).unwrap();
        }
        let sum: u64 = f.counters().iter().map(|c| u64::from(*c)).sum();
        assert_eq!(sum, 3 * f.total());
        let decoded = CountingBloomFilter::decode(&f.encode()).unwrap();
        assert_eq!(decoded, f);
    }

    #[test]
    fn wire_layout_is_bit_exact() {
        let mut f = BloomFilter::new(FilterParams::new(10, 1, [0; 16]).unwrap());
        f.set(0);
        f.set(9);
        let bytes = f.encode();
        let mut expected = Vec::new();
        expected.extend_from_slice(&10u64.to_be_bytes());
        expected.extend_from_slice(&1u32.to_be_bytes());
        expected.extend_from_slice(&[0; 16]);
        expected.extend_from_slice(&2u32.to_be_bytes());
        expected.extend_from_slice(&[0b0000_0001, 0b0000_0010]);
        assert_eq!(bytes, expected);

        let mut c = CountingBloomFilter::new(FilterParams::new(2, 1, [0; 16]).unwrap());
        c.counters[1] = 0x0102_0304;
        c.total = 0x0102_0304;
        let bytes = c.encode();
        assert_eq!(&bytes[bytes.len() - 12..], &[0, 0, 0, 1, 0, 0, 0, 1, 1, 2, 3, 4]);
    }

    #[test]
    fn malformed_counter_entries_are_rejected() {
        let header = |cells: u64| {
            let mut w = WireWriter::new();
            FilterParams::new(cells, 1, [0; 16]).unwrap().encode_into(&mut w);
            w
        };
        let entries = |cells: u64, list: &[(u32, u32)]| {
            let mut w = header(cells);
            w.u32(list.len() as u32);
            for (i, c) in list {
                w.u32(*i).u32(*c);
            }
            CountingBloomFilter::decode(&w.finish())
        };
        assert!(entries(8, &[(1, 2), (5, 1)]).is_ok());
        assert!(entries(8, &[(5, 1), (1, 2)]).is_err());
        assert!(entries(8, &[(1, 2), (1, 2)]).is_err());
        assert!(entries(8, &[(8, 1)]).is_err());
        assert!(entries(8, &[(3, 0)]).is_err());
        assert!(entries(MAX_COUNTING_CELLS + 1, &[]).is_err());
    }

    proptest! {
        #[test]
        fn no_false_negatives(items in proptest::collection::vec(any::<Vec<u8>>(), 0..60)) {
            let mut f = BloomFilter::new(FilterParams::optimal(60, 0.05, SEED).unwrap());
            for item in &items {
                f.insert(item);
            }
            for item in &items {
                prop_assert!(f.contains(item));
            }
            prop_assert!(f.popcount() <= u64::from(f.params().hashes) * f.inserted().unwrap());
            let back = BloomFilter::decode(&f.encode()).unwrap();
            prop_assert_eq!(back.as_bytes(), f.as_bytes());
        }

        #[test]
        fn counting_merge_equals_concatenated_insertions(
            a in proptest::collection::vec((any::<u16>(), 1u32..50), 0..40),
            b in proptest::collection::vec((any::<u16>(), 1u32..50), 0..40),
        ) {
            let params = FilterParams::new(257, 2, SEED).unwrap();
            let build = |xs: &[(u16, u32)]| {
                let mut f = CountingBloomFilter::new(params);
                for (x, c) in xs {
                    f.insert(&x.to_le_bytes(), *c).unwrap();
                }
                f
            };
            let both: Vec<_> = a.iter().chain(&b).copied().collect();
            prop_assert_eq!(build(&a).merge(&build(&b)).unwrap(), build(&both));
        }

        #[test]
        fn estimate_monotone_in_popcount(fill in 0u64..500) {
            let mut rng = ChaCha20Rng::seed_from_u64(fill);
            let mut f = BloomFilter::new(FilterParams::new(1000, 3, SEED).unwrap());
            let mut last = 0.0;
            for _ in 0..fill {
                f.insert(&rng.next_u64().to_le_bytes());
                let est = f.estimate_cardinality().unwrap();
                prop_assert!(est >= last);
                last = est;
            }
        }
    }
}
