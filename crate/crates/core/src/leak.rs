//! Per-step accounting of what each party learns about the other.
//!
//! Each record call appends one entry holding the realized counters and,
//! where only an upper bound is known in general, the ceiling that the
//! realized counts must respect. Totals are always sums over entries.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::entropy::{MatchObservation, MetricId, Position};
use crate::kg::KnowledgeGraph;
use crate::role::Direction;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown adversary model {0:?}")]
pub struct UnknownModel(pub String);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum AdversaryModel {
    Fair,
    Curious,
    Malicious,
}

impl AdversaryModel {
    pub fn name(self) -> &'static str {
        match self {
            AdversaryModel::Fair => "fair",
            AdversaryModel::Curious => "curious",
            AdversaryModel::Malicious => "malicious",
        }
    }
}

impl fmt::Display for AdversaryModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AdversaryModel {
    type Err = UnknownModel;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "fair" => Ok(AdversaryModel::Fair),
            "curious" => Ok(AdversaryModel::Curious),
            "malicious" => Ok(AdversaryModel::Malicious),
            _ => Err(UnknownModel(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum LeakMetric {
    Statements,
    Resources,
    Subjects,
    Predicates,
    Objects,
    Structural,
    Amount,
}

impl LeakMetric {
    pub const ALL: [LeakMetric; 7] = [
        LeakMetric::Statements,
        LeakMetric::Resources,
        LeakMetric::Subjects,
        LeakMetric::Predicates,
        LeakMetric::Objects,
        LeakMetric::Structural,
        LeakMetric::Amount,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LeakMetric::Statements => "ILStatements",
            LeakMetric::Resources => "ILResources",
            LeakMetric::Subjects => "ILSubjects",
            LeakMetric::Predicates => "ILPredicates",
            LeakMetric::Objects => "ILObjects",
            LeakMetric::Structural => "ILStructural",
            LeakMetric::Amount => "ILAmount",
        }
    }

    const CONTENT: [LeakMetric; 5] = [
        LeakMetric::Statements,
        LeakMetric::Resources,
        LeakMetric::Subjects,
        LeakMetric::Predicates,
        LeakMetric::Objects,
    ];
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counters([u64; 7]);

impl Counters {
    pub fn get(&self, m: LeakMetric) -> u64 {
        self.0[m as usize]
    }

    pub fn set(&mut self, m: LeakMetric, v: u64) -> &mut Self {
        self.0[m as usize] = v;
        self
    }

    /// Sets `Amount` to the largest content counter plus `Structural`.
    fn with_amount(mut self) -> Self {
        let content = LeakMetric::CONTENT.iter().map(|m| self.get(*m)).max().unwrap_or(0);
        self.set(LeakMetric::Amount, content + self.get(LeakMetric::Structural));
        self
    }

    fn structural(n: u64) -> Self {
        let mut c = Counters::default();
        c.set(LeakMetric::Structural, n);
        c.with_amount()
    }

    pub fn add(&mut self, other: &Counters) {
        for (a, b) in self.0.iter_mut().zip(other.0) {
            *a += b;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0)
    }

    /// True when every counter is at most the corresponding ceiling.
    pub fn within(&self, ceiling: &Counters) -> bool {
        self.0.iter().zip(ceiling.0).all(|(a, b)| *a <= b)
    }

    pub fn iter(&self) -> impl Iterator<Item = (LeakMetric, u64)> + '_ {
        LeakMetric::ALL.iter().map(|m| (*m, self.get(*m)))
    }
}

impl Serialize for Counters {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeMap;
        let mut map = serializer.serialize_map(Some(7))?;
        for (m, v) in self.iter() {
            map.serialize_entry(m.name(), &v)?;
        }
        map.end()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LedgerEntry {
    pub step: u8,
    pub label: String,
    pub direction: Direction,
    pub model: AdversaryModel,
    pub realized: Counters,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ceiling: Option<Counters>,
}

/// Distinct terms per position in some set of statements or elements.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TermTally {
    pub resources: u64,
    pub subjects: u64,
    pub predicates: u64,
    pub objects: u64,
}

impl TermTally {
    pub fn of_graph(g: &KnowledgeGraph) -> Self {
        let mut subjects = HashSet::new();
        let mut predicates = HashSet::new();
        let mut objects = HashSet::new();
        for s in g {
            subjects.insert(s.subject.to_string());
            predicates.insert(s.predicate.to_string());
            objects.insert(s.object.canonical());
        }
        let resources: HashSet<&String> = subjects.iter().chain(&predicates).chain(&objects).collect();
        Self {
            resources: resources.len() as u64,
            subjects: subjects.len() as u64,
            predicates: predicates.len() as u64,
            objects: objects.len() as u64,
        }
    }

    pub fn of_observation(obs: &MatchObservation) -> Self {
        let mut by_position: BTreeMap<Position, HashSet<&str>> = BTreeMap::new();
        let mut resources = HashSet::new();
        for element in &obs.matched {
            for (pos, term) in &element.parts {
                by_position.entry(*pos).or_default().insert(term);
                resources.insert(term.as_str());
            }
        }
        let count = |p| by_position.get(&p).map_or(0, |s| s.len() as u64);
        Self {
            resources: resources.len() as u64,
            subjects: count(Position::Subject),
            predicates: count(Position::Predicate),
            objects: count(Position::Object),
        }
    }
}

/// Sizes the entropy-step leak bounds depend on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MetricSizes {
    /// Cardinality of the Seller multiset.
    pub seller_cardinality: u64,
    /// Distinct Seller elements.
    pub seller_distinct: u64,
    /// Distinct Buyer elements.
    pub buyer_distinct: u64,
}

/// Upper bounds on what the Buyer learns from one counting filter.
///
/// For a Fair Buyer these are exact: two structural facts (the merged
/// entropy and the Seller total). A Curious or Malicious Buyer may probe its
/// own elements; with `a` terms per element the bounds are
/// `a·i_s` statement parts, `a·min(e_s, e_b)` resources, `min(e_s, e_b)` per
/// covered position, and `a·i_s + e_b + 3` in total.
pub fn entropy_ceilings(metric: MetricId, model: AdversaryModel, sizes: MetricSizes) -> Counters {
    let mut c = Counters::default();
    match model {
        AdversaryModel::Fair => {
            c.set(LeakMetric::Structural, 2).set(LeakMetric::Amount, 2);
        }
        AdversaryModel::Curious | AdversaryModel::Malicious => {
            let a = metric.arity() as u64;
            let shared = sizes.seller_distinct.min(sizes.buyer_distinct);
            let positions = metric.positions();
            let per = |p: Position| if positions.contains(&p) { shared } else { 0 };
            c.set(LeakMetric::Statements, a * sizes.seller_cardinality)
                .set(LeakMetric::Resources, a * shared)
                .set(LeakMetric::Subjects, per(Position::Subject))
                .set(LeakMetric::Predicates, per(Position::Predicate))
                .set(LeakMetric::Objects, per(Position::Object))
                .set(LeakMetric::Structural, 3)
                .set(
                    LeakMetric::Amount,
                    a * sizes.seller_cardinality + sizes.buyer_distinct + 3,
                );
        }
    }
    c
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeakLedger {
    model: AdversaryModel,
    entries: Vec<LedgerEntry>,
}

impl LeakLedger {
    pub fn new(model: AdversaryModel) -> Self {
        Self {
            model,
            entries: Vec::new(),
        }
    }

    pub fn model(&self) -> AdversaryModel {
        self.model
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    fn push(&mut self, step: u8, label: impl Into<String>, direction: Direction, realized: Counters, ceiling: Option<Counters>) {
        if realized.is_zero() && ceiling.is_none() {
            return;
        }
        self.entries.push(LedgerEntry {
            step,
            label: label.into(),
            direction,
            model: self.model,
            realized,
            ceiling,
        });
    }

    pub fn total(&self, direction: Direction) -> Counters {
        let mut t = Counters::default();
        for e in self.entries.iter().filter(|e| e.direction == direction) {
            t.add(&e.realized);
        }
        t
    }

    pub fn get(&self, direction: Direction, metric: LeakMetric) -> u64 {
        self.total(direction).get(metric)
    }

    /// Step 1: every shared statistic is one structural fact.
    pub fn record_statistics_shared(&mut self, count: u64) {
        self.push(1, "statistics", Direction::SellerToBuyer, Counters::structural(count), None);
    }

    /// Step 2, Buyer view. Every intersecting statement exposes its three
    /// parts; a non-Fair Buyer also reads the Seller graph size off the
    /// filter. The Seller always learns the number of signature requests.
    pub fn record_intersection(&mut self, size: u64, terms: TermTally) {
        let mut c = Counters::default();
        c.set(LeakMetric::Statements, 3 * size)
            .set(LeakMetric::Resources, terms.resources)
            .set(LeakMetric::Subjects, terms.subjects)
            .set(LeakMetric::Predicates, terms.predicates)
            .set(LeakMetric::Objects, terms.objects);
        if self.model != AdversaryModel::Fair {
            c.set(LeakMetric::Structural, 1);
        }
        let mut ceiling = Counters::default();
        ceiling
            .set(LeakMetric::Statements, 3 * size)
            .set(LeakMetric::Resources, 3 * size)
            .set(LeakMetric::Subjects, size)
            .set(LeakMetric::Predicates, size)
            .set(LeakMetric::Objects, size)
            .set(LeakMetric::Structural, c.get(LeakMetric::Structural));
        self.push(2, "intersection", Direction::SellerToBuyer, c.with_amount(), Some(ceiling.with_amount()));
        self.push(2, "signature count", Direction::BuyerToSeller, Counters::structural(1), None);
    }

    /// Step 3, Buyer view of one counting filter.
    pub fn record_entropy_metric(&mut self, metric: MetricId, sizes: MetricSizes, observation: Option<&MatchObservation>) {
        let ceiling = entropy_ceilings(metric, self.model, sizes);
        let realized = match (self.model, observation) {
            (AdversaryModel::Fair, _) | (_, None) => ceiling,
            (_, Some(obs)) => {
                let terms = TermTally::of_observation(obs);
                let mut c = Counters::default();
                c.set(LeakMetric::Statements, metric.arity() as u64 * obs.matched_seller_count)
                    .set(LeakMetric::Resources, terms.resources)
                    .set(LeakMetric::Subjects, terms.subjects)
                    .set(LeakMetric::Predicates, terms.predicates)
                    .set(LeakMetric::Objects, terms.objects)
                    .set(LeakMetric::Structural, 3);
                c.with_amount()
            }
        };
        let label = format!("entropy {metric}");
        self.push(3, label.clone(), Direction::SellerToBuyer, realized, Some(ceiling));
        if self.model != AdversaryModel::Fair {
            self.push(3, label, Direction::BuyerToSeller, Counters::structural(1), None);
        }
    }

    /// Step 4: complete knowledge of the transferred parts and nothing more.
    pub fn record_ot(&mut self, parts: &[KnowledgeGraph]) {
        let union = parts.iter().fold(KnowledgeGraph::new(), |acc, p| acc.union(p));
        let terms = TermTally::of_graph(&union);
        let mut c = Counters::default();
        c.set(LeakMetric::Statements, 3 * union.len() as u64)
            .set(LeakMetric::Resources, terms.resources)
            .set(LeakMetric::Subjects, terms.subjects)
            .set(LeakMetric::Predicates, terms.predicates)
            .set(LeakMetric::Objects, terms.objects);
        self.push(4, "transferred parts", Direction::SellerToBuyer, c.with_amount(), None);
    }

    /// Seller view: one structural fact per blind batch received.
    pub fn record_request_batch(&mut self, step: u8, label: impl Into<String>) {
        self.push(step, label, Direction::BuyerToSeller, Counters::structural(1), None);
    }

    pub fn report(&self) -> LedgerReport {
        let mut totals = BTreeMap::new();
        for d in Direction::BOTH {
            totals.insert(d, self.total(d));
        }
        LedgerReport {
            model: self.model,
            entries: self.entries.clone(),
            totals,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LedgerReport {
    pub model: AdversaryModel,
    pub entries: Vec<LedgerEntry>,
    pub totals: BTreeMap<Direction, Counters>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entropy::Element;
    use crate::kg::Statement;
    use proptest::prelude::*;

    use LeakMetric::*;
    const S2B: Direction = Direction::SellerToBuyer;
    const B2S: Direction = Direction::BuyerToSeller;

    #[test]
    fn statistics_add_structural_facts() {
        let mut l = LeakLedger::new(AdversaryModel::Fair);
        l.record_statistics_shared(33);
        assert_eq!(l.get(S2B, Structural), 33);
        assert_eq!(l.get(S2B, Amount), 33);
        assert!(l.total(B2S).is_zero());
        let mut l = LeakLedger::new(AdversaryModel::Fair);
        l.record_statistics_shared(0);
        assert!(l.entries().is_empty());
    }

    #[test]
    fn intersection_rules() {
        let mut fair = LeakLedger::new(AdversaryModel::Fair);
        fair.record_intersection(50, TermTally { resources: 120, subjects: 50, predicates: 3, objects: 50 });
        assert_eq!(fair.get(S2B, Statements), 150);
        assert_eq!(fair.get(S2B, Structural), 0);
        assert_eq!(fair.get(B2S, Structural), 1);

        let mut empty = LeakLedger::new(AdversaryModel::Fair);
        empty.record_intersection(0, TermTally::default());
        assert!(empty.total(S2B).is_zero());
        assert_eq!(empty.get(B2S, Structural), 1);

        let mut curious = LeakLedger::new(AdversaryModel::Curious);
        curious.record_intersection(0, TermTally::default());
        assert!(curious.get(S2B, Structural) >= 1);
    }

    #[test]
    fn desc_fair_and_curious_columns() {
        let sizes = MetricSizes { seller_cardinality: 100, seller_distinct: 60, buyer_distinct: 40 };
        let mut fair = LeakLedger::new(AdversaryModel::Fair);
        fair.record_entropy_metric(MetricId::PredObjDesc, sizes, None);
        assert_eq!((fair.get(S2B, Amount), fair.get(S2B, Structural)), (2, 2));
        assert!(fair.total(B2S).is_zero());

        let c = entropy_ceilings(MetricId::PredObjDesc, AdversaryModel::Curious, sizes);
        assert_eq!(c.get(Structural), 3);
        assert_eq!(c.get(Subjects), 0);
        assert_eq!(c.get(Statements), 200);
        assert_eq!(c.get(Resources), 80);
        assert_eq!(c.get(Predicates), 40);
        assert_eq!(c.get(Objects), 40);
        assert_eq!(c.get(Amount), 243);

        let mut curious = LeakLedger::new(AdversaryModel::Curious);
        curious.record_entropy_metric(MetricId::PredObjDesc, sizes, Some(&MatchObservation::default()));
        assert_eq!(curious.get(S2B, Structural), 3);
        assert_eq!(curious.get(S2B, Subjects), 0);
        assert_eq!(curious.get(B2S, Structural), 1);
    }

    #[test]
    fn realized_counts_come_from_matches() {
        let element = |p: &str, o: &str| Element {
            parts: vec![(Position::Predicate, p.into()), (Position::Object, o.into())],
        };
        let obs = MatchObservation {
            matched: vec![element("<p>", "<a>"), element("<p>", "<b>")],
            matched_seller_count: 5,
            nonzero_cells: 10,
            filter_total: 20,
            buyer_distinct: 4,
        };
        let sizes = MetricSizes { seller_cardinality: 20, seller_distinct: 10, buyer_distinct: 4 };
        let mut l = LeakLedger::new(AdversaryModel::Malicious);
        l.record_entropy_metric(MetricId::PredObjDesc, sizes, Some(&obs));
        let e = &l.entries()[0];
        assert_eq!(e.realized.get(Statements), 10);
        assert_eq!(e.realized.get(Resources), 3);
        assert_eq!(e.realized.get(Predicates), 1);
        assert_eq!(e.realized.get(Objects), 2);
        assert_eq!(e.realized.get(Amount), 13);
        assert!(e.realized.within(e.ceiling.as_ref().unwrap()));
    }

    #[test]
    fn ot_counts_three_parts_per_statement() {
        let part = |off: usize| -> KnowledgeGraph {
            (off..off + 10)
                .map(|i| Statement::iris(&format!("http://s/{i}"), "http://p", "http://o").unwrap())
                .collect()
        };
        let mut l = LeakLedger::new(AdversaryModel::Fair);
        l.record_ot(&[part(0), part(10)]);
        assert_eq!(l.get(S2B, Statements), 60);
        assert_eq!(l.get(S2B, Subjects), 20);
        assert!(l.total(B2S).is_zero());
        let mut none = LeakLedger::new(AdversaryModel::Fair);
        none.record_ot(&[]);
        assert!(none.entries().is_empty());
    }

    #[test]
    fn report_totals_are_entry_sums() {
        let mut l = LeakLedger::new(AdversaryModel::Curious);
        l.record_statistics_shared(33);
        l.record_intersection(4, TermTally { resources: 6, subjects: 4, predicates: 1, objects: 2 });
        l.record_entropy_metric(
            MetricId::Subjects,
            MetricSizes { seller_cardinality: 9, seller_distinct: 5, buyer_distinct: 3 },
            None,
        );
        let r = l.report();
        for d in Direction::BOTH {
            let mut sum = Counters::default();
            for e in r.entries.iter().filter(|e| e.direction == d) {
                sum.add(&e.realized);
            }
            assert_eq!(r.totals[&d], sum);
        }
    }

    proptest! {
        #[test]
        fn model_dominance_and_amount_coupling(
            i_s in 0u64..10_000, e_s in 0u64..5_000, e_b in 0u64..5_000, m in 0usize..9
        ) {
            let metric = MetricId::ALL[m];
            // distinct elements never exceed the cardinality
            let e_s = e_s % (i_s + 1);
            let sizes = MetricSizes { seller_cardinality: i_s, seller_distinct: e_s, buyer_distinct: e_b };
            let fair = entropy_ceilings(metric, AdversaryModel::Fair, sizes);
            let curious = entropy_ceilings(metric, AdversaryModel::Curious, sizes);
            let malicious = entropy_ceilings(metric, AdversaryModel::Malicious, sizes);
            prop_assert!(fair.within(&curious));
            prop_assert!(curious.within(&malicious));
            for c in [fair, curious, malicious] {
                let max_other = LeakMetric::ALL[..6].iter().map(|x| c.get(*x)).max().unwrap();
                prop_assert!(c.get(Amount) >= max_other);
            }
        }
    }
}
