use std::collections::{HashMap, HashSet};

use serde::ser::{Serialize, SerializeMap, Serializer};

use super::{Iri, KnowledgeGraph, Term, RDF_TYPE};
use crate::wire::{WireError, WireReader, WireWriter};

/// Catalog order. Part of the wire contract: append only, never reorder.
pub const STATISTIC_NAMES: [&str; 33] = [
    "statements",
    "distinct_subjects",
    "distinct_predicates",
    "distinct_objects",
    "distinct_resources",
    "distinct_literals",
    "distinct_iris",
    "literal_object_statements",
    "iri_object_statements",
    "out_degree_avg",
    "out_degree_min",
    "out_degree_max",
    "in_degree_avg",
    "in_degree_min",
    "in_degree_max",
    "predicate_frequency_avg",
    "predicate_frequency_min",
    "predicate_frequency_max",
    "distinct_subject_predicate_pairs",
    "distinct_predicate_object_pairs",
    "distinct_subject_object_pairs",
    "nodes_both_subject_and_object",
    "distinct_classes",
    "typed_subjects",
    "literal_length_avg",
    "literal_length_max",
    "distinct_datatypes",
    "distinct_languages",
    "self_loops",
    "density",
    "distinct_namespaces",
    "statements_per_subject_avg",
    "statements_per_object_avg",
];

/// The fixed 33-entry statistics catalog of one graph.
#[derive(Debug, Clone, PartialEq)]
pub struct GraphStatistics {
    values: [f64; 33],
}

impl GraphStatistics {
    pub fn from_values(values: [f64; 33]) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[f64; 33] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64; 33] {
        &mut self.values
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        STATISTIC_NAMES
            .iter()
            .position(|n| *n == name)
            .map(|i| self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, f64)> + '_ {
        STATISTIC_NAMES.iter().copied().zip(self.values.iter().copied())
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Count followed by (name, value) pairs in catalog order.
    pub fn encode(&self) -> Vec<u8> {
        let mut w = WireWriter::new();
        w.u32(self.values.len() as u32);
        for (name, value) in self.iter() {
            w.str(name).f64(value);
        }
        w.finish()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, WireError> {
        let mut r = WireReader::new(bytes);
        let n = r.count(12)?;
        if n != STATISTIC_NAMES.len() {
            return Err(WireError::Invalid(format!("expected 33 statistics, got {n}")));
        }
        let mut values = [0.0; 33];
        for (i, expected) in STATISTIC_NAMES.iter().enumerate() {
            let name = r.str()?;
            if name != *expected {
                return Err(WireError::Invalid(format!(
                    "statistic {i} is {name:?}, expected {expected:?}"
                )));
            }
            values[i] = r.f64()?;
        }
        r.finish()?;
        Ok(Self { values })
    }
}

impl Serialize for GraphStatistics {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.values.len()))?;
        for (name, value) in self.iter() {
            map.serialize_entry(name, &value)?;
        }
        map.end()
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

fn avg_min_max(counts: impl Iterator<Item = usize>) -> (f64, f64, f64) {
    let (mut n, mut sum, mut min, mut max) = (0usize, 0usize, usize::MAX, 0usize);
    for c in counts {
        n += 1;
        sum += c;
        min = min.min(c);
        max = max.max(c);
    }
    if n == 0 {
        (0.0, 0.0, 0.0)
    } else {
        (ratio(sum, n), min as f64, max as f64)
    }
}

/// Computes the statistics catalog. Degrees are taken over nodes, i.e. terms
/// occurring in subject or object position.
pub fn compute_statistics(g: &KnowledgeGraph) -> GraphStatistics {
    let rdf_type = Iri::new(RDF_TYPE).expect("constant IRI");

    let mut subjects: HashMap<&Iri, usize> = HashMap::new();
    let mut predicates: HashMap<&Iri, usize> = HashMap::new();
    let mut objects: HashMap<&Term, usize> = HashMap::new();
    let mut iris: HashSet<&Iri> = HashSet::new();
    let mut literals: HashSet<&Term> = HashSet::new();
    let mut sp = HashSet::new();
    let mut po = HashSet::new();
    let mut so = HashSet::new();
    let mut classes = HashSet::new();
    let mut typed = HashSet::new();
    let mut datatypes = HashSet::new();
    let mut languages = HashSet::new();
    let mut literal_objects = 0usize;
    let mut self_loops = 0usize;

    for s in g {
        *subjects.entry(&s.subject).or_default() += 1;
        *predicates.entry(&s.predicate).or_default() += 1;
        *objects.entry(&s.object).or_default() += 1;
        iris.insert(&s.subject);
        iris.insert(&s.predicate);
        sp.insert((&s.subject, &s.predicate));
        po.insert((&s.predicate, &s.object));
        so.insert((&s.subject, &s.object));
        match &s.object {
            Term::Iri(o) => {
                iris.insert(o);
                if *o == s.subject {
                    self_loops += 1;
                }
                if s.predicate == rdf_type {
                    classes.insert(o);
                }
            }
            Term::Literal(l) => {
                literal_objects += 1;
                literals.insert(&s.object);
                if let Some(dt) = l.datatype() {
                    datatypes.insert(dt);
                }
                if let Some(lang) = l.language() {
                    languages.insert(lang);
                }
            }
        }
        if s.predicate == rdf_type {
            typed.insert(&s.subject);
        }
    }

    // Nodes are subject or object terms; an IRI subject and the same IRI as
    // an object are one node.
    let mut out_degree: HashMap<Term, usize> = HashMap::new();
    let mut in_degree: HashMap<Term, usize> = HashMap::new();
    for (subj, n) in &subjects {
        out_degree.insert(Term::Iri((*subj).clone()), *n);
    }
    for (obj, n) in &objects {
        in_degree.insert((*obj).clone(), *n);
    }
    let nodes: HashSet<&Term> = out_degree.keys().chain(in_degree.keys()).collect();
    let both = nodes
        .iter()
        .filter(|t| out_degree.contains_key(**t) && in_degree.contains_key(**t))
        .count();
    let out = avg_min_max(nodes.iter().map(|t| out_degree.get(*t).copied().unwrap_or(0)));
    let inn = avg_min_max(nodes.iter().map(|t| in_degree.get(*t).copied().unwrap_or(0)));
    let pred_freq = avg_min_max(predicates.values().copied());

    let literal_lengths: Vec<usize> = literals
        .iter()
        .filter_map(|t| t.as_literal())
        .map(|l| l.value().len())
        .collect();
    let literal_len_avg = ratio(literal_lengths.iter().sum(), literal_lengths.len());
    let literal_len_max = literal_lengths.iter().copied().max().unwrap_or(0);

    let resources = iris.len() + literals.len();
    let namespaces: HashSet<&str> = iris.iter().map(|i| i.namespace()).collect();
    let statements = g.len();
    let density = if resources == 0 {
        0.0
    } else {
        statements as f64 / (resources as f64 * resources as f64)
    };

    GraphStatistics::from_values([
        statements as f64,
        subjects.len() as f64,
        predicates.len() as f64,
        objects.len() as f64,
        resources as f64,
        literals.len() as f64,
        iris.len() as f64,
        literal_objects as f64,
        (statements - literal_objects) as f64,
        out.0,
        out.1,
        out.2,
        inn.0,
        inn.1,
        inn.2,
        pred_freq.0,
        pred_freq.1,
        pred_freq.2,
        sp.len() as f64,
        po.len() as f64,
        so.len() as f64,
        both as f64,
        classes.len() as f64,
        typed.len() as f64,
        literal_len_avg,
        literal_len_max as f64,
        datatypes.len() as f64,
        languages.len() as f64,
        self_loops as f64,
        density,
        namespaces.len() as f64,
        ratio(statements, subjects.len()),
        ratio(statements, objects.len()),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kg::{parse_ntriples, Statement};

    #[test]
    fn empty_graph_is_all_zero() {
        let stats = compute_statistics(&KnowledgeGraph::new());
        assert_eq!(stats.len(), 33);
        assert!(stats.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn two_statement_fixture() {
        let g: KnowledgeGraph = [
            Statement::iris("http://a", "http://p", "http://b").unwrap(),
            Statement::iris("http://a", "http://p", "http://c").unwrap(),
        ]
        .into_iter()
        .collect();
        let stats = compute_statistics(&g);
        assert_eq!(stats.get("statements"), Some(2.0));
        assert_eq!(stats.get("distinct_subjects"), Some(1.0));
        assert_eq!(stats.get("distinct_predicates"), Some(1.0));
        assert_eq!(stats.get("distinct_objects"), Some(2.0));
        assert_eq!(stats.get("out_degree_max"), Some(2.0));
        // nodes a, b, c: out-degrees 2, 0, 0
        assert_eq!(stats.get("out_degree_min"), Some(0.0));
        assert!((stats.get("out_degree_avg").unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(stats.get("in_degree_max"), Some(1.0));
        assert_eq!(stats.get("distinct_resources"), Some(4.0));
        assert_eq!(stats.get("distinct_namespaces"), Some(1.0));
    }

    #[test]
    fn literal_and_type_measures() {
        let doc = r#"
<http://ex/a> <http://www.w3.org/1999/02/22-rdf-syntax-ns#type> <http://ex/C> .
<http://ex/b> <http://www.w3.org/1999/02/22-rdf-syntax-ns#type> <http://ex/C> .
<http://ex/a> <http://ex/name> "alpha"@en .
<http://ex/a> <http://ex/age> "42"^^<http://www.w3.org/2001/XMLSchema#integer> .
<http://ex/a> <http://ex/knows> <http://ex/a> .
<http://ex/b> <http://ex/knows> <http://ex/a> .
"#;
        let g = parse_ntriples(doc).unwrap().graph;
        let stats = compute_statistics(&g);
        assert_eq!(stats.get("distinct_classes"), Some(1.0));
        assert_eq!(stats.get("typed_subjects"), Some(2.0));
        assert_eq!(stats.get("distinct_literals"), Some(2.0));
        assert_eq!(stats.get("literal_object_statements"), Some(2.0));
        assert_eq!(stats.get("literal_length_max"), Some(5.0));
        assert_eq!(stats.get("literal_length_avg"), Some(3.5));
        assert_eq!(stats.get("distinct_datatypes"), Some(1.0));
        assert_eq!(stats.get("distinct_languages"), Some(1.0));
        assert_eq!(stats.get("self_loops"), Some(1.0));
        assert_eq!(stats.get("nodes_both_subject_and_object"), Some(1.0));
    }

    #[test]
    fn wire_round_trip_and_json_order() {
        let g = parse_ntriples("<http://a> <http://p> \"x\" .").unwrap().graph;
        let stats = compute_statistics(&g);
        assert_eq!(GraphStatistics::decode(&stats.encode()).unwrap(), stats);
        let keys: Vec<&str> = stats.iter().map(|(k, _)| k).collect();
        assert_eq!(keys, STATISTIC_NAMES);
    }
}
