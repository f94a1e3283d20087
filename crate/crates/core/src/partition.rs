//! Splitting the Seller graph into `n` parts of comparable size.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use thiserror::Error;

use crate::kg::{KnowledgeGraph, Statement, Term};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PartitionError {
    #[error("cannot split {statements} statements into {parts} non-empty parts")]
    InvalidParts { parts: usize, statements: usize },
    #[error("unknown partition strategy {0:?}")]
    UnknownStrategy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Random,
    Clustered,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Random => "random",
            Strategy::Clustered => "clustered",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = PartitionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "random" => Ok(Strategy::Random),
            "clustered" => Ok(Strategy::Clustered),
            other => Err(PartitionError::UnknownStrategy(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub parts: Vec<KnowledgeGraph>,
    pub strategy: Strategy,
    pub seed: u64,
}

impl Partition {
    pub fn sizes(&self) -> Vec<usize> {
        self.parts.iter().map(KnowledgeGraph::len).collect()
    }
}

/// Part sizes differing by at most one, larger parts first.
fn targets(total: usize, n: usize) -> Vec<usize> {
    (0..n).map(|i| total / n + usize::from(i < total % n)).collect()
}

fn check(g: &KnowledgeGraph, n: usize) -> Result<(), PartitionError> {
    if n == 0 || n > g.len() {
        return Err(PartitionError::InvalidParts {
            parts: n,
            statements: g.len(),
        });
    }
    Ok(())
}

pub fn partition(
    g: &KnowledgeGraph,
    n: usize,
    strategy: Strategy,
    seed: u64,
) -> Result<Partition, PartitionError> {
    match strategy {
        Strategy::Random => partition_random(g, n, seed),
        Strategy::Clustered => partition_balanced_clustered(g, n, seed),
    }
}

pub fn partition_random(g: &KnowledgeGraph, n: usize, seed: u64) -> Result<Partition, PartitionError> {
    check(g, n)?;
    let mut statements: Vec<&Statement> = g.iter().collect();
    statements.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));
    let mut rest = statements.as_slice();
    let parts = targets(g.len(), n)
        .into_iter()
        .map(|size| {
            let (head, tail) = rest.split_at(size);
            rest = tail;
            head.iter().map(|s| (*s).clone()).collect()
        })
        .collect();
    Ok(Partition {
        parts,
        strategy: Strategy::Random,
        seed,
    })
}

/// Grows each part by breadth-first expansion over the undirected node graph
/// (statements are edges between subject and object). A part starts at the
/// unassigned node of least remaining degree, preferring nodes the previous
/// part touched, and reseeds only when its component runs out.
pub fn partition_balanced_clustered(
    g: &KnowledgeGraph,
    n: usize,
    seed: u64,
) -> Result<Partition, PartitionError> {
    check(g, n)?;
    let statements: Vec<&Statement> = g.iter().collect();

    let mut node_ids: HashMap<Term, usize> = HashMap::new();
    let mut ends: Vec<(usize, usize)> = Vec::with_capacity(statements.len());
    for s in &statements {
        let mut id = |t: Term| {
            let next = node_ids.len();
            *node_ids.entry(t).or_insert(next)
        };
        let a = id(Term::Iri(s.subject.clone()));
        let b = id(s.object.clone());
        ends.push((a, b));
    }
    let nodes = node_ids.len();
    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); nodes];
    for (e, (a, b)) in ends.iter().enumerate() {
        incident[*a].push(e);
        if a != b {
            incident[*b].push(e);
        }
    }
    let mut remaining: Vec<usize> = incident.iter().map(Vec::len).collect();
    let mut rank: Vec<usize> = (0..nodes).collect();
    rank.shuffle(&mut ChaCha20Rng::seed_from_u64(seed));

    let pick = |candidates: &mut dyn Iterator<Item = usize>, remaining: &[usize]| {
        candidates
            .filter(|v| remaining[*v] > 0)
            .min_by_key(|v| (remaining[*v], rank[*v]))
    };

    let mut owner: Vec<Option<usize>> = vec![None; statements.len()];
    let mut touched_before: Vec<usize> = Vec::new();
    for (part, target) in targets(statements.len(), n).into_iter().enumerate() {
        let mut size = 0;
        let mut touched: Vec<usize> = Vec::new();
        let mut queue: VecDeque<usize> = VecDeque::new();
        let mut queued = vec![false; nodes];
        while size < target {
            let Some(u) = queue.pop_front() else {
                let start = pick(&mut touched_before.iter().copied(), &remaining)
                    .or_else(|| pick(&mut touched.iter().copied(), &remaining))
                    .or_else(|| pick(&mut (0..nodes), &remaining))
                    .expect("unassigned statements remain");
                queued[start] = true;
                queue.push_back(start);
                continue;
            };
            touched.push(u);
            for &e in &incident[u] {
                if size == target {
                    break;
                }
                if owner[e].is_some() {
                    continue;
                }
                owner[e] = Some(part);
                size += 1;
                let (a, b) = ends[e];
                remaining[a] -= 1;
                if a != b {
                    remaining[b] -= 1;
                }
                let other = if a == u { b } else { a };
                touched.push(other);
                if !queued[other] {
                    queued[other] = true;
                    queue.push_back(other);
                }
            }
        }
        touched_before = touched;
    }

    let mut parts = vec![KnowledgeGraph::new(); n];
    for (s, o) in statements.into_iter().zip(owner) {
        parts[o.expect("every statement assigned")].insert(s.clone());
    }
    Ok(Partition {
        parts,
        strategy: Strategy::Clustered,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert, prop_assume, proptest};
    use rand::Rng;

    fn edge(a: &str, b: &str) -> Statement {
        Statement::iris(&format!("http://n/{a}"), "http://p/e", &format!("http://n/{b}")).unwrap()
    }

    fn assert_cover(g: &KnowledgeGraph, p: &Partition) {
        let total: usize = p.sizes().iter().sum();
        assert_eq!(total, g.len());
        let union = p.parts.iter().fold(KnowledgeGraph::new(), |acc, part| acc.union(part));
        assert_eq!(&union, g);
        assert!(p.parts.iter().all(|part| !part.is_empty()));
    }

    /// Connectivity of a part, viewing statements as undirected edges.
    fn connected(part: &KnowledgeGraph) -> bool {
        let edges: Vec<(String, String)> = part
            .iter()
            .map(|s| (s.subject.to_string(), s.object.canonical()))
            .collect();
        let mut reached = std::collections::HashSet::new();
        reached.insert(edges[0].0.clone());
        loop {
            let before = reached.len();
            for (a, b) in &edges {
                if reached.contains(a) || reached.contains(b) {
                    reached.insert(a.clone());
                    reached.insert(b.clone());
                }
            }
            if reached.len() == before {
                break;
            }
        }
        edges.iter().all(|(a, _)| reached.contains(a))
    }

    fn random_graph(seed: u64, n: usize) -> KnowledgeGraph {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut g = KnowledgeGraph::new();
        while g.len() < n {
            g.insert(edge(&rng.gen_range(0..n).to_string(), &rng.gen_range(0..n).to_string()));
        }
        g
    }

    #[test]
    fn single_part_is_whole_graph() {
        let g = random_graph(1, 20);
        for strategy in [Strategy::Random, Strategy::Clustered] {
            let p = partition(&g, 1, strategy, 0).unwrap();
            assert_eq!(p.parts, vec![g.clone()]);
        }
    }

    #[test]
    fn random_split_of_ten_into_three() {
        let g = random_graph(2, 10);
        let p = partition_random(&g, 3, 9).unwrap();
        assert_eq!(p.sizes(), vec![4, 3, 3]);
        assert_cover(&g, &p);
    }

    #[test]
    fn too_many_parts_is_an_error() {
        let g = random_graph(3, 4);
        assert_eq!(
            partition_random(&g, 5, 0).unwrap_err(),
            PartitionError::InvalidParts { parts: 5, statements: 4 }
        );
        assert!(partition_balanced_clustered(&g, 0, 0).is_err());
    }

    #[test]
    fn path_splits_into_connected_segments() {
        let g: KnowledgeGraph = (0..9).map(|i| edge(&format!("v{i}"), &format!("v{}", i + 1))).collect();
        for seed in 0..10 {
            let p = partition_balanced_clustered(&g, 3, seed).unwrap();
            assert_eq!(p.sizes(), vec![3, 3, 3]);
            assert_cover(&g, &p);
            assert!(p.parts.iter().all(connected), "seed {seed}: {:?}", p.parts);
        }
    }

    #[test]
    fn star_parts_share_the_hub() {
        let g: KnowledgeGraph = (0..7).map(|i| edge("hub", &format!("leaf{i}"))).collect();
        let p = partition_balanced_clustered(&g, 2, 5).unwrap();
        assert_cover(&g, &p);
        assert!(p.sizes().iter().all(|s| *s <= 4));
        for part in &p.parts {
            assert!(part.iter().all(|s| s.subject.as_str() == "http://n/hub"));
        }
    }

    #[test]
    fn clustered_is_deterministic() {
        let g = random_graph(4, 200);
        assert_eq!(
            partition_balanced_clustered(&g, 7, 11).unwrap(),
            partition_balanced_clustered(&g, 7, 11).unwrap()
        );
    }

    #[test]
    fn random_cover_on_many_fixtures() {
        for seed in 0..100 {
            let g = random_graph(seed, 5 + (seed as usize % 40));
            let n = 1 + seed as usize % 5;
            let p = partition_random(&g, n, seed).unwrap();
            assert_cover(&g, &p);
            let max = p.sizes().into_iter().max().unwrap();
            assert!(max <= g.len().div_ceil(n));
        }
    }

    proptest! {
        #[test]
        fn clustered_is_a_balanced_cover(seed in any::<u64>(), size in 1usize..150, n in 1usize..12) {
            let g = random_graph(seed, size);
            prop_assume!(n <= g.len());
            let p = partition_balanced_clustered(&g, n, seed).unwrap();
            assert_cover(&g, &p);
            let cap = (1.2 * g.len() as f64 / n as f64).ceil() as usize;
            prop_assert!(p.sizes().into_iter().all(|s| s <= cap));
        }
    }
}
