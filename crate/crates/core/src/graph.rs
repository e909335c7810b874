//! Dependency graphs induced by signed dependency sets, with the decision
//! oracle and round-bound calculators used as test ground truth.
//!
//! Edge `X -> Y` means X queries Y's belief.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Decision, DependencySet, ModelError, ShardId, Sign, SignedDependency};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("unknown shard {0}")]
    UnknownShard(ShardId),
    #[error("no initial belief for shard {0}")]
    MissingBelief(ShardId),
    #[error("bad graph fragment: {0}")]
    Fragment(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct DependencyGraph {
    pub vertices: BTreeSet<ShardId>,
    pub edges: BTreeSet<(ShardId, ShardId)>,
    pub n_hashes: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RoundBounds {
    /// Longest shortest directed path between any ordered pair with a path; 0 if none.
    pub l_star: u32,
    pub global_upper: u32,
    pub per_shard_upper: BTreeMap<ShardId, u32>,
}

/// Scenario-file fragment describing a graph by its dependency sets.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphFragment {
    pub n_hashes: usize,
    pub deps: BTreeMap<String, Vec<String>>,
}

impl DependencyGraph {
    /// `S_i` or `S_i+` in the set of `S_j` gives `S_j -> S_i`; `S_i-` gives `S_i -> S_j`.
    pub fn induce(requests: &BTreeMap<ShardId, DependencySet>, n_hashes: usize) -> Self {
        let mut g = DependencyGraph {
            n_hashes,
            ..Default::default()
        };
        for (holder, deps) in requests {
            g.vertices.insert(holder.clone());
            for dep in deps.iter() {
                g.vertices.insert(dep.shard.clone());
                if dep.shard == *holder {
                    continue;
                }
                match dep.sign {
                    Sign::Unsigned | Sign::Plus => g.edges.insert((holder.clone(), dep.shard)),
                    Sign::Minus => g.edges.insert((dep.shard, holder.clone())),
                };
            }
        }
        g
    }

    fn check(&self, s: &ShardId) -> Result<(), GraphError> {
        if self.vertices.contains(s) {
            Ok(())
        } else {
            Err(GraphError::UnknownShard(s.clone()))
        }
    }

    pub fn out_neighbors<'a>(&'a self, s: &'a ShardId) -> impl Iterator<Item = &'a ShardId> + 'a {
        self.edges
            .range((s.clone(), ShardId::new("\0").unwrap())..)
            .take_while(move |(from, _)| from == s)
            .map(|(_, to)| to)
    }

    pub fn out_degree(&self, s: &ShardId) -> usize {
        self.out_neighbors(s).count()
    }

    /// Shortest directed hop counts from `s` to everything it reaches, `s` included at 0.
    pub fn bfs_distances(&self, s: &ShardId) -> Result<BTreeMap<ShardId, u32>, GraphError> {
        self.check(s)?;
        let mut dist = BTreeMap::from([(s.clone(), 0u32)]);
        let mut queue = VecDeque::from([s.clone()]);
        while let Some(u) = queue.pop_front() {
            let d = dist[&u];
            for v in self.out_neighbors(&u) {
                if !dist.contains_key(v) {
                    dist.insert(v.clone(), d + 1);
                    queue.push_back(v.clone());
                }
            }
        }
        Ok(dist)
    }

    pub fn forward_closure(&self, s: &ShardId) -> Result<BTreeSet<ShardId>, GraphError> {
        Ok(self.bfs_distances(s)?.into_keys().collect())
    }

    /// Each shard's decision is the conjunction of the initial beliefs over its forward closure.
    pub fn decision_oracle(
        &self,
        initial: &BTreeMap<ShardId, Decision>,
    ) -> Result<BTreeMap<ShardId, Decision>, GraphError> {
        let mut out = BTreeMap::new();
        for s in &self.vertices {
            let mut d = Decision::Commit;
            for t in self.forward_closure(s)? {
                let b = initial
                    .get(&t)
                    .ok_or_else(|| GraphError::MissingBelief(t.clone()))?;
                d = d.and(*b);
            }
            out.insert(s.clone(), d);
        }
        Ok(out)
    }

    /// Distance from `s` to the nearest reachable shard that starts with discard.
    pub fn discard_distance(
        &self,
        s: &ShardId,
        initial: &BTreeMap<ShardId, Decision>,
    ) -> Result<Option<u32>, GraphError> {
        Ok(self
            .bfs_distances(s)?
            .into_iter()
            .filter(|(t, _)| initial.get(t) == Some(&Decision::Discard))
            .map(|(_, d)| d)
            .min())
    }

    pub fn round_bounds(&self) -> RoundBounds {
        let mut l_star = 0;
        let mut per_shard_upper = BTreeMap::new();
        for s in &self.vertices {
            let dist = self.bfs_distances(s).expect("vertex");
            l_star = l_star.max(dist.values().copied().max().unwrap_or(0));
            let upper = self.n_hashes.saturating_sub(self.out_degree(s)) as u32;
            per_shard_upper.insert(s.clone(), upper);
        }
        let global_upper = per_shard_upper.values().copied().max().unwrap_or(0);
        RoundBounds {
            l_star,
            global_upper,
            per_shard_upper,
        }
    }

    pub fn is_strongly_connected(&self) -> bool {
        let Some(first) = self.vertices.iter().next() else {
            return true;
        };
        if self.forward_closure(first).expect("vertex").len() != self.vertices.len() {
            return false;
        }
        self.vertices
            .iter()
            .all(|v| self.forward_closure(v).expect("vertex").contains(first))
    }

    /// Reciprocal dependency sets inducing exactly this graph: a two-way pair
    /// becomes unsigned on both sides, a one-way edge `X -> Y` becomes `Y+`
    /// at X and `X-` at Y.
    pub fn to_dependency_sets(&self) -> BTreeMap<ShardId, DependencySet> {
        let mut sets: BTreeMap<ShardId, DependencySet> = self
            .vertices
            .iter()
            .map(|v| (v.clone(), DependencySet::new()))
            .collect();
        for (x, y) in &self.edges {
            let back = self.edges.contains(&(y.clone(), x.clone()));
            if back {
                if x < y {
                    sets.get_mut(x)
                        .unwrap()
                        .insert(SignedDependency::new(y.clone(), Sign::Unsigned))
                        .unwrap();
                    sets.get_mut(y)
                        .unwrap()
                        .insert(SignedDependency::new(x.clone(), Sign::Unsigned))
                        .unwrap();
                }
            } else {
                sets.get_mut(x)
                    .unwrap()
                    .insert(SignedDependency::new(y.clone(), Sign::Plus))
                    .unwrap();
                sets.get_mut(y)
                    .unwrap()
                    .insert(SignedDependency::new(x.clone(), Sign::Minus))
                    .unwrap();
            }
        }
        sets
    }

    pub fn to_fragment(&self) -> String {
        let frag = GraphFragment {
            n_hashes: self.n_hashes,
            deps: self
                .to_dependency_sets()
                .into_iter()
                .map(|(k, v)| (k.to_string(), v.to_strings()))
                .collect(),
        };
        toml::to_string(&frag).expect("fragment serializes")
    }

    pub fn from_fragment(text: &str) -> Result<Self, GraphError> {
        let frag: GraphFragment =
            toml::from_str(text).map_err(|e| GraphError::Fragment(e.to_string()))?;
        let mut sets = BTreeMap::new();
        for (k, v) in frag.deps {
            sets.insert(ShardId::new(k)?, DependencySet::parse(&v)?);
        }
        Ok(Self::induce(&sets, frag.n_hashes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sid(s: &str) -> ShardId {
        ShardId::new(s).unwrap()
    }

    fn graph(decl: &[(&str, &[&str])]) -> DependencyGraph {
        let sets = decl
            .iter()
            .map(|(k, d)| (sid(k), DependencySet::parse(d).unwrap()))
            .collect();
        DependencyGraph::induce(&sets, decl.len())
    }

    fn edges(list: &[(&str, &str)]) -> BTreeSet<(ShardId, ShardId)> {
        list.iter().map(|(a, b)| (sid(a), sid(b))).collect()
    }

    fn figure2() -> DependencyGraph {
        graph(&[
            ("S1", &["S2-"]),
            ("S2", &["S1+", "S3-", "S4+"]),
            ("S3", &["S2+", "S4-"]),
            ("S4", &["S2-", "S3+"]),
        ])
    }

    fn beliefs(list: &[(&str, Decision)]) -> BTreeMap<ShardId, Decision> {
        list.iter().map(|(s, d)| (sid(s), *d)).collect()
    }

    use Decision::{Commit as C, Discard as D};

    #[test]
    fn figure1a_mutual_cycle() {
        let g = graph(&[
            ("S0", &["S1", "S3"]),
            ("S1", &["S0", "S2"]),
            ("S2", &["S1", "S3"]),
            ("S3", &["S0", "S2"]),
        ]);
        assert_eq!(g.edges.len(), 8);
        assert!(g.is_strongly_connected());
    }

    #[test]
    fn figure1b_verbatim_sets_add_source_edge() {
        let g = graph(&[("S1", &["S2+"]), ("S2", &["S1-", "S3+"]), ("S3", &["S1-"])]);
        assert_eq!(g.edges, edges(&[("S1", "S2"), ("S2", "S3"), ("S1", "S3")]));
        let drawn = graph(&[("S1", &["S2+"]), ("S2", &["S1-", "S3+"]), ("S3", &["S2-"])]);
        assert_eq!(drawn.edges, edges(&[("S1", "S2"), ("S2", "S3")]));
    }

    #[test]
    fn figure2_edges_and_closure() {
        let g = figure2();
        assert_eq!(
            g.edges,
            edges(&[("S2", "S1"), ("S3", "S2"), ("S4", "S3"), ("S2", "S4")])
        );
        assert_eq!(g.forward_closure(&sid("S4")).unwrap().len(), 4);
        assert_eq!(
            g.forward_closure(&sid("S1")).unwrap(),
            BTreeSet::from([sid("S1")])
        );
        assert!(g.forward_closure(&sid("S9")).is_err());
    }

    #[test]
    fn figure2_oracle_and_bounds() {
        let g = figure2();
        let init = beliefs(&[("S1", D), ("S2", C), ("S3", C), ("S4", C)]);
        assert!(g.decision_oracle(&init).unwrap().values().all(|d| *d == D));
        let b = g.round_bounds();
        assert_eq!(b.l_star, 3);
        assert_eq!(b.global_upper, 4);
        assert_eq!(b.per_shard_upper[&sid("S2")], 2);
        assert_eq!(b.per_shard_upper[&sid("S1")], 4);
        assert_eq!(g.discard_distance(&sid("S4"), &init).unwrap(), Some(3));
    }

    #[test]
    fn chain_oracle_is_directional() {
        let g = graph(&[("S1", &["S2+"]), ("S2", &["S1-", "S3+"]), ("S3", &["S2-"])]);
        let sink_discards = g
            .decision_oracle(&beliefs(&[("S1", C), ("S2", C), ("S3", D)]))
            .unwrap();
        assert!(sink_discards.values().all(|d| *d == D));
        let source_discards = g
            .decision_oracle(&beliefs(&[("S1", D), ("S2", C), ("S3", C)]))
            .unwrap();
        assert_eq!(source_discards, beliefs(&[("S1", D), ("S2", C), ("S3", C)]));
        let b = g.round_bounds();
        assert_eq!((b.l_star, b.global_upper), (2, 3));
        assert!(!g.is_strongly_connected());
    }

    #[test]
    fn isolated_vertex() {
        let g = graph(&[("S1", &[])]);
        let b = g.round_bounds();
        assert_eq!(
            (b.l_star, b.global_upper, b.per_shard_upper[&sid("S1")]),
            (0, 1, 1)
        );
    }

    #[test]
    fn fragment_round_trip() {
        let g = figure2();
        let back = DependencyGraph::from_fragment(&g.to_fragment()).unwrap();
        assert_eq!(back, g);
    }

    fn arb_graph() -> impl Strategy<Value = DependencyGraph> {
        (1usize..7).prop_flat_map(|n| {
            proptest::collection::btree_set((0..n, 0..n), 0..n * n).prop_map(move |pairs| {
                let name = |i: usize| sid(&format!("S{i}"));
                DependencyGraph {
                    vertices: (0..n).map(name).collect(),
                    edges: pairs
                        .into_iter()
                        .filter(|(a, b)| a != b)
                        .map(|(a, b)| (name(a), name(b)))
                        .collect(),
                    n_hashes: n,
                }
            })
        })
    }

    proptest! {
        #[test]
        fn reciprocal_sets_reproduce_graph(g in arb_graph()) {
            let sets = g.to_dependency_sets();
            prop_assert!(crate::model::check_reciprocity(&sets).is_empty());
            prop_assert_eq!(DependencyGraph::induce(&sets, g.n_hashes), g.clone());

            // Deriving edges only from the Plus side or only from the Minus side agrees.
            let mut plus_side = BTreeSet::new();
            let mut minus_side = BTreeSet::new();
            for (holder, deps) in &sets {
                for d in deps.iter() {
                    if d.sign.contacts() { plus_side.insert((holder.clone(), d.shard.clone())); }
                    if d.sign.accepts() { minus_side.insert((d.shard.clone(), holder.clone())); }
                }
            }
            prop_assert_eq!(&plus_side, &g.edges);
            prop_assert_eq!(&minus_side, &g.edges);
        }

        #[test]
        fn oracle_is_monotone(g in arb_graph(), bits in any::<u8>(), flip in 0usize..7) {
            let init: BTreeMap<ShardId, Decision> = g.vertices.iter().enumerate()
                .map(|(i, v)| (v.clone(), Decision::from_bool(bits >> (i % 8) & 1 == 1)))
                .collect();
            let before = g.decision_oracle(&init).unwrap();
            let mut flipped = init.clone();
            if let Some(v) = g.vertices.iter().nth(flip % g.vertices.len()) {
                flipped.insert(v.clone(), Decision::Discard);
            }
            let after = g.decision_oracle(&flipped).unwrap();
            for v in &g.vertices {
                prop_assert!(!(before[v] == Decision::Discard && after[v] == Decision::Commit));
            }
        }

        #[test]
        fn bounds_are_ordered(g in arb_graph()) {
            let b = g.round_bounds();
            prop_assert!((b.l_star as usize) < g.n_hashes);
            for (v, up) in &b.per_shard_upper {
                prop_assert!(*up <= b.global_upper);
                let far = g.bfs_distances(v).unwrap().values().copied().max().unwrap();
                prop_assert!(far <= *up);
            }
        }
    }
}
