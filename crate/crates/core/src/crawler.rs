//! Direct Unbiased Random Walk (DURW) sampling of a directed graph whose
//! in-edges are hidden.
//!
//! The walker builds an undirected graph `G_u` online: the first visit to a
//! node queries its out-neighbors and adds each as an undirected edge. From
//! node `v` the walker jumps to a uniformly random node with probability
//! `w / (w + d_u(v))` and otherwise steps to a uniform `G_u` neighbor. Visits
//! are reweighted by `1 / (d_u(v) + w)` to estimate the out-degree
//! distribution.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Display;
use std::hash::Hash;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::graph::{GraphBuilder, RetweetGraph};

pub const DEFAULT_JUMP_WEIGHT: f64 = 10.0;

/// View of a graph that only exposes out-edges.
pub trait GraphOracle {
    type Id: Copy + Eq + Hash + Ord + Display;

    /// Costs one unit of crawl budget.
    fn out_neighbors(&mut self, id: Self::Id) -> std::result::Result<Vec<Self::Id>, String>;

    /// Uniform over the whole node universe.
    fn random_node(&mut self, rng: &mut dyn RngCore) -> std::result::Result<Self::Id, String>;

    /// External id used for the sampled graph.
    fn name(&self, id: Self::Id) -> String {
        id.to_string()
    }
}

/// Oracle over a fully known graph, as used by `crawl --graph`.
pub struct GraphBackedOracle<'g> {
    graph: &'g RetweetGraph,
    pub queries: usize,
}

impl<'g> GraphBackedOracle<'g> {
    pub fn new(graph: &'g RetweetGraph) -> Self {
        GraphBackedOracle { graph, queries: 0 }
    }
}

impl GraphOracle for GraphBackedOracle<'_> {
    type Id = usize;

    fn out_neighbors(&mut self, id: usize) -> std::result::Result<Vec<usize>, String> {
        if id >= self.graph.node_count() {
            return Err(format!("unknown node {id}"));
        }
        self.queries += 1;
        Ok(self.graph.out_neighbors(id).iter().map(|&v| v as usize).collect())
    }

    fn random_node(&mut self, rng: &mut dyn RngCore) -> std::result::Result<usize, String> {
        match self.graph.node_count() {
            0 => Err("empty graph".to_owned()),
            n => Ok(rng.random_range(0..n)),
        }
    }

    fn name(&self, id: usize) -> String {
        self.graph.id(id).to_owned()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DurwConfig {
    pub budget: usize,
    pub jump_weight: f64,
    pub seed: u64,
    /// Walk steps allowed per unit of budget before giving up; bounds the
    /// walk once every reachable node has been queried.
    pub steps_per_query: usize,
}

impl DurwConfig {
    pub fn new(budget: usize, jump_weight: f64, seed: u64) -> Self {
        DurwConfig {
            budget,
            jump_weight,
            seed,
            steps_per_query: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Visit<Id> {
    pub node: Id,
    /// Degree of the node in the online undirected graph when visited.
    pub undirected_degree: usize,
    pub out_degree: usize,
    pub arrived_by_jump: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WalkRecord<Id> {
    pub visits: Vec<Visit<Id>>,
    pub jump_weight: f64,
    pub budget_used: usize,
    pub jumps: usize,
}

#[derive(Debug, Clone)]
pub struct DurwSample<Id> {
    /// Every directed edge observed through the oracle.
    pub graph: RetweetGraph,
    pub record: WalkRecord<Id>,
    /// Set when the oracle failed; the sample holds what was gathered.
    pub partial: Option<String>,
}

pub fn durw_sample<O: GraphOracle>(oracle: &mut O, cfg: &DurwConfig) -> Result<DurwSample<O::Id>> {
    if cfg.budget == 0 {
        return Err(Error::invalid("crawl budget must be at least 1"));
    }
    if !(cfg.jump_weight > 0.0 && cfg.jump_weight.is_finite()) {
        return Err(Error::invalid("jump weight must be positive and finite"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let w = cfg.jump_weight;

    let mut online: HashMap<O::Id, Vec<O::Id>> = HashMap::new();
    let mut undirected_edges: HashSet<(O::Id, O::Id)> = HashSet::new();
    let mut out_degree: HashMap<O::Id, usize> = HashMap::new();
    let mut directed: Vec<(O::Id, O::Id)> = Vec::new();
    let mut record = WalkRecord {
        visits: Vec::new(),
        jump_weight: w,
        budget_used: 0,
        jumps: 0,
    };
    let mut partial = None;
    let max_steps = cfg.budget.saturating_mul(cfg.steps_per_query.max(1));

    let mut jumped = true;
    let mut current = match oracle.random_node(&mut rng) {
        Ok(v) => Some(v),
        Err(e) => {
            partial = Some(e);
            None
        }
    };

    while let Some(v) = current {
        if record.visits.len() >= max_steps {
            break;
        }
        if let std::collections::hash_map::Entry::Vacant(slot) = out_degree.entry(v) {
            if record.budget_used >= cfg.budget {
                break;
            }
            let neighbors = match oracle.out_neighbors(v) {
                Ok(ns) => ns,
                Err(e) => {
                    partial = Some(e);
                    break;
                }
            };
            record.budget_used += 1;
            slot.insert(neighbors.len());
            for u in neighbors {
                directed.push((v, u));
                if u == v {
                    continue;
                }
                let key = if v < u { (v, u) } else { (u, v) };
                if undirected_edges.insert(key) {
                    online.entry(v).or_default().push(u);
                    online.entry(u).or_default().push(v);
                }
            }
        }
        let nbrs = online.get(&v).map(Vec::as_slice).unwrap_or(&[]);
        let degree = nbrs.len();
        record.visits.push(Visit {
            node: v,
            undirected_degree: degree,
            out_degree: out_degree[&v],
            arrived_by_jump: jumped,
        });

        let jump_prob = w / (w + degree as f64);
        jumped = rng.random::<f64>() < jump_prob;
        current = if jumped {
            record.jumps += 1;
            match oracle.random_node(&mut rng) {
                Ok(u) => Some(u),
                Err(e) => {
                    partial = Some(e);
                    None
                }
            }
        } else {
            Some(nbrs[rng.random_range(0..degree)])
        };
    }

    let mut builder = GraphBuilder::new();
    let mut discovered: Vec<O::Id> = directed.iter().flat_map(|&(a, b)| [a, b]).collect();
    discovered.extend(out_degree.keys().copied());
    discovered.sort_unstable();
    discovered.dedup();
    for &id in &discovered {
        builder.node(&oracle.name(id));
    }
    directed.sort_unstable();
    for (a, b) in directed {
        builder.edge(&oracle.name(a), &oracle.name(b));
    }
    Ok(DurwSample {
        graph: builder.build(),
        record,
        partial,
    })
}

/// Weighted out-degree tallies; independent walks pool by [`merge`](Self::merge).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OutDegreeEstimator {
    numerators: BTreeMap<usize, f64>,
    denominator: f64,
}

impl OutDegreeEstimator {
    pub fn from_record<Id>(record: &WalkRecord<Id>) -> Self {
        let mut est = OutDegreeEstimator::default();
        for v in &record.visits {
            let weight = 1.0 / (v.undirected_degree as f64 + record.jump_weight);
            *est.numerators.entry(v.out_degree).or_insert(0.0) += weight;
            est.denominator += weight;
        }
        est
    }

    pub fn merge(&mut self, other: &OutDegreeEstimator) {
        for (&k, &x) in &other.numerators {
            *self.numerators.entry(k).or_insert(0.0) += x;
        }
        self.denominator += other.denominator;
    }

    pub fn distribution(&self) -> Result<BTreeMap<usize, f64>> {
        if self.denominator <= 0.0 {
            return Err(Error::invalid("empty walk record"));
        }
        Ok(self
            .numerators
            .iter()
            .map(|(&k, &x)| (k, x / self.denominator))
            .collect())
    }
}

pub fn estimate_outdegree_dist<Id>(record: &WalkRecord<Id>) -> Result<BTreeMap<usize, f64>> {
    if record.visits.is_empty() {
        return Err(Error::invalid("empty walk record"));
    }
    OutDegreeEstimator::from_record(record).distribution()
}

/// Exact out-degree distribution of a fully known graph.
pub fn true_outdegree_dist(g: &RetweetGraph) -> BTreeMap<usize, f64> {
    let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
    for u in 0..g.node_count() {
        *counts.entry(g.out_degree(u)).or_insert(0.0) += 1.0;
    }
    let n = g.node_count() as f64;
    counts.values_mut().for_each(|c| *c /= n);
    counts
}

pub fn total_variation(p: &BTreeMap<usize, f64>, q: &BTreeMap<usize, f64>) -> f64 {
    let keys: std::collections::BTreeSet<usize> = p.keys().chain(q.keys()).copied().collect();
    0.5 * keys
        .into_iter()
        .map(|k| (p.get(&k).unwrap_or(&0.0) - q.get(&k).unwrap_or(&0.0)).abs())
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn complete(n: usize) -> RetweetGraph {
        let mut b = GraphBuilder::new();
        for u in 0..n {
            for v in 0..n {
                b.edge(&u.to_string(), &v.to_string());
            }
        }
        b.build()
    }

    fn record(visits: &[(usize, usize)], w: f64) -> WalkRecord<usize> {
        WalkRecord {
            visits: visits
                .iter()
                .enumerate()
                .map(|(i, &(d, od))| Visit {
                    node: i,
                    undirected_degree: d,
                    out_degree: od,
                    arrived_by_jump: false,
                })
                .collect(),
            jump_weight: w,
            budget_used: visits.len(),
            jumps: 0,
        }
    }

    #[test]
    fn complete_graph_gives_point_mass() {
        let g = complete(5);
        let mut oracle = GraphBackedOracle::new(&g);
        let sample = durw_sample(&mut oracle, &DurwConfig::new(5, 10.0, 1)).unwrap();
        let dist = estimate_outdegree_dist(&sample.record).unwrap();
        assert_eq!(dist.len(), 1);
        assert!((dist[&4] - 1.0).abs() < 1e-12);
        assert!(sample.record.budget_used <= 5);
        assert_eq!(oracle.queries, sample.record.budget_used);
    }

    #[test]
    fn walker_returns_to_star_center_through_undirected_edge() {
        // center c retweets every leaf; leaves have no out-edges
        let mut b = GraphBuilder::new();
        for i in 0..6 {
            b.edge("c", &format!("l{i}"));
        }
        let g = b.build();
        let c = g.index_of("c").unwrap();
        let mut returned = false;
        for seed in 0..50 {
            let mut oracle = GraphBackedOracle::new(&g);
            let mut cfg = DurwConfig::new(7, 0.5, seed);
            cfg.steps_per_query = 20;
            let sample = durw_sample(&mut oracle, &cfg).unwrap();
            let visits = &sample.record.visits;
            for pair in visits.windows(2) {
                let from_leaf = pair[0].node != c && pair[0].undirected_degree > 0;
                if from_leaf && pair[1].node == c && !pair[1].arrived_by_jump {
                    returned = true;
                }
            }
        }
        assert!(returned, "walker never stepped leaf -> center");
    }

    #[test]
    fn estimator_single_and_symmetric_visits() {
        let one = estimate_outdegree_dist(&record(&[(4, 3)], 10.0)).unwrap();
        assert_eq!(one.len(), 1);
        assert!((one[&3] - 1.0).abs() < 1e-15);

        let two = estimate_outdegree_dist(&record(&[(7, 2), (7, 5)], 10.0)).unwrap();
        assert!((two[&2] - 0.5).abs() < 1e-15);
        assert!((two[&5] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn empty_record_and_zero_budget_are_errors() {
        assert!(estimate_outdegree_dist(&record(&[], 10.0)).is_err());
        let g = complete(3);
        let mut oracle = GraphBackedOracle::new(&g);
        assert!(durw_sample(&mut oracle, &DurwConfig::new(0, 10.0, 1)).is_err());
        assert!(durw_sample(&mut oracle, &DurwConfig::new(2, 0.0, 1)).is_err());
    }

    #[test]
    fn walks_are_deterministic() {
        let g = crate::synth::power_law_digraph(500, 2.5, 4.0, 3);
        let run = |seed| {
            let mut oracle = GraphBackedOracle::new(&g);
            durw_sample(&mut oracle, &DurwConfig::new(50, 10.0, seed)).unwrap()
        };
        let (a, b) = (run(9), run(9));
        assert_eq!(a.record, b.record);
        assert_eq!(a.graph, b.graph);
        assert_ne!(run(9).record, run(10).record);
    }

    #[test]
    fn huge_jump_weight_degenerates_to_uniform_sampling() {
        let g = crate::synth::power_law_digraph(300, 2.5, 4.0, 5);
        let mut oracle = GraphBackedOracle::new(&g);
        let sample = durw_sample(&mut oracle, &DurwConfig::new(100, 1e9, 2)).unwrap();
        let rec = &sample.record;
        // practically every step is a jump
        assert!(rec.jumps + 1 >= rec.visits.len());
        let est = estimate_outdegree_dist(rec).unwrap();
        let mut hist: BTreeMap<usize, f64> = BTreeMap::new();
        for v in &rec.visits {
            *hist.entry(v.out_degree).or_insert(0.0) += 1.0;
        }
        let n = rec.visits.len() as f64;
        for (k, p) in &est {
            assert!((p - hist[k] / n).abs() < 1e-6, "degree {k}");
        }
    }

    #[test]
    fn failing_oracle_yields_partial_sample() {
        struct Flaky<'g>(GraphBackedOracle<'g>, usize);
        impl GraphOracle for Flaky<'_> {
            type Id = usize;
            fn out_neighbors(&mut self, id: usize) -> std::result::Result<Vec<usize>, String> {
                if self.0.queries >= self.1 {
                    return Err("rate limited".into());
                }
                self.0.out_neighbors(id)
            }
            fn random_node(&mut self, rng: &mut dyn RngCore) -> std::result::Result<usize, String> {
                self.0.random_node(rng)
            }
        }
        let g = complete(30);
        let mut oracle = Flaky(GraphBackedOracle::new(&g), 3);
        let sample = durw_sample(&mut oracle, &DurwConfig::new(20, 10.0, 4)).unwrap();
        assert_eq!(sample.partial.as_deref(), Some("rate limited"));
        assert_eq!(sample.record.budget_used, 3);
        assert!(sample.graph.edge_count() > 0);
    }

    #[test]
    fn pooled_estimators_sum_tallies() {
        let a = OutDegreeEstimator::from_record(&record(&[(1, 1)], 1.0));
        let b = OutDegreeEstimator::from_record(&record(&[(1, 2)], 1.0));
        let mut pooled = a.clone();
        pooled.merge(&b);
        let d = pooled.distribution().unwrap();
        assert!((d[&1] - 0.5).abs() < 1e-15 && (d[&2] - 0.5).abs() < 1e-15);
        let total: f64 = d.values().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
