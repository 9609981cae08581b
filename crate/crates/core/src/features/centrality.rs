//! Betweenness (Brandes) and eigenvector centrality on the directed graph.

use std::collections::VecDeque;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::graph::RetweetGraph;

/// Sources per work unit; fixed so the reduction order does not depend on
/// the thread count.
const SOURCE_CHUNK: usize = 64;

/// Brandes dependency accumulation from one source, added into `acc`.
fn accumulate_source(g: &RetweetGraph, s: usize, scratch: &mut Scratch, acc: &mut [f64]) {
    let Scratch {
        dist,
        sigma,
        delta,
        order,
        queue,
    } = scratch;
    for &v in order.iter() {
        dist[v as usize] = -1;
        sigma[v as usize] = 0.0;
        delta[v as usize] = 0.0;
    }
    order.clear();
    queue.clear();

    dist[s] = 0;
    sigma[s] = 1.0;
    queue.push_back(s as u32);
    while let Some(v) = queue.pop_front() {
        order.push(v);
        let dv = dist[v as usize];
        for &w in g.out_neighbors(v as usize) {
            let w = w as usize;
            if dist[w] < 0 {
                dist[w] = dv + 1;
                queue.push_back(w as u32);
            }
            if dist[w] == dv + 1 {
                sigma[w] += sigma[v as usize];
            }
        }
    }
    for &w in order.iter().rev() {
        let w = w as usize;
        // predecessors of w are in-neighbors one level closer to s
        for &v in g.in_neighbors(w) {
            let v = v as usize;
            if dist[v] >= 0 && dist[v] + 1 == dist[w] {
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
            }
        }
        if w != s {
            acc[w] += delta[w];
        }
    }
}

struct Scratch {
    dist: Vec<i64>,
    sigma: Vec<f64>,
    delta: Vec<f64>,
    order: Vec<u32>,
    queue: VecDeque<u32>,
}

impl Scratch {
    fn new(n: usize) -> Self {
        Scratch {
            dist: vec![-1; n],
            sigma: vec![0.0; n],
            delta: vec![0.0; n],
            order: Vec::new(),
            queue: VecDeque::new(),
        }
    }
}

fn betweenness_from(g: &RetweetGraph, sources: &[usize]) -> Vec<f64> {
    let n = g.node_count();
    let partials: Vec<Vec<f64>> = sources
        .par_chunks(SOURCE_CHUNK)
        .map(|chunk| {
            let mut scratch = Scratch::new(n);
            let mut acc = vec![0.0; n];
            for &s in chunk {
                accumulate_source(g, s, &mut scratch, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = vec![0.0; n];
    for part in partials {
        for (t, x) in total.iter_mut().zip(part) {
            *t += x;
        }
    }
    total
}

/// Unnormalized directed betweenness; endpoints are excluded.
pub fn betweenness(g: &RetweetGraph) -> Vec<f64> {
    let sources: Vec<usize> = (0..g.node_count()).collect();
    betweenness_from(g, &sources)
}

/// Source-sampled estimate scaled by `n / k`; exact when `k >= n`.
pub fn betweenness_sampled(g: &RetweetGraph, k: usize, seed: u64) -> Vec<f64> {
    let n = g.node_count();
    if k >= n {
        return betweenness(g);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sources = index::sample(&mut rng, n, k).into_vec();
    sources.sort_unstable();
    let scale = n as f64 / k as f64;
    betweenness_from(g, &sources)
        .into_iter()
        .map(|x| x * scale)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenvectorCentrality {
    /// Unit L2 norm, non-negative.
    pub scores: Vec<f64>,
    /// Rayleigh quotient of the influence matrix at `scores`.
    pub eigenvalue: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Two different start vectors reached different limits, so the
    /// dominant eigenvalue is not simple.
    pub degenerate: bool,
}

pub const EIGEN_TOL: f64 = 1e-8;
pub const EIGEN_MAX_ITER: usize = 1000;
const DEGENERACY_GAP: f64 = 1e-4;

/// `(M x)_u = sum of x_v over users v that retweeted u`.
pub fn influence_multiply(g: &RetweetGraph, x: &[f64]) -> Vec<f64> {
    (0..g.node_count())
        .map(|u| g.in_neighbors(u).iter().map(|&v| x[v as usize]).sum())
        .collect()
}

fn normalize(x: &mut [f64]) {
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        x.iter_mut().for_each(|v| *v /= norm);
    }
}

/// Power iteration on `M + I`; same eigenvectors as `M`, but aperiodic.
fn power_iterate(g: &RetweetGraph, mut x: Vec<f64>, tol: f64, max_iter: usize) -> (Vec<f64>, usize, bool) {
    normalize(&mut x);
    for it in 1..=max_iter {
        let mut y = influence_multiply(g, &x);
        y.iter_mut().zip(&x).for_each(|(yi, xi)| *yi += xi);
        normalize(&mut y);
        let diff = y
            .iter()
            .zip(&x)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        x = y;
        if diff < tol {
            return (x, it, true);
        }
    }
    (x, max_iter, false)
}

pub fn eigenvector_centrality(g: &RetweetGraph, tol: f64, max_iter: usize) -> EigenvectorCentrality {
    let n = g.node_count();
    if n == 0 {
        return EigenvectorCentrality {
            scores: Vec::new(),
            eigenvalue: 0.0,
            iterations: 0,
            converged: true,
            degenerate: false,
        };
    }
    let (x, iterations, converged) = power_iterate(g, vec![1.0; n], tol, max_iter);
    let skewed: Vec<f64> = (0..n).map(|i| 1.0 + (i % 7) as f64 / 7.0).collect();
    let (x2, _, converged2) = power_iterate(g, skewed, tol, max_iter);
    let gap = x.iter().zip(&x2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let mx = influence_multiply(g, &x);
    let eigenvalue = x.iter().zip(&mx).map(|(a, b)| a * b).sum::<f64>()
        / x.iter().map(|a| a * a).sum::<f64>();
    EigenvectorCentrality {
        scores: x,
        eigenvalue,
        iterations,
        converged: converged && converged2,
        degenerate: gap > DEGENERACY_GAP,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphBuilder;
    use proptest::prelude::*;

    fn graph(n: usize, edges: &[(usize, usize)]) -> RetweetGraph {
        let mut b = GraphBuilder::new();
        for i in 0..n {
            b.node(&i.to_string());
        }
        for &(u, v) in edges {
            b.edge_indices(u, v);
        }
        b.build()
    }

    /// All-pairs shortest-path counting by BFS from every source, then
    /// `sigma_st(v) = sigma_sv * sigma_vt` when `d(s,v) + d(v,t) = d(s,t)`.
    fn brute_force(g: &RetweetGraph) -> Vec<f64> {
        let n = g.node_count();
        let mut dist = vec![vec![usize::MAX; n]; n];
        let mut count = vec![vec![0f64; n]; n];
        for s in 0..n {
            dist[s][s] = 0;
            count[s][s] = 1.0;
            let mut frontier = vec![s];
            let mut d = 0;
            while !frontier.is_empty() {
                d += 1;
                let mut next = Vec::new();
                for &v in &frontier {
                    for &w in g.out_neighbors(v) {
                        let w = w as usize;
                        if dist[s][w] == usize::MAX {
                            dist[s][w] = d;
                            next.push(w);
                        }
                        if dist[s][w] == d {
                            count[s][w] += count[s][v];
                        }
                    }
                }
                frontier = next;
            }
        }
        let mut bc = vec![0.0; n];
        for s in 0..n {
            for t in 0..n {
                if s == t || dist[s][t] == usize::MAX {
                    continue;
                }
                for v in 0..n {
                    if v == s || v == t || dist[s][v] == usize::MAX || dist[v][t] == usize::MAX {
                        continue;
                    }
                    if dist[s][v] + dist[v][t] == dist[s][t] {
                        bc[v] += count[s][v] * count[v][t] / count[s][t];
                    }
                }
            }
        }
        bc
    }

    #[test]
    fn path_middle_node() {
        let g = graph(3, &[(0, 1), (1, 2)]);
        assert_eq!(betweenness(&g), vec![0.0, 1.0, 0.0]);
        assert_eq!(brute_force(&g), vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn directed_cycle_is_symmetric() {
        let g = graph(4, &[(0, 1), (1, 2), (2, 3), (3, 0)]);
        let bc = betweenness(&g);
        assert!(bc.iter().all(|&x| (x - bc[0]).abs() < 1e-12));
        // each node is interior to the paths of lengths 2 and 3 through it
        assert!((bc[0] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn sampled_with_all_sources_is_exact() {
        let g = crate::synth::power_law_digraph(80, 2.5, 3.0, 2);
        assert_eq!(betweenness_sampled(&g, 80, 1), betweenness(&g));
        let approx = betweenness_sampled(&g, 40, 1);
        assert_eq!(approx.len(), 80);
        assert!(approx.iter().all(|x| x.is_finite() && *x >= 0.0));
    }

    #[test]
    fn directed_cycle_eigenvector_is_uniform() {
        let g = graph(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)]);
        let ev = eigenvector_centrality(&g, EIGEN_TOL, EIGEN_MAX_ITER);
        let expected = 1.0 / 5f64.sqrt();
        assert!(ev.converged && !ev.degenerate);
        assert!(ev.scores.iter().all(|&x| (x - expected).abs() < 1e-9));
        assert!((ev.eigenvalue - 1.0).abs() < 1e-9);
    }

    #[test]
    fn mass_concentrates_on_dominant_component() {
        // bidirectional triangle (lambda = 2) next to a 2-cycle (lambda = 1)
        let g = graph(
            5,
            &[(0, 1), (1, 0), (1, 2), (2, 1), (0, 2), (2, 0), (3, 4), (4, 3)],
        );
        let ev = eigenvector_centrality(&g, EIGEN_TOL, EIGEN_MAX_ITER);
        assert!(ev.converged && !ev.degenerate);
        assert!((ev.eigenvalue - 2.0).abs() < 1e-6);
        assert!(ev.scores[3] < 1e-6 && ev.scores[4] < 1e-6);
        assert!((ev.scores[0] - 1.0 / 3f64.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn equal_components_raise_degeneracy_flag() {
        let g = graph(6, &[(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3)]);
        let ev = eigenvector_centrality(&g, EIGEN_TOL, EIGEN_MAX_ITER);
        assert!(ev.degenerate);
    }

    #[test]
    fn non_convergence_is_flagged() {
        let g = graph(3, &[(0, 1), (1, 2)]);
        let ev = eigenvector_centrality(&g, 1e-300, 5);
        assert!(!ev.converged);
        assert_eq!(ev.iterations, 5);
    }

    fn random_graph(max_n: usize) -> impl Strategy<Value = RetweetGraph> {
        (1..=max_n).prop_flat_map(|n| {
            prop::collection::vec((0..n, 0..n), 0..(n * n).max(1))
                .prop_map(move |pairs| graph(n, &pairs))
        })
    }

    proptest! {
        #[test]
        fn brandes_matches_brute_force(g in random_graph(12)) {
            let fast = betweenness(&g);
            let slow = brute_force(&g);
            for (a, b) in fast.iter().zip(&slow) {
                prop_assert!((a - b).abs() < 1e-9, "{fast:?} vs {slow:?}");
            }
        }

        /// Total betweenness equals the number of intermediate vertices over
        /// all shortest paths, i.e. sum over reachable pairs of (d(s,t) - 1).
        #[test]
        fn betweenness_sums_to_interior_occurrences(g in random_graph(12)) {
            let n = g.node_count();
            let mut interior = 0.0;
            for s in 0..n {
                let mut dist = vec![usize::MAX; n];
                dist[s] = 0;
                let mut q = VecDeque::from([s]);
                while let Some(v) = q.pop_front() {
                    for &w in g.out_neighbors(v) {
                        if dist[w as usize] == usize::MAX {
                            dist[w as usize] = dist[v] + 1;
                            q.push_back(w as usize);
                        }
                    }
                }
                interior += dist.iter().filter(|&&d| d != usize::MAX && d > 0).map(|&d| (d - 1) as f64).sum::<f64>();
            }
            let total: f64 = betweenness(&g).iter().sum();
            prop_assert!((total - interior).abs() < 1e-9);
        }
    }
}
