//! Ground-truth generator: a directed retweet graph with a planted
//! homophilous minority, plus class-conditional profiles, tweets, a lexicon
//! and a word-vector table.
//!
//! A minority source sends each out-edge to a minority destination with
//! probability `h`. Majority sources use `rho (1 - h) / (1 - rho)`, which
//! keeps the minority's share of in-edges equal to its share of nodes.

use std::collections::BTreeMap;
use std::io::Write;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, LogNormal, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{GraphBuilder, RetweetGraph};
use crate::profile::{Label, Tweet, UserProfile};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthConfig {
    pub nodes: usize,
    /// Minority fraction `rho`.
    pub minority_fraction: f64,
    /// Target `P(dest minority | source minority)`.
    pub homophily: f64,
    /// Mean out-degree of users with out-edges.
    pub mean_out_degree: f64,
    /// Fraction of users who retweet nobody.
    pub silent_fraction: f64,
    /// Exponent of the out-degree power law (`P(k) ~ k^-exponent`).
    pub degree_exponent: f64,
    pub max_out_degree: usize,
    /// Words per class-specific vocabulary (the shared one has the same size).
    pub vocab_size: usize,
    /// Probability that a token comes from the shared vocabulary.
    pub vocab_overlap: f64,
    pub tweets_per_user: usize,
    pub tokens_per_tweet: usize,
    /// Probability that a minority user uses a lexicon phrase (`q`).
    pub lexicon_rate: f64,
    pub lexicon_rate_majority: f64,
    /// Minority multiplier on statuses, followees and favorites rates and
    /// divisor on the tweet interval.
    pub activity_multiplier: f64,
    /// How many nodes get a ground-truth label in `labels.csv`.
    pub labeled: usize,
    pub vector_dim: usize,
    pub reference_date: DateTime<Utc>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            nodes: 10_000,
            minority_fraction: 0.01,
            homophily: 0.415,
            mean_out_degree: 10.0,
            silent_fraction: 0.25,
            degree_exponent: 2.5,
            max_out_degree: 1000,
            vocab_size: 400,
            vocab_overlap: 0.9,
            tweets_per_user: 20,
            tokens_per_tweet: 10,
            lexicon_rate: 0.3,
            lexicon_rate_majority: 0.002,
            activity_multiplier: 1.3,
            labeled: 5_000,
            vector_dim: 50,
            reference_date: Utc.with_ymd_and_hms(2017, 10, 7, 0, 0, 0).unwrap(),
            seed: 1,
        }
    }
}

pub const SEED_LEXICON: [&str; 3] = ["holohoax", "racial treason", "white genocide"];
const LEXICON_SIZE: usize = 23;

impl SynthConfig {
    pub fn minority_count(&self) -> usize {
        (self.minority_fraction * self.nodes as f64).round() as usize
    }

    fn majority_homophily(&self) -> f64 {
        let rho = self.minority_count() as f64 / self.nodes as f64;
        rho * (1.0 - self.homophily) / (1.0 - rho)
    }

    fn degree_cap(&self) -> usize {
        self.max_out_degree.min(self.nodes.saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::invalid(format!("infeasible synth config: {m}")));
        let rho = self.minority_fraction;
        if !(rho > 0.0 && rho < 1.0) {
            return bad(format!("minority fraction {rho} outside (0, 1)"));
        }
        let m = self.minority_count();
        if m < 2 || self.nodes - m < 2 {
            return bad(format!(
                "{} nodes with fraction {rho} leave fewer than 2 members in a class",
                self.nodes
            ));
        }
        let realized = m as f64 / self.nodes as f64;
        let h = self.homophily;
        if !(h >= realized - 1e-12 && h <= 1.0) {
            return bad(format!("homophily {h} outside [{realized}, 1]"));
        }
        if self.degree_exponent <= 2.0 {
            return bad(format!("degree exponent {} must exceed 2", self.degree_exponent));
        }
        let cap = self.degree_cap();
        if !(self.mean_out_degree >= 1.0 && self.mean_out_degree <= cap as f64) {
            return bad(format!(
                "mean out-degree {} outside [1, {cap}]",
                self.mean_out_degree
            ));
        }
        if self.mean_out_degree * h > (m - 1) as f64 {
            return bad(format!(
                "a minority source of mean degree needs {:.1} minority targets but only {} exist",
                self.mean_out_degree * h,
                m - 1
            ));
        }
        if !(0.0..1.0).contains(&self.silent_fraction) {
            return bad(format!("silent fraction {} outside [0, 1)", self.silent_fraction));
        }
        if !(0.0..=1.0).contains(&self.vocab_overlap)
            || !(0.0..=1.0).contains(&self.lexicon_rate)
            || !(0.0..=1.0).contains(&self.lexicon_rate_majority)
        {
            return bad("probabilities must lie in [0, 1]".into());
        }
        if self.activity_multiplier <= 0.0 || self.vocab_size == 0 || self.vector_dim == 0 {
            return bad("rates and sizes must be positive".into());
        }
        Ok(())
    }
}

/// Power-law out-degree sampler: rounded Pareto with the requested mean,
/// clamped to `[1, cap]`.
#[derive(Debug, Clone, Copy)]
struct DegreeSampler {
    scale: f64,
    shape: f64,
    cap: usize,
}

impl DegreeSampler {
    fn new(mean: f64, exponent: f64, cap: usize) -> Self {
        let shape = exponent - 1.0;
        DegreeSampler {
            scale: mean * (shape - 1.0) / shape,
            shape,
            cap: cap.max(1),
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = 1.0 - rng.random::<f64>();
        let x = self.scale * u.powf(-1.0 / self.shape);
        (x.round().max(1.0) as usize).min(self.cap)
    }
}

fn node_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uniform-destination digraph with power-law out-degrees; ids are `0..n`.
pub fn power_law_digraph(n: usize, exponent: f64, mean_degree: f64, seed: u64) -> RetweetGraph {
    let sampler = DegreeSampler::new(mean_degree, exponent, n.saturating_sub(1));
    let rows: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|u| {
            let mut rng = node_rng(seed, u as u64);
            let k = sampler.sample(&mut rng);
            index::sample(&mut rng, n - 1, k)
                .into_iter()
                .map(|v| if v >= u { v + 1 } else { v })
                .collect()
        })
        .collect();
    let mut b = GraphBuilder::new();
    for u in 0..n {
        b.node(&u.to_string());
    }
    for (u, row) in rows.into_iter().enumerate() {
        for v in row {
            b.edge_indices(u, v);
        }
    }
    b.build()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Truth {
    pub config: SynthConfig,
    pub minority_count: usize,
    pub edges: usize,
    pub minority_out_edges: usize,
    pub minority_to_minority: usize,
    pub majority_out_edges: usize,
    pub majority_to_minority: usize,
    /// Realized `P(dest minority | source minority)`.
    pub in_group_fraction: f64,
    /// `in_group_fraction` over the realized minority prevalence.
    pub likelihood_ratio: f64,
    pub seeded_users: usize,
    pub minority_ids: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub graph: RetweetGraph,
    pub minority: Vec<bool>,
    pub profiles: Vec<UserProfile>,
    /// Labels for the `labeled` sample of nodes.
    pub labels: BTreeMap<String, Label>,
    pub lexicon: Vec<String>,
    pub vectors: Vec<(String, Vec<f64>)>,
    pub truth: Truth,
}

pub fn node_id(i: usize) -> String {
    format!("u{i}")
}

fn edge_rows(cfg: &SynthConfig, minority: &[bool], members: &[Vec<usize>; 2]) -> Result<Vec<Vec<usize>>> {
    let sampler = DegreeSampler::new(cfg.mean_out_degree, cfg.degree_exponent, cfg.degree_cap());
    let h_min = cfg.homophily;
    let h_maj = cfg.majority_homophily();
    (0..cfg.nodes)
        .into_par_iter()
        .map(|u| {
            let mut rng = node_rng(cfg.seed, 2 * u as u64);
            let own = minority[u];
            let h = if own { h_min } else { h_maj };
            if rng.random::<f64>() < cfg.silent_fraction {
                return Ok(Vec::new());
            }
            // self is excluded from its own class pool
            let pool = |class_minority: bool| {
                members[class_minority as usize].len() - usize::from(class_minority == own)
            };
            for _ in 0..1000 {
                let k = sampler.sample(&mut rng);
                let to_min = (0..k).filter(|_| rng.random::<f64>() < h).count();
                let to_maj = k - to_min;
                if to_min > pool(true) || to_maj > pool(false) {
                    continue;
                }
                let mut row = Vec::with_capacity(k);
                for (class_minority, count) in [(true, to_min), (false, to_maj)] {
                    let list = &members[class_minority as usize];
                    for j in index::sample(&mut rng, pool(class_minority), count) {
                        let mut v = list[j];
                        if v == u {
                            // the pool skips self: map it to the dropped last slot
                            v = list[list.len() - 1];
                        }
                        row.push(v);
                    }
                }
                return Ok(row);
            }
            Err(Error::invalid(format!(
                "could not place the out-edges of node {u} within class sizes"
            )))
        })
        .collect()
}

fn vocabulary(prefix: &str, size: usize) -> Vec<String> {
    (0..size).map(|i| format!("{prefix}{i}")).collect()
}

struct Vocab {
    shared: Vec<String>,
    by_class: [Vec<String>; 2],
}

fn make_profile(
    cfg: &SynthConfig,
    u: usize,
    is_minority: bool,
    vocab: &Vocab,
    lexicon: &[String],
) -> (UserProfile, bool) {
    let mut rng = node_rng(cfg.seed, 2 * u as u64 + 1);
    let mult = if is_minority { cfg.activity_multiplier } else { 1.0 };
    let max_age = if is_minority { 2400.0 } else { 3600.0 };
    let age_days: f64 = rng.random_range(60.0..max_age);
    let created_at = cfg.reference_date - Duration::seconds((age_days * 86_400.0) as i64);

    let lognormal = |median: f64| LogNormal::new(median.ln(), 1.0).unwrap();
    let statuses = lognormal(5.0 * mult).sample(&mut rng) * age_days;
    let followers = lognormal(100.0).sample(&mut rng);
    let followees = lognormal(150.0 * mult).sample(&mut rng);
    let favorites = lognormal(2.0 * mult).sample(&mut rng) * age_days;

    let interval = Exp::new(mult / 7_200.0).unwrap();
    let class_words = &vocab.by_class[is_minority as usize];
    let mut t = cfg.reference_date;
    let mut tweets = Vec::with_capacity(cfg.tweets_per_user);
    for _ in 0..cfg.tweets_per_user {
        t -= Duration::seconds(interval.sample(&mut rng).ceil() as i64);
        let mut words: Vec<String> = (0..cfg.tokens_per_tweet)
            .map(|_| {
                let list = if rng.random::<f64>() < cfg.vocab_overlap {
                    &vocab.shared
                } else {
                    class_words
                };
                list[rng.random_range(0..list.len())].clone()
            })
            .collect();
        if rng.random::<f64>() < 0.2 * mult {
            words.push(format!("https://t.co/{}", rng.random_range(0..1_000_000u32)));
        }
        if rng.random::<f64>() < 0.15 {
            words.push(format!("#{}", class_words[rng.random_range(0..class_words.len())]));
        }
        tweets.push(Tweet::at(words.join(" "), t));
    }
    let rate = if is_minority {
        cfg.lexicon_rate
    } else {
        cfg.lexicon_rate_majority
    };
    let seeded = !tweets.is_empty() && rng.random::<f64>() < rate;
    if seeded {
        let idx = rng.random_range(0..tweets.len());
        let phrase = &lexicon[rng.random_range(0..lexicon.len())];
        let tw = &mut tweets[idx];
        tw.text = format!("{} {phrase}", tw.text);
    }
    let profile = UserProfile {
        id: node_id(u),
        created_at,
        statuses_count: statuses.round() as u64,
        followers_count: followers.round() as u64,
        followees_count: followees.round() as u64,
        favorites_count: favorites.round() as u64,
        tweets,
        suspended: BTreeMap::new(),
    };
    (profile, seeded)
}

pub fn lexicon() -> Vec<String> {
    let mut lex: Vec<String> = SEED_LEXICON.iter().map(|s| s.to_string()).collect();
    lex.extend((lex.len()..LEXICON_SIZE).map(|i| format!("hateterm{i}")));
    lex
}

/// Generates only the graph and the minority indicator.
pub fn generate_graph(cfg: &SynthConfig) -> Result<(RetweetGraph, Vec<bool>)> {
    cfg.validate()?;
    let n = cfg.nodes;
    let m = cfg.minority_count();
    let mut rng = node_rng(cfg.seed, u64::MAX);
    let mut minority = vec![false; n];
    for i in index::sample(&mut rng, n, m) {
        minority[i] = true;
    }
    let members: [Vec<usize>; 2] = [
        (0..n).filter(|&i| !minority[i]).collect(),
        (0..n).filter(|&i| minority[i]).collect(),
    ];
    let rows = edge_rows(cfg, &minority, &members)?;
    let mut b = GraphBuilder::new();
    for u in 0..n {
        b.node(&node_id(u));
    }
    for (u, row) in rows.into_iter().enumerate() {
        for v in row {
            b.edge_indices(u, v);
        }
    }
    Ok((b.build(), minority))
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthData> {
    let (graph, minority) = generate_graph(cfg)?;
    let n = cfg.nodes;
    let vocab = Vocab {
        shared: vocabulary("com", cfg.vocab_size),
        by_class: [vocabulary("maj", cfg.vocab_size), vocabulary("min", cfg.vocab_size)],
    };
    let lexicon = lexicon();
    let (profiles, seeded): (Vec<UserProfile>, Vec<bool>) = (0..n)
        .into_par_iter()
        .map(|u| make_profile(cfg, u, minority[u], &vocab, &lexicon))
        .unzip();

    let mut rng = node_rng(cfg.seed, u64::MAX - 1);
    let labeled = cfg.labeled.min(n);
    let mut labels = BTreeMap::new();
    for i in index::sample(&mut rng, n, labeled) {
        let label = if minority[i] { Label::Hateful } else { Label::Normal };
        labels.insert(node_id(i), label);
    }

    let normal = Normal::new(0.0, 1.0 / (cfg.vector_dim as f64).sqrt()).unwrap();
    let vectors = vocab
        .shared
        .iter()
        .chain(&vocab.by_class[0])
        .chain(&vocab.by_class[1])
        .map(|w| {
            let v: Vec<f64> = (0..cfg.vector_dim).map(|_| normal.sample(&mut rng)).collect();
            (w.clone(), v)
        })
        .collect();

    let truth = measure_truth(cfg, &graph, &minority, seeded.iter().filter(|&&s| s).count());
    Ok(SynthData {
        graph,
        minority,
        profiles,
        labels,
        lexicon,
        vectors,
        truth,
    })
}

fn measure_truth(cfg: &SynthConfig, g: &RetweetGraph, minority: &[bool], seeded: usize) -> Truth {
    let mut counts = [[0usize; 2]; 2];
    for (u, v) in g.edges() {
        counts[minority[u] as usize][minority[v] as usize] += 1;
    }
    let m = minority.iter().filter(|&&x| x).count();
    let min_out = counts[1][0] + counts[1][1];
    let in_group = counts[1][1] as f64 / min_out.max(1) as f64;
    Truth {
        config: cfg.clone(),
        minority_count: m,
        edges: g.edge_count(),
        minority_out_edges: min_out,
        minority_to_minority: counts[1][1],
        majority_out_edges: counts[0][0] + counts[0][1],
        majority_to_minority: counts[0][1],
        in_group_fraction: in_group,
        likelihood_ratio: in_group / (m as f64 / g.node_count() as f64),
        seeded_users: seeded,
        minority_ids: (0..g.node_count())
            .filter(|&i| minority[i])
            .map(node_id)
            .collect(),
    }
}

pub fn write_vectors(w: &mut impl Write, vectors: &[(String, Vec<f64>)]) -> std::io::Result<()> {
    for (word, v) in vectors {
        write!(w, "{word}")?;
        for x in v {
            write!(w, " {x:.6}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig {
            nodes: 2_000,
            minority_fraction: 0.05,
            labeled: 500,
            tweets_per_user: 5,
            seed,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn edge_count_matches_out_degrees_and_no_self_loops() {
        let (g, minority) = generate_graph(&small(3)).unwrap();
        let total: usize = (0..g.node_count()).map(|u| g.out_degree(u)).sum();
        assert_eq!(total, g.edge_count());
        assert!(g.edges().all(|(u, v)| u != v));
        assert_eq!(minority.iter().filter(|&&m| m).count(), 100);
        let silent = (0..g.node_count()).filter(|&u| g.out_degree(u) == 0).count() as f64;
        assert!((silent / g.node_count() as f64 - 0.25).abs() < 0.03, "{silent}");

        let (g, _) = generate_graph(&SynthConfig { silent_fraction: 0.0, ..small(3) }).unwrap();
        assert!((0..g.node_count()).all(|u| g.out_degree(u) >= 1));
    }

    #[test]
    fn prevalence_matches_fraction_at_scale() {
        let cfg = SynthConfig {
            nodes: 50_000,
            minority_fraction: 0.006,
            ..SynthConfig::default()
        };
        let (_, minority) = generate_graph(&cfg).unwrap();
        let share = minority.iter().filter(|&&m| m).count() as f64 / 50_000.0;
        assert!((share - 0.006).abs() <= 0.001);
    }

    #[test]
    fn null_homophily_gives_unit_ratio() {
        let cfg = SynthConfig {
            nodes: 20_000,
            minority_fraction: 0.05,
            homophily: 0.05,
            ..SynthConfig::default()
        };
        let data = generate(&SynthConfig { tweets_per_user: 0, ..cfg }).unwrap();
        let ratio = data.truth.likelihood_ratio;
        assert!((ratio - 1.0).abs() < 0.15, "ratio {ratio}");
    }

    #[test]
    fn infeasible_configs_are_rejected() {
        let base = small(1);
        for cfg in [
            SynthConfig { minority_fraction: 0.0, ..base.clone() },
            SynthConfig { minority_fraction: 1.0, ..base.clone() },
            SynthConfig { homophily: 0.01, ..base.clone() },
            SynthConfig { homophily: 1.5, ..base.clone() },
            SynthConfig { nodes: 20, minority_fraction: 0.01, ..base.clone() },
            SynthConfig { nodes: 200, minority_fraction: 0.02, homophily: 0.9, ..base.clone() },
            SynthConfig { degree_exponent: 2.0, ..base.clone() },
        ] {
            assert!(generate(&cfg).is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn zero_lexicon_rate_seeds_nobody() {
        let cfg = SynthConfig {
            lexicon_rate: 0.0,
            lexicon_rate_majority: 0.0,
            ..small(2)
        };
        let data = generate(&cfg).unwrap();
        assert_eq!(data.truth.seeded_users, 0);
    }

    #[test]
    fn same_seed_same_output() {
        let a = generate(&small(5)).unwrap();
        let b = generate(&small(5)).unwrap();
        assert_eq!(a.graph, b.graph);
        assert_eq!(a.profiles, b.profiles);
        assert_eq!(a.labels, b.labels);
        assert_eq!(a.vectors, b.vectors);
        let c = generate(&small(6)).unwrap();
        assert_ne!(a.graph, c.graph);
    }

    #[test]
    fn power_law_graph_has_requested_shape() {
        let g = power_law_digraph(5_000, 2.5, 8.0, 1);
        let mean = g.edge_count() as f64 / 5_000.0;
        assert!(mean > 4.0 && mean < 12.0, "mean degree {mean}");
        let max = (0..5_000).map(|u| g.out_degree(u)).max().unwrap();
        assert!(max > 50, "no heavy tail: max {max}");
    }
}
