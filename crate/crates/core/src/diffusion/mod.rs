//! Lexicon seeding and DeGroot belief diffusion over the retweet graph.
//!
//! Influence flows from the retweeted user to the retweeter, so the row of
//! user `u` in the transition matrix spans `u` itself plus every user `u`
//! retweeted, uniformly weighted.

mod annotation;

pub use annotation::{export_annotation_batch, import_annotations, read_annotations, Vote, MIN_ANNOTATORS};

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::RetweetGraph;
use crate::profile::ProfileStore;
use crate::text;

pub const DEFAULT_STEPS: usize = 2;
pub const DEFAULT_STRATUM_CAP: usize = 1500;
pub const STRATUM_BOUNDS: [f64; 3] = [0.25, 0.50, 0.75];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    phrases: Vec<Vec<String>>,
}

impl Lexicon {
    pub fn new<S: AsRef<str>>(phrases: impl IntoIterator<Item = S>) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for p in phrases {
            let toks = text::normalized_tokens(p.as_ref());
            if toks.is_empty() {
                return Err(Error::invalid(format!("empty lexicon phrase {:?}", p.as_ref())));
            }
            if !seen.insert(toks.clone()) {
                return Err(Error::invalid(format!("duplicate lexicon phrase {:?}", p.as_ref())));
            }
            out.push(toks);
        }
        if out.is_empty() {
            return Err(Error::invalid("lexicon is empty"));
        }
        Ok(Lexicon { phrases: out })
    }

    /// One phrase per line; `#` starts a comment line.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#')),
        )
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    pub fn matches(&self, tweet: &str) -> bool {
        let toks = text::normalized_tokens(tweet);
        self.phrases.iter().any(|p| text::contains_phrase(&toks, p))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeliefVector {
    pub values: Vec<f64>,
    pub step: usize,
}

/// `p_i = 1` for users with any tweet containing a lexicon phrase, else 0.
/// Nodes without a profile get 0.
pub fn seed_beliefs(g: &RetweetGraph, profiles: &ProfileStore, lexicon: &Lexicon) -> BeliefVector {
    let values = profiles
        .aligned(g)
        .par_iter()
        .map(|p| match p {
            Some(p) if p.tweets.iter().any(|t| lexicon.matches(&t.text)) => 1.0,
            _ => 0.0,
        })
        .collect();
    BeliefVector { values, step: 0 }
}

/// Row-stochastic matrix with uniform rows: row `u` holds `u` and its
/// original out-neighbors, each weighted `1 / row length`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionMatrix {
    offsets: Vec<usize>,
    columns: Vec<u32>,
}

impl TransitionMatrix {
    pub fn dim(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn row(&self, u: usize) -> &[u32] {
        &self.columns[self.offsets[u]..self.offsets[u + 1]]
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        let row = self.row(u);
        if row.binary_search(&(v as u32)).is_ok() {
            1.0 / row.len() as f64
        } else {
            0.0
        }
    }

    pub fn row_sum(&self, u: usize) -> f64 {
        let w = 1.0 / self.row(u).len() as f64;
        self.row(u).iter().map(|_| w).sum()
    }

    /// `(T p)_u`, summing in column order.
    fn apply_row(&self, u: usize, p: &[f64]) -> f64 {
        let row = self.row(u);
        let s: f64 = row.iter().map(|&v| p[v as usize]).sum();
        s / row.len() as f64
    }
}

pub fn build_transition(g: &RetweetGraph) -> TransitionMatrix {
    let n = g.node_count();
    let mut offsets = Vec::with_capacity(n + 1);
    let mut columns = Vec::with_capacity(n + g.edge_count());
    offsets.push(0);
    for u in 0..n {
        let out = g.out_neighbors(u);
        let split = out.partition_point(|&v| (v as usize) < u);
        columns.extend_from_slice(&out[..split]);
        columns.push(u as u32);
        columns.extend_from_slice(&out[split..]);
        offsets.push(columns.len());
    }
    TransitionMatrix { offsets, columns }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DiffuseOptions {
    /// Reset seed users (initial belief 1) to 1 after every step.
    pub clamp_seeds: bool,
}

pub fn diffuse(t: &TransitionMatrix, p0: &BeliefVector, steps: usize) -> Result<BeliefVector> {
    diffuse_with(t, p0, steps, DiffuseOptions::default())
}

pub fn diffuse_with(
    t: &TransitionMatrix,
    p0: &BeliefVector,
    steps: usize,
    opts: DiffuseOptions,
) -> Result<BeliefVector> {
    if t.dim() != p0.values.len() {
        return Err(Error::invalid(format!(
            "belief vector has {} entries but the transition matrix is {}x{}",
            p0.values.len(),
            t.dim(),
            t.dim()
        )));
    }
    let seeds: Vec<bool> = p0.values.iter().map(|&x| x >= 1.0).collect();
    let mut p = p0.values.clone();
    for _ in 0..steps {
        let mut next: Vec<f64> = (0..t.dim())
            .into_par_iter()
            .map(|u| t.apply_row(u, &p))
            .collect();
        if opts.clamp_seeds {
            next.iter_mut()
                .zip(&seeds)
                .filter(|(_, &s)| s)
                .for_each(|(x, _)| *x = 1.0);
        }
        p = next;
    }
    Ok(BeliefVector {
        values: p,
        step: p0.step + steps,
    })
}

/// 1-based stratum of a belief: `[0,.25)`, `[.25,.5)`, `[.5,.75)`, `[.75,1]`.
pub fn stratum_of(p: f64) -> u8 {
    1 + STRATUM_BOUNDS.iter().filter(|&&b| p >= b).count() as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StratumAssignment {
    pub node: usize,
    pub stratum: u8,
    pub selected: bool,
}

/// Assigns every node to a stratum and selects up to `cap` per stratum
/// uniformly at random.
pub fn stratify(p: &BeliefVector, cap: usize, seed: u64) -> Vec<StratumAssignment> {
    let mut out: Vec<StratumAssignment> = p
        .values
        .iter()
        .enumerate()
        .map(|(node, &x)| StratumAssignment {
            node,
            stratum: stratum_of(x),
            selected: false,
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for s in 1..=4u8 {
        let members: Vec<usize> = out
            .iter()
            .filter(|a| a.stratum == s)
            .map(|a| a.node)
            .collect();
        let take = cap.min(members.len());
        for i in index::sample(&mut rng, members.len(), take) {
            out[members[i]].selected = true;
        }
    }
    out
}
