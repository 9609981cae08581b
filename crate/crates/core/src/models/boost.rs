//! Boosted ensembles: discrete AdaBoost over decision stumps and gradient
//! boosting of shallow regression trees on the logistic loss.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{class_weight_for, sigmoid_score, softplus};
use crate::error::{Error, Result};

/// Row-major design matrix view.
#[derive(Debug, Clone, Copy)]
pub struct Design<'a> {
    pub data: &'a [f64],
    pub cols: usize,
}

impl<'a> Design<'a> {
    pub fn new(data: &'a [f64], cols: usize) -> Result<Self> {
        if cols == 0 || !data.len().is_multiple_of(cols) {
            return Err(Error::invalid(format!(
                "design matrix of {} values does not have {cols} columns",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("design matrix has non-finite values"));
        }
        Ok(Design { data, cols })
    }

    pub fn rows(&self) -> usize {
        self.data.len() / self.cols
    }

    pub fn row(&self, i: usize) -> &'a [f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Row indices sorted by each column; ties keep row order.
    fn presorted(&self) -> Vec<Vec<usize>> {
        (0..self.cols)
            .into_par_iter()
            .map(|j| {
                let mut idx: Vec<usize> = (0..self.rows()).collect();
                idx.sort_by(|&a, &b| self.get(a, j).total_cmp(&self.get(b, j)));
                idx
            })
            .collect()
    }
}

/// Predicts `polarity` when `x[feature] > threshold`, else `-polarity`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stump {
    pub feature: usize,
    pub threshold: f64,
    pub polarity: f64,
}

impl Stump {
    pub fn predict(&self, x: &[f64]) -> f64 {
        if x[self.feature] > self.threshold {
            self.polarity
        } else {
            -self.polarity
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    /// `None` for a leaf.
    pub feature: Option<usize>,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
    pub value: f64,
}

/// Binary regression tree; `x[feature] <= threshold` goes left. Node 0 is
/// the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut k = 0;
        loop {
            let n = &self.nodes[k];
            match n.feature {
                None => return n.value,
                Some(j) => k = if x[j] <= n.threshold { n.left } else { n.right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, k: usize) -> usize {
            match t.nodes[k].feature {
                None => 0,
                Some(_) => 1 + go(t, t.nodes[k].left).max(go(t, t.nodes[k].right)),
            }
        }
        go(self, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeakLearner {
    Stump(Stump),
    Tree(Tree),
}

impl WeakLearner {
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            WeakLearner::Stump(s) => s.predict(x),
            WeakLearner::Tree(t) => t.predict(x),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoostLoss {
    Exponential,
    Logistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostEnsemble {
    pub loss: BoostLoss,
    pub n_features: usize,
    pub base: f64,
    pub learners: Vec<WeakLearner>,
    pub coefficients: Vec<f64>,
}

impl BoostEnsemble {
    pub fn margin(&self, x: &[f64]) -> f64 {
        self.margin_upto(x, self.learners.len())
    }

    /// Margin of the first `k` learners.
    pub fn margin_upto(&self, x: &[f64], k: usize) -> f64 {
        self.base
            + self
                .learners
                .iter()
                .zip(&self.coefficients)
                .take(k)
                .map(|(l, c)| c * l.predict(x))
                .sum::<f64>()
    }

    pub fn predict(&self, x: Design<'_>) -> Result<Vec<f64>> {
        if x.cols != self.n_features {
            return Err(Error::invalid(format!(
                "model expects {} features, got {}",
                self.n_features, x.cols
            )));
        }
        Ok((0..x.rows()).map(|i| sigmoid_score(self.margin(x.row(i)))).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.learners.len() != self.coefficients.len() {
            return Err(Error::invalid("ensemble learner and coefficient counts differ"));
        }
        if !self.base.is_finite() || self.coefficients.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("ensemble coefficients must be finite"));
        }
        for l in &self.learners {
            let ok = match l {
                WeakLearner::Stump(s) => s.feature < self.n_features,
                WeakLearner::Tree(t) => t.nodes.iter().all(|n| {
                    n.feature.is_none_or(|j| j < self.n_features && n.left < t.nodes.len() && n.right < t.nodes.len())
                }),
            };
            if !ok {
                return Err(Error::invalid("weak learner references an invalid feature or node"));
            }
        }
        Ok(())
    }
}

fn initial_weights(y: &[bool], class_weight: Option<f64>) -> Result<(Vec<f64>, f64)> {
    let cw = match class_weight {
        Some(c) if c > 0.0 && c.is_finite() => c,
        Some(c) => return Err(Error::invalid(format!("class weight must be positive, got {c}"))),
        None => class_weight_for(y)?,
    };
    if !y.iter().any(|&v| v) || y.iter().all(|&v| v) {
        return Err(Error::invalid("training labels contain a single class"));
    }
    Ok((y.iter().map(|&v| if v { cw } else { 1.0 }).collect(), cw))
}

/// Threshold strictly between `a < b` so that `a <= t < b`.
fn split_point(a: f64, b: f64) -> f64 {
    let t = a + (b - a) / 2.0;
    if t >= b {
        a
    } else {
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdaBoostConfig {
    pub rounds: usize,
    pub class_weight: Option<f64>,
}

impl Default for AdaBoostConfig {
    fn default() -> Self {
        AdaBoostConfig { rounds: 100, class_weight: None }
    }
}

/// Lowest weighted-error stump; ties go to the lower feature, then the lower
/// threshold, then positive polarity.
fn best_stump(x: Design<'_>, sorted: &[Vec<usize>], y: &[bool], w: &[f64]) -> Option<(Stump, f64)> {
    let (wp, wn) = y.iter().zip(w).fold((0.0, 0.0), |(p, n), (&yi, &wi)| {
        if yi {
            (p + wi, n)
        } else {
            (p, n + wi)
        }
    });
    let per_feature: Vec<Option<(Stump, f64)>> = (0..x.cols)
        .into_par_iter()
        .map(|j| {
            let idx = &sorted[j];
            let (mut lp, mut ln) = (0.0, 0.0);
            let mut best: Option<(Stump, f64)> = None;
            for k in 0..idx.len() {
                let i = idx[k];
                if y[i] {
                    lp += w[i];
                } else {
                    ln += w[i];
                }
                let (a, b) = match idx.get(k + 1) {
                    Some(&next) => (x.get(i, j), x.get(next, j)),
                    None => break,
                };
                if a == b {
                    continue;
                }
                let thr = split_point(a, b);
                for (pol, err) in [(1.0, lp + (wn - ln)), (-1.0, ln + (wp - lp))] {
                    if best.is_none_or(|(_, e)| err < e) {
                        best = Some((Stump { feature: j, threshold: thr, polarity: pol }, err));
                    }
                }
            }
            best
        })
        .collect();
    per_feature.into_iter().flatten().fold(None, |acc, cand| match acc {
        Some((_, e)) if cand.1 >= e => acc,
        _ => Some(cand),
    })
}

pub fn train_adaboost(x: Design<'_>, y: &[bool], cfg: &AdaBoostConfig) -> Result<BoostEnsemble> {
    if y.len() != x.rows() {
        return Err(Error::invalid("label count differs from design rows"));
    }
    let (mut w, _) = initial_weights(y, cfg.class_weight)?;
    normalize(&mut w);
    let sorted = x.presorted();
    let mut model = BoostEnsemble {
        loss: BoostLoss::Exponential,
        n_features: x.cols,
        base: 0.0,
        learners: Vec::new(),
        coefficients: Vec::new(),
    };
    for round in 0..cfg.rounds {
        let (stump, eps) = best_stump(x, &sorted, y, &w).ok_or_else(|| Error::invalid("no valid split: every feature is constant"))?;
        if eps >= 0.5 {
            log::debug!("adaboost stops at round {round}: weighted error {eps:.4}");
            break;
        }
        let e = eps.clamp(1e-10, 1.0 - 1e-10);
        let alpha = 0.5 * ((1.0 - e) / e).ln();
        model.learners.push(WeakLearner::Stump(stump));
        model.coefficients.push(alpha);
        if eps <= 0.0 {
            break;
        }
        for (i, wi) in w.iter_mut().enumerate() {
            let yi = if y[i] { 1.0 } else { -1.0 };
            *wi *= (-alpha * yi * stump.predict(x.row(i))).exp();
        }
        normalize(&mut w);
    }
    Ok(model)
}

fn normalize(w: &mut [f64]) {
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GbtConfig {
    pub trees: usize,
    pub depth: usize,
    pub lr: f64,
    pub class_weight: Option<f64>,
}

impl Default for GbtConfig {
    fn default() -> Self {
        GbtConfig { trees: 100, depth: 3, lr: 0.1, class_weight: None }
    }
}

const MIN_GAIN: f64 = 1e-12;
/// Relative gain difference below which two splits count as tied.
const GAIN_TIE: f64 = 1e-10;

fn beats(gain: f64, best: Option<Split>) -> bool {
    best.is_none_or(|b| gain > b.gain + GAIN_TIE * b.gain.abs())
}
const MIN_HESSIAN: f64 = 1e-12;

#[derive(Debug, Clone, Copy)]
struct Split {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// Least-squares regression tree on `r` with Newton leaf values
/// `sum(r) / sum(hess)`. Splits maximize the squared-error reduction.
pub fn fit_tree(x: Design<'_>, sorted: &[Vec<usize>], r: &[f64], hess: &[f64], depth: usize) -> Tree {
    let n = x.rows();
    let mut node_of = vec![0usize; n];
    let mut nodes = vec![TreeNode { feature: None, threshold: 0.0, left: 0, right: 0, value: 0.0 }];
    let mut open = vec![0usize];
    for _ in 0..depth {
        if open.is_empty() {
            break;
        }
        let slot: Vec<Option<usize>> = {
            let mut s = vec![None; nodes.len()];
            for (k, &nid) in open.iter().enumerate() {
                s[nid] = Some(k);
            }
            s
        };
        let mut tot = vec![(0usize, 0.0f64); open.len()];
        for i in 0..n {
            if let Some(k) = slot[node_of[i]] {
                tot[k].0 += 1;
                tot[k].1 += r[i];
            }
        }
        let per_feature: Vec<Vec<Option<Split>>> = (0..x.cols)
            .into_par_iter()
            .map(|j| {
                let mut state = vec![(0usize, 0.0f64, f64::NAN); open.len()];
                let mut best: Vec<Option<Split>> = vec![None; open.len()];
                for &i in &sorted[j] {
                    let Some(k) = slot[node_of[i]] else { continue };
                    let v = x.get(i, j);
                    let (cnt, sum, last) = state[k];
                    if cnt > 0 && v > last {
                        let (nt, st) = tot[k];
                        let nr = nt - cnt;
                        let gain = sum * sum / cnt as f64 + (st - sum) * (st - sum) / nr as f64
                            - st * st / nt as f64;
                        if gain > MIN_GAIN && beats(gain, best[k]) {
                            best[k] = Some(Split { gain, feature: j, threshold: split_point(last, v) });
                        }
                    }
                    state[k] = (cnt + 1, sum + r[i], v);
                }
                best
            })
            .collect();
        let mut next_open = Vec::new();
        for (k, &nid) in open.iter().enumerate() {
            let mut best: Option<Split> = None;
            for f in &per_feature {
                if let Some(s) = f[k] {
                    if beats(s.gain, best) {
                        best = Some(s);
                    }
                }
            }
            if let Some(s) = best {
                let (l, rr) = (nodes.len(), nodes.len() + 1);
                nodes.push(nodes[nid]);
                nodes.push(nodes[nid]);
                nodes[nid] = TreeNode { feature: Some(s.feature), threshold: s.threshold, left: l, right: rr, value: 0.0 };
                next_open.push(l);
                next_open.push(rr);
            }
        }
        for i in 0..n {
            let nid = node_of[i];
            if let Some(j) = nodes[nid].feature {
                if slot[nid].is_some() {
                    node_of[i] = if x.get(i, j) <= nodes[nid].threshold { nodes[nid].left } else { nodes[nid].right };
                }
            }
        }
        open = next_open;
    }
    let mut rs = vec![0.0; nodes.len()];
    let mut hs = vec![0.0; nodes.len()];
    for i in 0..n {
        rs[node_of[i]] += r[i];
        hs[node_of[i]] += hess[i];
    }
    for (k, node) in nodes.iter_mut().enumerate() {
        if node.feature.is_none() {
            node.value = rs[k] / hs[k].max(MIN_HESSIAN);
        }
    }
    Tree { nodes }
}

fn logistic_loss(f: &[f64], y: &[bool], w: &[f64]) -> f64 {
    f.iter()
        .zip(y)
        .zip(w)
        .map(|((&fi, &yi), &wi)| wi * (softplus(fi) - if yi { fi } else { 0.0 }))
        .sum()
}

/// Stagewise logistic boosting. A tree whose step would raise the training
/// loss is shrunk by halving until it does not.
pub fn train_gbt(x: Design<'_>, y: &[bool], cfg: &GbtConfig) -> Result<BoostEnsemble> {
    if y.len() != x.rows() {
        return Err(Error::invalid("label count differs from design rows"));
    }
    if !(0.0..=1.0).contains(&cfg.lr) {
        return Err(Error::invalid(format!("learning rate must lie in [0, 1], got {}", cfg.lr)));
    }
    let (w, _) = initial_weights(y, cfg.class_weight)?;
    let (wp, wn) = y.iter().zip(&w).fold((0.0, 0.0), |(p, n), (&yi, &wi)| if yi { (p + wi, n) } else { (p, n + wi) });
    let base = (wp / wn).ln();
    let sorted = x.presorted();
    let n = x.rows();
    let mut f = vec![base; n];
    let mut model = BoostEnsemble {
        loss: BoostLoss::Logistic,
        n_features: x.cols,
        base,
        learners: Vec::new(),
        coefficients: Vec::new(),
    };
    let mut loss = logistic_loss(&f, y, &w);
    for t in 0..cfg.trees {
        let mut r = vec![0.0; n];
        let mut h = vec![0.0; n];
        for i in 0..n {
            let p = 1.0 / (1.0 + (-f[i]).exp());
            r[i] = w[i] * (if y[i] { 1.0 } else { 0.0 } - p);
            h[i] = w[i] * p * (1.0 - p);
        }
        let tree = fit_tree(x, &sorted, &r, &h, cfg.depth);
        let step: Vec<f64> = (0..n).map(|i| tree.predict(x.row(i))).collect();
        let mut scale = cfg.lr;
        let mut trial: Vec<f64>;
        loop {
            trial = f.iter().zip(&step).map(|(a, s)| a + scale * s).collect();
            let l = logistic_loss(&trial, y, &w);
            if l <= loss || scale < cfg.lr * 1e-6 {
                break;
            }
            scale /= 2.0;
        }
        let new_loss = logistic_loss(&trial, y, &w);
        if new_loss > loss {
            log::debug!("gbt tree {t} cannot reduce the loss; stopping");
            break;
        }
        if !new_loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite training loss at tree {t}")));
        }
        f = trial;
        loss = new_loss;
        model.learners.push(WeakLearner::Tree(tree));
        model.coefficients.push(scale);
    }
    Ok(model)
}
