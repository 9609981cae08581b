//! Two-layer sample-and-aggregate node classifier with hand-written
//! backpropagation.
//!
//! Layer k maps `concat(h_self, mean(h_neighbors))` through `W_k`, a ReLU and
//! an L2 normalization. Neighborhoods come from the undirected view of the
//! graph. The logit is `w_out . h2`.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::{bce_with_logits, class_weight_for, sigmoid_score};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::graph::RetweetGraph;

pub const DEFAULT_HIDDEN: usize = 128;
pub const DEFAULT_SAMPLES: [usize; 2] = [25, 10];
const CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SageConfig {
    pub hidden: usize,
    /// Neighbors sampled for layer 1 and layer 2.
    pub samples: [usize; 2],
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Positive-class loss weight; `None` uses #neg/#pos.
    pub class_weight: Option<f64>,
    pub seed: u64,
    pub relu: bool,
    pub normalize: bool,
}

impl Default for SageConfig {
    fn default() -> Self {
        SageConfig {
            hidden: DEFAULT_HIDDEN,
            samples: DEFAULT_SAMPLES,
            epochs: 10,
            batch: 512,
            lr: 0.01,
            class_weight: None,
            seed: 0,
            relu: true,
            normalize: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Inference {
    /// Mean over every neighbor; no randomness.
    FullMean,
    Sampled { seed: u64 },
}

/// Undirected adjacency in CSR form.
#[derive(Debug, Clone)]
pub struct Adjacency {
    offsets: Vec<usize>,
    nbrs: Vec<u32>,
}

impl Adjacency {
    pub fn undirected(g: &RetweetGraph) -> Self {
        let mut offsets = Vec::with_capacity(g.node_count() + 1);
        let mut nbrs = Vec::with_capacity(2 * g.edge_count());
        offsets.push(0);
        for u in 0..g.node_count() {
            nbrs.extend(g.undirected_neighbors(u));
            offsets.push(nbrs.len());
        }
        Adjacency { offsets, nbrs }
    }

    pub fn of(&self, u: usize) -> &[u32] {
        &self.nbrs[self.offsets[u]..self.offsets[u + 1]]
    }
}

/// Which nodes are computed at each layer and whom they aggregate.
#[derive(Debug, Clone, PartialEq)]
pub struct Plan {
    l1: Vec<u32>,
    l1_nb: Vec<Vec<u32>>,
    targets: Vec<usize>,
    l2_nb: Vec<Vec<usize>>,
}

fn neighborhood(adj: &Adjacency, u: usize, sample: Option<(usize, &mut ChaCha8Rng)>) -> Vec<u32> {
    let nb = adj.of(u);
    match sample {
        _ if nb.is_empty() => Vec::new(),
        None => nb.to_vec(),
        Some((s, rng)) => (0..s).map(|_| nb[rng.random_range(0..nb.len())]).collect(),
    }
}

impl Plan {
    /// `rng = None` uses full neighborhoods.
    pub fn build(adj: &Adjacency, targets: &[usize], samples: [usize; 2], mut rng: Option<&mut ChaCha8Rng>) -> Plan {
        let mut l1: Vec<u32> = Vec::new();
        let mut pos: HashMap<u32, usize> = HashMap::new();
        let mut intern = |v: u32, l1: &mut Vec<u32>| {
            *pos.entry(v).or_insert_with(|| {
                l1.push(v);
                l1.len() - 1
            })
        };
        let tpos: Vec<usize> = targets.iter().map(|&t| intern(t as u32, &mut l1)).collect();
        let mut l2_nb = Vec::with_capacity(targets.len());
        for &t in targets {
            let nb = neighborhood(adj, t, rng.as_deref_mut().map(|r| (samples[1], r)));
            l2_nb.push(nb.into_iter().map(|v| intern(v, &mut l1)).collect());
        }
        let l1_nb = l1
            .iter()
            .map(|&u| neighborhood(adj, u as usize, rng.as_deref_mut().map(|r| (samples[0], r))))
            .collect();
        Plan { l1, l1_nb, targets: tpos, l2_nb }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SageModel {
    pub d_in: usize,
    pub hidden: usize,
    pub samples: [usize; 2],
    pub relu: bool,
    pub normalize: bool,
    /// Input standardization.
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// `W1 (hidden x 2 d_in) | W2 (hidden x 2 hidden) | w_out (hidden)`, row-major.
    pub params: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
struct Shape {
    d: usize,
    h: usize,
    relu: bool,
    normalize: bool,
}

impl Shape {
    fn len(self) -> usize {
        self.h * 2 * self.d + self.h * 2 * self.h + self.h
    }

    fn split(self, p: &[f64]) -> (&[f64], &[f64], &[f64]) {
        let (w1, rest) = p.split_at(self.h * 2 * self.d);
        let (w2, wo) = rest.split_at(self.h * 2 * self.h);
        (w1, w2, wo)
    }
}

impl SageModel {
    pub fn param_count(d_in: usize, hidden: usize) -> usize {
        Shape { d: d_in, h: hidden, relu: true, normalize: true }.len()
    }

    pub fn zeros(d_in: usize, hidden: usize, samples: [usize; 2]) -> SageModel {
        SageModel {
            d_in,
            hidden,
            samples,
            relu: true,
            normalize: true,
            mean: vec![0.0; d_in],
            scale: vec![1.0; d_in],
            params: vec![0.0; Self::param_count(d_in, hidden)],
        }
    }

    /// Glorot-uniform weights.
    pub fn init(d_in: usize, cfg: &SageConfig, rng: &mut ChaCha8Rng) -> SageModel {
        let mut m = SageModel::zeros(d_in, cfg.hidden, cfg.samples);
        m.relu = cfg.relu;
        m.normalize = cfg.normalize;
        let h = cfg.hidden;
        let blocks = [(h * 2 * d_in, 2 * d_in, h), (h * 2 * h, 2 * h, h), (h, h, 1)];
        let mut i = 0;
        for (len, fan_in, fan_out) in blocks {
            let lim = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut m.params[i..i + len] {
                *p = rng.random_range(-lim..lim);
            }
            i += len;
        }
        m
    }

    fn shape(&self) -> Shape {
        Shape { d: self.d_in, h: self.hidden, relu: self.relu, normalize: self.normalize }
    }

    pub fn fit_standardization(&mut self, x: &FeatureMatrix) {
        let (n, d) = (x.rows(), x.cols());
        for j in 0..d {
            let col = (0..n).map(|i| x.row(i)[j]);
            let mean = col.clone().sum::<f64>() / n.max(1) as f64;
            let var = col.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n.max(1) as f64;
            self.mean[j] = mean;
            self.scale[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
    }

    fn standardized(&self, x: &FeatureMatrix) -> Vec<f64> {
        let d = self.d_in;
        let mut out = x.data.clone();
        for row in out.chunks_mut(d) {
            for j in 0..d {
                row[j] = (row[j] - self.mean[j]) / self.scale[j];
            }
        }
        out
    }

    fn check_input(&self, g: &RetweetGraph, x: &FeatureMatrix) -> Result<()> {
        if x.cols() != self.d_in {
            return Err(Error::invalid(format!(
                "model expects {} features, got {}",
                self.d_in,
                x.cols()
            )));
        }
        if x.rows() != g.node_count() {
            return Err(Error::invalid(format!(
                "feature rows ({}) must match graph nodes ({})",
                x.rows(),
                g.node_count()
            )));
        }
        Ok(())
    }

    pub fn logits(&self, g: &RetweetGraph, x: &FeatureMatrix, nodes: &[usize], inference: Inference) -> Result<Vec<f64>> {
        self.check_input(g, x)?;
        let xs = self.standardized(x);
        let adj = Adjacency::undirected(g);
        let plan = match inference {
            Inference::FullMean => Plan::build(&adj, nodes, self.samples, None),
            Inference::Sampled { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                Plan::build(&adj, nodes, self.samples, Some(&mut rng))
            }
        };
        Ok(forward(&self.params, self.shape(), &xs, &plan).logits)
    }

    pub fn predict(&self, g: &RetweetGraph, x: &FeatureMatrix, nodes: &[usize], inference: Inference) -> Result<Vec<f64>> {
        Ok(self.logits(g, x, nodes, inference)?.into_iter().map(sigmoid_score).collect())
    }

    /// Layer representations for `nodes` under full-neighborhood means.
    pub fn embeddings(&self, g: &RetweetGraph, x: &FeatureMatrix, nodes: &[usize]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        self.check_input(g, x)?;
        let xs = self.standardized(x);
        let adj = Adjacency::undirected(g);
        let plan = Plan::build(&adj, nodes, self.samples, None);
        let f = forward(&self.params, self.shape(), &xs, &plan);
        let h = self.hidden;
        let h1 = plan.targets.iter().map(|&i| f.h1[i * h..(i + 1) * h].to_vec()).collect();
        let h2 = f.h2.chunks(h).map(<[f64]>::to_vec).collect();
        Ok((h1, h2))
    }
}

struct LayerOut {
    z: Vec<f64>,
    h: Vec<f64>,
    norm: f64,
}

fn layer_forward(w: &[f64], c: &[f64], rows: usize, s: Shape) -> LayerOut {
    let cols = c.len();
    let z: Vec<f64> = (0..rows)
        .map(|r| w[r * cols..(r + 1) * cols].iter().zip(c).map(|(a, b)| a * b).sum())
        .collect();
    let mut h: Vec<f64> = if s.relu { z.iter().map(|v| v.max(0.0)).collect() } else { z.clone() };
    let mut norm = 1.0;
    if s.normalize {
        norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            h.iter_mut().for_each(|v| *v /= norm);
        }
    }
    LayerOut { z, h, norm }
}

/// Gradient w.r.t. the pre-activation given the gradient w.r.t. the output.
fn layer_backward(dh: &[f64], z: &[f64], h: &[f64], norm: f64, s: Shape) -> Vec<f64> {
    let mut da: Vec<f64> = if s.normalize {
        if norm == 0.0 {
            return vec![0.0; dh.len()];
        }
        let dot: f64 = h.iter().zip(dh).map(|(a, b)| a * b).sum();
        dh.iter().zip(h).map(|(g, hv)| (g - hv * dot) / norm).collect()
    } else {
        dh.to_vec()
    };
    if s.relu {
        da.iter_mut().zip(z).for_each(|(g, &zv)| {
            if zv <= 0.0 {
                *g = 0.0;
            }
        });
    }
    da
}

fn mean_into(out: &mut [f64], rows: impl ExactSizeIterator<Item = usize>, src: &[f64], width: usize) {
    let k = rows.len();
    if k == 0 {
        return;
    }
    for r in rows {
        out.iter_mut().zip(&src[r * width..(r + 1) * width]).for_each(|(o, v)| *o += v);
    }
    let k = k as f64;
    out.iter_mut().for_each(|o| *o /= k);
}

struct Forward {
    c1: Vec<f64>,
    z1: Vec<f64>,
    h1: Vec<f64>,
    n1: Vec<f64>,
    c2: Vec<f64>,
    z2: Vec<f64>,
    h2: Vec<f64>,
    n2: Vec<f64>,
    logits: Vec<f64>,
}

fn forward(p: &[f64], s: Shape, x: &[f64], plan: &Plan) -> Forward {
    let (w1, w2, wo) = s.split(p);
    let (d, h) = (s.d, s.h);
    let l1: Vec<(Vec<f64>, LayerOut)> = (0..plan.l1.len())
        .into_par_iter()
        .map(|i| {
            let u = plan.l1[i] as usize;
            let mut c = vec![0.0; 2 * d];
            c[..d].copy_from_slice(&x[u * d..(u + 1) * d]);
            mean_into(&mut c[d..], plan.l1_nb[i].iter().map(|&v| v as usize), x, d);
            let out = layer_forward(w1, &c, h, s);
            (c, out)
        })
        .collect();
    let mut f = Forward {
        c1: Vec::with_capacity(l1.len() * 2 * d),
        z1: Vec::with_capacity(l1.len() * h),
        h1: Vec::with_capacity(l1.len() * h),
        n1: Vec::with_capacity(l1.len()),
        c2: Vec::new(),
        z2: Vec::new(),
        h2: Vec::new(),
        n2: Vec::new(),
        logits: Vec::new(),
    };
    for (c, o) in l1 {
        f.c1.extend(c);
        f.z1.extend(o.z);
        f.h1.extend(o.h);
        f.n1.push(o.norm);
    }
    let h1 = &f.h1;
    let l2: Vec<(Vec<f64>, LayerOut, f64)> = (0..plan.targets.len())
        .into_par_iter()
        .map(|t| {
            let i = plan.targets[t];
            let mut c = vec![0.0; 2 * h];
            c[..h].copy_from_slice(&h1[i * h..(i + 1) * h]);
            mean_into(&mut c[h..], plan.l2_nb[t].iter().copied(), h1, h);
            let out = layer_forward(w2, &c, h, s);
            let logit = out.h.iter().zip(wo).map(|(a, b)| a * b).sum();
            (c, out, logit)
        })
        .collect();
    for (c, o, logit) in l2 {
        f.c2.extend(c);
        f.z2.extend(o.z);
        f.h2.extend(o.h);
        f.n2.push(o.norm);
        f.logits.push(logit);
    }
    f
}

/// Sum over rows of `dz_i (x) c_i`, in fixed chunks so the result does not
/// depend on the thread count.
fn outer_sum(dz: &[f64], rows: usize, c: &[f64], cols: usize) -> Vec<f64> {
    let m = dz.len() / rows;
    let idx: Vec<usize> = (0..m).collect();
    let parts: Vec<Vec<f64>> = idx
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = vec![0.0; rows * cols];
            for &i in chunk {
                let ci = &c[i * cols..(i + 1) * cols];
                for r in 0..rows {
                    let g = dz[i * rows + r];
                    if g != 0.0 {
                        acc[r * cols..(r + 1) * cols]
                            .iter_mut()
                            .zip(ci)
                            .for_each(|(a, v)| *a += g * v);
                    }
                }
            }
            acc
        })
        .collect();
    let mut out = vec![0.0; rows * cols];
    for p in parts {
        out.iter_mut().zip(p).for_each(|(o, v)| *o += v);
    }
    out
}

fn backward(p: &[f64], s: Shape, plan: &Plan, f: &Forward, dlogits: &[f64]) -> Vec<f64> {
    let (_, w2, wo) = s.split(p);
    let (d, h) = (s.d, s.h);
    let nt = plan.targets.len();

    let mut g_out = vec![0.0; h];
    for t in 0..nt {
        let h2 = &f.h2[t * h..(t + 1) * h];
        g_out.iter_mut().zip(h2).for_each(|(g, v)| *g += dlogits[t] * v);
    }

    let per_target: Vec<(Vec<f64>, Vec<f64>)> = (0..nt)
        .into_par_iter()
        .map(|t| {
            let dh2: Vec<f64> = wo.iter().map(|w| dlogits[t] * w).collect();
            let dz2 = layer_backward(&dh2, &f.z2[t * h..(t + 1) * h], &f.h2[t * h..(t + 1) * h], f.n2[t], s);
            let mut dc2 = vec![0.0; 2 * h];
            for (r, &g) in dz2.iter().enumerate() {
                if g != 0.0 {
                    dc2.iter_mut().zip(&w2[r * 2 * h..(r + 1) * 2 * h]).for_each(|(a, w)| *a += g * w);
                }
            }
            (dz2, dc2)
        })
        .collect();

    let mut dz2_all = Vec::with_capacity(nt * h);
    let mut dh1 = vec![0.0; plan.l1.len() * h];
    for (t, (dz2, dc2)) in per_target.into_iter().enumerate() {
        dz2_all.extend_from_slice(&dz2);
        let i = plan.targets[t];
        dh1[i * h..(i + 1) * h].iter_mut().zip(&dc2[..h]).for_each(|(a, v)| *a += v);
        let nb = &plan.l2_nb[t];
        if !nb.is_empty() {
            let k = nb.len() as f64;
            for &j in nb {
                dh1[j * h..(j + 1) * h].iter_mut().zip(&dc2[h..]).for_each(|(a, v)| *a += v / k);
            }
        }
    }
    let g2 = outer_sum(&dz2_all, h, &f.c2, 2 * h);

    let dz1: Vec<f64> = (0..plan.l1.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let dh = &dh1[i * h..(i + 1) * h];
            if dh.iter().all(|&v| v == 0.0) {
                vec![0.0; h]
            } else {
                layer_backward(dh, &f.z1[i * h..(i + 1) * h], &f.h1[i * h..(i + 1) * h], f.n1[i], s)
            }
        })
        .collect();
    let g1 = outer_sum(&dz1, h, &f.c1, 2 * d);

    let mut grad = g1;
    grad.extend(g2);
    grad.extend(g_out);
    grad
}

/// Class-weighted mean binary cross-entropy and its gradient in the logits.
fn loss_and_dlogits(logits: &[f64], y: &[bool], pos_weight: f64) -> (f64, Vec<f64>) {
    let m = logits.len() as f64;
    let mut loss = 0.0;
    let d = logits
        .iter()
        .zip(y)
        .map(|(&l, &yi)| {
            let w = if yi { pos_weight } else { 1.0 };
            let (li, gi) = bce_with_logits(l, yi);
            loss += w * li;
            w * gi / m
        })
        .collect();
    (loss / m, d)
}

fn validate(cfg: &SageConfig) -> Result<()> {
    if cfg.hidden == 0 || cfg.epochs == 0 || cfg.batch == 0 || cfg.samples.contains(&0) {
        return Err(Error::invalid("sage hidden, epochs, batch and samples must be positive"));
    }
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(Error::invalid(format!("sage learning rate must be positive, got {}", cfg.lr)));
    }
    Ok(())
}

/// `train` lists (node index, positive) pairs; `x` rows follow node order.
pub fn train_sage(g: &RetweetGraph, x: &FeatureMatrix, train: &[(usize, bool)], cfg: &SageConfig) -> Result<SageModel> {
    validate(cfg)?;
    let labels: Vec<bool> = train.iter().map(|&(_, y)| y).collect();
    let pos_weight = cfg.class_weight.map_or_else(|| class_weight_for(&labels), Ok)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = SageModel::init(x.cols(), cfg, &mut rng);
    model.check_input(g, x)?;
    model.fit_standardization(x);
    let xs = model.standardized(x);
    let adj = Adjacency::undirected(g);
    let s = model.shape();
    let mut opt = Adam::new(model.params.len(), cfg.lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (b, chunk) in order.chunks(cfg.batch).enumerate() {
            let nodes: Vec<usize> = chunk.iter().map(|&i| train[i].0).collect();
            let y: Vec<bool> = chunk.iter().map(|&i| train[i].1).collect();
            let plan = Plan::build(&adj, &nodes, cfg.samples, Some(&mut rng));
            let f = forward(&model.params, s, &xs, &plan);
            let (loss, dl) = loss_and_dlogits(&f.logits, &y, pos_weight);
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite loss at epoch {epoch}, batch {b}")));
            }
            let grad = backward(&model.params, s, &plan, &f, &dl);
            opt.step(&mut model.params, &grad);
            epoch_loss += loss * chunk.len() as f64;
        }
        log::debug!("sage epoch {epoch}: loss {:.6}", epoch_loss / train.len() as f64);
    }
    if model.params.iter().any(|p| !p.is_finite()) {
        return Err(Error::Numeric("sage weights became non-finite".into()));
    }
    Ok(model)
}

/// Analytic gradient of the batch loss on fixed neighbor samples.
pub fn loss_gradient(model: &SageModel, g: &RetweetGraph, x: &FeatureMatrix, targets: &[(usize, bool)], seed: u64) -> Result<(f64, Vec<f64>)> {
    let (xs, plan, y, w) = check_setup(model, g, x, targets, seed)?;
    let f = forward(&model.params, model.shape(), &xs, &plan);
    let (loss, dl) = loss_and_dlogits(&f.logits, &y, w);
    Ok((loss, backward(&model.params, model.shape(), &plan, &f, &dl)))
}

fn check_setup(
    model: &SageModel,
    g: &RetweetGraph,
    x: &FeatureMatrix,
    targets: &[(usize, bool)],
    seed: u64,
) -> Result<(Vec<f64>, Plan, Vec<bool>, f64)> {
    model.check_input(g, x)?;
    let xs = model.standardized(x);
    let adj = Adjacency::undirected(g);
    let nodes: Vec<usize> = targets.iter().map(|t| t.0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plan = Plan::build(&adj, &nodes, model.samples, Some(&mut rng));
    let y: Vec<bool> = targets.iter().map(|t| t.1).collect();
    let w = class_weight_for(&y).unwrap_or(1.0);
    Ok((xs, plan, y, w))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Class-weighted cross-entropy, as in training.
    Loss,
    /// Sum of logits; multilinear in the weights when ReLU and
    /// normalization are off, so central differences are exact.
    LogitSum,
}

fn objective(kind: Objective, logits: &[f64], y: &[bool], w: f64) -> (f64, Vec<f64>) {
    match kind {
        Objective::Loss => loss_and_dlogits(logits, y, w),
        Objective::LogitSum => (logits.iter().sum(), vec![1.0; logits.len()]),
    }
}

/// Max relative error between analytic and central-difference gradients
/// of the training loss.
pub fn gradient_check(model: &SageModel, g: &RetweetGraph, x: &FeatureMatrix, targets: &[(usize, bool)], seed: u64, h: f64) -> Result<f64> {
    gradient_check_with(model, g, x, targets, seed, h, Objective::Loss, |_| {})
}

/// As [`gradient_check`] for any objective, letting `tamper` edit the
/// analytic gradient first.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check_with(
    model: &SageModel,
    g: &RetweetGraph,
    x: &FeatureMatrix,
    targets: &[(usize, bool)],
    seed: u64,
    h: f64,
    kind: Objective,
    tamper: impl Fn(&mut [f64]),
) -> Result<f64> {
    let (xs, plan, y, w) = check_setup(model, g, x, targets, seed)?;
    let s = model.shape();
    let loss_at = |p: &[f64]| objective(kind, &forward(p, s, &xs, &plan).logits, &y, w).0;
    let f = forward(&model.params, s, &xs, &plan);
    let (_, dl) = objective(kind, &f.logits, &y, w);
    let mut analytic = backward(&model.params, s, &plan, &f, &dl);
    tamper(&mut analytic);
    let mut p = model.params.clone();
    let mut worst: f64 = 0.0;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + h;
        let up = loss_at(&p);
        p[i] = orig - h;
        let down = loss_at(&p);
        p[i] = orig;
        let numeric = (up - down) / (2.0 * h);
        let err = (analytic[i] - numeric).abs() / (analytic[i].abs() + numeric.abs()).max(1e-8);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphBuilder;
    use proptest::prelude::*;

    fn fixture() -> (RetweetGraph, FeatureMatrix, Vec<(usize, bool)>) {
        let mut b = GraphBuilder::new();
        for (u, v) in [(0, 1), (1, 2), (2, 0), (3, 0), (4, 3), (5, 4), (6, 5), (7, 6), (8, 7), (2, 8), (1, 5)] {
            b.edge(&u.to_string(), &v.to_string());
        }
        b.node("9");
        let g = b.build();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let d = 3;
        let data: Vec<f64> = (0..g.node_count() * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let x = FeatureMatrix {
            ids: g.ids().to_vec(),
            columns: (0..d).map(|i| format!("f{i}")).collect(),
            data,
        };
        let targets = (0..g.node_count()).map(|u| (u, u % 3 == 0)).collect();
        (g, x, targets)
    }

    fn small(relu: bool, normalize: bool, seed: u64) -> SageModel {
        let cfg = SageConfig { hidden: 4, samples: [3, 2], relu, normalize, ..SageConfig::default() };
        let mut m = SageModel::init(3, &cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        m.params.iter_mut().for_each(|p| *p *= 2.0);
        m
    }

    #[test]
    fn zero_weights_score_one_half() {
        let (g, x, _) = fixture();
        let m = SageModel::zeros(3, 8, [3, 2]);
        let nodes: Vec<usize> = (0..g.node_count()).collect();
        let s = m.predict(&g, &x, &nodes, Inference::FullMean).unwrap();
        assert!(s.iter().all(|&v| v == 0.5));
    }

    #[test]
    fn isolated_node_has_zero_neighbor_mean() {
        let (g, x, _) = fixture();
        let adj = Adjacency::undirected(&g);
        let iso = g.index_of("9").unwrap();
        let plan = Plan::build(&adj, &[iso], [3, 2], None);
        assert!(plan.l2_nb[0].is_empty() && plan.l1_nb[0].is_empty());
        let m = small(true, true, 1);
        let xs = m.standardized(&x);
        let f = forward(&m.params, m.shape(), &xs, &plan);
        assert!(f.c1[3..6].iter().all(|&v| v == 0.0));
        assert!(f.c2[4..8].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_gradient_is_exact() {
        let (g, x, t) = fixture();
        let m = small(false, false, 3);
        // logits are linear in each single parameter, so a wide step loses nothing
        let err = gradient_check_with(&m, &g, &x, &t, 5, 0.1, Objective::LogitSum, |_| {}).unwrap();
        assert!(err < 1e-9, "{err}");
        // the cross-entropy itself is smooth but not multilinear
        assert!(gradient_check(&m, &g, &x, &t, 5, 1e-5).unwrap() < 1e-6);
    }

    #[test]
    fn full_gradient_matches_finite_differences() {
        let (g, x, t) = fixture();
        for seed in 0..3 {
            let m = small(true, true, seed);
            let err = gradient_check(&m, &g, &x, &t, seed + 7, 1e-5).unwrap();
            assert!(err < 1e-4, "seed {seed}: {err}");
        }
    }

    #[test]
    fn corrupted_gradient_is_caught() {
        let (g, x, t) = fixture();
        let m = small(true, true, 2);
        let err = gradient_check_with(&m, &g, &x, &t, 1, 1e-5, Objective::Loss, |gr| gr[5] += 0.1).unwrap();
        assert!(err > 1e-2, "{err}");
    }

    #[test]
    fn single_class_is_an_error() {
        let (g, x, _) = fixture();
        let t: Vec<(usize, bool)> = (0..5).map(|u| (u, false)).collect();
        assert!(train_sage(&g, &x, &t, &SageConfig::default()).is_err());
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let (g, mut x, t) = fixture();
        // make the label visible in feature 0
        for (u, y) in &t {
            x.data[u * 3] = if *y { 1.0 } else { -1.0 };
        }
        let cfg = SageConfig { hidden: 8, epochs: 60, batch: 4, seed: 3, ..SageConfig::default() };
        let a = train_sage(&g, &x, &t, &cfg).unwrap();
        let b = train_sage(&g, &x, &t, &cfg).unwrap();
        assert_eq!(a, b);
        let nodes: Vec<usize> = t.iter().map(|p| p.0).collect();
        let s = a.predict(&g, &x, &nodes, Inference::FullMean).unwrap();
        let y: Vec<bool> = t.iter().map(|p| p.1).collect();
        assert_eq!(crate::eval::auc(&s, &y).unwrap(), 1.0);
        let s2 = a.predict(&g, &x, &nodes, Inference::Sampled { seed: 4 }).unwrap();
        assert_eq!(s2, a.predict(&g, &x, &nodes, Inference::Sampled { seed: 4 }).unwrap());
        assert!(s.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn thread_count_does_not_change_results() {
        let (g, x, t) = fixture();
        let cfg = SageConfig { hidden: 8, epochs: 3, batch: 4, seed: 9, ..SageConfig::default() };
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = one.install(|| train_sage(&g, &x, &t, &cfg).unwrap());
        let b = four.install(|| train_sage(&g, &x, &t, &cfg).unwrap());
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn layer_outputs_have_unit_norm(seed in any::<u64>()) {
            let (g, x, _) = fixture();
            let m = small(true, true, seed);
            let nodes: Vec<usize> = (0..g.node_count()).collect();
            let (h1, h2) = m.embeddings(&g, &x, &nodes).unwrap();
            for v in h1.iter().chain(&h2) {
                let n: f64 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
                prop_assert!(n == 0.0 || (n - 1.0).abs() < 1e-12);
            }
        }
    }
}
