//! Classifiers and their on-disk model format.

pub mod adam;
pub mod boost;
pub mod sage;

pub use boost::{train_adaboost, train_gbt, AdaBoostConfig, BoostEnsemble, BoostLoss, Design, GbtConfig};
pub use sage::{gradient_check, train_sage, Inference, SageConfig, SageModel};

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use boost::{Stump, Tree, TreeNode, WeakLearner};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::graph::RetweetGraph;
use crate::provenance::Provenance;

pub const FORMAT_VERSION: u32 = 1;

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Sigmoid kept inside the open unit interval.
pub fn sigmoid_score(x: f64) -> f64 {
    sigmoid(x).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Binary cross-entropy of a logit and its derivative.
pub fn bce_with_logits(logit: f64, y: bool) -> (f64, f64) {
    let t = if y { 1.0 } else { 0.0 };
    (softplus(logit) - t * logit, sigmoid(logit) - t)
}

/// Positive-class weight #neg/#pos.
pub fn class_weight_for(y: &[bool]) -> Result<f64> {
    let pos = y.iter().filter(|&&v| v).count();
    let neg = y.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::invalid(format!(
            "training labels contain a single class ({pos} positive, {neg} negative)"
        )));
    }
    Ok(neg as f64 / pos as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Sage,
    AdaBoost,
    Gbt,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Sage => "sage",
            ModelKind::AdaBoost => "adaboost",
            ModelKind::Gbt => "gbt",
        }
    }

    pub fn parse(s: &str) -> Result<ModelKind> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sage" | "graphsage" => Ok(ModelKind::Sage),
            "adaboost" => Ok(ModelKind::AdaBoost),
            "gbt" | "gradboost" => Ok(ModelKind::Gbt),
            other => Err(Error::invalid(format!(
                "unknown model {other:?} (expected sage, adaboost or gbt)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub sage: SageConfig,
    pub adaboost: AdaBoostConfig,
    pub gbt: GbtConfig,
    pub inference: Inference,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            sage: SageConfig::default(),
            adaboost: AdaBoostConfig::default(),
            gbt: GbtConfig::default(),
            inference: Inference::FullMean,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelBody {
    Sage(SageModel),
    Boost(BoostEnsemble),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub kind: ModelKind,
    pub feature_columns: Vec<String>,
    pub hyperparameters: BTreeMap<String, Value>,
    pub body: ModelBody,
}

fn design_rows(x: &FeatureMatrix, rows: &[usize]) -> Vec<f64> {
    rows.iter().flat_map(|&i| x.row(i).iter().copied()).collect()
}

/// Trains on `train` (node index, positive). `x` must already hold only the
/// chosen feature columns, with rows in node order.
pub fn train(kind: ModelKind, g: &RetweetGraph, x: &FeatureMatrix, train: &[(usize, bool)], cfg: &ModelConfig) -> Result<TrainedModel> {
    let y: Vec<bool> = train.iter().map(|t| t.1).collect();
    let rows: Vec<usize> = train.iter().map(|t| t.0).collect();
    let (body, hyper) = match kind {
        ModelKind::Sage => {
            let c = &cfg.sage;
            let m = train_sage(g, x, train, c)?;
            let hyper = json!({
                "hidden": c.hidden, "samples": c.samples, "epochs": c.epochs, "batch": c.batch,
                "lr": c.lr, "class_weight": c.class_weight, "seed": c.seed, "relu": c.relu,
                "normalize": c.normalize, "inference": cfg.inference,
            });
            (ModelBody::Sage(m), hyper)
        }
        ModelKind::AdaBoost => {
            let data = design_rows(x, &rows);
            let m = train_adaboost(Design::new(&data, x.cols())?, &y, &cfg.adaboost)?;
            let hyper = json!({"rounds": cfg.adaboost.rounds, "class_weight": cfg.adaboost.class_weight});
            (ModelBody::Boost(m), hyper)
        }
        ModelKind::Gbt => {
            let data = design_rows(x, &rows);
            let m = train_gbt(Design::new(&data, x.cols())?, &y, &cfg.gbt)?;
            let c = &cfg.gbt;
            let hyper = json!({"trees": c.trees, "depth": c.depth, "lr": c.lr, "class_weight": c.class_weight});
            (ModelBody::Boost(m), hyper)
        }
    };
    let hyperparameters = match hyper {
        Value::Object(m) => m.into_iter().collect(),
        _ => unreachable!("hyperparameters are built as an object"),
    };
    Ok(TrainedModel {
        kind,
        feature_columns: x.columns.clone(),
        hyperparameters,
        body,
    })
}

impl TrainedModel {
    fn inference(&self) -> Inference {
        self.hyperparameters
            .get("inference")
            .and_then(|v| serde_json::from_value(v.clone()).ok())
            .unwrap_or(Inference::FullMean)
    }

    /// Scores in (0,1) for `nodes`; `x` rows follow node order and carry at
    /// least the model's feature columns.
    pub fn predict(&self, g: &RetweetGraph, x: &FeatureMatrix, nodes: &[usize]) -> Result<Vec<f64>> {
        let x = if x.columns == self.feature_columns { x.clone() } else { x.select(&self.feature_columns)? };
        match &self.body {
            ModelBody::Sage(m) => m.predict(g, &x, nodes, self.inference()),
            ModelBody::Boost(m) => {
                let data = design_rows(&x, nodes);
                m.predict(Design::new(&data, x.cols())?)
            }
        }
    }

    pub fn to_json(&self, prov: Option<&Provenance>) -> Result<String> {
        let mut weights: BTreeMap<String, Tensor> = BTreeMap::new();
        match &self.body {
            ModelBody::Sage(m) => {
                let (h, d) = (m.hidden, m.d_in);
                let (w1, rest) = m.params.split_at(h * 2 * d);
                let (w2, wo) = rest.split_at(h * 2 * h);
                weights.insert("w1".into(), Tensor::new(vec![h, 2 * d], w1.to_vec()));
                weights.insert("w2".into(), Tensor::new(vec![h, 2 * h], w2.to_vec()));
                weights.insert("w_out".into(), Tensor::new(vec![h], wo.to_vec()));
                weights.insert("input_mean".into(), Tensor::new(vec![d], m.mean.clone()));
                weights.insert("input_scale".into(), Tensor::new(vec![d], m.scale.clone()));
            }
            ModelBody::Boost(m) => flatten_boost(m, &mut weights),
        }
        let env = Envelope {
            format_version: FORMAT_VERSION,
            model_type: self.kind,
            provenance: prov.cloned().map(Into::into),
            feature_columns: self.feature_columns.clone(),
            hyperparameters: self.hyperparameters.clone(),
            weights,
        };
        let mut s = serde_json::to_string_pretty(&env)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<TrainedModel> {
        let raw: Value = serde_json::from_str(text)?;
        match raw.get("format_version").and_then(Value::as_u64) {
            Some(v) if v == u64::from(FORMAT_VERSION) => {}
            Some(v) => return Err(Error::invalid(format!("unsupported model format_version {v}"))),
            None => return Err(Error::invalid("model file lacks format_version")),
        }
        let env: Envelope = serde_json::from_value(raw)?;
        let w = |name: &str| -> Result<&Tensor> {
            env.weights
                .get(name)
                .ok_or_else(|| Error::invalid(format!("model file lacks weights {name:?}")))
        };
        let d_in = env.feature_columns.len();
        let body = match env.model_type {
            ModelKind::Sage => {
                let w1 = w("w1")?.expect_shape(2)?;
                let h = w1.shape[0];
                if w1.shape[1] != 2 * d_in {
                    return Err(Error::invalid("w1 shape does not match the feature columns"));
                }
                let hp = &env.hyperparameters;
                let samples: [usize; 2] = hp
                    .get("samples")
                    .and_then(|v| serde_json::from_value(v.clone()).ok())
                    .unwrap_or(sage::DEFAULT_SAMPLES);
                let flag = |k: &str| hp.get(k).and_then(Value::as_bool).unwrap_or(true);
                let mut params = w1.data.clone();
                params.extend(&w("w2")?.with_shape(&[h, 2 * h])?.data);
                params.extend(&w("w_out")?.with_shape(&[h])?.data);
                ModelBody::Sage(SageModel {
                    d_in,
                    hidden: h,
                    samples,
                    relu: flag("relu"),
                    normalize: flag("normalize"),
                    mean: w("input_mean")?.with_shape(&[d_in])?.data.clone(),
                    scale: w("input_scale")?.with_shape(&[d_in])?.data.clone(),
                    params,
                })
            }
            ModelKind::AdaBoost | ModelKind::Gbt => ModelBody::Boost(unflatten_boost(env.model_type, d_in, &env.weights)?),
        };
        let m = TrainedModel {
            kind: env.model_type,
            feature_columns: env.feature_columns,
            hyperparameters: env.hyperparameters,
            body,
        };
        if let ModelBody::Boost(b) = &m.body {
            b.validate()?;
        }
        if let ModelBody::Sage(s) = &m.body {
            if s.params.iter().chain(&s.mean).chain(&s.scale).any(|v| !v.is_finite()) {
                return Err(Error::invalid("model weights must be finite"));
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path, prov: Option<&Provenance>) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, self.to_json(prov)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<TrainedModel> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::parse(path, j.line(), j.to_string()),
            other => other,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        Tensor { shape, data }
    }

    fn consistent(&self) -> bool {
        self.shape.iter().product::<usize>() == self.data.len()
    }

    fn expect_shape(&self, rank: usize) -> Result<&Tensor> {
        if self.shape.len() != rank || !self.consistent() {
            return Err(Error::invalid(format!("tensor of shape {:?} is malformed", self.shape)));
        }
        Ok(self)
    }

    fn with_shape(&self, shape: &[usize]) -> Result<&Tensor> {
        if self.shape != shape || !self.consistent() {
            return Err(Error::invalid(format!(
                "tensor shape {:?} differs from expected {shape:?}",
                self.shape
            )));
        }
        Ok(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ProvenanceJson {
    tool: String,
    stage: String,
    config_sha256: String,
    seeds: BTreeMap<String, u64>,
}

impl From<Provenance> for ProvenanceJson {
    fn from(p: Provenance) -> Self {
        ProvenanceJson {
            tool: p.tool,
            stage: p.stage,
            config_sha256: p.config_sha256,
            seeds: p.seeds.into_iter().collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Envelope {
    format_version: u32,
    model_type: ModelKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<ProvenanceJson>,
    feature_columns: Vec<String>,
    hyperparameters: BTreeMap<String, Value>,
    weights: BTreeMap<String, Tensor>,
}

fn flatten_boost(m: &BoostEnsemble, out: &mut BTreeMap<String, Tensor>) {
    let k = m.learners.len();
    out.insert("base".into(), Tensor::new(vec![1], vec![m.base]));
    out.insert("coefficient".into(), Tensor::new(vec![k], m.coefficients.clone()));
    match m.loss {
        BoostLoss::Exponential => {
            let (mut f, mut t, mut p) = (Vec::new(), Vec::new(), Vec::new());
            for l in &m.learners {
                if let WeakLearner::Stump(s) = l {
                    f.push(s.feature as f64);
                    t.push(s.threshold);
                    p.push(s.polarity);
                }
            }
            out.insert("stump_feature".into(), Tensor::new(vec![k], f));
            out.insert("stump_threshold".into(), Tensor::new(vec![k], t));
            out.insert("stump_polarity".into(), Tensor::new(vec![k], p));
        }
        BoostLoss::Logistic => {
            let mut offsets = vec![0.0];
            let names = ["node_feature", "node_threshold", "node_left", "node_right", "node_value"];
            let mut cols: [Vec<f64>; 5] = Default::default();
            for l in &m.learners {
                if let WeakLearner::Tree(tr) = l {
                    for n in &tr.nodes {
                        cols[0].push(n.feature.map_or(-1.0, |j| j as f64));
                        cols[1].push(n.threshold);
                        cols[2].push(n.left as f64);
                        cols[3].push(n.right as f64);
                        cols[4].push(n.value);
                    }
                    offsets.push(cols[0].len() as f64);
                }
            }
            out.insert("tree_offsets".into(), Tensor::new(vec![offsets.len()], offsets));
            for (name, col) in names.iter().zip(cols) {
                out.insert((*name).into(), Tensor::new(vec![col.len()], col));
            }
        }
    }
}

fn as_index(v: f64) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && v < 1e15 {
        Ok(v as usize)
    } else {
        Err(Error::invalid(format!("invalid index {v} in model file")))
    }
}

fn unflatten_boost(kind: ModelKind, n_features: usize, w: &BTreeMap<String, Tensor>) -> Result<BoostEnsemble> {
    let get = |name: &str| -> Result<&Vec<f64>> {
        let t = w
            .get(name)
            .ok_or_else(|| Error::invalid(format!("model file lacks weights {name:?}")))?
            .expect_shape(1)?;
        Ok(&t.data)
    };
    let coefficients = get("coefficient")?.clone();
    let base = *get("base")?.first().ok_or_else(|| Error::invalid("empty base"))?;
    let k = coefficients.len();
    let mut learners = Vec::with_capacity(k);
    let loss = if kind == ModelKind::AdaBoost {
        let (f, t, p) = (get("stump_feature")?, get("stump_threshold")?, get("stump_polarity")?);
        if f.len() != k || t.len() != k || p.len() != k {
            return Err(Error::invalid("stump arrays differ in length"));
        }
        for i in 0..k {
            learners.push(WeakLearner::Stump(Stump { feature: as_index(f[i])?, threshold: t[i], polarity: p[i] }));
        }
        BoostLoss::Exponential
    } else {
        let offsets = get("tree_offsets")?;
        let cols: Vec<&Vec<f64>> = ["node_feature", "node_threshold", "node_left", "node_right", "node_value"]
            .iter()
            .map(|n| get(n))
            .collect::<Result<_>>()?;
        let total = cols[0].len();
        if offsets.len() != k + 1 || cols.iter().any(|c| c.len() != total) {
            return Err(Error::invalid("tree arrays are inconsistent"));
        }
        for t in 0..k {
            let (a, b) = (as_index(offsets[t])?, as_index(offsets[t + 1])?);
            if a >= b || b > total {
                return Err(Error::invalid("tree offsets are inconsistent"));
            }
            let nodes = (a..b)
                .map(|i| {
                    Ok(TreeNode {
                        feature: if cols[0][i] < 0.0 { None } else { Some(as_index(cols[0][i])?) },
                        threshold: cols[1][i],
                        left: as_index(cols[2][i])?,
                        right: as_index(cols[3][i])?,
                        value: cols[4][i],
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            learners.push(WeakLearner::Tree(Tree { nodes }));
        }
        BoostLoss::Logistic
    };
    Ok(BoostEnsemble { loss, n_features, base, learners, coefficients })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphBuilder;

    fn toy() -> (RetweetGraph, FeatureMatrix, Vec<(usize, bool)>) {
        let mut b = GraphBuilder::new();
        for i in 0..30 {
            b.edge(&format!("n{i}"), &format!("n{}", (i * 7 + 3) % 30));
            b.edge(&format!("n{i}"), &format!("n{}", (i + 1) % 30));
        }
        let g = b.build();
        let data: Vec<f64> = (0..g.node_count())
            .flat_map(|u| [(u % 5) as f64, (u as f64).sin(), if u % 4 == 0 { 1.0 } else { 0.0 }])
            .collect();
        let x = FeatureMatrix {
            ids: g.ids().to_vec(),
            columns: vec!["a".into(), "b".into(), "c".into()],
            data,
        };
        let t = (0..g.node_count()).map(|u| (u, u % 4 == 0)).collect();
        (g, x, t)
    }

    #[test]
    fn round_trip_every_model_kind() {
        let (g, x, t) = toy();
        let mut cfg = ModelConfig::default();
        cfg.sage.hidden = 6;
        cfg.sage.epochs = 2;
        cfg.gbt.trees = 5;
        cfg.adaboost.rounds = 5;
        let nodes: Vec<usize> = (0..g.node_count()).collect();
        for kind in [ModelKind::Sage, ModelKind::AdaBoost, ModelKind::Gbt] {
            let m = train(kind, &g, &x, &t, &cfg).unwrap();
            let prov = Provenance::new("train", &[("k".into(), "v".into())], &[("seed", 1)]);
            let text = m.to_json(Some(&prov)).unwrap();
            let back = TrainedModel::from_json(&text).unwrap();
            assert_eq!(back, m, "{kind:?}");
            assert_eq!(back.predict(&g, &x, &nodes).unwrap(), m.predict(&g, &x, &nodes).unwrap());
            assert_eq!(back.to_json(Some(&prov)).unwrap(), text);
        }
    }

    #[test]
    fn unknown_version_is_rejected() {
        let (g, x, t) = toy();
        let mut cfg = ModelConfig::default();
        cfg.adaboost.rounds = 2;
        let m = train(ModelKind::AdaBoost, &g, &x, &t, &cfg).unwrap();
        let text = m.to_json(None).unwrap().replace("\"format_version\": 1", "\"format_version\": 99");
        let err = TrainedModel::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("format_version 99"), "{err}");
    }

    #[test]
    fn prediction_selects_model_columns() {
        let (g, x, t) = toy();
        let mut cfg = ModelConfig::default();
        cfg.gbt.trees = 3;
        let sub = x.select(&["c".into(), "a".into()]).unwrap();
        let m = train(ModelKind::Gbt, &g, &sub, &t, &cfg).unwrap();
        let nodes = [0, 1, 2];
        assert_eq!(m.predict(&g, &x, &nodes).unwrap(), m.predict(&g, &sub, &nodes).unwrap());
    }

    #[test]
    fn stable_numerics() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert!(softplus(-1000.0) >= 0.0);
        assert_eq!(sigmoid(0.0), 0.5);
        let s = sigmoid_score(800.0);
        assert!(s < 1.0 && s > 0.999);
        assert!(sigmoid_score(-800.0) > 0.0);
        let (l, g) = bce_with_logits(0.0, true);
        assert!((l - 2f64.ln()).abs() < 1e-15 && g == -0.5);
        assert!(class_weight_for(&[true, false, false]).unwrap() == 2.0);
        assert!(class_weight_for(&[true]).is_err());
    }
}
