//! Stratified cross-validation, ranking and threshold metrics.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::features::{feature_set_columns, FeatureMatrix};
use crate::graph::RetweetGraph;
use crate::models::{self, ModelConfig, ModelKind};
use crate::profile::{Label, LabelSet};

pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_THRESHOLD: f64 = 0.5;
/// Active users sampled per suspended user.
pub const NEGATIVES_PER_POSITIVE: usize = 10;

/// Fold index per instance. Each class is shuffled and dealt round-robin,
/// so fold class counts differ by at most one.
pub fn stratified_kfold(labels: &[bool], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::invalid(format!("need at least 2 folds, got {k}")));
    }
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i]).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i]).collect();
    if k > pos.len() || k > neg.len() {
        return Err(Error::invalid(format!(
            "{k} folds but only {} positive and {} negative instances",
            pos.len(),
            neg.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; labels.len()];
    for mut class in [pos, neg] {
        class.shuffle(&mut rng);
        for (j, i) in class.into_iter().enumerate() {
            fold[i] = j % k;
        }
    }
    Ok(fold)
}

/// Mann-Whitney AUC with midranks for ties.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::invalid("scores and labels differ in length"));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::invalid("scores contain NaN"));
    }
    let p = labels.iter().filter(|&&y| y).count();
    let n = labels.len() - p;
    if p == 0 || n == 0 {
        return Err(Error::invalid("AUC needs both classes"));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 share their mean
        let mid = (i + j + 2) as f64 / 2.0;
        for &k in &idx[i..=j] {
            if labels[k] {
                rank_sum += mid;
            }
        }
        i = j + 1;
    }
    let u = rank_sum - (p * (p + 1)) as f64 / 2.0;
    Ok(u / (p as f64 * n as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdMetrics {
    pub f1: f64,
    pub accuracy: f64,
    /// No predicted and no actual positives; F1 reported as 0.
    pub f1_undefined: bool,
}

/// Positive when `score >= threshold`; a threshold above 1 predicts no
/// positives.
pub fn f1_accuracy(scores: &[f64], labels: &[bool], threshold: f64) -> Result<ThresholdMetrics> {
    if scores.len() != labels.len() || scores.is_empty() {
        return Err(Error::invalid("scores and labels must be non-empty and equally long"));
    }
    let (mut tp, mut fp, mut fn_, mut correct) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &y) in scores.iter().zip(labels) {
        let pred = s >= threshold;
        match (pred, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
        if pred == y {
            correct += 1;
        }
    }
    let denom = 2 * tp + fp + fn_;
    Ok(ThresholdMetrics {
        f1: if denom == 0 { 0.0 } else { 2.0 * tp as f64 / denom as f64 },
        accuracy: correct as f64 / scores.len() as f64,
        f1_undefined: denom == 0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Hateful,
    Suspended,
}

impl Task {
    pub fn parse(s: &str) -> Result<Task> {
        match s {
            "hateful" => Ok(Task::Hateful),
            "suspended" => Ok(Task::Suspended),
            other => Err(Error::invalid(format!(
                "unknown task {other:?} (expected hateful or suspended)"
            ))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Hateful => "hateful",
            Task::Suspended => "suspended",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub task: Task,
    pub models: Vec<ModelKind>,
    pub feature_sets: Vec<String>,
    pub folds: usize,
    pub seed: u64,
    pub threshold: f64,
    pub model: ModelConfig,
}

impl ExperimentConfig {
    pub fn new(task: Task, seed: u64) -> Self {
        ExperimentConfig {
            task,
            models: vec![ModelKind::Sage, ModelKind::Gbt, ModelKind::AdaBoost],
            feature_sets: vec!["user+vec".into(), "vec".into()],
            folds: DEFAULT_FOLDS,
            seed,
            threshold: DEFAULT_THRESHOLD,
            model: ModelConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation over folds.
    pub std: f64,
}

impl MeanStd {
    pub fn of(x: &[f64]) -> MeanStd {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = if x.len() > 1 {
            x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        MeanStd { mean, std: var.sqrt() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldResult {
    pub fold: usize,
    pub train_size: usize,
    pub test_size: usize,
    pub auc: f64,
    #[serde(flatten)]
    pub threshold: ThresholdMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CVEntry {
    pub model: ModelKind,
    pub feature_set: String,
    pub accuracy: MeanStd,
    pub f1: MeanStd,
    pub auc: MeanStd,
    pub folds: Vec<FoldResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CVReport {
    pub task: Task,
    pub seed: u64,
    pub folds: usize,
    pub threshold: f64,
    pub positives: usize,
    pub negatives: usize,
    /// Set for the suspended task: active users drawn at the fixed ratio.
    pub sampled_negatives: Option<usize>,
    /// `(user_id, fold)` per instance.
    pub fold_assignment: Vec<(String, usize)>,
    pub entries: Vec<CVEntry>,
}

impl CVReport {
    pub fn entry(&self, model: ModelKind, feature_set: &str) -> Option<&CVEntry> {
        self.entries.iter().find(|e| e.model == model && e.feature_set == feature_set)
    }

    pub fn write_json(&self, mut w: impl Write) -> Result<()> {
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n").map_err(|e| Error::io("report.json", e))?;
        Ok(())
    }

    /// Table layout, metrics scaled by 100.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record([
            "task", "model", "features", "accuracy", "accuracy_std", "f1", "f1_std", "auc", "auc_std",
        ])?;
        let pct = |x: f64| format!("{:.2}", 100.0 * x);
        for e in &self.entries {
            wtr.write_record([
                self.task.as_str().to_owned(),
                e.model.as_str().to_owned(),
                e.feature_set.clone(),
                pct(e.accuracy.mean),
                pct(e.accuracy.std),
                pct(e.f1.mean),
                pct(e.f1.std),
                pct(e.auc.mean),
                pct(e.auc.std),
            ])?;
        }
        wtr.flush().map_err(|e| Error::io("report.csv", e))?;
        Ok(())
    }
}

/// Node ids and labels of the task's instances, in a canonical order.
pub fn select_instances(g: &RetweetGraph, labels: &LabelSet, task: Task, seed: u64) -> Result<(Vec<(String, bool)>, Option<usize>)> {
    match task {
        Task::Hateful => {
            let out: Vec<(String, bool)> = labels
                .labels
                .iter()
                .map(|(id, &l)| (id.clone(), l == Label::Hateful))
                .collect();
            Ok((out, None))
        }
        Task::Suspended => {
            let sus = labels
                .suspended
                .as_ref()
                .ok_or_else(|| Error::invalid("task `suspended` needs suspension data"))?;
            let mut out: Vec<(String, bool)> = sus.iter().map(|id| (id.clone(), true)).collect();
            let mut active: Vec<&String> = g.ids().iter().filter(|id| !sus.contains(*id)).collect();
            active.sort();
            let want = (NEGATIVES_PER_POSITIVE * sus.len()).min(active.len());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            active.shuffle(&mut rng);
            let mut chosen: Vec<&String> = active.into_iter().take(want).collect();
            chosen.sort();
            out.extend(chosen.into_iter().map(|id| (id.clone(), false)));
            out.sort();
            Ok((out, Some(want)))
        }
    }
}

/// Cross-validates every model on every feature set. `features` may list
/// users in any order; every selected user must have a row.
pub fn run_experiment(g: &RetweetGraph, features: &FeatureMatrix, labels: &LabelSet, cfg: &ExperimentConfig) -> Result<CVReport> {
    let (instances, sampled) = select_instances(g, labels, cfg.task, cfg.seed)?;
    let ids: Vec<&str> = instances.iter().map(|(id, _)| id.as_str()).collect();
    let unknown: Vec<&str> = ids.iter().copied().filter(|id| g.index_of(id).is_none()).collect();
    if !unknown.is_empty() {
        return Err(Error::invalid(format!(
            "{} selected users are not graph nodes: {}",
            unknown.len(),
            crate::profile::preview(&unknown)
        )));
    }
    let aligned = features.align_to(g, &ids)?;
    let nodes: Vec<usize> = ids.iter().map(|id| g.index_of(id).expect("checked")).collect();
    let y: Vec<bool> = instances.iter().map(|t| t.1).collect();
    let fold = stratified_kfold(&y, cfg.folds, cfg.seed)?;

    let mut entries = Vec::new();
    for set in &cfg.feature_sets {
        let cols = feature_set_columns(set, &aligned)?;
        if cols.is_empty() {
            return Err(Error::invalid(format!("feature set {set:?} selects no columns")));
        }
        let x = aligned.select(&cols)?;
        for &kind in &cfg.models {
            let results: Vec<FoldResult> = (0..cfg.folds)
                .into_par_iter()
                .map(|f| {
                    let train: Vec<(usize, bool)> = (0..nodes.len()).filter(|&i| fold[i] != f).map(|i| (nodes[i], y[i])).collect();
                    let test: Vec<usize> = (0..nodes.len()).filter(|&i| fold[i] == f).collect();
                    let mut mc = cfg.model;
                    mc.sage.seed = cfg.model.sage.seed.wrapping_add(cfg.seed).wrapping_add(f as u64);
                    let model = models::train(kind, g, &x, &train, &mc)?;
                    let test_nodes: Vec<usize> = test.iter().map(|&i| nodes[i]).collect();
                    let scores = model.predict(g, &x, &test_nodes)?;
                    let ty: Vec<bool> = test.iter().map(|&i| y[i]).collect();
                    Ok(FoldResult {
                        fold: f,
                        train_size: train.len(),
                        test_size: test.len(),
                        auc: auc(&scores, &ty)?,
                        threshold: f1_accuracy(&scores, &ty, cfg.threshold)?,
                    })
                })
                .collect::<Result<_>>()?;
            let metric = |g: fn(&FoldResult) -> f64| MeanStd::of(&results.iter().map(g).collect::<Vec<_>>());
            log::info!(
                "{} {} {}: AUC {:.4}",
                cfg.task.as_str(),
                kind.as_str(),
                set,
                metric(|r| r.auc).mean
            );
            entries.push(CVEntry {
                model: kind,
                feature_set: set.clone(),
                accuracy: metric(|r| r.threshold.accuracy),
                f1: metric(|r| r.threshold.f1),
                auc: metric(|r| r.auc),
                folds: results,
            });
        }
    }
    let positives = y.iter().filter(|&&v| v).count();
    Ok(CVReport {
        task: cfg.task,
        seed: cfg.seed,
        folds: cfg.folds,
        threshold: cfg.threshold,
        positives,
        negatives: y.len() - positives,
        sampled_negatives: sampled,
        fold_assignment: ids.iter().map(|s| s.to_string()).zip(fold).collect(),
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_auc(s: &[f64], y: &[bool]) -> f64 {
        let (mut num, mut pairs) = (0.0, 0.0);
        for i in 0..s.len() {
            for j in 0..s.len() {
                if y[i] && !y[j] {
                    pairs += 1.0;
                    if s[i] > s[j] {
                        num += 1.0;
                    } else if s[i] == s[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / pairs
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.8, 0.1, 0.2], &[true, true, false, false]).unwrap(), 1.0);
        let s = [0.9, 0.4, 0.35, 0.8];
        let y = [true, false, true, false];
        assert_eq!(brute_auc(&s, &y), 0.5);
        assert_eq!(auc(&s, &y).unwrap(), 0.5);
        assert_eq!(auc(&[0.3; 6], &[true, false, true, false, false, false]).unwrap(), 0.5);
        assert!(auc(&[0.1, 0.2], &[true, true]).is_err());
    }

    #[test]
    fn folds_preserve_class_ratio() {
        let y: Vec<bool> = (0..100).map(|i| i < 10).collect();
        let f = stratified_kfold(&y, 5, 3).unwrap();
        for k in 0..5 {
            let pos = (0..100).filter(|&i| f[i] == k && y[i]).count();
            let neg = (0..100).filter(|&i| f[i] == k && !y[i]).count();
            assert_eq!((pos, neg), (2, 18));
        }
        assert_eq!(f, stratified_kfold(&y, 5, 3).unwrap());
        assert_ne!(f, stratified_kfold(&y, 5, 4).unwrap());
        let few: Vec<bool> = (0..20).map(|i| i < 3).collect();
        assert!(stratified_kfold(&few, 5, 0).is_err());
    }

    #[test]
    fn threshold_metric_examples() {
        let y = [true, false, true];
        let m = f1_accuracy(&[0.9, 0.1, 0.7], &y, 0.5).unwrap();
        assert_eq!((m.f1, m.accuracy), (1.0, 1.0));
        let m = f1_accuracy(&[0.1, 0.1, 0.2], &y, 0.5).unwrap();
        assert_eq!(m.f1, 0.0);
        assert!(!m.f1_undefined);
        let m = f1_accuracy(&[0.9, 0.99, 1.0], &y, 1.0 + f64::EPSILON).unwrap();
        assert_eq!(m.accuracy, 1.0 / 3.0);
        let m = f1_accuracy(&[0.2, 0.3], &[false, false], 0.5).unwrap();
        assert!(m.f1_undefined && m.f1 == 0.0 && m.accuracy == 1.0);
    }

    #[test]
    fn mean_std() {
        let m = MeanStd::of(&[1.0, 2.0, 3.0]);
        assert_eq!((m.mean, m.std), (2.0, 1.0));
        assert_eq!(MeanStd::of(&[4.0]).std, 0.0);
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2usize..200).prop_flat_map(|n| {
            (
                prop::collection::vec((0u8..20).prop_map(|v| f64::from(v) / 4.0), n),
                prop::collection::vec(any::<bool>(), n)
                    .prop_filter("both classes", |y| y.iter().any(|&v| v) && y.iter().any(|&v| !v)),
            )
        })
    }

    proptest! {
        #[test]
        fn auc_equals_pair_counting((s, y) in instance()) {
            prop_assert_eq!(auc(&s, &y).unwrap(), brute_auc(&s, &y));
        }

        #[test]
        fn auc_complement_and_monotone_invariance(
            y in prop::collection::vec(any::<bool>(), 2..100)
                .prop_filter("both classes", |y| y.iter().any(|&v| v) && y.iter().any(|&v| !v)),
            seed in any::<u64>(),
        ) {
            use rand::Rng;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s: Vec<f64> = y.iter().map(|_| rng.random::<f64>()).collect();
            let neg: Vec<f64> = s.iter().map(|v| -v).collect();
            let a = auc(&s, &y).unwrap();
            prop_assert!((a + auc(&neg, &y).unwrap() - 1.0).abs() < 1e-12);
            let t: Vec<f64> = s.iter().map(|v| (3.0 * v).exp() + 2.0).collect();
            prop_assert_eq!(a, auc(&t, &y).unwrap());
        }

        #[test]
        fn folds_partition_exactly(
            y in prop::collection::vec(any::<bool>(), 10..120), k in 2usize..6, seed in any::<u64>(),
        ) {
            let pos = y.iter().filter(|&&v| v).count();
            prop_assume!(pos >= k && y.len() - pos >= k);
            let f = stratified_kfold(&y, k, seed).unwrap();
            for class in [true, false] {
                let counts: Vec<usize> = (0..k)
                    .map(|j| (0..y.len()).filter(|&i| f[i] == j && y[i] == class).count())
                    .collect();
                prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1);
            }
            prop_assert!(f.iter().all(|&j| j < k));
        }
    }
}
