//! Flat `key = value` configuration merged with command-line flags.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use hategraph::provenance::{digest_path, Provenance};
use hategraph::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Value,
    Flag,
}

pub struct Key {
    pub name: &'static str,
    pub kind: Kind,
    pub help: &'static str,
}

const fn value(name: &'static str, help: &'static str) -> Key {
    Key { name, kind: Kind::Value, help }
}

const fn flag(name: &'static str, help: &'static str) -> Key {
    Key { name, kind: Kind::Flag, help }
}

/// Every key accepted in a config file. Flags take `true` or `false` there.
pub const KEYS: &[Key] = &[
    value("dir", "Directory holding default inputs and outputs [default: .]"),
    value("seed", "Master seed for randomized steps [default: 0]"),
    value("threads", "Worker threads [default: 1]"),
    value("out", "Output file or directory (stage specific default)"),
    value("edges", "Retweet edge list, source<TAB>target [default: <dir>/edges.tsv]"),
    value("graph", "Edge list of the graph to crawl [default: <dir>/edges.tsv]"),
    value("users", "User profiles, JSON lines [default: <dir>/users.jsonl]"),
    value("lexicon", "Seed lexicon, one phrase per line [default: <dir>/lexicon.txt]"),
    value("vectors", "Word vectors, `word v1 .. vd` per line [default: <dir>/vectors.txt]"),
    value("labels", "Annotations, user_id,label [default: <dir>/labels.csv]"),
    value("suspended", "Ban checkpoints, user_id,checkpoint (optional)"),
    value("beliefs", "Diffused beliefs [default: <dir>/beliefs.csv]"),
    value("selected", "Users chosen for annotation [default: <dir>/selected.csv]"),
    value("annotations", "Filled annotation sheet [default: <dir>/annotation.csv]"),
    value("feature_file", "Feature table [default: <dir>/features.csv]"),
    value("categories", "Directory of <category>.txt word lists (optional)"),
    value("valence", "token<TAB>score sentiment lexicon (optional)"),
    value("badwords", "Profanity word list (optional)"),
    value("budget", "Crawl budget in out-neighbor queries"),
    value("jump_weight", "DURW jump weight w [default: 10]"),
    value("steps", "Diffusion iterations t [default: 2]"),
    flag("clamp_seeds", "Reset lexicon users to belief 1 after every step"),
    value("strata_cap", "Users selected per belief stratum [default: 1500]"),
    value("annotators", "Vote columns in the annotation sheet [default: 3]"),
    value("reference_date", "Reference date, ISO-8601 UTC [default: 2017-10-07T00:00:00Z]"),
    value("bc_sources", "Sampled betweenness sources (exact up to 50000 nodes by default)"),
    value("task", "hateful or suspended [default: hateful]"),
    value("models", "Comma-separated models: sage, gbt, adaboost [default: all]"),
    value("model_type", "Model to train: sage, gbt or adaboost [default: sage]"),
    value("features", "Feature sets: user+vec, vec, user (comma-separated for evaluate) [default: user+vec,vec]"),
    value("folds", "Cross-validation folds [default: 5]"),
    value("threshold", "Decision threshold on scores [default: 0.5]"),
    value("hidden", "Sage hidden width [default: 128]"),
    value("samples", "Sage neighbor samples per layer, S1,S2 [default: 25,10]"),
    value("epochs", "Sage training epochs [default: 10]"),
    value("batch", "Sage minibatch size [default: 512]"),
    value("lr", "Sage learning rate [default: 0.01]"),
    value("relu", "Sage ReLU after the first layer, true/false [default: true]"),
    value("normalize", "Sage L2 row normalization of embeddings, true/false [default: true]"),
    value("inference", "Sage inference: full or sampled [default: full]"),
    value("sage_seed", "Offset added to the sage seed [default: 0]"),
    value("class_weight", "Positive-class weight or `auto` (#neg/#pos) [default: auto]"),
    value("adaboost_rounds", "AdaBoost rounds [default: 100]"),
    value("gbt_trees", "Gradient-boosted trees [default: 100]"),
    value("gbt_depth", "Gradient-boosted tree depth [default: 3]"),
    value("gbt_lr", "Gradient boosting shrinkage [default: 0.1]"),
    value("nodes", "Synthetic graph size [default: 10000]"),
    value("minority_fraction", "Planted minority fraction rho [default: 0.01]"),
    value("homophily", "P(dest minority | source minority) [default: 0.415]"),
    value("mean_out_degree", "Mean out-degree [default: 10]"),
    value("silent_fraction", "Fraction of synthetic users with no out-edges [default: 0.25]"),
    value("degree_exponent", "Out-degree power-law exponent [default: 2.5]"),
    value("max_out_degree", "Out-degree cap [default: 1000]"),
    value("vocab_size", "Words per class vocabulary [default: 400]"),
    value("vocab_overlap", "Probability a token is shared between classes [default: 0.9]"),
    value("tweets_per_user", "Tweets per synthetic user [default: 20]"),
    value("tokens_per_tweet", "Tokens per synthetic tweet [default: 10]"),
    value("lexicon_rate", "Probability q that a minority user uses a lexicon phrase [default: 0.3]"),
    value("lexicon_rate_majority", "Same for majority users [default: 0.002]"),
    value("activity_multiplier", "Minority activity-rate multiplier [default: 1.3]"),
    value("labeled", "Synthetic users written to labels.csv [default: 5000]"),
    value("vector_dim", "Synthetic word-vector dimension [default: 50]"),
];

pub fn key(name: &str) -> Option<&'static Key> {
    KEYS.iter().find(|k| k.name == name)
}

/// Parses `key = value` lines; `#` starts a comment line.
pub fn parse_config(text: &str, path: &Path) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(path, line_no, format!("expected `key = value`, got {line:?}")))?;
        let (k, v) = (k.trim(), v.trim());
        if key(k).is_none() {
            return Err(Error::parse(path, line_no, format!("unknown key {k:?}")));
        }
        if out.insert(k.to_owned(), v.to_owned()).is_some() {
            return Err(Error::parse(path, line_no, format!("key {k:?} set twice")));
        }
    }
    Ok(out)
}

pub fn load_config(path: &Path) -> Result<BTreeMap<String, String>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, path)
}

/// Resolved settings of one stage. Every value read is recorded so the
/// provenance hash covers exactly what the stage used.
pub struct Settings {
    values: BTreeMap<String, String>,
    used: RefCell<BTreeMap<String, String>>,
}

impl Settings {
    /// `flags` override `file`.
    pub fn new(file: BTreeMap<String, String>, flags: BTreeMap<String, String>) -> Self {
        let mut values = file;
        values.extend(flags);
        Settings { values, used: RefCell::default() }
    }

    fn raw(&self, key: &str) -> Option<&str> {
        debug_assert!(self::key(key).is_some(), "undeclared key {key}");
        self.values.get(key).map(String::as_str)
    }

    fn record(&self, key: &str, v: impl Display) {
        self.used.borrow_mut().insert(key.to_owned(), v.to_string());
    }

    pub fn get<T: FromStr + Display>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        let v = match self.raw(key) {
            Some(s) => s
                .parse::<T>()
                .map_err(|e| Error::invalid(format!("bad value {s:?} for `{key}`: {e}")))?,
            None => default,
        };
        self.record(key, &v);
        Ok(v)
    }

    pub fn required<T: FromStr + Display>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        let s = self
            .raw(key)
            .ok_or_else(|| Error::invalid(format!("`{key}` is required")))?;
        let v = s
            .parse::<T>()
            .map_err(|e| Error::invalid(format!("bad value {s:?} for `{key}`: {e}")))?;
        self.record(key, &v);
        Ok(v)
    }

    pub fn optional<T: FromStr + Display>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.raw(key) {
            Some(_) => self.required(key).map(Some),
            None => Ok(None),
        }
    }

    pub fn flag(&self, key: &str) -> Result<bool> {
        self.get(key, false)
    }

    pub fn text(&self, key: &str, default: &str) -> String {
        let v = self.raw(key).unwrap_or(default).to_owned();
        self.record(key, &v);
        v
    }

    fn dir(&self) -> PathBuf {
        PathBuf::from(self.raw("dir").unwrap_or("."))
    }

    fn located(&self, key: &str, default_name: &str) -> PathBuf {
        match self.raw(key) {
            Some(p) => PathBuf::from(p),
            None => self.dir().join(default_name),
        }
    }

    /// Input path that must exist; its content digest enters the hash.
    pub fn input(&self, key: &str, default_name: &str) -> Result<PathBuf> {
        let p = self.located(key, default_name);
        self.record(key, format!("sha256:{}", digest_path(&p)?));
        Ok(p)
    }

    /// Input without a default location; `None` when not configured.
    pub fn optional_input(&self, key: &str) -> Result<Option<PathBuf>> {
        match self.raw(key) {
            Some(_) => self.input(key, "").map(Some),
            None => Ok(None),
        }
    }

    /// Default location when present; an explicitly configured path must
    /// exist.
    pub fn input_if_present(&self, key: &str, default_name: &str) -> Result<Option<PathBuf>> {
        if self.raw(key).is_some() || self.located(key, default_name).exists() {
            self.input(key, default_name).map(Some)
        } else {
            Ok(None)
        }
    }

    /// Output locations stay out of the hash so reruns elsewhere match.
    pub fn output(&self, default_name: &str) -> PathBuf {
        self.located("out", default_name)
    }

    /// Worker count; does not affect outputs, so it stays out of the hash.
    pub fn threads(&self) -> Result<usize> {
        match self.raw("threads") {
            None => Ok(1),
            Some(s) => s
                .parse::<usize>()
                .ok()
                .filter(|&n| n >= 1)
                .ok_or_else(|| Error::invalid(format!("bad value {s:?} for `threads`"))),
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.raw("out").map_or_else(|| self.dir(), PathBuf::from)
    }

    pub fn out_dir_or(&self, sub: &str) -> PathBuf {
        self.raw("out").map_or_else(|| self.dir().join(sub), PathBuf::from)
    }

    pub fn provenance(&self, stage: &str, seeds: &[(&str, u64)]) -> Provenance {
        let settings: Vec<(String, String)> = self.used.borrow().clone().into_iter().collect();
        Provenance::new(stage, &settings, seeds)
    }
}
