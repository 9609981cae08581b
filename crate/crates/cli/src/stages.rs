use std::collections::{BTreeMap, HashMap, HashSet};
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::Serialize;
use serde_json::Value;

use hategraph::crawler::{self, DurwConfig, GraphBackedOracle};
use hategraph::diffusion::{self, BeliefVector, DiffuseOptions, Lexicon};
use hategraph::eval::{self, ExperimentConfig, Task};
use hategraph::features::{self, CentralityOptions, FeatureMatrix, WordVectors, USER_COLUMNS};
use hategraph::graph::{self, IngestReport};
use hategraph::models::{self, Inference, ModelConfig, ModelKind};
use hategraph::profile::{self, LabelSet, ProfileStore};
use hategraph::provenance::{create_artifact, Provenance};
use hategraph::stats::{self, content};
use hategraph::synth::{self, SynthConfig};
use hategraph::{Error, Result, RetweetGraph};

use crate::config::Settings;

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

fn finish(mut w: impl Write, path: &Path) -> Result<()> {
    w.flush().map_err(io_err(path))
}

fn write_json_artifact(path: &Path, prov: &Provenance, body: impl Serialize) -> Result<()> {
    let mut value = serde_json::to_value(body)?;
    let Value::Object(fields) = &mut value else {
        unreachable!("artifact bodies are structs")
    };
    let mut ordered = serde_json::Map::new();
    ordered.insert("provenance".into(), serde_json::to_value(prov)?);
    ordered.append(fields);
    let mut w = hategraph::provenance::create_plain(path)?;
    serde_json::to_writer_pretty(&mut w, &ordered)?;
    w.write_all(b"\n").map_err(io_err(path))?;
    finish(w, path)
}

fn load_edges(s: &Settings, key: &str) -> Result<(RetweetGraph, IngestReport)> {
    graph::ingest_edges(s.input(key, "edges.tsv")?)
}

fn load_users(s: &Settings) -> Result<ProfileStore> {
    let (store, report) = profile::ingest_users(s.input("users", "users.jsonl")?)?;
    for id in &report.truncated {
        log::warn!("user {id}: kept the most recent {} tweets", profile::MAX_TWEETS);
    }
    Ok(store)
}

/// Edge endpoints plus every profile id.
fn graph_with_profiles(s: &Settings) -> Result<(RetweetGraph, ProfileStore)> {
    let (g, _) = load_edges(s, "edges")?;
    let users = load_users(s)?;
    let g = g.with_nodes(users.iter().map(|p| p.id.as_str()));
    Ok((g, users))
}

/// Graph whose node set matches a feature table built by `features`.
fn graph_for_features(s: &Settings) -> Result<(RetweetGraph, FeatureMatrix)> {
    let (g, _) = load_edges(s, "edges")?;
    let x = FeatureMatrix::read_csv(s.input("feature_file", "features.csv")?)?;
    let g = g.with_nodes(x.ids.iter().map(String::as_str));
    Ok((g, x))
}

fn load_labels(s: &Settings, g: &RetweetGraph) -> Result<LabelSet> {
    let labels = s.input("labels", "labels.csv")?;
    let suspended = s.input_if_present("suspended", "suspended.csv")?;
    let set = profile::load_label_set(&labels, suspended.as_deref())?;
    set.validate(g)?;
    Ok(set)
}

fn reference_date(s: &Settings) -> Result<DateTime<Utc>> {
    s.get("reference_date", SynthConfig::default().reference_date)
}

pub fn synth(s: &Settings) -> Result<()> {
    let d = SynthConfig::default();
    let cfg = SynthConfig {
        nodes: s.get("nodes", d.nodes)?,
        minority_fraction: s.get("minority_fraction", d.minority_fraction)?,
        homophily: s.get("homophily", d.homophily)?,
        mean_out_degree: s.get("mean_out_degree", d.mean_out_degree)?,
        silent_fraction: s.get("silent_fraction", d.silent_fraction)?,
        degree_exponent: s.get("degree_exponent", d.degree_exponent)?,
        max_out_degree: s.get("max_out_degree", d.max_out_degree)?,
        vocab_size: s.get("vocab_size", d.vocab_size)?,
        vocab_overlap: s.get("vocab_overlap", d.vocab_overlap)?,
        tweets_per_user: s.get("tweets_per_user", d.tweets_per_user)?,
        tokens_per_tweet: s.get("tokens_per_tweet", d.tokens_per_tweet)?,
        lexicon_rate: s.get("lexicon_rate", d.lexicon_rate)?,
        lexicon_rate_majority: s.get("lexicon_rate_majority", d.lexicon_rate_majority)?,
        activity_multiplier: s.get("activity_multiplier", d.activity_multiplier)?,
        labeled: s.get("labeled", d.labeled)?,
        vector_dim: s.get("vector_dim", d.vector_dim)?,
        reference_date: reference_date(s)?,
        seed: s.get("seed", 0)?,
    };
    let data = synth::generate(&cfg)?;
    let prov = s.provenance("synth", &[("seed", cfg.seed)]);
    let out = s.out_dir();

    let path = out.join("edges.tsv");
    let mut w = create_artifact(&path, &prov)?;
    graph::write_edges(&mut w, &data.graph).map_err(io_err(&path))?;
    finish(w, &path)?;

    let path = out.join("users.jsonl");
    let mut w = create_artifact(&path, &prov)?;
    profile::write_users(&mut w, &data.profiles)?;
    finish(w, &path)?;

    let path = out.join("labels.csv");
    let mut w = create_artifact(&path, &prov)?;
    profile::write_labels(&mut w, &data.labels)?;
    finish(w, &path)?;

    let path = out.join("lexicon.txt");
    let mut w = create_artifact(&path, &prov)?;
    for phrase in &data.lexicon {
        writeln!(w, "{phrase}").map_err(io_err(&path))?;
    }
    finish(w, &path)?;

    let path = out.join("vectors.txt");
    let mut w = create_artifact(&path, &prov)?;
    synth::write_vectors(&mut w, &data.vectors).map_err(io_err(&path))?;
    finish(w, &path)?;

    write_json_artifact(&out.join("truth.json"), &prov, &data.truth)?;
    log::info!(
        "synth: {} nodes, {} edges, in-group fraction {:.4}, likelihood ratio {:.2}",
        data.graph.node_count(),
        data.graph.edge_count(),
        data.truth.in_group_fraction,
        data.truth.likelihood_ratio
    );
    Ok(())
}

#[derive(Serialize)]
struct IngestSummary {
    edge_lines: usize,
    duplicate_edges: usize,
    self_loops: usize,
    edge_nodes: usize,
    edges: usize,
    profiles: usize,
    truncated_profiles: Vec<String>,
    profiles_outside_edges: usize,
    nodes: usize,
}

pub fn ingest(s: &Settings) -> Result<()> {
    let (g, report) = load_edges(s, "edges")?;
    let users = match s.input_if_present("users", "users.jsonl")? {
        Some(p) => Some(profile::ingest_users(p)?),
        None => None,
    };
    let outside = users.as_ref().map_or(0, |(u, _)| u.absent_from(&g).len());
    let full = match &users {
        Some((u, _)) => g.with_nodes(u.iter().map(|p| p.id.as_str())),
        None => g.clone(),
    };
    let prov = s.provenance("ingest", &[]);
    let out = s.out_dir();

    let path = out.join("nodes.csv");
    let mut w = create_artifact(&path, &prov)?;
    {
        let mut wtr = csv::Writer::from_writer(&mut w);
        wtr.write_record(["index", "user_id", "out_degree", "in_degree", "has_profile", "in_edge_list"])?;
        for u in 0..full.node_count() {
            let id = full.id(u);
            let has_profile = users.as_ref().is_some_and(|(p, _)| p.get(id).is_some());
            wtr.write_record([
                u.to_string(),
                id.to_owned(),
                full.out_degree(u).to_string(),
                full.in_degree(u).to_string(),
                has_profile.to_string(),
                (u < g.node_count()).to_string(),
            ])?;
        }
        wtr.flush().map_err(io_err(&path))?;
    }
    finish(w, &path)?;

    let summary = IngestSummary {
        edge_lines: report.lines,
        duplicate_edges: report.duplicates,
        self_loops: report.self_loops,
        edge_nodes: report.nodes,
        edges: report.edges,
        profiles: users.as_ref().map_or(0, |(u, _)| u.len()),
        truncated_profiles: users.map(|(_, r)| r.truncated).unwrap_or_default(),
        profiles_outside_edges: outside,
        nodes: full.node_count(),
    };
    log::info!("ingest: {} nodes, {} edges", summary.nodes, summary.edges);
    write_json_artifact(&out.join("ingest.json"), &prov, summary)
}

pub fn crawl(s: &Settings) -> Result<()> {
    let (g, _) = load_edges(s, "graph")?;
    let cfg = DurwConfig::new(
        s.required("budget")?,
        s.get("jump_weight", crawler::DEFAULT_JUMP_WEIGHT)?,
        s.get("seed", 0)?,
    );
    let mut oracle = GraphBackedOracle::new(&g);
    let sample = crawler::durw_sample(&mut oracle, &cfg)?;
    if let Some(reason) = &sample.partial {
        log::warn!("crawl stopped early: {reason}");
    }
    let est = crawler::estimate_outdegree_dist(&sample.record)?;
    log::info!(
        "crawl: {} queries, {} jumps, {} sampled nodes, TV to full graph {:.4}",
        sample.record.budget_used,
        sample.record.jumps,
        sample.graph.node_count(),
        crawler::total_variation(&est, &crawler::true_outdegree_dist(&g))
    );
    let prov = s.provenance("crawl", &[("seed", cfg.seed)]);
    let path = s.output("sample.tsv");
    let mut w = create_artifact(&path, &prov)?;
    graph::write_edges(&mut w, &sample.graph).map_err(io_err(&path))?;
    finish(w, &path)?;

    let path = path.with_file_name("outdeg_est.csv");
    let mut w = create_artifact(&path, &prov)?;
    writeln!(w, "degree,probability").map_err(io_err(&path))?;
    for (k, p) in &est {
        writeln!(w, "{k},{p}").map_err(io_err(&path))?;
    }
    finish(w, &path)
}

fn write_beliefs(path: &Path, prov: &Provenance, ids: &[&str], values: &[f64]) -> Result<()> {
    let mut w = create_artifact(path, prov)?;
    writeln!(w, "user_id,belief,stratum").map_err(io_err(path))?;
    for (id, &p) in ids.iter().zip(values) {
        writeln!(w, "{id},{p},{}", diffusion::stratum_of(p)).map_err(io_err(path))?;
    }
    finish(w, path)
}

fn read_beliefs(path: &Path) -> Result<(Vec<String>, Vec<f64>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::parse(path, 0, e.to_string()))?;
    let (mut ids, mut values) = (Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let (id, raw) = (rec.get(0).unwrap_or_default(), rec.get(1).unwrap_or_default());
        let p: f64 = raw
            .parse()
            .map_err(|_| Error::parse(path, line, format!("bad belief {raw:?}")))?;
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::parse(path, line, format!("belief {p} outside [0, 1]")));
        }
        ids.push(id.to_owned());
        values.push(p);
    }
    Ok((ids, values))
}

pub fn diffuse(s: &Settings) -> Result<()> {
    let (g, users) = graph_with_profiles(s)?;
    let lexicon = Lexicon::load(s.input("lexicon", "lexicon.txt")?)?;
    let steps = s.get("steps", diffusion::DEFAULT_STEPS)?;
    let opts = DiffuseOptions { clamp_seeds: s.flag("clamp_seeds")? };
    let p0 = diffusion::seed_beliefs(&g, &users, &lexicon);
    let t = diffusion::build_transition(&g);
    let p = diffusion::diffuse_with(&t, &p0, steps, opts)?;
    let mut counts = [0usize; 4];
    for &x in &p.values {
        counts[usize::from(diffusion::stratum_of(x)) - 1] += 1;
    }
    log::info!(
        "diffuse: {} seed users, stratum sizes {counts:?}",
        p0.values.iter().filter(|&&x| x >= 1.0).count()
    );
    let prov = s.provenance("diffuse", &[]);
    let ids: Vec<&str> = g.ids().iter().map(String::as_str).collect();
    write_beliefs(&s.output("beliefs.csv"), &prov, &ids, &p.values)
}

pub fn stratify(s: &Settings) -> Result<()> {
    let (ids, values) = read_beliefs(&s.input("beliefs", "beliefs.csv")?)?;
    let cap = s.get("strata_cap", diffusion::DEFAULT_STRATUM_CAP)?;
    let seed = s.get("seed", 0)?;
    let mut chosen: Vec<_> = diffusion::stratify(&BeliefVector { values: values.clone(), step: 0 }, cap, seed)
        .into_iter()
        .filter(|a| a.selected)
        .collect();
    chosen.sort_by_key(|a| (a.stratum, a.node));
    let prov = s.provenance("stratify", &[("seed", seed)]);
    let path = s.output("selected.csv");
    let (ids, values): (Vec<&str>, Vec<f64>) =
        chosen.iter().map(|a| (ids[a.node].as_str(), values[a.node])).unzip();
    log::info!("stratify: selected {} users", ids.len());
    write_beliefs(&path, &prov, &ids, &values)
}

pub fn annotate_export(s: &Settings) -> Result<()> {
    let (ids, _) = read_beliefs(&s.input("selected", "selected.csv")?)?;
    let users = load_users(s)?;
    let annotators = s.get("annotators", diffusion::MIN_ANNOTATORS)?;
    if annotators < diffusion::MIN_ANNOTATORS {
        return Err(Error::invalid(format!(
            "at least {} annotators are required",
            diffusion::MIN_ANNOTATORS
        )));
    }
    let prov = s.provenance("annotate-export", &[]);
    let path = s.output("annotation.csv");
    let mut w = create_artifact(&path, &prov)?;
    let rows = diffusion::export_annotation_batch(&mut w, ids.iter().map(String::as_str), &users, annotators)?;
    log::info!("annotate-export: {rows} users");
    finish(w, &path)
}

pub fn annotate_import(s: &Settings) -> Result<()> {
    let (g, _) = load_edges(s, "edges")?;
    let users = match s.input_if_present("users", "users.jsonl")? {
        Some(p) => Some(profile::ingest_users(p)?.0),
        None => None,
    };
    let known = |id: &str| g.index_of(id).is_some() || users.as_ref().is_some_and(|u| u.get(id).is_some());
    let labels = diffusion::import_annotations(s.input("annotations", "annotation.csv")?, known)?;
    let prov = s.provenance("annotate-import", &[]);
    let path = s.output("labels.csv");
    let mut w = create_artifact(&path, &prov)?;
    profile::write_labels(&mut w, &labels)?;
    log::info!("annotate-import: {} labels", labels.len());
    finish(w, &path)
}

pub fn features(s: &Settings) -> Result<()> {
    let (g, users) = graph_with_profiles(s)?;
    let vectors = WordVectors::load(s.input("vectors", "vectors.txt")?)?;
    let seed = s.get("seed", 0)?;
    let opts = CentralityOptions { bc_sources: s.optional("bc_sources")?, seed };
    let (x, report) = features::extract_features(&g, &users, &vectors, reference_date(s)?, opts)?;
    log::info!(
        "features: {} users, {} columns, {} without profile, {} without known words, {} betweenness sources",
        x.rows(),
        x.cols(),
        report.missing_profiles,
        report.no_known_words,
        report.bc_sources
    );
    if report.eigen.degenerate {
        log::warn!("dominant eigenvalue is not simple; eigenvector scores depend on the start vector");
    }
    let mut seeds = vec![];
    if report.bc_sources < g.node_count() {
        seeds.push(("seed", seed));
    }
    let prov = s.provenance("features", &seeds);
    let path = s.output("features.csv");
    let mut w = create_artifact(&path, &prov)?;
    x.write_csv(&mut w)?;
    finish(w, &path)
}

fn hstack(a: &FeatureMatrix, b: &FeatureMatrix) -> FeatureMatrix {
    debug_assert_eq!(a.ids, b.ids);
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    for i in 0..a.rows() {
        data.extend_from_slice(a.row(i));
        data.extend_from_slice(b.row(i));
    }
    let mut columns = a.columns.clone();
    columns.extend(b.columns.iter().cloned());
    FeatureMatrix { ids: a.ids.clone(), columns, data }
}

fn write_mixing(path: &Path, prov: &Provenance, table: &stats::MixingTable) -> Result<()> {
    let mut w = create_artifact(path, prov)?;
    table.write_csv(&mut w)?;
    finish(w, path)
}

pub fn stats(s: &Settings) -> Result<()> {
    let (g, x) = graph_for_features(s)?;
    let labels = load_labels(s, &g)?;
    let prov = s.provenance("stats", &[]);
    let out = s.out_dir_or("stats");
    let mut matrix = x.align_to(&g, &[])?.select(&USER_COLUMNS.map(String::from))?;

    if let Some(users) = s.input_if_present("users", "users.jsonl")? {
        let (users, _) = profile::ingest_users(users)?;
        let categories = match s.optional_input("categories")? {
            Some(p) => content::load_categories(p)?,
            None => BTreeMap::new(),
        };
        let valence = match s.optional_input("valence")? {
            Some(p) => content::load_valence(p)?,
            None => HashMap::new(),
        };
        let badwords = match s.optional_input("badwords")? {
            Some(p) => content::load_badwords(p)?,
            None => HashSet::new(),
        };
        let c = stats::content_metrics(&g, &users, &categories, &valence, &badwords);
        matrix = hstack(&matrix, &c);
    }

    write_mixing(&out.join("mixing_labels.csv"), &prov, &stats::mixing_table(&g, &stats::label_types(&labels))?)?;
    if let Some(types) = stats::suspension_types(&g, &labels) {
        write_mixing(&out.join("mixing_suspended.csv"), &prov, &stats::mixing_table(&g, &types)?)?;
    }

    let pairs = stats::standard_groups(&g, &labels);
    let report = stats::group_report(&matrix, &pairs, &matrix.columns)?;
    let path = out.join("report.csv");
    let mut w = create_artifact(&path, &prov)?;
    stats::write_group_report(&mut w, &report)?;
    finish(w, &path)?;

    let groups: Vec<&stats::Group> = pairs.iter().flat_map(|(a, b)| [a, b]).collect();
    for metric in &matrix.columns {
        let path = out.join("plotdata").join(format!("{metric}.csv"));
        let mut w = create_artifact(&path, &prov)?;
        stats::write_plotdata(&mut w, &matrix, metric, &groups)?;
        finish(w, &path)?;
    }
    log::info!("stats: {} group pairs, {} metrics", pairs.len(), matrix.cols());
    Ok(())
}

fn model_config(s: &Settings, seed: u64) -> Result<ModelConfig> {
    let mut cfg = ModelConfig::default();
    let class_weight = match s.text("class_weight", "auto").as_str() {
        "auto" => None,
        w => Some(
            w.parse::<f64>()
                .ok()
                .filter(|w| *w > 0.0 && w.is_finite())
                .ok_or_else(|| Error::invalid(format!("bad class weight {w:?}")))?,
        ),
    };
    let sage = &mut cfg.sage;
    sage.hidden = s.get("hidden", sage.hidden)?;
    let samples = s.text("samples", &format!("{},{}", sage.samples[0], sage.samples[1]));
    sage.samples = match samples.split(',').map(|v| v.trim().parse::<usize>()).collect::<Vec<_>>()[..] {
        [Ok(a), Ok(b)] => [a, b],
        _ => return Err(Error::invalid(format!("bad samples {samples:?} (expected S1,S2)"))),
    };
    sage.epochs = s.get("epochs", sage.epochs)?;
    sage.batch = s.get("batch", sage.batch)?;
    sage.lr = s.get("lr", sage.lr)?;
    sage.relu = s.get("relu", sage.relu)?;
    sage.normalize = s.get("normalize", sage.normalize)?;
    sage.seed = s.get("sage_seed", 0)?;
    sage.class_weight = class_weight;
    cfg.inference = match s.text("inference", "full").as_str() {
        "full" => Inference::FullMean,
        "sampled" => Inference::Sampled { seed },
        other => return Err(Error::invalid(format!("unknown inference {other:?} (expected full or sampled)"))),
    };
    cfg.adaboost.rounds = s.get("adaboost_rounds", cfg.adaboost.rounds)?;
    cfg.adaboost.class_weight = class_weight;
    cfg.gbt.trees = s.get("gbt_trees", cfg.gbt.trees)?;
    cfg.gbt.depth = s.get("gbt_depth", cfg.gbt.depth)?;
    cfg.gbt.lr = s.get("gbt_lr", cfg.gbt.lr)?;
    cfg.gbt.class_weight = class_weight;
    Ok(cfg)
}

fn list(raw: &str) -> Vec<String> {
    raw.split(',').map(|v| v.trim().to_owned()).filter(|v| !v.is_empty()).collect()
}

pub fn train(s: &Settings) -> Result<()> {
    let (g, x) = graph_for_features(s)?;
    let labels = load_labels(s, &g)?;
    let task = Task::parse(&s.text("task", "hateful"))?;
    let kind = ModelKind::parse(&s.text("model_type", "sage"))?;
    let set = s.text("features", "user+vec");
    let seed = s.get("seed", 0)?;
    let mut cfg = model_config(s, seed)?;
    cfg.sage.seed = cfg.sage.seed.wrapping_add(seed);

    let (instances, _) = eval::select_instances(&g, &labels, task, seed)?;
    let ids: Vec<&str> = instances.iter().map(|(id, _)| id.as_str()).collect();
    let aligned = x.align_to(&g, &ids)?;
    let x = aligned.select(&features::feature_set_columns(&set, &aligned)?)?;
    let train: Vec<(usize, bool)> = instances
        .iter()
        .map(|(id, y)| (g.index_of(id).expect("labels validated against the graph"), *y))
        .collect();
    let model = models::train(kind, &g, &x, &train, &cfg)?;
    let prov = s.provenance("train", &[("seed", seed), ("sage_seed", cfg.sage.seed)]);
    let path = s.output("model.json");
    model.save(&path, Some(&prov))?;
    log::info!("train: {} on {} users with {} features", kind.as_str(), train.len(), x.cols());
    Ok(())
}

pub fn evaluate(s: &Settings) -> Result<()> {
    let (g, x) = graph_for_features(s)?;
    let labels = load_labels(s, &g)?;
    let task = Task::parse(&s.text("task", "hateful"))?;
    let seed = s.get("seed", 0)?;
    let mut cfg = ExperimentConfig::new(task, seed);
    cfg.models = list(&s.text("models", "sage,gbt,adaboost"))
        .iter()
        .map(|m| ModelKind::parse(m))
        .collect::<Result<_>>()?;
    cfg.feature_sets = list(&s.text("features", "user+vec,vec"));
    cfg.folds = s.get("folds", cfg.folds)?;
    cfg.threshold = s.get("threshold", cfg.threshold)?;
    cfg.model = model_config(s, seed)?;
    if cfg.models.is_empty() || cfg.feature_sets.is_empty() {
        return Err(Error::invalid("at least one model and one feature set are required"));
    }
    let report = eval::run_experiment(&g, &x, &labels, &cfg)?;
    let prov = s.provenance("evaluate", &[("seed", seed), ("sage_seed", cfg.model.sage.seed)]);
    let out = s.out_dir_or("evaluation");
    let path = out.join("report.csv");
    let mut w = create_artifact(&path, &prov)?;
    report.write_csv(&mut w)?;
    finish(w, &path)?;
    write_json_artifact(&out.join("report.json"), &prov, &report)
}
