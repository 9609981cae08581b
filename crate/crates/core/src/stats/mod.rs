//! Characterization battery: group comparisons, content metrics and edge
//! mixing between user types.

pub mod content;
pub mod hypothesis;

pub use content::{category_occurrence, sentiment_and_profanity, Categories};
pub use hypothesis::{ks2, mean, median, variance, welch_t, KsResult, WelchResult};

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::io::Write;

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::graph::RetweetGraph;
use crate::profile::{Label, LabelSet, ProfileStore};

const Z95: f64 = 1.959_963_984_540_054;

/// Columns computed from the graph alone, defined even without a profile.
pub const NETWORK_COLUMNS: [&str; 4] = ["betweenness", "eigenvector", "in_degree", "out_degree"];

#[derive(Debug, Clone, PartialEq)]
pub struct MixingTable {
    pub types: Vec<String>,
    pub node_counts: Vec<usize>,
    pub total_nodes: usize,
    pub out_edges: Vec<usize>,
    /// `edges[s][d]`: edges from type `s` to type `d`.
    pub edges: Vec<Vec<usize>>,
}

impl MixingTable {
    /// P(dest type | source type); `None` for a source type without out-edges.
    pub fn probability(&self, s: usize, d: usize) -> Option<f64> {
        (self.out_edges[s] > 0).then(|| self.edges[s][d] as f64 / self.out_edges[s] as f64)
    }

    pub fn prevalence(&self, d: usize) -> f64 {
        self.node_counts[d] as f64 / self.total_nodes as f64
    }

    pub fn likelihood_ratio(&self, s: usize, d: usize) -> Option<f64> {
        self.probability(s, d).map(|p| p / self.prevalence(d))
    }

    pub fn type_index(&self, name: &str) -> Option<usize> {
        self.types.iter().position(|t| t == name)
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record([
            "source_type",
            "dest_type",
            "edges",
            "source_out_edges",
            "probability",
            "dest_prevalence",
            "likelihood_ratio",
        ])?;
        let fmt = |x: Option<f64>| x.map_or_else(|| "undefined".to_owned(), |v| format!("{v:.6}"));
        for s in 0..self.types.len() {
            for d in 0..self.types.len() {
                wtr.write_record([
                    self.types[s].clone(),
                    self.types[d].clone(),
                    self.edges[s][d].to_string(),
                    self.out_edges[s].to_string(),
                    fmt(self.probability(s, d)),
                    format!("{:.6}", self.prevalence(d)),
                    fmt(self.likelihood_ratio(s, d)),
                ])?;
            }
        }
        wtr.flush().map_err(|e| Error::io("mixing.csv", e))?;
        Ok(())
    }
}

/// Edge mixing between node types. Nodes absent from `types` are untyped:
/// their edges count toward the source's out-edges but no destination type.
pub fn mixing_table(g: &RetweetGraph, types: &BTreeMap<String, String>) -> Result<MixingTable> {
    let names: Vec<String> = types.values().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    if names.len() < 2 {
        return Err(Error::invalid(format!(
            "mixing table needs at least 2 node types, got {}",
            names.len()
        )));
    }
    let k = names.len();
    let mut of = vec![None; g.node_count()];
    let mut node_counts = vec![0; k];
    for (id, t) in types {
        let u = g
            .index_of(id)
            .ok_or_else(|| Error::invalid(format!("typed id {id:?} is not a graph node")))?;
        let ti = names.binary_search(t).expect("type collected above");
        of[u] = Some(ti);
        node_counts[ti] += 1;
    }
    let mut out_edges = vec![0; k];
    let mut edges = vec![vec![0; k]; k];
    for (u, v) in g.edges() {
        if let Some(s) = of[u] {
            out_edges[s] += 1;
            if let Some(d) = of[v] {
                edges[s][d] += 1;
            }
        }
    }
    for (s, &n) in out_edges.iter().enumerate() {
        if n == 0 {
            log::warn!("node type {:?} has no out-edges; its row is undefined", names[s]);
        }
    }
    Ok(MixingTable {
        types: names,
        node_counts,
        total_nodes: g.node_count(),
        out_edges,
        edges,
    })
}

/// Type maps for the annotated and the suspension views.
pub fn label_types(labels: &LabelSet) -> BTreeMap<String, String> {
    labels
        .labels
        .iter()
        .map(|(id, l)| (id.clone(), l.as_str().to_owned()))
        .collect()
}

pub fn suspension_types(g: &RetweetGraph, labels: &LabelSet) -> Option<BTreeMap<String, String>> {
    let sus = labels.suspended.as_ref()?;
    Some(
        g.ids()
            .iter()
            .map(|id| {
                let t = if sus.contains(id) { "suspended" } else { "active" };
                (id.clone(), t.to_owned())
            })
            .collect(),
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Group {
    pub name: String,
    pub members: Vec<String>,
}

/// Labeled groups plus their 1-neighborhoods (undirected, minus labeled
/// users), and suspended/active when suspension data exists.
pub fn standard_groups(g: &RetweetGraph, labels: &LabelSet) -> Vec<(Group, Group)> {
    let of = |l: Label| -> Vec<String> {
        labels
            .labels
            .iter()
            .filter(|(_, &x)| x == l)
            .map(|(id, _)| id.clone())
            .collect()
    };
    let hateful = of(Label::Hateful);
    let normal = of(Label::Normal);
    let neighbors = |ids: &[String]| -> Vec<String> {
        let mut out = BTreeSet::new();
        for id in ids {
            if let Some(u) = g.index_of(id) {
                for v in g.undirected_neighbors(u) {
                    let vid = g.id(v as usize);
                    if !labels.labels.contains_key(vid) {
                        out.insert(vid.to_owned());
                    }
                }
            }
        }
        out.into_iter().collect()
    };
    let mut pairs = vec![
        (
            Group { name: "hateful_neighbors".into(), members: neighbors(&hateful) },
            Group { name: "normal_neighbors".into(), members: neighbors(&normal) },
        ),
    ];
    pairs.insert(
        0,
        (
            Group { name: "hateful".into(), members: hateful },
            Group { name: "normal".into(), members: normal },
        ),
    );
    if let Some(types) = suspension_types(g, labels) {
        let pick = |t: &str| types.iter().filter(|(_, x)| *x == t).map(|(id, _)| id.clone()).collect();
        pairs.push((
            Group { name: "suspended".into(), members: pick("suspended") },
            Group { name: "active".into(), members: pick("active") },
        ));
    }
    pairs
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Normal-approximation 95% half-width.
    pub ci95: f64,
    pub median: f64,
}

pub fn summarize(x: &[f64]) -> Summary {
    if x.is_empty() {
        return Summary { n: 0, mean: f64::NAN, ci95: 0.0, median: f64::NAN };
    }
    Summary {
        n: x.len(),
        mean: mean(x),
        ci95: Z95 * (variance(x) / x.len() as f64).sqrt(),
        median: median(x),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricComparison {
    pub metric: String,
    pub a: Summary,
    pub b: Summary,
    /// `None` when either group has fewer than two values.
    pub welch: Option<WelchResult>,
    pub ks: Option<KsResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupComparison {
    pub group_a: String,
    pub group_b: String,
    pub metrics: Vec<MetricComparison>,
}

/// Values of one metric for the members of a group. Non-finite entries
/// mark missing data and are dropped.
pub fn group_values(matrix: &FeatureMatrix, rows: &HashMap<&str, usize>, j: usize, group: &Group) -> Vec<f64> {
    group
        .members
        .iter()
        .filter_map(|id| rows.get(id.as_str()))
        .map(|&i| matrix.row(i)[j])
        .filter(|v| v.is_finite())
        .collect()
}

pub fn compare(metric: &str, a: &[f64], b: &[f64]) -> Result<MetricComparison> {
    let tested = a.len() >= 2 && b.len() >= 2;
    Ok(MetricComparison {
        metric: metric.to_owned(),
        a: summarize(a),
        b: summarize(b),
        welch: if tested { Some(welch_t(a, b)?) } else { None },
        ks: if tested { Some(ks2(a, b)?) } else { None },
    })
}

pub fn group_report(
    matrix: &FeatureMatrix,
    pairs: &[(Group, Group)],
    metrics: &[String],
) -> Result<Vec<GroupComparison>> {
    let rows: HashMap<&str, usize> = matrix.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let cols: Vec<usize> = metrics
        .iter()
        .map(|m| {
            matrix
                .column_index(m)
                .ok_or_else(|| Error::invalid(format!("unknown metric {m:?}")))
        })
        .collect::<Result<_>>()?;
    pairs
        .iter()
        .map(|(ga, gb)| {
            let metrics = metrics
                .iter()
                .zip(&cols)
                .map(|(m, &j)| {
                    compare(m, &group_values(matrix, &rows, j, ga), &group_values(matrix, &rows, j, gb))
                })
                .collect::<Result<_>>()?;
            Ok(GroupComparison {
                group_a: ga.name.clone(),
                group_b: gb.name.clone(),
                metrics,
            })
        })
        .collect()
}

pub fn write_group_report(w: impl Write, report: &[GroupComparison]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record([
        "group_a", "group_b", "metric", "n_a", "mean_a", "ci95_a", "median_a", "n_b", "mean_b",
        "ci95_b", "median_b", "welch_t", "welch_df", "welch_p", "ks_d", "ks_p", "flag",
    ])?;
    let f = |x: f64| format!("{x:.6e}");
    for gc in report {
        for m in &gc.metrics {
            let (t, df, p, flag) = match m.welch {
                Some(w) => (f(w.t), f(w.df), f(w.p), if w.degenerate { "zero_variance" } else { "" }),
                None => ("".into(), "".into(), "".into(), "insufficient_data"),
            };
            let (d, kp) = m.ks.map_or(("".into(), "".into()), |k| (f(k.d), f(k.p)));
            wtr.write_record([
                gc.group_a.clone(),
                gc.group_b.clone(),
                m.metric.clone(),
                m.a.n.to_string(),
                f(m.a.mean),
                f(m.a.ci95),
                f(m.a.median),
                m.b.n.to_string(),
                f(m.b.mean),
                f(m.b.ci95),
                f(m.b.median),
                t,
                df,
                p,
                d,
                kp,
                flag.to_owned(),
            ])?;
        }
    }
    wtr.flush().map_err(|e| Error::io("report.csv", e))?;
    Ok(())
}

/// Raw per-user values of one metric, `group,user_id,value`.
pub fn write_plotdata(w: impl Write, matrix: &FeatureMatrix, metric: &str, groups: &[&Group]) -> Result<()> {
    let j = matrix
        .column_index(metric)
        .ok_or_else(|| Error::invalid(format!("unknown metric {metric:?}")))?;
    let rows: HashMap<&str, usize> = matrix.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["group", "user_id", "value"])?;
    for g in groups {
        for id in &g.members {
            if let Some(&i) = rows.get(id.as_str()) {
                let v = matrix.row(i)[j];
                if v.is_finite() {
                    wtr.write_record([g.name.as_str(), id.as_str(), &v.to_string()])?;
                }
            }
        }
    }
    wtr.flush().map_err(|e| Error::io("plotdata", e))?;
    Ok(())
}

/// Creation date, sentiment, profanity and category columns per node, NaN
/// for nodes without a profile.
pub fn content_metrics(
    g: &RetweetGraph,
    profiles: &ProfileStore,
    categories: &Categories,
    valence: &HashMap<String, f64>,
    badwords: &HashSet<String>,
) -> FeatureMatrix {
    let mut columns = vec![
        "created_at_days".to_owned(),
        "sentiment".to_owned(),
        "badwords_per_tweet".to_owned(),
    ];
    columns.extend(categories.keys().map(|k| format!("cat_{k}")));
    let width = columns.len();
    let mut data = Vec::with_capacity(g.node_count() * width);
    for p in profiles.aligned(g) {
        match p {
            Some(p) => {
                let (s, b) = sentiment_and_profanity(p, valence, badwords);
                data.push(p.created_at.timestamp() as f64 / 86_400.0);
                data.push(s);
                data.push(b);
                data.extend(category_occurrence(p, categories).into_values());
            }
            None => data.extend(std::iter::repeat_n(f64::NAN, width)),
        }
    }
    FeatureMatrix {
        ids: g.ids().to_vec(),
        columns,
        data,
    }
}
