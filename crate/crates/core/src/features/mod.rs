//! Per-user features: activity rates, spam indicators, network centrality
//! and averaged word vectors.

pub mod centrality;
pub mod embedding;

pub use centrality::{betweenness, betweenness_sampled, eigenvector_centrality, EigenvectorCentrality};
pub use embedding::{embed_user, UserEmbedding, WordVectors};

use std::fs::File;
use std::io::Write;
use std::path::Path;

use chrono::{DateTime, Utc};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::RetweetGraph;
use crate::profile::{preview, ProfileStore, UserProfile};
use crate::text;

/// Activity and network columns, the `user` feature group.
pub const USER_COLUMNS: [&str; 12] = [
    "statuses_per_day",
    "followers_per_day",
    "followees_per_day",
    "favorites_count",
    "avg_tweet_interval_s",
    "urls_per_tweet",
    "hashtags_per_tweet",
    "followers_per_followee",
    "betweenness",
    "eigenvector",
    "in_degree",
    "out_degree",
];

pub const FLAG_COLUMNS: [&str; 3] = [
    "flag_no_profile",
    "flag_no_known_words",
    "flag_interval_insufficient",
];

pub const VECTOR_PREFIX: &str = "vec_";

/// Node count up to which betweenness is exact unless told otherwise.
pub const EXACT_BETWEENNESS_LIMIT: usize = 50_000;
pub const DEFAULT_BC_SOURCES: usize = 1_000;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ActivityFeatures {
    pub statuses_per_day: f64,
    pub followers_per_day: f64,
    pub followees_per_day: f64,
    pub favorites_count: f64,
    pub avg_tweet_interval_s: f64,
    pub account_age_days: f64,
    /// Fewer than two timestamped tweets.
    pub interval_insufficient: bool,
}

pub fn activity_features(profile: &UserProfile, reference: DateTime<Utc>) -> Result<ActivityFeatures> {
    if profile.created_at >= reference {
        return Err(Error::invalid(format!(
            "user {:?} created at {} which is not before the reference date {}",
            profile.id, profile.created_at, reference
        )));
    }
    let age_days = ((reference - profile.created_at).num_seconds() as f64 / 86_400.0).floor();
    let divisor = age_days.max(1.0);

    let mut stamps: Vec<DateTime<Utc>> = profile.tweets.iter().filter_map(|t| t.created_at).collect();
    stamps.sort_unstable();
    let (interval, insufficient) = if stamps.len() < 2 {
        (0.0, true)
    } else {
        let span = (stamps[stamps.len() - 1] - stamps[0]).num_milliseconds() as f64 / 1000.0;
        (span / (stamps.len() - 1) as f64, false)
    };

    Ok(ActivityFeatures {
        statuses_per_day: profile.statuses_count as f64 / divisor,
        followers_per_day: profile.followers_count as f64 / divisor,
        followees_per_day: profile.followees_count as f64 / divisor,
        favorites_count: profile.favorites_count as f64,
        avg_tweet_interval_s: interval,
        account_age_days: divisor,
        interval_insufficient: insufficient,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SpamFeatures {
    pub urls_per_tweet: f64,
    pub hashtags_per_tweet: f64,
    pub followers_per_followee: f64,
}

pub fn spam_features(profile: &UserProfile) -> SpamFeatures {
    let (mut urls, mut tags) = (0usize, 0usize);
    for t in &profile.tweets {
        for tok in text::raw_tokens(&t.text) {
            if text::is_url(tok) {
                urls += 1;
            } else if text::is_hashtag(tok) {
                tags += 1;
            }
        }
    }
    let n = profile.tweets.len();
    let per = |c: usize| if n == 0 { 0.0 } else { c as f64 / n as f64 };
    SpamFeatures {
        urls_per_tweet: per(urls),
        hashtags_per_tweet: per(tags),
        followers_per_followee: profile.followers_count as f64 / profile.followees_count.max(1) as f64,
    }
}

/// Dense row-major feature table; rows follow the id order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub ids: Vec<String>,
    pub columns: Vec<String>,
    pub data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.ids.len()
    }

    pub fn cols(&self) -> usize {
        self.columns.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.cols();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let j = self.column_index(name)?;
        Some((0..self.rows()).map(|i| self.row(i)[j]).collect())
    }

    /// Keeps `names` in the given order.
    pub fn select(&self, names: &[String]) -> Result<FeatureMatrix> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.column_index(n)
                    .ok_or_else(|| Error::invalid(format!("feature column {n:?} not present")))
            })
            .collect::<Result<_>>()?;
        let mut data = Vec::with_capacity(self.rows() * idx.len());
        for i in 0..self.rows() {
            let r = self.row(i);
            data.extend(idx.iter().map(|&j| r[j]));
        }
        Ok(FeatureMatrix {
            ids: self.ids.clone(),
            columns: names.to_vec(),
            data,
        })
    }

    pub fn vector_columns(&self) -> Vec<String> {
        self.columns
            .iter()
            .filter(|c| c.starts_with(VECTOR_PREFIX))
            .cloned()
            .collect()
    }

    /// Rows reordered to the dense node order of `g`. Nodes without a row
    /// get zeros; `required` ids must have one.
    pub fn align_to(&self, g: &RetweetGraph, required: &[&str]) -> Result<FeatureMatrix> {
        let pos: std::collections::HashMap<&str, usize> =
            self.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let missing: Vec<&str> = required.iter().copied().filter(|id| !pos.contains_key(id)).collect();
        if !missing.is_empty() {
            return Err(Error::invalid(format!(
                "missing features for {} selected users: {}",
                missing.len(),
                preview(&missing)
            )));
        }
        let d = self.cols();
        let mut data = vec![0.0; g.node_count() * d];
        for (u, id) in g.ids().iter().enumerate() {
            if let Some(&i) = pos.get(id.as_str()) {
                data[u * d..(u + 1) * d].copy_from_slice(self.row(i));
            }
        }
        Ok(FeatureMatrix {
            ids: g.ids().to_vec(),
            columns: self.columns.clone(),
            data,
        })
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["user_id".to_owned()];
        header.extend(self.columns.iter().cloned());
        wtr.write_record(&header)?;
        let mut rec: Vec<String> = Vec::with_capacity(self.cols() + 1);
        for i in 0..self.rows() {
            rec.clear();
            rec.push(self.ids[i].clone());
            rec.extend(self.row(i).iter().map(|x| x.to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush().map_err(|e| Error::io("features.csv", e))?;
        Ok(())
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<FeatureMatrix> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file);
        let headers = rdr.headers()?.clone();
        if headers.get(0) != Some("user_id") {
            return Err(Error::parse(path, 1, "first column must be `user_id`"));
        }
        let columns: Vec<String> = headers.iter().skip(1).map(str::to_owned).collect();
        let mut ids = Vec::new();
        let mut data = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line() as usize);
            ids.push(rec.get(0).unwrap_or_default().to_owned());
            for field in rec.iter().skip(1) {
                data.push(
                    field
                        .parse::<f64>()
                        .map_err(|e| Error::parse(path, line, format!("bad number {field:?}: {e}")))?,
                );
            }
        }
        Ok(FeatureMatrix { ids, columns, data })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CentralityOptions {
    /// Sampled betweenness sources; `None` picks exact for graphs up to
    /// [`EXACT_BETWEENNESS_LIMIT`] nodes and [`DEFAULT_BC_SOURCES`] beyond.
    pub bc_sources: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureReport {
    pub missing_profiles: usize,
    pub no_known_words: usize,
    pub eigen: EigenvectorCentrality,
    pub bc_sources: usize,
}

/// Builds the full feature table (user columns, vector columns, flags) in
/// node order.
pub fn extract_features(
    g: &RetweetGraph,
    profiles: &ProfileStore,
    vectors: &WordVectors,
    reference: DateTime<Utc>,
    opts: CentralityOptions,
) -> Result<(FeatureMatrix, FeatureReport)> {
    let n = g.node_count();
    let bc_sources = match opts.bc_sources {
        Some(k) => k.min(n),
        None if n <= EXACT_BETWEENNESS_LIMIT => n,
        None => DEFAULT_BC_SOURCES,
    };
    let bc = betweenness_sampled(g, bc_sources, opts.seed);
    let eigen = eigenvector_centrality(g, centrality::EIGEN_TOL, centrality::EIGEN_MAX_ITER);
    if !eigen.converged {
        log::warn!("eigenvector centrality did not converge in {} iterations", eigen.iterations);
    }

    let aligned = profiles.aligned(g);
    let dim = vectors.dim();
    let rows: Vec<(Vec<f64>, [bool; 3])> = (0..n)
        .into_par_iter()
        .map(|u| {
            let mut row = Vec::with_capacity(USER_COLUMNS.len() + dim);
            let mut flags = [false; 3];
            match aligned[u] {
                Some(p) => {
                    let a = activity_features(p, reference)?;
                    let s = spam_features(p);
                    row.extend([
                        a.statuses_per_day,
                        a.followers_per_day,
                        a.followees_per_day,
                        a.favorites_count,
                        a.avg_tweet_interval_s,
                        s.urls_per_tweet,
                        s.hashtags_per_tweet,
                        s.followers_per_followee,
                    ]);
                    flags[2] = a.interval_insufficient;
                }
                None => {
                    row.extend([0.0; 8]);
                    flags[0] = true;
                }
            }
            row.extend([
                bc[u],
                eigen.scores[u],
                g.in_degree(u) as f64,
                g.out_degree(u) as f64,
            ]);
            match aligned[u] {
                Some(p) => {
                    let e = embed_user(p, vectors);
                    flags[1] = e.no_known_words;
                    row.extend(e.vector);
                }
                None => {
                    flags[1] = true;
                    row.extend(std::iter::repeat_n(0.0, dim));
                }
            }
            Ok((row, flags))
        })
        .collect::<Result<_>>()?;

    let mut columns: Vec<String> = USER_COLUMNS.iter().map(|s| s.to_string()).collect();
    columns.extend((0..dim).map(|i| format!("{VECTOR_PREFIX}{i}")));
    columns.extend(FLAG_COLUMNS.iter().map(|s| s.to_string()));
    let mut data = Vec::with_capacity(n * columns.len());
    let (mut missing, mut unknown) = (0, 0);
    for (row, flags) in rows {
        data.extend(row);
        data.extend(flags.iter().map(|&f| f64::from(u8::from(f))));
        missing += usize::from(flags[0]);
        unknown += usize::from(flags[1]);
    }
    Ok((
        FeatureMatrix {
            ids: g.ids().to_vec(),
            columns,
            data,
        },
        FeatureReport {
            missing_profiles: missing,
            no_known_words: unknown,
            eigen,
            bc_sources,
        },
    ))
}

/// Column names of a named feature set: `user+vec` or `vec`.
pub fn feature_set_columns(set: &str, matrix: &FeatureMatrix) -> Result<Vec<String>> {
    let vecs = matrix.vector_columns();
    match set {
        "vec" | "glove" => Ok(vecs),
        "user+vec" | "user+glove" => {
            let mut cols: Vec<String> = USER_COLUMNS.iter().map(|s| s.to_string()).collect();
            cols.extend(vecs);
            Ok(cols)
        }
        "user" => Ok(USER_COLUMNS.iter().map(|s| s.to_string()).collect()),
        other => Err(Error::invalid(format!(
            "unknown feature set {other:?} (expected user+vec, vec or user)"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphBuilder;
    use crate::profile::Tweet;
    use chrono::{Duration, TimeZone};

    fn reference() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2017, 10, 7, 0, 0, 0).unwrap()
    }

    fn profile(age: Duration, statuses: u64) -> UserProfile {
        UserProfile {
            id: "u".into(),
            created_at: reference() - age,
            statuses_count: statuses,
            followers_count: 7,
            followees_count: 0,
            favorites_count: 3,
            tweets: Vec::new(),
            suspended: Default::default(),
        }
    }

    #[test]
    fn per_day_rates() {
        let a = activity_features(&profile(Duration::days(100), 200), reference()).unwrap();
        assert_eq!(a.statuses_per_day, 2.0);
        assert_eq!(a.favorites_count, 3.0);
        let young = activity_features(&profile(Duration::hours(9), 5), reference()).unwrap();
        assert_eq!(young.account_age_days, 1.0);
        assert_eq!(young.statuses_per_day, 5.0);
    }

    #[test]
    fn creation_after_reference_is_an_error() {
        assert!(activity_features(&profile(Duration::days(-1), 1), reference()).is_err());
        assert!(activity_features(&profile(Duration::zero(), 1), reference()).is_err());
    }

    #[test]
    fn tweet_intervals() {
        let mut p = profile(Duration::days(10), 1);
        p.tweets = vec![Tweet::at("x", reference() - Duration::hours(1))];
        let a = activity_features(&p, reference()).unwrap();
        assert_eq!(a.avg_tweet_interval_s, 0.0);
        assert!(a.interval_insufficient);

        p.tweets = vec![
            Tweet::at("a", reference() - Duration::seconds(10)),
            Tweet::at("b", reference() - Duration::seconds(100)),
            Tweet::at("c", reference() - Duration::seconds(40)),
        ];
        let a = activity_features(&p, reference()).unwrap();
        assert_eq!(a.avg_tweet_interval_s, 45.0);
        assert!(!a.interval_insufficient);
    }

    #[test]
    fn spam_counts() {
        let mut p = profile(Duration::days(10), 1);
        p.tweets = vec![Tweet::new("#1 #go http://x.y")];
        let s = spam_features(&p);
        assert_eq!(s.hashtags_per_tweet, 2.0);
        assert_eq!(s.urls_per_tweet, 1.0);
        assert_eq!(s.followers_per_followee, 7.0);

        p.tweets = (0..10)
            .map(|i| Tweet::new(if i % 2 == 0 { "see https://a.b" } else { "no link" }))
            .collect();
        assert_eq!(spam_features(&p).urls_per_tweet, 0.5);
    }

    #[test]
    fn features_csv_round_trip_and_alignment() {
        let mut b = GraphBuilder::new();
        b.edge("a", "b");
        b.node("c");
        let g = b.build();
        let mut pa = profile(Duration::days(10), 20);
        pa.id = "a".into();
        pa.tweets = vec![Tweet::new("cat")];
        let store = ProfileStore::from_profiles(vec![pa]).unwrap();
        let wv = WordVectors::from_pairs([("cat".to_owned(), vec![0.5, -1.0])]).unwrap();
        let opts = CentralityOptions { bc_sources: None, seed: 0 };
        let (m, report) = extract_features(&g, &store, &wv, reference(), opts).unwrap();
        assert_eq!(report.missing_profiles, 2);
        assert_eq!(m.cols(), USER_COLUMNS.len() + 2 + FLAG_COLUMNS.len());
        assert_eq!(m.column("statuses_per_day").unwrap(), vec![2.0, 0.0, 0.0]);
        assert_eq!(m.column("vec_1").unwrap(), vec![-1.0, 0.0, 0.0]);
        assert_eq!(m.column("flag_no_profile").unwrap(), vec![0.0, 1.0, 1.0]);
        assert_eq!(m.column("out_degree").unwrap(), vec![1.0, 0.0, 0.0]);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("features.csv");
        let mut f = File::create(&path).unwrap();
        f.write_all(b"# provenance\n").unwrap();
        m.write_csv(&mut f).unwrap();
        drop(f);
        let back = FeatureMatrix::read_csv(&path).unwrap();
        assert_eq!(back, m);

        let cols = feature_set_columns("vec", &back).unwrap();
        assert_eq!(cols, vec!["vec_0", "vec_1"]);
        assert_eq!(feature_set_columns("user+vec", &back).unwrap().len(), 14);
        assert!(feature_set_columns("bogus", &back).is_err());

        let mut b2 = GraphBuilder::new();
        b2.edge("c", "a");
        b2.node("zz");
        let g2 = b2.build();
        let al = back.align_to(&g2, &["a"]).unwrap();
        assert_eq!(al.ids, vec!["c", "a", "zz"]);
        assert_eq!(al.column("statuses_per_day").unwrap(), vec![0.0, 2.0, 0.0]);
        let err = back.align_to(&g2, &["zz"]).unwrap_err().to_string();
        assert!(err.contains("zz"), "{err}");
    }

    #[test]
    fn missing_features_file() {
        let err = FeatureMatrix::read_csv("/nonexistent/features.csv").unwrap_err();
        assert!(matches!(err, Error::MissingFile(_)));
    }
}
