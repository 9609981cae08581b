//! User profiles (`users.jsonl`) and label files (`labels.csv`, `suspended.csv`).

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::RetweetGraph;

pub const MAX_TWEETS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "TweetRepr", into = "TweetRepr")]
pub struct Tweet {
    pub text: String,
    pub created_at: Option<DateTime<Utc>>,
}

impl Tweet {
    pub fn new(text: impl Into<String>) -> Self {
        Tweet {
            text: text.into(),
            created_at: None,
        }
    }

    pub fn at(text: impl Into<String>, created_at: DateTime<Utc>) -> Self {
        Tweet {
            text: text.into(),
            created_at: Some(created_at),
        }
    }
}

/// A tweet is either a bare string or `{"text": ..., "created_at": ...}`.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum TweetRepr {
    Text(String),
    Timed {
        text: String,
        created_at: DateTime<Utc>,
    },
}

impl From<TweetRepr> for Tweet {
    fn from(r: TweetRepr) -> Self {
        match r {
            TweetRepr::Text(text) => Tweet::new(text),
            TweetRepr::Timed { text, created_at } => Tweet::at(text, created_at),
        }
    }
}

impl From<Tweet> for TweetRepr {
    fn from(t: Tweet) -> Self {
        match t.created_at {
            Some(created_at) => TweetRepr::Timed {
                text: t.text,
                created_at,
            },
            None => TweetRepr::Text(t.text),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub id: String,
    pub created_at: DateTime<Utc>,
    pub statuses_count: u64,
    pub followers_count: u64,
    #[serde(alias = "friends_count")]
    pub followees_count: u64,
    pub favorites_count: u64,
    #[serde(default)]
    pub tweets: Vec<Tweet>,
    /// Ban status per checkpoint date, when known.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub suspended: BTreeMap<String, bool>,
}

impl UserProfile {
    /// Keeps the most recent [`MAX_TWEETS`]. When every tweet carries a
    /// timestamp the newest are kept; otherwise the list is assumed to be
    /// newest-first and its head is kept.
    fn truncate_tweets(&mut self) -> bool {
        if self.tweets.len() <= MAX_TWEETS {
            return false;
        }
        if self.tweets.iter().all(|t| t.created_at.is_some()) {
            self.tweets.sort_by_key(|t| std::cmp::Reverse(t.created_at));
        }
        self.tweets.truncate(MAX_TWEETS);
        true
    }
}

#[derive(Debug, Clone, Default)]
pub struct ProfileStore {
    profiles: Vec<UserProfile>,
    index: HashMap<String, usize>,
}

impl ProfileStore {
    pub fn from_profiles(profiles: Vec<UserProfile>) -> Result<Self> {
        let mut index = HashMap::with_capacity(profiles.len());
        for (i, p) in profiles.iter().enumerate() {
            if index.insert(p.id.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate user id {:?}", p.id)));
            }
        }
        Ok(ProfileStore { profiles, index })
    }

    pub fn get(&self, id: &str) -> Option<&UserProfile> {
        self.index.get(id).map(|&i| &self.profiles[i])
    }

    pub fn len(&self) -> usize {
        self.profiles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.profiles.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &UserProfile> {
        self.profiles.iter()
    }

    /// Profile ids that are not nodes of `g`, in file order.
    pub fn absent_from<'a>(&'a self, g: &RetweetGraph) -> Vec<&'a str> {
        self.profiles
            .iter()
            .filter(|p| g.index_of(&p.id).is_none())
            .map(|p| p.id.as_str())
            .collect()
    }

    /// Profiles aligned to the dense node order of `g`.
    pub fn aligned<'a>(&'a self, g: &RetweetGraph) -> Vec<Option<&'a UserProfile>> {
        g.ids().iter().map(|id| self.get(id)).collect()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UsersReport {
    pub count: usize,
    pub truncated: Vec<String>,
}

pub fn ingest_users(path: impl AsRef<Path>) -> Result<(ProfileStore, UsersReport)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_users(BufReader::new(file), path)
}

pub fn read_users(reader: impl BufRead, path: &Path) -> Result<(ProfileStore, UsersReport)> {
    let mut profiles = Vec::new();
    let mut seen = HashMap::new();
    let mut report = UsersReport::default();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(trimmed)
            .map_err(|e| Error::parse(path, line_no, e.to_string()))?;
        let id = match value.get("id") {
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(serde_json::Value::Number(n)) => n.to_string(),
            _ => return Err(Error::parse(path, line_no, "missing required field `id`")),
        };
        let mut value = value;
        value["id"] = serde_json::Value::String(id.clone());
        let mut profile: UserProfile = serde_json::from_value(value)
            .map_err(|e| Error::parse(path, line_no, format!("user {id:?}: {e}")))?;
        if let Some(first) = seen.insert(id.clone(), line_no) {
            return Err(Error::parse(
                path,
                line_no,
                format!("duplicate user id {id:?} (first seen on line {first})"),
            ));
        }
        if profile.truncate_tweets() {
            log::warn!("user {id:?}: more than {MAX_TWEETS} tweets, truncated to most recent");
            report.truncated.push(id);
        }
        profiles.push(profile);
    }
    report.count = profiles.len();
    Ok((ProfileStore::from_profiles(profiles)?, report))
}

pub fn write_users(w: &mut impl Write, profiles: &[UserProfile]) -> Result<()> {
    for p in profiles {
        serde_json::to_writer(&mut *w, p)?;
        w.write_all(b"\n").map_err(|e| Error::io("users.jsonl", e))?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Hateful,
    Normal,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Hateful => "hateful",
            Label::Normal => "normal",
        }
    }

    pub fn parse(s: &str) -> Option<Label> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hateful" | "h" | "1" => Some(Label::Hateful),
            "normal" | "n" | "0" => Some(Label::Normal),
            _ => None,
        }
    }
}

/// Ground-truth annotations. Ids absent from `labels` are unlabeled.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelSet {
    pub labels: BTreeMap<String, Label>,
    /// Suspended ids; `None` when no suspension data was supplied, in which
    /// case nobody is known to be active either.
    pub suspended: Option<BTreeSet<String>>,
}

impl LabelSet {
    pub fn label(&self, id: &str) -> Option<Label> {
        self.labels.get(id).copied()
    }

    pub fn is_suspended(&self, id: &str) -> Option<bool> {
        self.suspended.as_ref().map(|s| s.contains(id))
    }

    pub fn validate(&self, g: &RetweetGraph) -> Result<()> {
        let missing: Vec<&str> = self
            .labels
            .keys()
            .chain(self.suspended.iter().flatten())
            .filter(|id| g.index_of(id).is_none())
            .map(String::as_str)
            .collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "{} labeled ids are not graph nodes: {}",
                missing.len(),
                preview(&missing)
            )))
        }
    }
}

pub(crate) fn preview(ids: &[&str]) -> String {
    let mut s = ids.iter().take(10).copied().collect::<Vec<_>>().join(", ");
    if ids.len() > 10 {
        s.push_str(", ...");
    }
    s
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file))
}

fn column(headers: &csv::StringRecord, name: &str, path: &Path) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::parse(path, 1, format!("missing column `{name}`")))
}

/// Reads `labels.csv` (`user_id,label`).
pub fn read_labels(path: impl AsRef<Path>) -> Result<BTreeMap<String, Label>> {
    let path = path.as_ref();
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers()?.clone();
    let (id_col, label_col) = (column(&headers, "user_id", path)?, column(&headers, "label", path)?);
    let mut out = BTreeMap::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(i + 2, |p| p.line() as usize);
        let id = rec.get(id_col).unwrap_or_default().to_owned();
        let raw = rec.get(label_col).unwrap_or_default();
        let label = Label::parse(raw)
            .ok_or_else(|| Error::parse(path, line, format!("unknown label {raw:?}")))?;
        if out.insert(id.clone(), label).is_some() {
            return Err(Error::parse(path, line, format!("duplicate user id {id:?}")));
        }
    }
    Ok(out)
}

/// Reads `suspended.csv` (`user_id,checkpoint`); returns id -> checkpoints.
pub fn read_suspended(path: impl AsRef<Path>) -> Result<BTreeMap<String, BTreeSet<String>>> {
    let path = path.as_ref();
    let mut rdr = csv_reader(path)?;
    let headers = rdr.headers()?.clone();
    let id_col = column(&headers, "user_id", path)?;
    let cp_col = column(&headers, "checkpoint", path)?;
    let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        out.entry(rec.get(id_col).unwrap_or_default().to_owned())
            .or_default()
            .insert(rec.get(cp_col).unwrap_or_default().to_owned());
    }
    Ok(out)
}

pub fn load_label_set(labels: &Path, suspended: Option<&Path>) -> Result<LabelSet> {
    Ok(LabelSet {
        labels: read_labels(labels)?,
        suspended: suspended
            .map(|p| read_suspended(p).map(|m| m.into_keys().collect()))
            .transpose()?,
    })
}

pub fn write_labels(w: &mut impl Write, labels: &BTreeMap<String, Label>) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["user_id", "label"])?;
    for (id, label) in labels {
        wtr.write_record([id.as_str(), label.as_str()])?;
    }
    wtr.flush().map_err(|e| Error::io("labels.csv", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fmt::Write as _;

    fn parse(text: &str) -> Result<(ProfileStore, UsersReport)> {
        read_users(text.as_bytes(), Path::new("users.jsonl"))
    }

    fn line(id: &str, tweets: usize) -> String {
        let tweets: Vec<String> = (0..tweets).map(|i| format!("\"t{i}\"")).collect();
        format!(
            "{{\"id\":\"{id}\",\"created_at\":\"2015-01-01T00:00:00Z\",\"statuses_count\":10,\
             \"followers_count\":3,\"followees_count\":4,\"favorites_count\":1,\"tweets\":[{}]}}\n",
            tweets.join(",")
        )
    }

    #[test]
    fn truncates_to_two_hundred_tweets() {
        let (store, report) = parse(&line("u1", 250)).unwrap();
        assert_eq!(store.get("u1").unwrap().tweets.len(), 200);
        assert_eq!(report.truncated, vec!["u1".to_owned()]);
        assert_eq!(store.get("u1").unwrap().tweets[0].text, "t0");
    }

    #[test]
    fn timed_tweets_keep_newest() {
        let mut text = String::from(
            "{\"id\":\"u\",\"created_at\":\"2015-01-01T00:00:00Z\",\"statuses_count\":1,\
             \"followers_count\":0,\"followees_count\":0,\"favorites_count\":0,\"tweets\":[",
        );
        for i in 0..201 {
            if i > 0 {
                text.push(',');
            }
            write!(
                text,
                "{{\"text\":\"t{i}\",\"created_at\":\"2017-01-01T00:{:02}:{:02}Z\"}}",
                i / 60,
                i % 60
            )
            .unwrap();
        }
        text.push_str("]}\n");
        let (store, _) = parse(&text).unwrap();
        let tweets = &store.get("u").unwrap().tweets;
        assert_eq!(tweets.len(), 200);
        assert_eq!(tweets[0].text, "t200");
        assert!(tweets.iter().all(|t| t.text != "t0"));
    }

    #[test]
    fn empty_tweets_are_valid() {
        let (store, _) = parse(&line("u1", 0)).unwrap();
        assert!(store.get("u1").unwrap().tweets.is_empty());
    }

    #[test]
    fn duplicate_id_is_named() {
        let text = format!("{}{}", line("dup", 1), line("dup", 2));
        let err = parse(&text).unwrap_err().to_string();
        assert!(err.contains("dup"), "{err}");
    }

    #[test]
    fn missing_field_error_names_user() {
        let text = "{\"id\":\"u7\",\"created_at\":\"2015-01-01T00:00:00Z\"}\n";
        let err = parse(text).unwrap_err().to_string();
        assert!(err.contains("u7"), "{err}");
        assert!(err.contains("statuses_count"), "{err}");
    }

    #[test]
    fn absent_ids_are_reported() {
        let (store, _) = parse(&format!("{}{}", line("a", 0), line("zz", 0))).unwrap();
        let mut b = crate::graph::GraphBuilder::new();
        b.edge("a", "b");
        let g = b.build();
        assert_eq!(store.absent_from(&g), vec!["zz"]);
    }

    #[test]
    fn profile_round_trips_through_json() {
        let (store, _) = parse(&line("u1", 3)).unwrap();
        let p = store.get("u1").unwrap().clone();
        let mut buf = Vec::new();
        write_users(&mut buf, std::slice::from_ref(&p)).unwrap();
        let (again, _) = read_users(buf.as_slice(), Path::new("x")).unwrap();
        assert_eq!(again.get("u1").unwrap(), &p);
    }

    #[test]
    fn label_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.csv");
        std::fs::write(&path, "# header\nuser_id,label\na,hateful\nb,normal\n").unwrap();
        let labels = read_labels(&path).unwrap();
        assert_eq!(labels["a"], Label::Hateful);
        assert_eq!(labels["b"], Label::Normal);

        std::fs::write(&path, "user_id,label\na,maybe\n").unwrap();
        assert!(read_labels(&path).is_err());

        let sus = dir.path().join("suspended.csv");
        std::fs::write(&sus, "user_id,checkpoint\na,2017-12-12\na,2018-01-14\n").unwrap();
        let m = read_suspended(&sus).unwrap();
        assert_eq!(m["a"].len(), 2);
    }
}
