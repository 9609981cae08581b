//! CSV round-trip for human annotation: export selected users with their
//! tweets, import annotator votes and resolve them by majority.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::profile::{Label, ProfileStore};

pub const MIN_ANNOTATORS: usize = 3;
const TWEET_SEPARATOR: &str = " || ";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Vote {
    Hateful,
    Normal,
}

impl Vote {
    fn parse(s: &str) -> Option<Vote> {
        Label::parse(s).map(|l| match l {
            Label::Hateful => Vote::Hateful,
            Label::Normal => Vote::Normal,
        })
    }
}

/// Writes `user_id,tweets,annotator_1..k,label` with empty vote columns.
pub fn export_annotation_batch<'a>(
    w: impl Write,
    selected: impl IntoIterator<Item = &'a str>,
    profiles: &ProfileStore,
    annotators: usize,
) -> Result<usize> {
    let mut wtr = csv::Writer::from_writer(w);
    let mut header = vec!["user_id".to_owned(), "tweets".to_owned()];
    header.extend((1..=annotators).map(|i| format!("annotator_{i}")));
    header.push("label".to_owned());
    wtr.write_record(&header)?;
    let mut rows = 0;
    for id in selected {
        let tweets = profiles
            .get(id)
            .map(|p| {
                p.tweets
                    .iter()
                    .map(|t| t.text.replace(['\n', '\r'], " "))
                    .collect::<Vec<_>>()
                    .join(TWEET_SEPARATOR)
            })
            .unwrap_or_default();
        let mut rec = vec![id.to_owned(), tweets];
        rec.extend(std::iter::repeat_n(String::new(), annotators + 1));
        wtr.write_record(&rec)?;
        rows += 1;
    }
    wtr.flush().map_err(|e| Error::io("annotation batch", e))?;
    Ok(rows)
}

/// Raw votes per user, in file order.
pub fn read_annotations(path: impl AsRef<Path>) -> Result<Vec<(String, Vec<Vote>)>> {
    let path = path.as_ref();
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::parse(path, 0, format!("{other:?}")),
        })?;
    let headers = rdr.headers()?.clone();
    let id_col = headers
        .iter()
        .position(|h| h == "user_id")
        .ok_or_else(|| Error::parse(path, 1, "missing column `user_id`"))?;
    let vote_cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("annotator_"))
        .map(|(i, _)| i)
        .collect();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let id = rec.get(id_col).unwrap_or_default().to_owned();
        let mut votes = Vec::new();
        for &c in &vote_cols {
            let raw = rec.get(c).unwrap_or_default();
            if raw.is_empty() {
                continue;
            }
            votes.push(Vote::parse(raw).ok_or_else(|| {
                Error::parse(path, line, format!("user {id:?}: unknown vote {raw:?}"))
            })?);
        }
        out.push((id, votes));
    }
    Ok(out)
}

pub fn majority(id: &str, votes: &[Vote]) -> Result<Label> {
    if votes.len() < MIN_ANNOTATORS {
        return Err(Error::invalid(format!(
            "user {id:?}: {} votes, minimum {MIN_ANNOTATORS} annotators",
            votes.len()
        )));
    }
    let hateful = votes.iter().filter(|&&v| v == Vote::Hateful).count();
    let normal = votes.len() - hateful;
    match hateful.cmp(&normal) {
        std::cmp::Ordering::Greater => Ok(Label::Hateful),
        std::cmp::Ordering::Less => Ok(Label::Normal),
        std::cmp::Ordering::Equal => Err(Error::invalid(format!(
            "user {id:?}: tied vote {hateful}-{normal}"
        ))),
    }
}

/// Majority-vote labels; every id must satisfy `known`.
pub fn import_annotations(
    path: impl AsRef<Path>,
    known: impl Fn(&str) -> bool,
) -> Result<BTreeMap<String, Label>> {
    let mut out = BTreeMap::new();
    for (id, votes) in read_annotations(path)? {
        if !known(&id) {
            return Err(Error::invalid(format!("unknown user id {id:?} in annotations")));
        }
        let label = majority(&id, &votes)?;
        if out.insert(id.clone(), label).is_some() {
            return Err(Error::invalid(format!("user {id:?} annotated twice")));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::{Tweet, UserProfile};
    use chrono::{TimeZone, Utc};
    use Vote::{Hateful as H, Normal as N};

    #[test]
    fn majority_rule() {
        assert_eq!(majority("a", &[H, H, N]).unwrap(), Label::Hateful);
        assert_eq!(majority("a", &[N, N, N]).unwrap(), Label::Normal);
        assert_eq!(majority("a", &[H, N, N, H, H]).unwrap(), Label::Hateful);
        let err = majority("a", &[H, N]).unwrap_err().to_string();
        assert!(err.contains("minimum 3 annotators"), "{err}");
        assert!(majority("a", &[H, N, H, N]).is_err());
    }

    #[test]
    fn export_then_import() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("batch.csv");
        let store = ProfileStore::from_profiles(vec![UserProfile {
            id: "u1".into(),
            created_at: Utc.with_ymd_and_hms(2015, 1, 1, 0, 0, 0).unwrap(),
            statuses_count: 1,
            followers_count: 1,
            followees_count: 1,
            favorites_count: 1,
            tweets: vec![Tweet::new("hello, world"), Tweet::new("second\nline")],
            suspended: Default::default(),
        }])
        .unwrap();
        let file = std::fs::File::create(&path).unwrap();
        export_annotation_batch(file, ["u1", "u2"], &store, 3).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("user_id,tweets,annotator_1,annotator_2,annotator_3,label\n"));
        assert!(text.contains("hello, world || second line"));

        // fill in votes the way an annotator would
        let filled = text
            .replace("line\",,,,", "line\",H,N,hateful,")
            .replace("u2,,,,,", "u2,,n,N,normal,");
        std::fs::write(&path, filled).unwrap();
        let labels = import_annotations(&path, |id| id.starts_with('u')).unwrap();
        assert_eq!(labels["u1"], Label::Hateful);
        assert_eq!(labels["u2"], Label::Normal);
        // u2 only has two votes
        std::fs::write(
            &path,
            "user_id,tweets,annotator_1,annotator_2,annotator_3,label\nu2,,N,N,,\n",
        )
        .unwrap();
        assert!(import_annotations(&path, |_| true).is_err());
    }

    #[test]
    fn unknown_user_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        std::fs::write(&path, "user_id,annotator_1,annotator_2,annotator_3\nghost,H,H,H\n").unwrap();
        let err = import_annotations(&path, |_| false).unwrap_err().to_string();
        assert!(err.contains("ghost"), "{err}");
    }
}
