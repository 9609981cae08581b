//! Lexical content metrics over a user's tweets.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::profile::UserProfile;
use crate::text;

pub type Categories = BTreeMap<String, BTreeSet<String>>;

/// Share of a user's tokens that fall in each category.
pub fn category_occurrence(profile: &UserProfile, categories: &Categories) -> BTreeMap<String, f64> {
    let mut total = 0usize;
    let mut hits = vec![0usize; categories.len()];
    for t in &profile.tweets {
        for tok in text::normalized_tokens(&t.text) {
            total += 1;
            for (h, words) in hits.iter_mut().zip(categories.values()) {
                if words.contains(&tok) {
                    *h += 1;
                }
            }
        }
    }
    categories
        .keys()
        .zip(hits)
        .map(|(name, h)| {
            let v = if total == 0 { 0.0 } else { h as f64 / total as f64 };
            (name.clone(), v)
        })
        .collect()
}

/// Mean per-tweet valence and bad words per tweet.
pub fn sentiment_and_profanity(
    profile: &UserProfile,
    valence: &HashMap<String, f64>,
    badwords: &HashSet<String>,
) -> (f64, f64) {
    if profile.tweets.is_empty() {
        return (0.0, 0.0);
    }
    let mut sentiment = 0.0;
    let mut bad = 0usize;
    for t in &profile.tweets {
        let (mut sum, mut k) = (0.0, 0usize);
        for tok in text::normalized_tokens(&t.text) {
            if let Some(v) = valence.get(&tok) {
                sum += v;
                k += 1;
            }
            if badwords.contains(&tok) {
                bad += 1;
            }
        }
        if k > 0 {
            sentiment += sum / k as f64;
        }
    }
    let n = profile.tweets.len() as f64;
    (sentiment / n, bad as f64 / n)
}

fn word_list(path: &Path) -> Result<BTreeSet<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .flat_map(text::normalized_tokens)
        .collect())
}

/// Every `<name>.txt` in `dir` becomes a category of one word per line.
pub fn load_categories(dir: impl AsRef<Path>) -> Result<Categories> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::MissingFile(dir.to_path_buf()));
    }
    let mut out = Categories::new();
    let mut entries: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "txt"))
        .collect();
    entries.sort();
    for path in entries {
        let name = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        out.insert(name, word_list(&path)?);
    }
    Ok(out)
}

pub fn load_badwords(path: impl AsRef<Path>) -> Result<HashSet<String>> {
    Ok(word_list(path.as_ref())?.into_iter().collect())
}

/// `token<TAB>score` with scores in [-1, 1].
pub fn load_valence(path: impl AsRef<Path>) -> Result<HashMap<String, f64>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (tok, score) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, i + 1, "expected token<TAB>score"))?;
        let score: f64 = score
            .trim()
            .parse()
            .map_err(|e| Error::parse(path, i + 1, format!("bad score: {e}")))?;
        if !(-1.0..=1.0).contains(&score) {
            return Err(Error::parse(path, i + 1, format!("score {score} outside [-1, 1]")));
        }
        out.insert(tok.trim().to_lowercase(), score);
    }
    Ok(out)
}

#[cfg(test)]
mod unit {
    use super::*;
    use crate::profile::Tweet;
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;

    fn user(tweets: &[&str]) -> UserProfile {
        UserProfile {
            id: "u".into(),
            created_at: Utc.with_ymd_and_hms(2015, 1, 1, 0, 0, 0).unwrap(),
            statuses_count: 0,
            followers_count: 0,
            followees_count: 0,
            favorites_count: 0,
            tweets: tweets.iter().map(|t| Tweet::new(*t)).collect(),
            suspended: Default::default(),
        }
    }

    fn cats(pairs: &[(&str, &[&str])]) -> Categories {
        pairs
            .iter()
            .map(|(n, ws)| (n.to_string(), ws.iter().map(|w| w.to_string()).collect()))
            .collect()
    }

    #[test]
    fn occurrence_examples() {
        let c = cats(&[("love", &["love"])]);
        let occ = category_occurrence(&user(&["love love war"]), &c);
        assert_eq!(occ["love"], 2.0 / 3.0);
        assert!(category_occurrence(&user(&["x"]), &Categories::new()).is_empty());
        let occ = category_occurrence(&user(&[]), &c);
        assert_eq!(occ["love"], 0.0);
    }

    #[test]
    fn sentiment_examples() {
        let valence: HashMap<String, f64> = [("good".to_owned(), 1.0), ("bad".to_owned(), -1.0)].into();
        let none = HashSet::new();
        assert_eq!(sentiment_and_profanity(&user(&["good good"]), &valence, &none).0, 1.0);
        assert_eq!(sentiment_and_profanity(&user(&["nothing here"]), &valence, &none).0, 0.0);
        // per-tweet means are averaged, tweets without matches count as 0
        let (s, _) = sentiment_and_profanity(&user(&["good bad good", "x"]), &valence, &none);
        assert!((s - 1.0 / 6.0).abs() < 1e-15);
        let bad: HashSet<String> = ["darn".to_owned(), "heck".to_owned()].into();
        let (_, p) = sentiment_and_profanity(&user(&["darn heck", "Darn it"]), &valence, &bad);
        assert_eq!(p, 1.5);
    }

    #[test]
    fn loaders() {
        let dir = tempfile::tempdir().unwrap();
        let cdir = dir.path().join("categories");
        fs::create_dir(&cdir).unwrap();
        fs::write(cdir.join("war.txt"), "War\nfight\n# comment\n").unwrap();
        fs::write(cdir.join("notes.md"), "ignored").unwrap();
        let c = load_categories(&cdir).unwrap();
        assert_eq!(c.keys().collect::<Vec<_>>(), vec!["war"]);
        assert!(c["war"].contains("war"));

        let v = dir.path().join("valence.tsv");
        fs::write(&v, "good\t0.5\nbad\t-0.75\n").unwrap();
        assert_eq!(load_valence(&v).unwrap()["bad"], -0.75);
        fs::write(&v, "good\t2\n").unwrap();
        assert!(matches!(load_valence(&v), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(load_categories(dir.path().join("nope")), Err(Error::MissingFile(_))));
    }

    proptest! {
        #[test]
        fn occurrence_in_unit_interval(
            tweets in prop::collection::vec("[a-d ]{0,12}", 0..5),
            words in prop::collection::btree_set("[a-d]", 0..4),
        ) {
            let c: Categories = [("c".to_owned(), words)].into();
            let refs: Vec<&str> = tweets.iter().map(String::as_str).collect();
            for v in category_occurrence(&user(&refs), &c).values() {
                prop_assert!((0.0..=1.0).contains(v));
            }
        }
    }
}
