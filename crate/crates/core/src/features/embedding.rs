//! Pretrained word-vector table and per-user averaged text vectors.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::error::{Error, Result};
use crate::profile::UserProfile;
use crate::text;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct WordVectors {
    dim: usize,
    index: HashMap<String, usize>,
    data: Vec<f64>,
}

impl WordVectors {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Vec<f64>)>) -> Result<Self> {
        let mut wv = WordVectors::default();
        for (i, (word, v)) in pairs.into_iter().enumerate() {
            wv.push(word, &v).map_err(|m| Error::invalid(format!("vector {}: {m}", i + 1)))?;
        }
        Ok(wv)
    }

    fn push(&mut self, word: String, v: &[f64]) -> std::result::Result<(), String> {
        if v.is_empty() {
            return Err(format!("word {word:?} has no components"));
        }
        if self.index.is_empty() {
            self.dim = v.len();
        } else if v.len() != self.dim {
            return Err(format!(
                "word {word:?} has {} components, expected {}",
                v.len(),
                self.dim
            ));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(format!("word {word:?} has a non-finite component"));
        }
        if self.index.contains_key(&word) {
            log::warn!("duplicate word vector {word:?}, keeping the first");
            return Ok(());
        }
        self.index.insert(word, self.index.len());
        self.data.extend_from_slice(v);
        Ok(())
    }

    /// Text format: `word v1 ... vd` per line.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(file), path)
    }

    pub fn read(reader: impl BufRead, path: &Path) -> Result<Self> {
        let mut wv = WordVectors::default();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split_whitespace();
            let word = parts.next().unwrap_or_default().to_owned();
            let values: std::result::Result<Vec<f64>, _> = parts.map(str::parse::<f64>).collect();
            let values = values.map_err(|e| Error::parse(path, i + 1, format!("bad number: {e}")))?;
            wv.push(word, &values).map_err(|m| Error::parse(path, i + 1, m))?;
        }
        if wv.is_empty() {
            return Err(Error::parse(path, 0, "word-vector table is empty"));
        }
        Ok(wv)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn lookup(&self, word: &str) -> Option<&[f64]> {
        self.index
            .get(word)
            .map(|&i| &self.data[i * self.dim..(i + 1) * self.dim])
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Mean vector of the known tokens of one tweet, or `None`.
    pub fn tweet_vector(&self, tweet: &str) -> Option<Vec<f64>> {
        let mut ids: Vec<usize> = text::normalized_tokens(tweet)
            .iter()
            .filter_map(|t| self.index.get(t).copied())
            .collect();
        if ids.is_empty() {
            return None;
        }
        // fixed summation order makes the mean independent of token order
        ids.sort_unstable();
        let mut acc = vec![0.0; self.dim];
        for &i in &ids {
            acc.iter_mut().zip(self.row(i)).for_each(|(a, x)| *a += x);
        }
        let k = ids.len() as f64;
        acc.iter_mut().for_each(|a| *a /= k);
        Some(acc)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserEmbedding {
    pub vector: Vec<f64>,
    /// No tweet had a known token; `vector` is zero.
    pub no_known_words: bool,
}

/// Mean over tweets of the per-tweet mean of known-token vectors. Tweets
/// without known tokens are skipped.
pub fn embed_user(profile: &UserProfile, vectors: &WordVectors) -> UserEmbedding {
    let mut per_tweet: Vec<Vec<f64>> = profile
        .tweets
        .iter()
        .filter_map(|t| vectors.tweet_vector(&t.text))
        .collect();
    if per_tweet.is_empty() {
        return UserEmbedding {
            vector: vec![0.0; vectors.dim()],
            no_known_words: true,
        };
    }
    per_tweet.sort_by(|a, b| {
        a.iter()
            .zip(b)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut acc = vec![0.0; vectors.dim()];
    for v in &per_tweet {
        acc.iter_mut().zip(v).for_each(|(a, x)| *a += x);
    }
    let k = per_tweet.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    UserEmbedding {
        vector: acc,
        no_known_words: false,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::Tweet;
    use chrono::{TimeZone, Utc};
    use proptest::prelude::*;

    fn table() -> WordVectors {
        WordVectors::read(
            "cat 1 0 0\ndog 0 2 0\nfish 0 0 4\nbird 1 1 1\n".as_bytes(),
            Path::new("v.txt"),
        )
        .unwrap()
    }

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

    #[test]
    fn one_known_word_is_its_vector() {
        let e = embed_user(&user(&["the Cat!"]), &table());
        assert_eq!(e.vector, vec![1.0, 0.0, 0.0]);
        assert!(!e.no_known_words);
    }

    #[test]
    fn no_tweets_is_zero_and_flagged() {
        let e = embed_user(&user(&[]), &table());
        assert_eq!(e.vector, vec![0.0; 3]);
        assert!(e.no_known_words);
        let e = embed_user(&user(&["unknown words only"]), &table());
        assert!(e.no_known_words);
    }

    #[test]
    fn user_vector_is_mean_of_tweet_means() {
        let wv = table();
        let m1 = wv.tweet_vector("cat dog").unwrap();
        let m2 = wv.tweet_vector("fish").unwrap();
        let e = embed_user(&user(&["cat dog", "fish", "nothing known"]), &wv);
        let expected: Vec<f64> = m1.iter().zip(&m2).map(|(a, b)| (a + b) / 2.0).collect();
        assert_eq!(e.vector, expected);
        assert_eq!(m1, vec![0.5, 1.0, 0.0]);
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let err = WordVectors::read("a 1 2\nb 1 x\n".as_bytes(), Path::new("v")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
        let err = WordVectors::read("a 1 2\nb 1\n".as_bytes(), Path::new("v")).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err:?}");
        assert!(WordVectors::read("".as_bytes(), Path::new("v")).is_err());
    }

    proptest! {
        #[test]
        fn permutation_invariant(
            tweets in prop::collection::vec(
                prop::collection::vec(prop::sample::select(vec!["cat", "dog", "fish", "bird", "zzz"]), 0..6),
                0..6,
            ),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let texts: Vec<String> = tweets.iter().map(|t| t.join(" ")).collect();
            let mut shuffled: Vec<String> = tweets
                .iter()
                .map(|t| {
                    let mut t = t.clone();
                    t.shuffle(&mut rng);
                    t.join(" ")
                })
                .collect();
            shuffled.shuffle(&mut rng);
            let wv = table();
            let a = embed_user(&user(&texts.iter().map(String::as_str).collect::<Vec<_>>()), &wv);
            let b = embed_user(&user(&shuffled.iter().map(String::as_str).collect::<Vec<_>>()), &wv);
            prop_assert_eq!(a, b);
        }
    }
}
