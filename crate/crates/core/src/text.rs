//! Tweet tokenization shared by lexicon matching, embeddings and lexical stats.
//!
//! Normalization: whitespace split, URL tokens dropped, lowercase, every
//! non-alphanumeric character replaced by a space, whitespace split again.

pub fn is_url(token: &str) -> bool {
    let lower = token.chars().take(8).collect::<String>().to_ascii_lowercase();
    lower.starts_with("http://") || lower.starts_with("https://")
}

/// `#` followed by at least one alphanumeric character.
pub fn is_hashtag(token: &str) -> bool {
    token
        .strip_prefix('#')
        .and_then(|rest| rest.chars().next())
        .is_some_and(char::is_alphanumeric)
}

pub fn raw_tokens(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace()
}

pub fn normalized_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for raw in text.split_whitespace() {
        if is_url(raw) {
            continue;
        }
        let cleaned: String = raw
            .to_lowercase()
            .chars()
            .map(|c| if c.is_alphanumeric() { c } else { ' ' })
            .collect();
        out.extend(cleaned.split_whitespace().map(str::to_owned));
    }
    out
}

/// True when `needle` occurs as a contiguous run of whole tokens.
pub fn contains_phrase(tokens: &[String], needle: &[String]) -> bool {
    if needle.is_empty() || needle.len() > tokens.len() {
        return false;
    }
    tokens.windows(needle.len()).any(|w| w == needle)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization_strips_urls_and_punctuation() {
        let toks = normalized_tokens("The WHITE-genocide myth https://t.co/x, ok!");
        assert_eq!(toks, vec!["the", "white", "genocide", "myth", "ok"]);
    }

    #[test]
    fn hashtags_need_an_alphanumeric() {
        assert!(is_hashtag("#1"));
        assert!(is_hashtag("#go"));
        assert!(!is_hashtag("#"));
        assert!(!is_hashtag("##"));
        assert!(!is_hashtag("go#"));
    }

    #[test]
    fn url_prefix_is_case_insensitive() {
        assert!(is_url("HTTP://x.y"));
        assert!(is_url("https://a"));
        assert!(!is_url("http:/a"));
        assert!(!is_url("ftp://a"));
    }

    #[test]
    fn phrase_matching_respects_token_boundaries() {
        let toks = normalized_tokens("skypeserver is down");
        assert!(!contains_phrase(&toks, &["skypes".to_owned()]));
        let toks = normalized_tokens("the white genocide myth");
        assert!(contains_phrase(
            &toks,
            &["white".to_owned(), "genocide".to_owned()]
        ));
    }
}
