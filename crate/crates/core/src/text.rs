//! Query and document tokenization.

use std::collections::HashSet;
use std::sync::OnceLock;

const STOPWORDS_FILE: &str = include_str!("../data/stopwords.txt");

pub fn stopwords() -> &'static HashSet<&'static str> {
    static WORDS: OnceLock<HashSet<&'static str>> = OnceLock::new();
    WORDS.get_or_init(|| {
        STOPWORDS_FILE
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

/// Lowercases, splits on non-alphanumerics, drops tokens shorter than two
/// characters and stop words, then strips one trailing `s` from tokens of
/// four or more characters.
pub fn tokenize(text: &str) -> Vec<String> {
    let lowered = text.to_lowercase();
    let stop = stopwords();
    lowered
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2 && !stop.contains(t))
        .map(|t| {
            if t.chars().count() >= 4 && t.ends_with('s') {
                t[..t.len() - 1].to_string()
            } else {
                t.to_string()
            }
        })
        .collect()
}
