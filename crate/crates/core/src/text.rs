//! Text normalization and tokenization.
//!
//! One tokenizer is used everywhere: lowercase, split on any
//! non-alphanumeric character (Unicode-aware), no stemming. An optional
//! stopword list (one term per line) can be attached; it is empty by
//! default.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lowercases and maps every non-alphanumeric run to a single space.
pub fn normalize(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut pending_space = false;
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            for lower in ch.to_lowercase() {
                out.push(lower);
            }
        } else {
            pending_space = true;
        }
    }
    out
}

/// Splits normalized text into tokens. No stopword filtering.
pub fn tokenize(text: &str) -> Vec<String> {
    normalize(text)
        .split(' ')
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Query-identity normalization: lowercase plus whitespace collapse.
/// Punctuation is kept, so this is intentionally weaker than [`normalize`].
pub fn normalize_query(query: &str) -> String {
    query
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Tokenizer with an optional stopword list.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    stopwords: BTreeSet<String>,
}

impl Tokenizer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_stopwords(stopwords: BTreeSet<String>) -> Self {
        Tokenizer { stopwords }
    }

    /// Loads a stopword list, one term per line. Terms are normalized so
    /// they match the token space.
    pub fn from_stopword_file(path: &Path) -> Result<Self> {
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let stopwords = content
            .lines()
            .map(normalize)
            .filter(|t| !t.is_empty())
            .collect();
        Ok(Tokenizer { stopwords })
    }

    pub fn stopwords(&self) -> &BTreeSet<String> {
        &self.stopwords
    }

    /// Tokenizes `text`, dropping stopwords.
    pub fn tokens(&self, text: &str) -> Vec<String> {
        tokenize(text)
            .into_iter()
            .filter(|t| !self.stopwords.contains(t))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalize_collapses_punctuation_runs() {
        assert_eq!(normalize("Bird--song!!  (2024)"), "bird song 2024");
    }

    #[test]
    fn tokenize_handles_unicode() {
        assert_eq!(tokenize("Chansons d'oiseaux"), vec!["chansons", "d", "oiseaux"]);
    }

    #[test]
    fn query_normalization_keeps_punctuation() {
        assert_eq!(normalize_query("  Bird   SONG? "), "bird song?");
    }

    #[test]
    fn stopwords_are_filtered() {
        let tok = Tokenizer::with_stopwords(["the".to_string()].into_iter().collect());
        assert_eq!(tok.tokens("The bird the song"), vec!["bird", "song"]);
    }

    #[test]
    fn empty_text_yields_no_tokens() {
        assert!(tokenize("").is_empty());
        assert!(tokenize(" !! ").is_empty());
    }
}
