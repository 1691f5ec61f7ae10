//! Regex-based answer extraction.

use std::collections::BTreeSet;

use promptgrad_core::metrics::normalize_label;
use promptgrad_core::tasks::{LabelExtractor, LastLineExtractor};
use regex::Regex;

use crate::error::{Error, Result};

/// Uses the first capture group of the last match (or the whole match when
/// there is no group), matched case-insensitively against the vocabulary.
/// Falls back to last-line extraction when the pattern does not match.
#[derive(Clone, Debug)]
pub struct RegexExtractor {
    pattern: Regex,
}

impl RegexExtractor {
    pub fn new(pattern: &str) -> Result<Self> {
        Regex::new(pattern)
            .map(|pattern| Self { pattern })
            .map_err(|e| Error::Config(format!("extraction regex: {e}")))
    }
}

impl LabelExtractor for RegexExtractor {
    fn extract(&self, output: &str, vocabulary: &BTreeSet<String>) -> String {
        let Some(caps) = self.pattern.captures_iter(output).last() else {
            return LastLineExtractor.extract(output, vocabulary);
        };
        let found = caps
            .get(1)
            .or_else(|| caps.get(0))
            .map(|m| m.as_str().trim())
            .unwrap_or("");
        let key = normalize_label(found);
        vocabulary
            .iter()
            .find(|v| normalize_label(v) == key)
            .cloned()
            .unwrap_or_else(|| found.to_string())
    }
}
