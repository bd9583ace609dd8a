//! One-to-many terminology dictionaries.
//!
//! A [`TermDictionary`] maps a case-folded source term to the ordered list of
//! target variants that are all valid translations of it. Two on-disk formats
//! are accepted:
//!
//! ```text
//! transfer<TAB>Übergabe|Übertragung|Weiterleitung
//! ```
//!
//! or, for files ending in `.json`, an object `{ "transfer": ["Übergabe", ...] }`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::text::case_fold;

#[derive(Debug, thiserror::Error)]
pub enum DictError {
    #[error("cannot read dictionary {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `source<TAB>variant|variant|...`")]
    Parse { line: usize },
    #[error("invalid JSON dictionary: {0}")]
    Json(#[from] serde_json::Error),
    #[error("line {line}: {reason}")]
    Validation { line: usize, reason: String },
    #[error("dictionary is empty")]
    Empty,
    #[error("term `{0}` is not in the dictionary")]
    UnknownTerm(String),
    #[error("`{variant}` is not a variant of `{term}`")]
    UnknownVariant { term: String, variant: String },
    #[error("no examples given")]
    NoExamples,
}

/// Source term → valid target variants. Immutable once built.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TermDictionary {
    entries: BTreeMap<String, Vec<String>>,
}

impl TermDictionary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `variants` to `source`, merging with any existing entry.
    ///
    /// Variants are deduplicated by case-folded comparison; the first spelling
    /// seen is the one kept for display.
    pub fn insert<I, S>(&mut self, source: &str, variants: I) -> Result<(), String>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let key = case_fold(source.trim());
        if key.is_empty() {
            return Err("empty source term".into());
        }
        if key.contains(['\t', '\n', '\r']) {
            return Err(format!("source term `{source}` contains a tab or newline"));
        }
        let incoming: Vec<String> = variants
            .into_iter()
            .map(|v| v.as_ref().trim().to_string())
            .collect();
        for v in &incoming {
            if v.is_empty() {
                return Err(format!("empty variant for `{key}`"));
            }
            if v.contains(['|', '\t', '\n', '\r']) {
                return Err(format!("variant `{v}` contains a separator character"));
            }
        }
        if incoming.is_empty() && !self.entries.contains_key(&key) {
            return Err(format!("`{key}` has no variants"));
        }
        let slot = self.entries.entry(key).or_default();
        for v in incoming {
            let folded = case_fold(&v);
            if !slot.iter().any(|have| case_fold(have) == folded) {
                slot.push(v);
            }
        }
        Ok(())
    }

    /// Explicit absence: `None` for unknown terms, never an empty slice.
    pub fn get(&self, term: &str) -> Option<&[String]> {
        self.entries.get(&case_fold(term)).map(Vec::as_slice)
    }

    pub fn contains(&self, term: &str) -> bool {
        self.entries.contains_key(&case_fold(term))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in case-folded source order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn terms(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    /// Parses the tab-separated format. Blank lines and `#` comments are skipped.
    pub fn parse_tsv(input: &str) -> Result<Self, DictError> {
        let mut dict = Self::new();
        for (idx, raw) in input.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let (source, rest) = line.split_once('\t').ok_or(DictError::Parse { line: line_no })?;
            dict.insert(source, rest.split('|'))
                .map_err(|reason| DictError::Validation { line: line_no, reason })?;
        }
        Ok(dict)
    }

    pub fn parse_json(input: &str) -> Result<Self, DictError> {
        let raw: BTreeMap<String, Vec<String>> = serde_json::from_str(input)?;
        let mut dict = Self::new();
        for (source, variants) in raw {
            dict.insert(&source, &variants)
                .map_err(|reason| DictError::Validation { line: 0, reason })?;
        }
        Ok(dict)
    }

    /// Writes the tab-separated format; `parse_tsv(to_tsv(d)) == d`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (source, variants) in &self.entries {
            let _ = writeln!(out, "{source}\t{}", variants.join("|"));
        }
        out
    }
}

/// Loads a dictionary file, choosing the JSON parser for `.json` files.
pub fn load_dictionary(path: impl AsRef<Path>) -> Result<TermDictionary, DictError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DictError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let is_json = path
        .extension()
        .is_some_and(|ext| ext.eq_ignore_ascii_case("json"));
    if is_json {
        TermDictionary::parse_json(&text)
    } else {
        TermDictionary::parse_tsv(&text)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DictStats {
    pub term_count: usize,
    pub mean_variants: f64,
    /// Population standard deviation.
    pub std_variants: f64,
    pub max_variants: usize,
    /// variant count → number of source terms with that many variants
    pub histogram: BTreeMap<usize, usize>,
}

pub fn dictionary_stats(dict: &TermDictionary) -> Result<DictStats, DictError> {
    if dict.is_empty() {
        return Err(DictError::Empty);
    }
    let mut histogram = BTreeMap::new();
    for (_, variants) in dict.iter() {
        *histogram.entry(variants.len()).or_insert(0usize) += 1;
    }
    let n = dict.len() as f64;
    let total: usize = histogram.iter().map(|(k, c)| k * c).sum();
    let mean = total as f64 / n;
    let var = histogram
        .iter()
        .map(|(&k, &c)| c as f64 * (k as f64 - mean).powi(2))
        .sum::<f64>()
        / n;
    Ok(DictStats {
        term_count: dict.len(),
        mean_variants: mean,
        std_variants: var.sqrt(),
        max_variants: histogram.keys().copied().max().unwrap_or(0),
        histogram,
    })
}

/// Expected accuracy of picking a variant uniformly at random for every
/// `(source_term, expected_variant)` example.
pub fn random_baseline_accuracy<S, T>(examples: &[(S, T)], dict: &TermDictionary) -> Result<f64, DictError>
where
    S: AsRef<str>,
    T: AsRef<str>,
{
    if examples.is_empty() {
        return Err(DictError::NoExamples);
    }
    let mut sum = 0.0;
    for (term, expected) in examples {
        let (term, expected) = (term.as_ref(), expected.as_ref());
        let variants = dict
            .get(term)
            .ok_or_else(|| DictError::UnknownTerm(term.to_string()))?;
        let folded = case_fold(expected);
        if !variants.iter().any(|v| case_fold(v) == folded) {
            return Err(DictError::UnknownVariant {
                term: term.to_string(),
                variant: expected.to_string(),
            });
        }
        sum += 1.0 / variants.len() as f64;
    }
    Ok(sum / examples.len() as f64)
}
