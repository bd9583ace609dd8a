//! Mining terminology corrections from post-edits.
//!
//! A `(source, mt, pe)` triple becomes a preference example when the source
//! contains a dictionary term, both the MT and the post-edit contain some
//! variant of it, and the two sets of matched variants are disjoint. The
//! post-edit is always the preferred sequence.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dictionary::TermDictionary;
use crate::matching::{find_term_matches, resolve_containment, FuzzyMatch};
use crate::text::char_len;

#[derive(Debug, thiserror::Error)]
pub enum MiningError {
    #[error("match [{start}, {end}) lies outside a target of {len} characters")]
    SpanOutOfBounds { start: usize, end: usize, len: usize },
    #[error("segment {index}: {message}")]
    Segment { index: usize, message: String },
    #[error("threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
    #[error("not enough {pool} examples: required {required}, available {available}")]
    InsufficientPool {
        pool: &'static str,
        required: usize,
        available: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentTriple {
    pub source: String,
    pub mt: String,
    pub pe: String,
}

impl SegmentTriple {
    pub fn new(source: impl Into<String>, mt: impl Into<String>, pe: impl Into<String>) -> Self {
        Self {
            source: source.into(),
            mt: mt.into(),
            pe: pe.into(),
        }
    }

    pub fn is_valid(&self) -> bool {
        !self.source.trim().is_empty() && !self.mt.trim().is_empty() && !self.pe.trim().is_empty()
    }
}

/// Character spans of tokens.
pub trait Tokenizer {
    fn spans(&self, text: &str) -> Vec<(usize, usize)>;
}

/// Maximal runs of non-whitespace characters.
#[derive(Debug, Clone, Copy, Default)]
pub struct WhitespaceTokenizer;

impl Tokenizer for WhitespaceTokenizer {
    fn spans(&self, text: &str) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let mut open = None;
        let mut idx = 0;
        for (i, c) in text.chars().enumerate() {
            match (c.is_whitespace(), open) {
                (false, None) => open = Some(i),
                (true, Some(s)) => {
                    out.push((s, i));
                    open = None;
                }
                _ => {}
            }
            idx = i + 1;
        }
        if let Some(s) = open {
            out.push((s, idx));
        }
        out
    }
}

/// One token per character.
#[derive(Debug, Clone, Copy, Default)]
pub struct CharTokenizer;

impl Tokenizer for CharTokenizer {
    fn spans(&self, text: &str) -> Vec<(usize, usize)> {
        (0..char_len(text)).map(|i| (i, i + 1)).collect()
    }
}

/// A training unit: the post-edit `y_w` is preferred over the MT `y_l`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PreferenceExample {
    pub x: String,
    pub y_w: String,
    pub y_l: String,
    /// Empty for non-term examples.
    #[serde(default)]
    pub source_term: String,
    #[serde(default)]
    pub w_variants: Vec<String>,
    #[serde(default)]
    pub l_variants: Vec<String>,
    #[serde(default)]
    pub delta_w: Vec<usize>,
    #[serde(default)]
    pub delta_l: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub w_matches: Vec<FuzzyMatch>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub l_matches: Vec<FuzzyMatch>,
}

impl PreferenceExample {
    /// A segment without terminology; carries no matches or masks.
    pub fn non_term(triple: &SegmentTriple) -> Self {
        Self {
            x: triple.source.clone(),
            y_w: triple.pe.clone(),
            y_l: triple.mt.clone(),
            source_term: String::new(),
            w_variants: Vec::new(),
            l_variants: Vec::new(),
            delta_w: Vec::new(),
            delta_l: Vec::new(),
            w_matches: Vec::new(),
            l_matches: Vec::new(),
        }
    }

    pub fn is_term(&self) -> bool {
        !self.source_term.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Rejection {
    NoSourceTerm,
    MissingMtTerm,
    MissingPeTerm,
    SameTerm,
}

impl Rejection {
    pub fn as_str(self) -> &'static str {
        match self {
            Rejection::NoSourceTerm => "no-source-term",
            Rejection::MissingMtTerm => "missing-mt-term",
            Rejection::MissingPeTerm => "missing-pe-term",
            Rejection::SameTerm => "same-term",
        }
    }
}

impl std::fmt::Display for Rejection {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Every token whose character span overlaps a match.
pub fn build_masks(
    target: &str,
    matches: &[FuzzyMatch],
    tokenizer: &dyn Tokenizer,
) -> Result<Vec<usize>, MiningError> {
    let len = char_len(target);
    for m in matches {
        if m.start >= m.end || m.end > len {
            return Err(MiningError::SpanOutOfBounds {
                start: m.start,
                end: m.end,
                len,
            });
        }
    }
    let mask: BTreeSet<usize> = tokenizer
        .spans(target)
        .into_iter()
        .enumerate()
        .filter(|(_, (s, e))| matches.iter().any(|m| m.overlaps(*s, *e)))
        .map(|(i, _)| i)
        .collect();
    Ok(mask.into_iter().collect())
}

/// The dictionary term found in `source`: highest score, then leftmost, then
/// longest span, then alphabetical. Nested source matches are resolved first.
pub fn detect_source_term(source: &str, dict: &TermDictionary, threshold: f64) -> Option<FuzzyMatch> {
    let mut hits = Vec::new();
    for term in dict.terms() {
        if let Ok(found) = find_term_matches(source, &[term], threshold) {
            hits.extend(found);
        }
    }
    resolve_containment(&hits).into_iter().min_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.start.cmp(&b.start))
            .then(b.len().cmp(&a.len()))
            .then_with(|| a.variant.cmp(&b.variant))
    })
}

fn variant_names(matches: &[FuzzyMatch]) -> Vec<String> {
    let names: BTreeSet<&str> = matches.iter().map(|m| m.variant.as_str()).collect();
    names.into_iter().map(str::to_string).collect()
}

/// Applies the acceptance rules to one triple.
///
/// `threshold` must lie in `(0, 1]`; [`mine_corpus`] checks it.
pub fn mine_example(
    triple: &SegmentTriple,
    dict: &TermDictionary,
    threshold: f64,
    tokenizer: &dyn Tokenizer,
) -> Result<PreferenceExample, Rejection> {
    let term = detect_source_term(&triple.source, dict, threshold).ok_or(Rejection::NoSourceTerm)?;
    let variants = dict.get(&term.variant).ok_or(Rejection::NoSourceTerm)?;
    let find = |text: &str| {
        find_term_matches(text, variants, threshold)
            .map(|m| resolve_containment(&m))
            .unwrap_or_default()
    };

    let l_matches = find(&triple.mt);
    if l_matches.is_empty() {
        return Err(Rejection::MissingMtTerm);
    }
    let w_matches = find(&triple.pe);
    if w_matches.is_empty() {
        return Err(Rejection::MissingPeTerm);
    }
    let w_variants = variant_names(&w_matches);
    let l_variants = variant_names(&l_matches);
    if w_variants.iter().any(|v| l_variants.contains(v)) {
        return Err(Rejection::SameTerm);
    }

    let delta_w = build_masks(&triple.pe, &w_matches, tokenizer).unwrap_or_default();
    let delta_l = build_masks(&triple.mt, &l_matches, tokenizer).unwrap_or_default();
    if delta_l.is_empty() {
        return Err(Rejection::MissingMtTerm);
    }
    if delta_w.is_empty() {
        return Err(Rejection::MissingPeTerm);
    }

    Ok(PreferenceExample {
        x: triple.source.clone(),
        y_w: triple.pe.clone(),
        y_l: triple.mt.clone(),
        source_term: term.variant,
        w_variants,
        l_variants,
        delta_w,
        delta_l,
        w_matches,
        l_matches,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct MiningReport {
    pub total: usize,
    pub accepted: usize,
    pub no_source_term: usize,
    pub missing_mt_term: usize,
    pub missing_pe_term: usize,
    pub same_term: usize,
}

impl MiningReport {
    fn record(&mut self, outcome: Result<(), Rejection>) {
        self.total += 1;
        match outcome {
            Ok(()) => self.accepted += 1,
            Err(Rejection::NoSourceTerm) => self.no_source_term += 1,
            Err(Rejection::MissingMtTerm) => self.missing_mt_term += 1,
            Err(Rejection::MissingPeTerm) => self.missing_pe_term += 1,
            Err(Rejection::SameTerm) => self.same_term += 1,
        }
    }

    pub fn rejected(&self) -> usize {
        self.total - self.accepted
    }
}

#[derive(Debug, Clone, Default)]
pub struct MinedCorpus {
    pub examples: Vec<PreferenceExample>,
    /// Input index of each accepted example.
    pub accepted_ids: Vec<usize>,
    /// Segments without any source term, usable as the non-term pool.
    pub non_term: Vec<SegmentTriple>,
    pub report: MiningReport,
}

/// Runs [`mine_example`] over a stream of triples, in input order.
pub fn mine_corpus<I, E>(
    triples: I,
    dict: &TermDictionary,
    threshold: f64,
    tokenizer: &dyn Tokenizer,
) -> Result<MinedCorpus, MiningError>
where
    I: IntoIterator<Item = Result<SegmentTriple, E>>,
    E: std::fmt::Display,
{
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(MiningError::InvalidThreshold(threshold));
    }
    let mut out = MinedCorpus::default();
    for (index, triple) in triples.into_iter().enumerate() {
        let triple = triple.map_err(|e| MiningError::Segment {
            index,
            message: e.to_string(),
        })?;
        if !triple.is_valid() {
            return Err(MiningError::Segment {
                index,
                message: "source, mt and pe must all be non-empty".into(),
            });
        }
        match mine_example(&triple, dict, threshold, tokenizer) {
            Ok(example) => {
                out.report.record(Ok(()));
                out.examples.push(example);
                out.accepted_ids.push(index);
            }
            Err(reason) => {
                out.report.record(Err(reason));
                if reason == Rejection::NoSourceTerm {
                    out.non_term.push(triple);
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExampleKind {
    Term,
    NonTerm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitExample {
    /// Index into the pool the example was drawn from.
    pub id: usize,
    pub kind: ExampleKind,
    #[serde(flatten)]
    pub example: PreferenceExample,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<SplitExample>,
    pub validation: Vec<SplitExample>,
    pub test: Vec<SplitExample>,
}

impl DatasetSplit {
    pub fn term_examples(part: &[SplitExample]) -> Vec<&PreferenceExample> {
        part.iter()
            .filter(|e| e.kind == ExampleKind::Term)
            .map(|e| &e.example)
            .collect()
    }
}

/// Balanced validation/test sets and a term-only training set.
///
/// Validation and test take `ceil(size / 2)` term and `floor(size / 2)`
/// non-term examples; the rest of the term pool is training data.
pub fn split_dataset(
    term: &[PreferenceExample],
    non_term: &[PreferenceExample],
    val_size: usize,
    test_size: usize,
    seed: u64,
) -> Result<DatasetSplit, MiningError> {
    let (val_term, val_non) = (val_size - val_size / 2, val_size / 2);
    let (test_term, test_non) = (test_size - test_size / 2, test_size / 2);
    if term.len() < val_term + test_term {
        return Err(MiningError::InsufficientPool {
            pool: "term",
            required: val_term + test_term,
            available: term.len(),
        });
    }
    if non_term.len() < val_non + test_non {
        return Err(MiningError::InsufficientPool {
            pool: "non-term",
            required: val_non + test_non,
            available: non_term.len(),
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut term_ids: Vec<usize> = (0..term.len()).collect();
    term_ids.shuffle(&mut rng);
    let mut non_ids: Vec<usize> = (0..non_term.len()).collect();
    non_ids.shuffle(&mut rng);

    let take = |ids: &[usize], pool: &[PreferenceExample], kind| {
        let mut picked: Vec<SplitExample> = ids
            .iter()
            .map(|&id| SplitExample {
                id,
                kind,
                example: pool[id].clone(),
            })
            .collect();
        picked.sort_by_key(|e| e.id);
        picked
    };

    let mut validation = take(&term_ids[..val_term], term, ExampleKind::Term);
    validation.extend(take(&non_ids[..val_non], non_term, ExampleKind::NonTerm));
    let mut test = take(&term_ids[val_term..val_term + test_term], term, ExampleKind::Term);
    test.extend(take(&non_ids[val_non..val_non + test_non], non_term, ExampleKind::NonTerm));
    let train = take(&term_ids[val_term + test_term..], term, ExampleKind::Term);

    Ok(DatasetSplit {
        train,
        validation,
        test,
    })
}

/// Fraction of distinct test source terms that also occur in training data.
pub fn term_coverage<'a>(
    train: impl IntoIterator<Item = &'a PreferenceExample>,
    test: impl IntoIterator<Item = &'a PreferenceExample>,
) -> Option<f64> {
    let seen: HashSet<&str> = train
        .into_iter()
        .filter(|e| e.is_term())
        .map(|e| e.source_term.as_str())
        .collect();
    let wanted: BTreeSet<&str> = test
        .into_iter()
        .filter(|e| e.is_term())
        .map(|e| e.source_term.as_str())
        .collect();
    if wanted.is_empty() {
        return None;
    }
    let hit = wanted.iter().filter(|t| seen.contains(*t)).count();
    Some(hit as f64 / wanted.len() as f64)
}

/// Rejection reasons as a map, for reports.
pub fn rejection_counts(report: &MiningReport) -> BTreeMap<Rejection, usize> {
    BTreeMap::from([
        (Rejection::NoSourceTerm, report.no_source_term),
        (Rejection::MissingMtTerm, report.missing_mt_term),
        (Rejection::MissingPeTerm, report.missing_pe_term),
        (Rejection::SameTerm, report.same_term),
    ])
}
