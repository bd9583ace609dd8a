//! Fuzzy term matching.
//!
//! Similarity between two strings is `1 - d / (|a| + |b|)` where `d` is the
//! indel distance (Levenshtein with substitution cost 2). A partial alignment
//! finds the substring of a longer text that is most similar to a term; term
//! search runs that alignment for every dictionary variant on case-folded
//! text and keeps variants scoring at least the threshold.
//!
//! All offsets are character (Unicode scalar value) indices.

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::text::folded_chars;

/// Default acceptance threshold for fuzzy term matches.
pub const DEFAULT_THRESHOLD: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MatchError {
    #[error("needle must not be empty")]
    EmptyNeedle,
    #[error("cannot align against an empty text")]
    EmptyText,
    #[error("threshold must lie in (0, 1], got {0}")]
    InvalidThreshold(f64),
}

/// A variant aligned to the span `[start, end)` of some text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FuzzyMatch {
    pub start: usize,
    pub end: usize,
    pub variant: String,
    pub score: f64,
}

impl FuzzyMatch {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    /// `other` lies wholly inside `self` (identical spans count).
    pub fn contains(&self, other: &FuzzyMatch) -> bool {
        self.start <= other.start && other.end <= self.end
    }

    pub fn overlaps(&self, start: usize, end: usize) -> bool {
        self.start < end && start < self.end
    }
}

pub(crate) fn lcs_len(a: &[char], b: &[char]) -> usize {
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut row = vec![0usize; short.len() + 1];
    for &c in long {
        let mut diag = 0;
        for j in 1..=short.len() {
            let up = row[j];
            row[j] = if short[j - 1] == c {
                diag + 1
            } else {
                up.max(row[j - 1])
            };
            diag = up;
        }
    }
    row[short.len()]
}

fn similarity(distance: usize, total: usize) -> f64 {
    if total == 0 {
        1.0
    } else {
        1.0 - distance as f64 / total as f64
    }
}

/// Minimal number of single-character insertions and deletions turning `a` into `b`.
pub fn indel_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    a.len() + b.len() - 2 * lcs_len(&a, &b)
}

/// `1 - indel_distance(a, b) / (|a| + |b|)`; two empty strings are identical.
pub fn normalized_similarity(a: &str, b: &str) -> f64 {
    let total = a.chars().count() + b.chars().count();
    similarity(indel_distance(a, b), total)
}

/// Best window of `hay` for `needle`: `(start, end, lcs)`.
///
/// Scans starts left to right and window ends short to long and only replaces
/// the incumbent on a strict improvement, which yields the leftmost, then
/// shortest, maximizer. Scores are compared as exact rationals.
fn best_window(needle: &[char], hay: &[char]) -> (usize, usize, usize) {
    let m = needle.len();
    let n = hay.len();
    debug_assert!(m > 0 && n > 0);
    let alphabet: HashSet<char> = needle.iter().copied().collect();
    // Score of a window is lcs / (m + len); `better` compares two of them.
    let better = |lcs_a: usize, len_a: usize, lcs_b: usize, len_b: usize| lcs_a * (m + len_b) > lcs_b * (m + len_a);

    let mut best: Option<(usize, usize, usize)> = None;
    let mut row = vec![0usize; m + 1];
    for start in 0..n {
        // A maximizing window with positive score begins on a needle character:
        // dropping a leading unmatched character keeps the lcs and shortens it.
        if !alphabet.contains(&hay[start]) {
            continue;
        }
        if let Some((bs, be, lcs_b)) = best {
            if lcs_b == m && be - bs == m {
                break;
            }
        }
        row.iter_mut().for_each(|v| *v = 0);
        for end in start + 1..=n {
            let len = end - start;
            if let Some((bs, be, lcs_b)) = best {
                // Even a full-needle lcs in a window this long cannot win.
                if len >= m && !better(m, len, lcs_b, be - bs) {
                    break;
                }
            }
            let c = hay[end - 1];
            let mut diag = 0;
            for j in 1..=m {
                let up = row[j];
                row[j] = if needle[j - 1] == c {
                    diag + 1
                } else {
                    up.max(row[j - 1])
                };
                diag = up;
            }
            let lcs = row[m];
            let improves = match best {
                None => true,
                Some((bs, be, lcs_b)) => better(lcs, len, lcs_b, be - bs),
            };
            if improves {
                best = Some((start, end, lcs));
            }
        }
    }
    best.unwrap_or((0, 1, 0))
}

pub(crate) fn align_chars(needle: &[char], hay: &[char]) -> (usize, usize, f64) {
    let (start, end, lcs) = best_window(needle, hay);
    let total = needle.len() + end - start;
    (start, end, similarity(total - 2 * lcs, total))
}

/// Span of `haystack` whose similarity to `needle` is maximal.
///
/// Ties go to the leftmost start, then to the shortest span.
pub fn partial_ratio_alignment(needle: &str, haystack: &str) -> Result<FuzzyMatch, MatchError> {
    let needle_chars: Vec<char> = needle.chars().collect();
    let hay: Vec<char> = haystack.chars().collect();
    if needle_chars.is_empty() {
        return Err(MatchError::EmptyNeedle);
    }
    if hay.is_empty() {
        return Err(MatchError::EmptyText);
    }
    let (start, end, score) = align_chars(&needle_chars, &hay);
    Ok(FuzzyMatch {
        start,
        end,
        variant: needle.to_string(),
        score,
    })
}

/// Every variant whose case-folded partial alignment against `text` scores at
/// least `threshold`. Spans refer to the original `text`.
pub fn find_term_matches<S: AsRef<str>>(
    text: &str,
    variants: &[S],
    threshold: f64,
) -> Result<Vec<FuzzyMatch>, MatchError> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(MatchError::InvalidThreshold(threshold));
    }
    let hay = folded_chars(text);
    let mut out = Vec::new();
    if hay.is_empty() {
        return Ok(out);
    }
    for variant in variants {
        let variant = variant.as_ref();
        let needle = folded_chars(variant);
        if needle.is_empty() {
            continue;
        }
        let (start, end, score) = align_chars(&needle, &hay);
        if score >= threshold {
            out.push(FuzzyMatch {
                start,
                end,
                variant: variant.to_string(),
                score,
            });
        }
    }
    out.sort_by(canonical_order);
    out.dedup();
    Ok(out)
}

fn canonical_order(a: &FuzzyMatch, b: &FuzzyMatch) -> Ordering {
    (a.start, a.end, &a.variant).cmp(&(b.start, b.end, &b.variant))
}

/// Drops every match whose span lies inside another match's span.
///
/// Among identical spans the higher score survives, then the
/// lexicographically smaller variant.
pub fn resolve_containment(matches: &[FuzzyMatch]) -> Vec<FuzzyMatch> {
    let mut ranked: Vec<&FuzzyMatch> = matches.iter().collect();
    ranked.sort_by(|a, b| {
        b.len()
            .cmp(&a.len())
            .then_with(|| b.score.partial_cmp(&a.score).unwrap_or(Ordering::Equal))
            .then_with(|| a.variant.cmp(&b.variant))
            .then_with(|| a.start.cmp(&b.start))
    });
    let mut kept: Vec<FuzzyMatch> = Vec::new();
    for m in ranked {
        if !kept.iter().any(|k| k.contains(m)) {
            kept.push(m.clone());
        }
    }
    kept.sort_by(canonical_order);
    kept
}
