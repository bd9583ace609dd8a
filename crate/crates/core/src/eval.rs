//! Term accuracy, ChrF and paired approximate randomization.

use std::borrow::Borrow;
use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dictionary::TermDictionary;
use crate::matching::{find_term_matches, resolve_containment, MatchError};
use crate::mining::PreferenceExample;
use crate::text::case_fold;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EvalError {
    #[error("{hypotheses} hypotheses for {examples} examples")]
    LengthMismatch { hypotheses: usize, examples: usize },
    #[error("nothing to evaluate")]
    Empty,
    #[error("example {0} has no source term")]
    NotATermExample(usize),
    #[error("example {index}: term `{term}` is not in the dictionary")]
    UnknownTerm { index: usize, term: String },
    #[error(transparent)]
    Match(#[from] MatchError),
    #[error("max_n must be at least 1")]
    InvalidOrder,
    #[error("iterations must be at least 1")]
    NoIterations,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TermClass {
    /// The post-edit's variant is present.
    Exact,
    /// Some other dictionary variant, not the MT's, is present.
    OtherValid,
    /// The MT's variant is present and the post-edit's is not.
    MtRepeat,
    None,
}

impl TermClass {
    pub fn is_valid(self) -> bool {
        self != TermClass::None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermJudgement {
    pub segment: usize,
    pub variant: Option<String>,
    pub classification: TermClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TermEvalResult {
    pub exact_accuracy: f64,
    pub valid_rate: f64,
    pub mt_repeat_rate: f64,
    pub per_example: Vec<TermJudgement>,
}

impl TermEvalResult {
    /// Per-segment exact-match indicator (1.0 or 0.0), for significance tests.
    pub fn exact_indicators(&self) -> Vec<f64> {
        self.per_example
            .iter()
            .map(|j| f64::from(u8::from(j.classification == TermClass::Exact)))
            .collect()
    }

    pub fn count(&self, class: TermClass) -> usize {
        self.per_example.iter().filter(|j| j.classification == class).count()
    }
}

/// Classifies each hypothesis by which variant of the example's source term it uses.
pub fn term_eval<H, E>(
    hypotheses: &[H],
    examples: &[E],
    dict: &TermDictionary,
    threshold: f64,
) -> Result<TermEvalResult, EvalError>
where
    H: AsRef<str>,
    E: Borrow<PreferenceExample>,
{
    if hypotheses.len() != examples.len() {
        return Err(EvalError::LengthMismatch {
            hypotheses: hypotheses.len(),
            examples: examples.len(),
        });
    }
    if examples.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut per_example = Vec::with_capacity(examples.len());
    for (index, (hyp, example)) in hypotheses.iter().zip(examples).enumerate() {
        let example = example.borrow();
        if !example.is_term() {
            return Err(EvalError::NotATermExample(index));
        }
        let variants = dict.get(&example.source_term).ok_or_else(|| EvalError::UnknownTerm {
            index,
            term: example.source_term.clone(),
        })?;
        let found = resolve_containment(&find_term_matches(hyp.as_ref(), variants, threshold)?);
        let pick = |wanted: &[String]| {
            let wanted: Vec<String> = wanted.iter().map(|v| case_fold(v)).collect();
            found
                .iter()
                .find(|m| wanted.contains(&case_fold(&m.variant)))
                .map(|m| m.variant.clone())
        };
        let (variant, classification) = if let Some(v) = pick(&example.w_variants) {
            (Some(v), TermClass::Exact)
        } else if let Some(v) = pick(&example.l_variants) {
            (Some(v), TermClass::MtRepeat)
        } else if let Some(m) = found.first() {
            (Some(m.variant.clone()), TermClass::OtherValid)
        } else {
            (None, TermClass::None)
        };
        per_example.push(TermJudgement {
            segment: index,
            variant,
            classification,
        });
    }
    let n = per_example.len() as f64;
    let rate = |pred: &dyn Fn(TermClass) -> bool| {
        per_example.iter().filter(|j| pred(j.classification)).count() as f64 / n
    };
    Ok(TermEvalResult {
        exact_accuracy: rate(&|c| c == TermClass::Exact),
        valid_rate: rate(&|c| c.is_valid()),
        mt_repeat_rate: rate(&|c| c == TermClass::MtRepeat),
        per_example,
    })
}

fn ngram_counts(chars: &[char], n: usize) -> HashMap<&[char], usize> {
    let mut counts = HashMap::new();
    if chars.len() >= n {
        for gram in chars.windows(n) {
            *counts.entry(gram).or_insert(0) += 1;
        }
    }
    counts
}

/// Character n-gram F-score in `[0, 100]` with whitespace removed.
///
/// Precision and recall are averaged over the orders `1..=max_n` for which
/// both sides have at least one n-gram, then combined with recall weighted
/// `beta` times as much as precision.
pub fn chrf(hypothesis: &str, reference: &str, max_n: usize, beta: f64) -> Result<f64, EvalError> {
    if max_n == 0 {
        return Err(EvalError::InvalidOrder);
    }
    let hyp: Vec<char> = hypothesis.chars().filter(|c| !c.is_whitespace()).collect();
    let refr: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
    let (mut precision, mut recall, mut orders) = (0.0, 0.0, 0usize);
    for n in 1..=max_n {
        if hyp.len() < n || refr.len() < n {
            break;
        }
        let h = ngram_counts(&hyp, n);
        let r = ngram_counts(&refr, n);
        let matched: usize = h.iter().map(|(g, c)| (*c).min(*r.get(g).unwrap_or(&0))).sum();
        precision += matched as f64 / (hyp.len() + 1 - n) as f64;
        recall += matched as f64 / (refr.len() + 1 - n) as f64;
        orders += 1;
    }
    if orders == 0 {
        return Ok(0.0);
    }
    let (p, r) = (precision / orders as f64, recall / orders as f64);
    let b2 = beta * beta;
    let denom = b2 * p + r;
    if denom == 0.0 {
        return Ok(0.0);
    }
    Ok(100.0 * (1.0 + b2) * p * r / denom)
}

pub const CHRF_ORDER: usize = 6;
pub const CHRF_BETA: f64 = 2.0;

/// Macro-average of segment-level ChrF.
pub fn corpus_chrf<H: AsRef<str>, R: AsRef<str>>(pairs: &[(H, R)]) -> Result<f64, EvalError> {
    Ok(mean(&segment_chrf(pairs)?))
}

pub fn segment_chrf<H: AsRef<str>, R: AsRef<str>>(pairs: &[(H, R)]) -> Result<Vec<f64>, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::Empty);
    }
    pairs
        .iter()
        .map(|(h, r)| chrf(h.as_ref(), r.as_ref(), CHRF_ORDER, CHRF_BETA))
        .collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub p_value: f64,
    pub iterations: usize,
    pub observed_delta: f64,
    pub seed: u64,
}

impl SignificanceResult {
    pub fn is_significant(&self, level: f64) -> bool {
        self.p_value < level
    }
}

/// Shuffled delta counts as at least as extreme as the observed one.
pub(crate) fn at_least(pseudo: f64, observed: f64) -> bool {
    pseudo >= observed - 1e-12 * observed.abs().max(1.0)
}

/// Paired approximate randomization test of `|aggregate(a) - aggregate(b)|`.
///
/// Each iteration swaps `a[i]` and `b[i]` with probability one half, drawing
/// from its own ChaCha stream keyed by `(seed, iteration)`, so the result does
/// not depend on evaluation order. `p = (extreme + 1) / (iterations + 1)`.
pub fn approx_randomization_test<F>(
    a: &[f64],
    b: &[f64],
    aggregate: F,
    iterations: usize,
    seed: u64,
) -> Result<SignificanceResult, EvalError>
where
    F: Fn(&[f64]) -> f64,
{
    if a.len() != b.len() {
        return Err(EvalError::LengthMismatch {
            hypotheses: a.len(),
            examples: b.len(),
        });
    }
    if iterations == 0 {
        return Err(EvalError::NoIterations);
    }
    let observed = (aggregate(a) - aggregate(b)).abs();
    let (mut xa, mut xb) = (vec![0.0; a.len()], vec![0.0; b.len()]);
    let mut extreme = 0usize;
    for iteration in 0..iterations {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(iteration as u64);
        for i in 0..a.len() {
            if rng.gen::<bool>() {
                xa[i] = b[i];
                xb[i] = a[i];
            } else {
                xa[i] = a[i];
                xb[i] = b[i];
            }
        }
        if at_least((aggregate(&xa) - aggregate(&xb)).abs(), observed) {
            extreme += 1;
        }
    }
    Ok(SignificanceResult {
        p_value: (extreme + 1) as f64 / (iterations + 1) as f64,
        iterations,
        observed_delta: observed,
        seed,
    })
}
