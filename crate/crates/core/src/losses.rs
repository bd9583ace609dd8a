//! Preference-optimization and fine-tuning objectives on token log-probabilities.
//!
//! A sequence is scored by the arithmetic mean of its token log-probabilities
//! (the log of the geometric-mean token probability), optionally restricted to
//! the term-token mask `δ`. On top of that:
//!
//! ```text
//! sl1(x, y)   = 0.5 (x - y)^2          if |x - y| < 1
//!               |x - y| - 0.5          otherwise
//! PO          = sl1(m(y_w) - m(y_l), 1 / (2β))
//! mPO         = sl1(m_δ(y_w) - m_δ(y_l), 1 / (2β))
//! SFT         = -α m(y_w)
//! mSFT        = -α m_δ(y_w)
//! dCPO        = -m(y_w) + ((m(y_w) - r(y_w)) - (m(y_l) - r(y_l)) - 1 / (2β))^2
//! term        = 1_PO PO + 1_mPO mPO + α (1_SFT SFT + 1_mSFT mSFT)     (SFT terms at α = 1)
//! ```
//!
//! Every loss returns its value together with the gradient with respect to
//! each token log-probability of `y_w` and `y_l`.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LossError {
    #[error("sequence has no tokens")]
    EmptySequence,
    #[error("mask is empty")]
    EmptyMask,
    #[error("mask index {index} out of range for {len} tokens")]
    MaskOutOfRange { index: usize, len: usize },
    #[error("log-probability {0} is not finite or is positive")]
    InvalidLogprob(f64),
    #[error("reference log-probabilities are missing")]
    MissingReference,
    #[error("reference log-probabilities have length {got}, expected {expected}")]
    ReferenceLength { got: usize, expected: usize },
    #[error("invalid loss configuration: {0}")]
    Config(String),
}

/// Token log-probabilities of one target sequence, plus its term mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceScore {
    pub token_logprobs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ref_token_logprobs: Option<Vec<f64>>,
    #[serde(default)]
    pub mask: Vec<usize>,
}

impl SequenceScore {
    pub fn new(token_logprobs: Vec<f64>) -> Self {
        Self {
            token_logprobs,
            ref_token_logprobs: None,
            mask: Vec::new(),
        }
    }

    pub fn with_mask(mut self, mask: impl IntoIterator<Item = usize>) -> Self {
        let mut mask: Vec<usize> = mask.into_iter().collect();
        mask.sort_unstable();
        mask.dedup();
        self.mask = mask;
        self
    }

    pub fn with_reference(mut self, reference: Vec<f64>) -> Self {
        self.ref_token_logprobs = Some(reference);
        self
    }

    pub fn len(&self) -> usize {
        self.token_logprobs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_logprobs.is_empty()
    }

    pub fn validate(&self) -> Result<(), LossError> {
        let check = |xs: &[f64]| {
            xs.iter()
                .find(|x| !x.is_finite() || **x > 0.0)
                .map_or(Ok(()), |&x| Err(LossError::InvalidLogprob(x)))
        };
        check(&self.token_logprobs)?;
        if let Some(r) = &self.ref_token_logprobs {
            if r.len() != self.len() {
                return Err(LossError::ReferenceLength {
                    got: r.len(),
                    expected: self.len(),
                });
            }
            check(r)?;
        }
        if let Some(&index) = self.mask.iter().find(|&&i| i >= self.len()) {
            return Err(LossError::MaskOutOfRange { index, len: self.len() });
        }
        Ok(())
    }

    /// Mask indices, deduplicated and bounds-checked.
    fn mask_indices(&self) -> Result<Vec<usize>, LossError> {
        let mut idx = self.mask.clone();
        idx.sort_unstable();
        idx.dedup();
        if idx.is_empty() {
            return Err(LossError::EmptyMask);
        }
        if let Some(&index) = idx.iter().find(|&&i| i >= self.len()) {
            return Err(LossError::MaskOutOfRange { index, len: self.len() });
        }
        Ok(idx)
    }
}

/// Which components of the combined objective are switched on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub enable_po: bool,
    pub enable_mpo: bool,
    pub enable_sft: bool,
    pub enable_msft: bool,
    pub alpha: f64,
    pub beta: f64,
}

/// Preference strength used for every fine-tuning setting.
pub const DEFAULT_BETA: f64 = 0.25;

impl LossConfig {
    /// Plain SFT with α = 1, as used to train the baseline.
    pub fn baseline() -> Self {
        Self {
            enable_po: false,
            enable_mpo: false,
            enable_sft: true,
            enable_msft: false,
            alpha: 1.0,
            beta: DEFAULT_BETA,
        }
    }

    /// The six fine-tuning configurations:
    ///
    /// | id | SFT | mSFT | PO | mPO | α  |
    /// |----|-----|------|----|-----|----|
    /// | 1  |     |  ✓   |    |     | 1  |
    /// | 2  |  ✓  |  ✓   |    |     | 1  |
    /// | 3  |  ✓  |      | ✓  |     | 1  |
    /// | 4  |     |  ✓   |    |  ✓  | 10 |
    /// | 5  |  ✓  |      |    |  ✓  | 10 |
    /// | 6  |  ✓  |  ✓   | ✓  |  ✓  | 10 |
    pub fn setting(id: u8) -> Result<Self, LossError> {
        let (sft, msft, po, mpo, alpha) = match id {
            1 => (false, true, false, false, 1.0),
            2 => (true, true, false, false, 1.0),
            3 => (true, false, true, false, 1.0),
            4 => (false, true, false, true, 10.0),
            5 => (true, false, false, true, 10.0),
            6 => (true, true, true, true, 10.0),
            _ => return Err(LossError::Config(format!("unknown setting {id}, expected 1..=6"))),
        };
        Ok(Self {
            enable_po: po,
            enable_mpo: mpo,
            enable_sft: sft,
            enable_msft: msft,
            alpha,
            beta: DEFAULT_BETA,
        })
    }

    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.enable_po || self.enable_mpo || self.enable_sft || self.enable_msft) {
            return Err(LossError::Config("every loss component is disabled".into()));
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(LossError::Config(format!("beta must be positive, got {}", self.beta)));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(LossError::Config(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        Ok(())
    }

    pub fn needs_masks(&self) -> bool {
        self.enable_mpo || self.enable_msft
    }

    pub fn needs_dispreferred(&self) -> bool {
        self.enable_po || self.enable_mpo
    }

    /// Target margin `1 / (2β)`.
    pub fn target_margin(&self) -> f64 {
        target_margin(self.beta)
    }
}

pub fn target_margin(beta: f64) -> f64 {
    1.0 / (2.0 * beta)
}

/// A loss value and its gradient with respect to each token log-probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub value: f64,
    pub grad_w: Vec<f64>,
    pub grad_l: Vec<f64>,
}

impl LossValue {
    fn zero(len_w: usize, len_l: usize) -> Self {
        Self {
            value: 0.0,
            grad_w: vec![0.0; len_w],
            grad_l: vec![0.0; len_l],
        }
    }

    fn add_scaled(&mut self, other: &LossValue, scale: f64) {
        self.value += scale * other.value;
        for (a, b) in self.grad_w.iter_mut().zip(&other.grad_w) {
            *a += scale * b;
        }
        for (a, b) in self.grad_l.iter_mut().zip(&other.grad_l) {
            *a += scale * b;
        }
    }
}

/// Mean log-probability over all tokens, or over the mask only.
pub fn mean_logprob(score: &SequenceScore, restrict_to_mask: bool) -> Result<f64, LossError> {
    if score.is_empty() {
        return Err(LossError::EmptySequence);
    }
    if restrict_to_mask {
        let idx = score.mask_indices()?;
        Ok(idx.iter().map(|&i| score.token_logprobs[i]).sum::<f64>() / idx.len() as f64)
    } else {
        Ok(score.token_logprobs.iter().sum::<f64>() / score.len() as f64)
    }
}

/// ∂ mean / ∂ token: `1/n` on every averaged position.
fn mean_grad(score: &SequenceScore, restrict_to_mask: bool) -> Result<Vec<f64>, LossError> {
    let mut grad = vec![0.0; score.len()];
    if restrict_to_mask {
        let idx = score.mask_indices()?;
        let w = 1.0 / idx.len() as f64;
        for i in idx {
            grad[i] = w;
        }
    } else {
        grad.fill(1.0 / score.len() as f64);
    }
    Ok(grad)
}

/// Smooth-L1 between `x` and `y`, and its derivative with respect to `x`.
pub fn smooth_l1(x: f64, y: f64) -> (f64, f64) {
    let d = x - y;
    if d.abs() < 1.0 {
        (0.5 * d * d, d)
    } else {
        (d.abs() - 0.5, d.signum())
    }
}

fn preference(w: &SequenceScore, l: &SequenceScore, beta: f64, masked: bool) -> Result<LossValue, LossError> {
    let margin = mean_logprob(w, masked)? - mean_logprob(l, masked)?;
    let (value, outer) = smooth_l1(margin, target_margin(beta));
    Ok(LossValue {
        value,
        grad_w: mean_grad(w, masked)?.into_iter().map(|g| outer * g).collect(),
        grad_l: mean_grad(l, masked)?.into_iter().map(|g| -outer * g).collect(),
    })
}

fn supervised(w: &SequenceScore, alpha: f64, masked: bool) -> Result<LossValue, LossError> {
    let mean = mean_logprob(w, masked)?;
    Ok(LossValue {
        value: -alpha * mean,
        grad_w: mean_grad(w, masked)?.into_iter().map(|g| -alpha * g).collect(),
        grad_l: Vec::new(),
    })
}

/// Full-sequence preference loss with smooth-L1 towards the margin `1/(2β)`.
pub fn loss_po(w: &SequenceScore, l: &SequenceScore, beta: f64) -> Result<LossValue, LossError> {
    preference(w, l, beta, false)
}

/// Preference loss restricted to the term-token masks.
pub fn loss_mpo(w: &SequenceScore, l: &SequenceScore, beta: f64) -> Result<LossValue, LossError> {
    preference(w, l, beta, true)
}

/// Weighted negative mean log-probability of `y_w`. `grad_l` is empty.
pub fn loss_sft(w: &SequenceScore, alpha: f64) -> Result<LossValue, LossError> {
    supervised(w, alpha, false)
}

/// [`loss_sft`] restricted to the term-token mask.
pub fn loss_msft(w: &SequenceScore, alpha: f64) -> Result<LossValue, LossError> {
    supervised(w, alpha, true)
}

/// Reference-regularized loss with a squared margin error; needs reference
/// log-probabilities on both sequences.
pub fn loss_dcpo(w: &SequenceScore, l: &SequenceScore, beta: f64) -> Result<LossValue, LossError> {
    let ref_mean = |s: &SequenceScore| -> Result<f64, LossError> {
        let r = s.ref_token_logprobs.as_ref().ok_or(LossError::MissingReference)?;
        if r.len() != s.len() {
            return Err(LossError::ReferenceLength {
                got: r.len(),
                expected: s.len(),
            });
        }
        Ok(r.iter().sum::<f64>() / r.len() as f64)
    };
    let (mw, ml) = (mean_logprob(w, false)?, mean_logprob(l, false)?);
    let (rw, rl) = (ref_mean(w)?, ref_mean(l)?);
    let err = (mw - rw) - (ml - rl) - target_margin(beta);
    let d_mw = -1.0 + 2.0 * err;
    let d_ml = -2.0 * err;
    Ok(LossValue {
        value: -mw + err * err,
        grad_w: vec![d_mw / w.len() as f64; w.len()],
        grad_l: vec![d_ml / l.len() as f64; l.len()],
    })
}

/// The indicator-weighted combination of PO, mPO, SFT and mSFT.
///
/// α scales the SFT group once; the SFT components themselves are taken at
/// α = 1. `l` may be empty when no preference component is enabled.
pub fn loss_term(w: &SequenceScore, l: &SequenceScore, config: &LossConfig) -> Result<LossValue, LossError> {
    config.validate()?;
    let mut total = LossValue::zero(w.len(), l.len());
    if config.enable_po {
        total.add_scaled(&loss_po(w, l, config.beta)?, 1.0);
    }
    if config.enable_mpo {
        total.add_scaled(&loss_mpo(w, l, config.beta)?, 1.0);
    }
    if config.enable_sft {
        total.add_scaled(&loss_sft(w, 1.0)?, config.alpha);
    }
    if config.enable_msft {
        total.add_scaled(&loss_msft(w, 1.0)?, config.alpha);
    }
    Ok(total)
}

/// Central finite-difference residuals of [`loss_term`]: for every token
/// log-probability, `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
pub fn finite_difference_residuals(
    w: &SequenceScore,
    l: &SequenceScore,
    config: &LossConfig,
    step: f64,
) -> Result<(Vec<f64>, Vec<f64>), LossError> {
    let analytic = loss_term(w, l, config)?;
    let residual = |a: f64, n: f64| (a - n).abs() / 1f64.max(a.abs()).max(n.abs());
    let probe = |which_w: bool, i: usize| -> Result<f64, LossError> {
        let eval = |delta: f64| -> Result<f64, LossError> {
            let (mut w2, mut l2) = (w.clone(), l.clone());
            let target = if which_w { &mut w2 } else { &mut l2 };
            target.token_logprobs[i] += delta;
            Ok(loss_term(&w2, &l2, config)?.value)
        };
        Ok((eval(step)? - eval(-step)?) / (2.0 * step))
    };
    let mut res_w = Vec::with_capacity(w.len());
    for i in 0..w.len() {
        res_w.push(residual(analytic.grad_w[i], probe(true, i)?));
    }
    let mut res_l = Vec::with_capacity(l.len());
    for i in 0..l.len() {
        res_l.push(residual(analytic.grad_l[i], probe(false, i)?));
    }
    Ok((res_w, res_l))
}
