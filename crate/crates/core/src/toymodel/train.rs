//! Gradient-descent training with early stopping, and the fine-tuning settings.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{ModelError, ToyTranslator};
use crate::dictionary::TermDictionary;
use crate::eval::{segment_chrf, term_eval, EvalError, TermEvalResult};
use crate::losses::{loss_term, mean_logprob, LossConfig, LossError, SequenceScore};
use crate::matching::DEFAULT_THRESHOLD;
use crate::mining::{DatasetSplit, ExampleKind, PreferenceExample, SplitExample};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("no training examples")]
    EmptyDataset,
    #[error("non-finite loss at step {step} (batch ids {batch_ids:?})")]
    NonFinite { step: usize, batch_ids: Vec<usize> },
    #[error("example {id}: {source}")]
    Example { id: usize, source: LossError },
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StoppingMetric {
    /// Exact-term accuracy of greedy decodes on the validation term examples.
    TermAccuracy,
    /// Mean token log-probability of the validation references.
    HeldOutLoss,
}

fn default_max_grad_norm() -> f64 {
    1.0
}

fn default_max_new_tokens() -> usize {
    64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub early_stopping_metric: StoppingMetric,
    pub patience: usize,
    pub eval_every: usize,
    pub seed: u64,
    pub loss: LossConfig,
    #[serde(default = "default_max_grad_norm")]
    pub max_grad_norm: f64,
    #[serde(default = "default_max_new_tokens")]
    pub max_new_tokens: usize,
}

impl TrainConfig {
    /// Defaults for the fine-tuning phase under `loss`.
    pub fn fine_tuning(loss: LossConfig, seed: u64) -> Self {
        Self {
            max_epochs: 10,
            learning_rate: 0.5,
            batch_size: 16,
            early_stopping_metric: StoppingMetric::TermAccuracy,
            patience: 3,
            eval_every: 50,
            seed,
            loss,
            max_grad_norm: default_max_grad_norm(),
            max_new_tokens: default_max_new_tokens(),
        }
    }

    /// Defaults for SFT pre-training of the baseline.
    pub fn pretraining(seed: u64) -> Self {
        Self {
            max_epochs: 20,
            early_stopping_metric: StoppingMetric::HeldOutLoss,
            eval_every: 100,
            ..Self::fine_tuning(LossConfig::baseline(), seed)
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.patience < 1 {
            return Err(TrainError::Config("patience must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(TrainError::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 || self.eval_every == 0 {
            return Err(TrainError::Config("batch_size and eval_every must be positive".into()));
        }
        if !(self.max_grad_norm > 0.0) {
            return Err(TrainError::Config("max_grad_norm must be positive".into()));
        }
        self.loss.validate()?;
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Child seed for a named phase, so every phase draws from its own stream.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(label.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: usize,
    pub epoch: usize,
    pub metric: StoppingMetric,
    /// Higher is better for both metrics.
    pub score: f64,
    pub train_loss: Option<f64>,
    pub best: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub records: Vec<EvalRecord>,
    pub steps: usize,
    pub best_step: usize,
    pub stopped_early: bool,
}

impl TrainingHistory {
    pub fn best_score(&self) -> Option<f64> {
        self.records.iter().find(|r| r.step == self.best_step).map(|r| r.score)
    }

    /// One JSON object per evaluation.
    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }
}

/// Scores a model for early stopping; higher is better.
pub trait Evaluator {
    fn metric(&self) -> StoppingMetric;
    fn evaluate(&self, model: &ToyTranslator) -> Result<f64, TrainError>;
}

pub struct TermAccuracyEvaluator<'a> {
    pub examples: Vec<&'a PreferenceExample>,
    pub dict: &'a TermDictionary,
    pub threshold: f64,
    pub max_tokens: usize,
}

impl Evaluator for TermAccuracyEvaluator<'_> {
    fn metric(&self) -> StoppingMetric {
        StoppingMetric::TermAccuracy
    }

    fn evaluate(&self, model: &ToyTranslator) -> Result<f64, TrainError> {
        let hyps = self
            .examples
            .iter()
            .map(|e| model.greedy_decode(&e.x, self.max_tokens))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(term_eval(&hyps, &self.examples, self.dict, self.threshold)?.exact_accuracy)
    }
}

pub struct HeldOutLossEvaluator {
    pub pairs: Vec<(String, String)>,
}

impl Evaluator for HeldOutLossEvaluator {
    fn metric(&self) -> StoppingMetric {
        StoppingMetric::HeldOutLoss
    }

    fn evaluate(&self, model: &ToyTranslator) -> Result<f64, TrainError> {
        if self.pairs.is_empty() {
            return Err(TrainError::Config("held-out set is empty".into()));
        }
        let mut total = 0.0;
        for (x, y) in &self.pairs {
            total += mean_logprob(&model.token_logprobs(x, y)?, false)?;
        }
        Ok(total / self.pairs.len() as f64)
    }
}

struct Encoded {
    id: usize,
    source: Vec<usize>,
    w: Vec<usize>,
    l: Vec<usize>,
    delta_w: Vec<usize>,
    delta_l: Vec<usize>,
}

/// Gradient-descent state over a fixed set of training examples.
pub struct Trainer {
    config: TrainConfig,
    examples: Vec<Encoded>,
}

impl Trainer {
    pub fn new(model: &ToyTranslator, examples: &[PreferenceExample], config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        if examples.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let pref = config.loss.needs_dispreferred();
        let examples = examples
            .iter()
            .enumerate()
            .map(|(id, e)| {
                Ok(Encoded {
                    id,
                    source: model.encode_source(&e.x)?,
                    w: model.encode_target(&e.y_w)?,
                    l: if pref { model.encode_target(&e.y_l)? } else { Vec::new() },
                    delta_w: e.delta_w.clone(),
                    delta_l: e.delta_l.clone(),
                })
            })
            .collect::<Result<_, ModelError>>()?;
        Ok(Self { config, examples })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Mean loss over `batch` and its gradient with respect to the parameters.
    pub fn batch_gradient(&self, model: &ToyTranslator, batch: &[usize]) -> Result<(f64, Vec<f64>), TrainError> {
        let cfg = &self.config.loss;
        let mut grad = vec![0.0; model.num_params()];
        let mut loss = 0.0;
        let scale = 1.0 / batch.len() as f64;
        for &i in batch {
            let e = &self.examples[i];
            let (lp_w, cache_w) = model.forward(&e.source, &e.w);
            let w = SequenceScore::new(lp_w).with_mask(e.delta_w.iter().copied());
            let (l, cache_l) = if e.l.is_empty() {
                (SequenceScore::new(Vec::new()), None)
            } else {
                let (lp_l, cache_l) = model.forward(&e.source, &e.l);
                (SequenceScore::new(lp_l).with_mask(e.delta_l.iter().copied()), Some(cache_l))
            };
            let value = loss_term(&w, &l, cfg).map_err(|source| TrainError::Example { id: e.id, source })?;
            loss += value.value * scale;
            let g_w: Vec<f64> = value.grad_w.iter().map(|g| g * scale).collect();
            model.backward(&cache_w, &g_w, &mut grad);
            if let Some(cache_l) = cache_l {
                let g_l: Vec<f64> = value.grad_l.iter().map(|g| g * scale).collect();
                model.backward(&cache_l, &g_l, &mut grad);
            }
        }
        Ok((loss, grad))
    }

    /// One clipped gradient-descent update on `batch`; returns the batch loss.
    pub fn step(&self, model: &mut ToyTranslator, batch: &[usize], step: usize) -> Result<f64, TrainError> {
        let (loss, mut grad) = self.batch_gradient(model, batch)?;
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !loss.is_finite() || !norm.is_finite() {
            return Err(TrainError::NonFinite {
                step,
                batch_ids: batch.iter().map(|&i| self.examples[i].id).collect(),
            });
        }
        if norm > self.config.max_grad_norm {
            let s = self.config.max_grad_norm / norm;
            grad.iter_mut().for_each(|g| *g *= s);
        }
        let lr = self.config.learning_rate;
        for (p, g) in model.params_mut().iter_mut().zip(&grad) {
            *p -= lr * g;
        }
        Ok(loss)
    }

    /// Mean over `batch` of `mean log p(y_w) - mean log p(y_l)`.
    pub fn batch_margin(&self, model: &ToyTranslator, batch: &[usize]) -> Result<f64, TrainError> {
        let mut total = 0.0;
        for &i in batch {
            let e = &self.examples[i];
            if e.l.is_empty() {
                return Err(TrainError::Config("margin needs dispreferred sequences".into()));
            }
            let w = SequenceScore::new(model.forward(&e.source, &e.w).0);
            let l = SequenceScore::new(model.forward(&e.source, &e.l).0);
            total += mean_logprob(&w, false)? - mean_logprob(&l, false)?;
        }
        Ok(total / batch.len() as f64)
    }
}

/// Trains `model` on `examples`, evaluating with `evaluator` at step 0 and
/// every `eval_every` steps. Returns the best-scoring checkpoint.
///
/// Training stops once `patience` consecutive evaluations fail to improve on
/// the best score, or after `max_epochs` epochs.
pub fn train_with(
    model: &ToyTranslator,
    examples: &[PreferenceExample],
    config: &TrainConfig,
    evaluator: &dyn Evaluator,
) -> Result<(ToyTranslator, TrainingHistory), TrainError> {
    let trainer = Trainer::new(model, examples, config.clone())?;
    let mut current = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut history = TrainingHistory::default();

    let mut best = current.clone();
    let mut best_score = evaluator.evaluate(&current)?;
    history.records.push(EvalRecord {
        step: 0,
        epoch: 0,
        metric: evaluator.metric(),
        score: best_score,
        train_loss: None,
        best: true,
    });
    let mut since_best = 0;
    let mut step = 0;
    let mut window_loss = (0.0, 0usize);

    let mut evaluate = |current: &ToyTranslator,
                        step: usize,
                        epoch: usize,
                        window_loss: &mut (f64, usize),
                        history: &mut TrainingHistory|
     -> Result<bool, TrainError> {
        let score = evaluator.evaluate(current)?;
        let improved = score > best_score;
        if improved {
            best_score = score;
            best = current.clone();
            history.best_step = step;
            since_best = 0;
        } else {
            since_best += 1;
        }
        history.records.push(EvalRecord {
            step,
            epoch,
            metric: evaluator.metric(),
            score,
            train_loss: (window_loss.1 > 0).then(|| window_loss.0 / window_loss.1 as f64),
            best: improved,
        });
        *window_loss = (0.0, 0);
        Ok(since_best >= config.patience)
    };

    let mut order: Vec<usize> = (0..trainer.len()).collect();
    let mut last_eval = 0;
    'epochs: for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(config.batch_size) {
            step += 1;
            let loss = trainer.step(&mut current, batch, step)?;
            window_loss.0 += loss;
            window_loss.1 += 1;
            if step % config.eval_every == 0 {
                last_eval = step;
                if evaluate(&current, step, epoch, &mut window_loss, &mut history)? {
                    history.stopped_early = true;
                    break 'epochs;
                }
            }
        }
    }
    if last_eval != step {
        let epoch = config.max_epochs;
        evaluate(&current, step, epoch, &mut window_loss, &mut history)?;
    }
    history.steps = step;
    Ok((best, history))
}

/// Builds the evaluator named by `config.early_stopping_metric` from the
/// validation split and trains on the training split.
pub fn train(
    model: &ToyTranslator,
    dataset: &DatasetSplit,
    config: &TrainConfig,
    dict: &TermDictionary,
) -> Result<(ToyTranslator, TrainingHistory), TrainError> {
    let examples: Vec<PreferenceExample> = dataset.train.iter().map(|e| e.example.clone()).collect();
    match config.early_stopping_metric {
        StoppingMetric::TermAccuracy => {
            let evaluator = TermAccuracyEvaluator {
                examples: DatasetSplit::term_examples(&dataset.validation),
                dict,
                threshold: DEFAULT_THRESHOLD,
                max_tokens: config.max_new_tokens,
            };
            if evaluator.examples.is_empty() {
                return Err(TrainError::Config("validation split has no term examples".into()));
            }
            train_with(model, &examples, config, &evaluator)
        }
        StoppingMetric::HeldOutLoss => {
            let evaluator = HeldOutLossEvaluator {
                pairs: dataset
                    .validation
                    .iter()
                    .map(|e| (e.example.x.clone(), e.example.y_w.clone()))
                    .collect(),
            };
            train_with(model, &examples, config, &evaluator)
        }
    }
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationRow {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub setting: Option<u8>,
    pub chrf: f64,
    pub exact_accuracy: f64,
    pub valid_rate: f64,
    pub mt_repeat_rate: f64,
}

/// Test-split outputs of one model, kept per segment for significance tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEvaluation {
    pub row: EvaluationRow,
    pub hypotheses: Vec<String>,
    /// Segment ChrF over every test example, in split order.
    pub chrf_segments: Vec<f64>,
    /// Term judgements over the test term examples, in split order.
    pub term: TermEvalResult,
}

/// Greedy-decodes every test example and scores it against its post-edit.
pub fn evaluate_model(
    name: &str,
    setting: Option<u8>,
    model: &ToyTranslator,
    test: &[SplitExample],
    dict: &TermDictionary,
    threshold: f64,
    max_tokens: usize,
) -> Result<ModelEvaluation, TrainError> {
    let hypotheses = test
        .iter()
        .map(|e| model.greedy_decode(&e.example.x, max_tokens))
        .collect::<Result<Vec<_>, _>>()?;
    let pairs: Vec<(&str, &str)> = hypotheses
        .iter()
        .zip(test)
        .map(|(h, e)| (h.as_str(), e.example.y_w.as_str()))
        .collect();
    let chrf_segments = segment_chrf(&pairs)?;
    let (term_hyps, term_examples): (Vec<&str>, Vec<&PreferenceExample>) = hypotheses
        .iter()
        .zip(test)
        .filter(|(_, e)| e.kind == ExampleKind::Term)
        .map(|(h, e)| (h.as_str(), &e.example))
        .unzip();
    let term = term_eval(&term_hyps, &term_examples, dict, threshold)?;
    let chrf = chrf_segments.iter().sum::<f64>() / chrf_segments.len() as f64;
    Ok(ModelEvaluation {
        row: EvaluationRow {
            name: name.to_string(),
            setting,
            chrf,
            exact_accuracy: term.exact_accuracy,
            valid_rate: term.valid_rate,
            mt_repeat_rate: term.mt_repeat_rate,
        },
        hypotheses,
        chrf_segments,
        term,
    })
}

pub struct SettingRun {
    pub model: ToyTranslator,
    pub history: TrainingHistory,
    pub evaluation: ModelEvaluation,
}

/// Fine-tunes a copy of `baseline` under setting `id` (early stopping on term
/// accuracy) and evaluates it on the test split. `base` supplies every
/// training hyperparameter except the loss.
pub fn run_setting(
    id: u8,
    baseline: &ToyTranslator,
    dataset: &DatasetSplit,
    dict: &TermDictionary,
    base: &TrainConfig,
) -> Result<SettingRun, TrainError> {
    let config = TrainConfig {
        loss: LossConfig::setting(id)?,
        early_stopping_metric: StoppingMetric::TermAccuracy,
        ..base.clone()
    };
    let (model, history) = train(baseline, dataset, &config, dict)?;
    let evaluation = evaluate_model(
        &format!("setting {id}"),
        Some(id),
        &model,
        &dataset.test,
        dict,
        DEFAULT_THRESHOLD,
        config.max_new_tokens,
    )?;
    Ok(SettingRun {
        model,
        history,
        evaluation,
    })
}
