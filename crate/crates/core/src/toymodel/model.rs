use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::losses::SequenceScore;

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
const BOS_ID: usize = 0;
const EOS_ID: usize = 1;

const CHECKPOINT_FORMAT: &str = "termpo-toy-translator";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("token `{0}` is not in the vocabulary")]
    OutOfVocabulary(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Word vocabulary shared by source and target; ids 0 and 1 are the
/// begin and end markers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Markers followed by every whitespace token of `texts`, sorted.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let words: BTreeSet<&str> = texts
            .into_iter()
            .flat_map(str::split_whitespace)
            .filter(|w| *w != BOS && *w != EOS)
            .collect();
        let mut tokens = vec![BOS.to_string(), EOS.to_string()];
        tokens.extend(words.into_iter().map(str::to_string));
        tokens.into()
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Result<usize, ModelError> {
        self.index
            .get(token)
            .copied()
            .ok_or_else(|| ModelError::OutOfVocabulary(token.to_string()))
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub embed: usize,
    pub hidden: usize,
    /// Number of previous target tokens the next-token layer sees.
    pub context: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            embed: 16,
            hidden: 64,
            context: 2,
        }
    }
}

/// Offsets of each parameter block inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    vocab: usize,
    embed: usize,
    hidden: usize,
    input: usize,
    src_emb: usize,
    tgt_emb: usize,
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    total: usize,
}

impl Layout {
    fn new(vocab: usize, dims: ModelDims) -> Self {
        let input = dims.embed * (1 + dims.context);
        let src_emb = 0;
        let tgt_emb = src_emb + vocab * dims.embed;
        let w1 = tgt_emb + vocab * dims.embed;
        let b1 = w1 + dims.hidden * input;
        let w2 = b1 + dims.hidden;
        let b2 = w2 + vocab * dims.hidden;
        Self {
            vocab,
            embed: dims.embed,
            hidden: dims.hidden,
            input,
            src_emb,
            tgt_emb,
            w1,
            b1,
            w2,
            b2,
            total: b2 + vocab,
        }
    }
}

struct StepCache {
    context: Vec<usize>,
    input: Vec<f64>,
    hidden: Vec<f64>,
    probs: Vec<f64>,
    target: usize,
}

/// Activations kept from a teacher-forced forward pass.
pub struct ForwardCache {
    source: Vec<usize>,
    steps: Vec<StepCache>,
}

/// Single-hidden-layer autoregressive translator.
///
/// The next-token distribution is computed from the mean source-word
/// embedding concatenated with the embeddings of the previous `context`
/// target tokens (padded with the begin marker):
///
/// ```text
/// u = [mean(E_src[x]); E_tgt[y_{t-K}]; ...; E_tgt[y_{t-1}]]
/// p(y_t | y_<t, x) = softmax(W2 tanh(W1 u + b1) + b2)
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyTranslator {
    vocab: Vocab,
    dims: ModelDims,
    params: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
    vocab: Vocab,
    dims: ModelDims,
    params: Vec<f64>,
}

impl ToyTranslator {
    /// All parameters zero: every next-token distribution is uniform.
    pub fn uniform(vocab: Vocab, dims: ModelDims) -> Self {
        let n = Layout::new(vocab.len(), dims).total;
        Self {
            vocab,
            dims,
            params: vec![0.0; n],
        }
    }

    /// Small uniform random initialization, scaled by fan-in.
    pub fn random(vocab: Vocab, dims: ModelDims, seed: u64) -> Self {
        let mut model = Self::uniform(vocab, dims);
        let l = model.layout();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s_in = 1.0 / (l.input as f64).sqrt();
        let s_out = 1.0 / (l.hidden as f64).sqrt();
        for (i, p) in model.params.iter_mut().enumerate() {
            let u: f64 = rng.gen_range(-1.0..1.0);
            *p = if i < l.w1 {
                0.5 * u
            } else if i < l.b1 {
                u * s_in
            } else if i < l.w2 {
                0.0
            } else if i < l.b2 {
                u * s_out
            } else {
                0.0
            };
        }
        model
    }

    fn layout(&self) -> Layout {
        Layout::new(self.vocab.len(), self.dims)
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn encode_source(&self, x: &str) -> Result<Vec<usize>, ModelError> {
        x.split_whitespace().map(|w| self.vocab.id(w)).collect()
    }

    /// Target words followed by the end marker.
    pub fn encode_target(&self, y: &str) -> Result<Vec<usize>, ModelError> {
        let mut ids = self.encode_source(y)?;
        ids.push(EOS_ID);
        Ok(ids)
    }

    fn context_at(&self, prefix: &[usize]) -> Vec<usize> {
        let k = self.dims.context;
        (0..k)
            .map(|j| {
                // slot j holds the token k - j positions back
                let back = k - j;
                if prefix.len() >= back {
                    prefix[prefix.len() - back]
                } else {
                    BOS_ID
                }
            })
            .collect()
    }

    fn pooled_source(&self, source: &[usize]) -> Vec<f64> {
        let l = self.layout();
        let mut pooled = vec![0.0; l.embed];
        if source.is_empty() {
            return pooled;
        }
        for &s in source {
            let row = &self.params[l.src_emb + s * l.embed..][..l.embed];
            for (p, v) in pooled.iter_mut().zip(row) {
                *p += v;
            }
        }
        let inv = 1.0 / source.len() as f64;
        pooled.iter_mut().for_each(|p| *p *= inv);
        pooled
    }

    /// Input vector, hidden activations and next-token log-probabilities.
    fn step(&self, pooled: &[f64], context: &[usize]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let l = self.layout();
        let p = &self.params;
        let mut input = Vec::with_capacity(l.input);
        input.extend_from_slice(pooled);
        for &c in context {
            input.extend_from_slice(&p[l.tgt_emb + c * l.embed..][..l.embed]);
        }
        let mut hidden = vec![0.0; l.hidden];
        for (h, out) in hidden.iter_mut().enumerate() {
            let row = &p[l.w1 + h * l.input..][..l.input];
            let a: f64 = p[l.b1 + h] + row.iter().zip(&input).map(|(w, u)| w * u).sum::<f64>();
            *out = a.tanh();
        }
        let mut logits = vec![0.0; l.vocab];
        for (v, z) in logits.iter_mut().enumerate() {
            let row = &p[l.w2 + v * l.hidden..][..l.hidden];
            *z = p[l.b2 + v] + row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>();
        }
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
        logits.iter_mut().for_each(|z| *z -= lse);
        (input, hidden, logits)
    }

    /// Teacher-forced log-probabilities of `target` ids given `source` ids.
    pub fn forward(&self, source: &[usize], target: &[usize]) -> (Vec<f64>, ForwardCache) {
        let pooled = self.pooled_source(source);
        let mut steps = Vec::with_capacity(target.len());
        let mut logprobs = Vec::with_capacity(target.len());
        for t in 0..target.len() {
            let context = self.context_at(&target[..t]);
            let (input, hidden, logp) = self.step(&pooled, &context);
            logprobs.push(logp[target[t]]);
            steps.push(StepCache {
                context,
                input,
                hidden,
                probs: logp.iter().map(|x| x.exp()).collect(),
                target: target[t],
            });
        }
        (
            logprobs,
            ForwardCache {
                source: source.to_vec(),
                steps,
            },
        )
    }

    /// Accumulates `Σ_t grad_logprobs[t] · ∂ log p(y_t) / ∂θ` into `grad`.
    pub fn backward(&self, cache: &ForwardCache, grad_logprobs: &[f64], grad: &mut [f64]) {
        let l = self.layout();
        let p = &self.params;
        let mut d_pooled = vec![0.0; l.embed];
        let mut d_logits = vec![0.0; l.vocab];
        let mut d_hidden = vec![0.0; l.hidden];
        for (step, &g) in cache.steps.iter().zip(grad_logprobs) {
            if g == 0.0 {
                continue;
            }
            // ∂ log softmax(z)_y / ∂z = onehot(y) - softmax(z)
            for (d, pr) in d_logits.iter_mut().zip(&step.probs) {
                *d = -g * pr;
            }
            d_logits[step.target] += g;

            d_hidden.fill(0.0);
            for (v, &dz) in d_logits.iter().enumerate() {
                grad[l.b2 + v] += dz;
                let w_row = l.w2 + v * l.hidden;
                for h in 0..l.hidden {
                    grad[w_row + h] += dz * step.hidden[h];
                    d_hidden[h] += dz * p[w_row + h];
                }
            }
            let mut d_input = vec![0.0; l.input];
            for h in 0..l.hidden {
                let da = d_hidden[h] * (1.0 - step.hidden[h] * step.hidden[h]);
                if da == 0.0 {
                    continue;
                }
                grad[l.b1 + h] += da;
                let w_row = l.w1 + h * l.input;
                for i in 0..l.input {
                    grad[w_row + i] += da * step.input[i];
                    d_input[i] += da * p[w_row + i];
                }
            }
            for (d, di) in d_pooled.iter_mut().zip(&d_input[..l.embed]) {
                *d += di;
            }
            for (j, &c) in step.context.iter().enumerate() {
                let dst = l.tgt_emb + c * l.embed;
                let src = &d_input[l.embed * (1 + j)..][..l.embed];
                for e in 0..l.embed {
                    grad[dst + e] += src[e];
                }
            }
        }
        if !cache.source.is_empty() {
            let inv = 1.0 / cache.source.len() as f64;
            for &s in &cache.source {
                let dst = l.src_emb + s * l.embed;
                for e in 0..l.embed {
                    grad[dst + e] += d_pooled[e] * inv;
                }
            }
        }
    }

    /// Per-token log-probabilities of `y` (words plus end marker) given `x`.
    pub fn token_logprobs(&self, x: &str, y: &str) -> Result<SequenceScore, ModelError> {
        let source = self.encode_source(x)?;
        let target = self.encode_target(y)?;
        Ok(SequenceScore::new(self.forward(&source, &target).0))
    }

    /// Probabilities of every vocabulary token after `prefix`.
    pub fn next_token_distribution(&self, x: &str, prefix: &str) -> Result<Vec<f64>, ModelError> {
        let source = self.encode_source(x)?;
        let prefix = self.encode_source(prefix)?;
        let pooled = self.pooled_source(&source);
        let (_, _, logp) = self.step(&pooled, &self.context_at(&prefix));
        Ok(logp.into_iter().map(f64::exp).collect())
    }

    /// Argmax decoding until the end marker or `max_tokens` words.
    ///
    /// The begin marker is never emitted; ties go to the lowest token id.
    pub fn greedy_decode(&self, x: &str, max_tokens: usize) -> Result<String, ModelError> {
        let source = self.encode_source(x)?;
        let pooled = self.pooled_source(&source);
        let mut out: Vec<usize> = Vec::new();
        while out.len() < max_tokens {
            let (_, _, logp) = self.step(&pooled, &self.context_at(&out));
            let mut best = EOS_ID;
            for v in EOS_ID..logp.len() {
                if logp[v] > logp[best] {
                    best = v;
                }
            }
            if best == EOS_ID {
                break;
            }
            out.push(best);
        }
        Ok(out
            .iter()
            .map(|&id| self.vocab.token(id))
            .collect::<Vec<_>>()
            .join(" "))
    }

    pub fn to_checkpoint_json(&self, config_hash: Option<&str>) -> Result<String, ModelError> {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config_hash: config_hash.map(str::to_string),
            vocab: self.vocab.clone(),
            dims: self.dims,
            params: self.params.clone(),
        };
        Ok(serde_json::to_string(&ckpt)?)
    }

    pub fn from_checkpoint_json(json: &str) -> Result<Self, ModelError> {
        let ckpt: Checkpoint = serde_json::from_str(json)?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(ModelError::Checkpoint(format!("unknown format `{}`", ckpt.format)));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(ModelError::Checkpoint(format!("unsupported version {}", ckpt.version)));
        }
        let expected = Layout::new(ckpt.vocab.len(), ckpt.dims).total;
        if ckpt.params.len() != expected {
            return Err(ModelError::Checkpoint(format!(
                "{} parameters, shape requires {expected}",
                ckpt.params.len()
            )));
        }
        Ok(Self {
            vocab: ckpt.vocab,
            dims: ckpt.dims,
            params: ckpt.params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>, config_hash: Option<&str>) -> Result<(), ModelError> {
        std::fs::write(path, self.to_checkpoint_json(config_hash)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::from_checkpoint_json(&std::fs::read_to_string(path)?)
    }
}
