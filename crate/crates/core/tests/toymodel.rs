mod common;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::close;
use termpo::losses::LossConfig;
use termpo::mining::{DatasetSplit, ExampleKind, PreferenceExample, SplitExample};
use termpo::toymodel::train::{train_with, Evaluator, HeldOutLossEvaluator, StoppingMetric, TrainError};
use termpo::toymodel::{
    gen_synthetic_corpus, run_setting, train, ModelDims, SynthSpec, ToyTranslator, TrainConfig, Trainer, Vocab,
};

fn tiny_dims() -> ModelDims {
    ModelDims {
        embed: 4,
        hidden: 6,
        context: 2,
    }
}

/// Forward pass written out from the documented parameter layout, with
/// compensated sums, as an independent check of `token_logprobs`.
fn reference_logprobs(model: &ToyTranslator, x: &str, y: &str) -> Vec<f64> {
    let p = model.params();
    let d = model.dims();
    let v = model.vocab().len();
    let (e, h, k) = (d.embed, d.hidden, d.context);
    let input_len = e * (1 + k);
    let tgt = v * e;
    let w1 = 2 * v * e;
    let b1 = w1 + h * input_len;
    let w2 = b1 + h;
    let b2 = w2 + v * h;
    let kahan = |terms: &mut dyn Iterator<Item = f64>| {
        let (mut s, mut c) = (0.0f64, 0.0f64);
        for t in terms {
            let y = t - c;
            let u = s + y;
            c = (u - s) - y;
            s = u;
        }
        s
    };
    let src: Vec<usize> = x.split_whitespace().map(|w| model.vocab().id(w).unwrap()).collect();
    let mut ids: Vec<usize> = y.split_whitespace().map(|w| model.vocab().id(w).unwrap()).collect();
    ids.push(1);
    let mut out = Vec::new();
    for t in 0..ids.len() {
        let mut u = Vec::new();
        for j in 0..e {
            let sum = kahan(&mut src.iter().map(|&s| p[s * e + j]));
            u.push(if src.is_empty() { 0.0 } else { sum / src.len() as f64 });
        }
        for back in (1..=k).rev() {
            let tok = if t >= back { ids[t - back] } else { 0 };
            u.extend_from_slice(&p[tgt + tok * e..tgt + (tok + 1) * e]);
        }
        let hid: Vec<f64> = (0..h)
            .map(|i| {
                let a = p[b1 + i] + kahan(&mut (0..input_len).map(|j| p[w1 + i * input_len + j] * u[j]));
                a.tanh()
            })
            .collect();
        let logits: Vec<f64> = (0..v)
            .map(|o| p[b2 + o] + kahan(&mut (0..h).map(|i| p[w2 + o * h + i] * hid[i])))
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z = kahan(&mut logits.iter().map(|l| (l - m).exp()));
        out.push(logits[ids[t]] - m - z.ln());
    }
    out
}

#[test]
fn uniform_model_assigns_minus_log_v() {
    let vocab = Vocab::build(["a b c d e"]);
    let v = vocab.len() as f64;
    let model = ToyTranslator::uniform(vocab, tiny_dims());
    let s = model.token_logprobs("a b", "c d e").unwrap();
    assert_eq!(s.len(), 4);
    for lp in s.token_logprobs {
        assert!((lp + v.ln()).abs() < 1e-12);
    }
}

#[test]
fn next_token_distributions_normalize() {
    let vocab = Vocab::build(["a b c d e f"]);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for seed in 0..5 {
        let model = ToyTranslator::random(vocab.clone(), tiny_dims(), seed);
        for _ in 0..20 {
            let words = ["a", "b", "c", "d", "e", "f"];
            let x: Vec<&str> = (0..rng.gen_range(0..4)).map(|_| words[rng.gen_range(0..6)]).collect();
            let prefix: Vec<&str> = (0..rng.gen_range(0..4)).map(|_| words[rng.gen_range(0..6)]).collect();
            let dist = model.next_token_distribution(&x.join(" "), &prefix.join(" ")).unwrap();
            assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}

#[test]
fn logprobs_match_recomputation() {
    let vocab = Vocab::build(["a b c d e f g"]);
    let model = ToyTranslator::random(vocab, ModelDims { embed: 5, hidden: 7, context: 3 }, 11);
    for (x, y) in [("a b c", "d e"), ("g", "a a a a"), ("b f e d", "")] {
        let got = model.token_logprobs(x, y).unwrap().token_logprobs;
        let want = reference_logprobs(&model, x, y);
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-8, "{g} vs {w}");
        }
    }
}

#[test]
fn out_of_vocabulary_names_token() {
    let model = ToyTranslator::uniform(Vocab::build(["a"]), tiny_dims());
    let err = model.token_logprobs("a", "zebra").unwrap_err();
    assert!(err.to_string().contains("zebra"));
}

fn param_fd_check(model: &ToyTranslator, x: &str, y: &str, weights: &[f64], indices: &[usize]) {
    let src = model.encode_source(x).unwrap();
    let tgt = model.encode_target(y).unwrap();
    let objective = |m: &ToyTranslator| -> f64 {
        m.forward(&src, &tgt).0.iter().zip(weights).map(|(a, b)| a * b).sum()
    };
    let (_, cache) = model.forward(&src, &tgt);
    let mut grad = vec![0.0; model.num_params()];
    model.backward(&cache, weights, &mut grad);
    for &i in indices {
        let h = 1e-6;
        let mut plus = model.clone();
        plus.params_mut()[i] += h;
        let mut minus = model.clone();
        minus.params_mut()[i] -= h;
        let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
        assert!(close(grad[i], fd, 1e-4, 1e-9), "param {i}: analytic {} vs fd {fd}", grad[i]);
    }
}

#[test]
fn micro_model_gradients_match_finite_differences() {
    // Three tokens (two markers and "a"), one-dimensional everything.
    let vocab = Vocab::build(["a"]);
    let dims = ModelDims {
        embed: 1,
        hidden: 1,
        context: 1,
    };
    for seed in 0..10 {
        let model = ToyTranslator::random(vocab.clone(), dims, seed);
        assert_eq!(model.num_params(), 15);
        let weights = [0.7, -1.3, 0.4];
        let all: Vec<usize> = (0..model.num_params()).collect();
        param_fd_check(&model, "a a", "a a", &weights, &all);
    }
}

#[test]
fn larger_model_gradients_match_finite_differences() {
    let vocab = Vocab::build(["a b c d e"]);
    let model = ToyTranslator::random(vocab, tiny_dims(), 4);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let indices: Vec<usize> = (0..60).map(|_| rng.gen_range(0..model.num_params())).collect();
    let weights: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    param_fd_check(&model, "a b c", "d e a", &weights, &indices);
}

#[test]
fn greedy_decode_limits_and_determinism() {
    let vocab = Vocab::build(["a b c"]);
    let model = ToyTranslator::random(vocab, tiny_dims(), 2);
    assert_eq!(model.greedy_decode("a b", 0).unwrap(), "");
    let first = model.greedy_decode("a b", 10).unwrap();
    assert_eq!(first, model.greedy_decode("a b", 10).unwrap());
    assert!(first.split_whitespace().count() <= 10);
}

/// Copying sentences whose words appear in a fixed order, so the pooled
/// source determines the output. Returns 33 training and 8 held-out pairs.
fn copy_data() -> (Vec<PreferenceExample>, Vec<(String, String)>) {
    use rand::seq::SliceRandom;
    let words = ["ka", "lo", "mi", "nu", "po", "ri"];
    let mut sentences: Vec<String> = (1u32..64)
        .filter(|m| (1..=3).contains(&m.count_ones()))
        .map(|m| {
            let picked: Vec<&str> = (0..6).filter(|i| m >> i & 1 == 1).map(|i| words[i]).collect();
            picked.join(" ")
        })
        .collect();
    sentences.shuffle(&mut ChaCha8Rng::seed_from_u64(5));
    let train = sentences[..33]
        .iter()
        .map(|s| PreferenceExample {
            x: s.clone(),
            y_w: s.clone(),
            ..Default::default()
        })
        .collect();
    let held = sentences[33..].iter().map(|s| (s.clone(), s.clone())).collect();
    (train, held)
}

fn copy_config() -> TrainConfig {
    TrainConfig {
        max_epochs: 200,
        learning_rate: 0.5,
        batch_size: 8,
        early_stopping_metric: StoppingMetric::HeldOutLoss,
        patience: 5,
        eval_every: 8,
        seed: 1,
        loss: LossConfig::baseline(),
        max_grad_norm: 5.0,
        max_new_tokens: 8,
    }
}

#[test]
fn sft_improves_held_out_logprob_and_learns_copy() {
    let (train, held) = copy_data();
    let vocab = Vocab::build(["ka lo mi nu po ri"]);
    let model = ToyTranslator::random(vocab, ModelDims { embed: 8, hidden: 32, context: 3 }, 0);
    let evaluator = HeldOutLossEvaluator { pairs: held.clone() };
    let (trained, history) = train_with(&model, &train, &copy_config(), &evaluator).unwrap();
    let scores: Vec<f64> = history.records.iter().map(|r| r.score).collect();
    assert!(scores[1] > scores[0] && scores[2] > scores[1] && scores[3] > scores[2], "{scores:?}");
    let correct = train
        .iter()
        .filter(|e| trained.greedy_decode(&e.x, 8).unwrap() == e.y_w)
        .count();
    assert!(correct as f64 >= 0.9 * train.len() as f64, "{correct}/{}", train.len());
}

struct Scripted(Vec<f64>, std::cell::Cell<usize>);

impl Evaluator for Scripted {
    fn metric(&self) -> StoppingMetric {
        StoppingMetric::TermAccuracy
    }
    fn evaluate(&self, _: &ToyTranslator) -> Result<f64, TrainError> {
        let i = self.1.get();
        self.1.set(i + 1);
        Ok(self.0[i.min(self.0.len() - 1)])
    }
}

#[test]
fn early_stopping_keeps_best_checkpoint() {
    let (train, _) = copy_data();
    let vocab = Vocab::build(["ka lo mi nu po ri"]);
    let model = ToyTranslator::random(vocab, tiny_dims(), 0);
    let mut cfg = copy_config();
    cfg.patience = 3;
    cfg.eval_every = 2;

    // Never improves after step 0: exactly three more evaluations.
    let flat = Scripted(vec![0.5], Default::default());
    let (best, history) = train_with(&model, &train, &cfg, &flat).unwrap();
    assert_eq!(history.records.len(), 4);
    assert!(history.stopped_early);
    assert_eq!(best.params(), model.params());

    // Peak at the second evaluation (step 2): that checkpoint is returned.
    let peak = Scripted(vec![0.1, 0.9, 0.2, 0.3, 0.4], Default::default());
    let (best, history) = train_with(&model, &train, &cfg, &peak).unwrap();
    assert_eq!(history.best_step, 2);
    assert_eq!(history.records.len(), 5);
    assert_ne!(best.params(), model.params());

    // The model at the end of one epoch (five steps), obtained with a rising score.
    let rising = Scripted(vec![0.1, 0.2, 0.3, 0.4, 0.5], Default::default());
    let one_epoch = TrainConfig { max_epochs: 1, ..cfg.clone() };
    let (last, h) = train_with(&model, &train, &one_epoch, &rising).unwrap();
    assert_eq!((h.steps, h.best_step), (5, 5));
    assert_ne!(best.params(), last.params());
}

#[test]
fn non_finite_loss_reports_step_and_batch() {
    let (train, _) = copy_data();
    let vocab = Vocab::build(["ka lo mi nu po ri"]);
    let mut model = ToyTranslator::random(vocab, tiny_dims(), 0);
    let n = model.num_params();
    model.params_mut()[n - 1] = f64::NAN;
    let mut cfg = copy_config();
    cfg.batch_size = 33;
    match train_with(&model, &train, &cfg, &Scripted(vec![0.0], Default::default())) {
        Err(TrainError::NonFinite { step, batch_ids }) => {
            assert_eq!(step, 1);
            assert_eq!(batch_ids.len(), 33);
        }
        other => panic!("expected a non-finite error, got {:?}", other.map(|r| r.1)),
    }
}

#[test]
fn training_is_seed_deterministic() {
    let (train, held) = copy_data();
    let vocab = Vocab::build(["ka lo mi nu po ri"]);
    let model = ToyTranslator::random(vocab, tiny_dims(), 3);
    let evaluator = HeldOutLossEvaluator { pairs: held };
    let mut cfg = copy_config();
    cfg.max_epochs = 5;
    let a = train_with(&model, &train, &cfg, &evaluator).unwrap();
    let b = train_with(&model, &train, &cfg, &evaluator).unwrap();
    assert_eq!(a.0.params(), b.0.params());
    assert_eq!(a.1, b.1);
    cfg.seed = 2;
    let c = train_with(&model, &train, &cfg, &evaluator).unwrap();
    assert_ne!(a.0.params(), c.0.params());
}

fn small_synthetic() -> (termpo::dictionary::TermDictionary, DatasetSplit, ToyTranslator) {
    let corpus = gen_synthetic_corpus(&SynthSpec::new(4, 3, 2, 240, 3)).unwrap();
    let mined = termpo::mining::mine_corpus(
        corpus.triples.iter().cloned().map(Ok::<_, String>),
        &corpus.dictionary,
        0.95,
        &termpo::mining::WhitespaceTokenizer,
    )
    .unwrap();
    let non_term: Vec<PreferenceExample> = corpus.non_term.iter().map(PreferenceExample::non_term).collect();
    let split = termpo::mining::split_dataset(&mined.examples, &non_term, 40, 40, 3).unwrap();
    let vocab = Vocab::build(
        corpus
            .triples
            .iter()
            .chain(&corpus.non_term)
            .flat_map(|t| [t.source.as_str(), t.mt.as_str(), t.pe.as_str()]),
    );
    let model = ToyTranslator::random(vocab, tiny_dims(), 3);
    (corpus.dictionary, split, model)
}

#[test]
fn setting_three_equals_manual_configuration() {
    let (dict, split, model) = small_synthetic();
    let mut base = TrainConfig::fine_tuning(LossConfig::setting(1).unwrap(), 4);
    base.max_epochs = 2;
    base.eval_every = 5;
    let run = run_setting(3, &model, &split, &dict, &base).unwrap();
    let manual_cfg = TrainConfig {
        loss: LossConfig {
            enable_po: true,
            enable_mpo: false,
            enable_sft: true,
            enable_msft: false,
            alpha: 1.0,
            beta: 0.25,
        },
        ..base.clone()
    };
    let (manual, history) = train(&model, &split, &manual_cfg, &dict).unwrap();
    assert_eq!(run.model.params(), manual.params());
    assert_eq!(run.history, history);

    let again = run_setting(3, &model, &split, &dict, &base).unwrap();
    assert_eq!(again.evaluation.row, run.evaluation.row);
    assert!(run_setting(7, &model, &split, &dict, &base).is_err());
}

#[test]
fn evaluation_row_counts_test_split() {
    let (dict, split, model) = small_synthetic();
    let eval =
        termpo::toymodel::evaluate_model("m", None, &model, &split.test, &dict, 0.95, 16).unwrap();
    assert_eq!(eval.hypotheses.len(), split.test.len());
    assert_eq!(eval.chrf_segments.len(), split.test.len());
    let terms = split.test.iter().filter(|e: &&SplitExample| e.kind == ExampleKind::Term).count();
    assert_eq!(eval.term.per_example.len(), terms);
    assert!(eval.row.exact_accuracy <= eval.row.valid_rate);
}

#[test]
fn preference_margin_grows_under_po() {
    let (_, split, model) = small_synthetic();
    let examples: Vec<PreferenceExample> = split.train.iter().map(|e| e.example.clone()).collect();
    let cfg = TrainConfig::fine_tuning(LossConfig::setting(3).unwrap(), 0);
    let trainer = Trainer::new(&model, &examples, cfg).unwrap();
    let batch: Vec<usize> = (0..8).collect();
    let mut m = model.clone();
    let mut margins = vec![trainer.batch_margin(&m, &batch).unwrap()];
    assert!(margins[0] < 2.0);
    for step in 1..=5 {
        trainer.step(&mut m, &batch, step).unwrap();
        margins.push(trainer.batch_margin(&m, &batch).unwrap());
    }
    assert!(margins.windows(2).all(|w| w[1] > w[0]), "{margins:?}");
}

#[test]
fn synthetic_corpus_properties() {
    let spec = SynthSpec::new(8, 3, 3, 300, 21);
    let corpus = gen_synthetic_corpus(&spec).unwrap();
    // the cue determines the variant: same (term, cue) always agrees
    let mut seen = std::collections::HashMap::new();
    for g in &corpus.ground_truth {
        let prev = seen.insert((g.source_term.clone(), g.cue.clone()), g.correct_variant.clone());
        if let Some(prev) = prev {
            assert_eq!(prev, g.correct_variant);
        }
        let variants = corpus.dictionary.get(&g.source_term).unwrap();
        assert!(variants.contains(&g.correct_variant) && variants.contains(&g.mt_variant));
    }
    assert!(SynthSpec { default_bias: 1.5, ..spec.clone() }.validate().is_err());
}

#[test]
fn checkpoint_round_trip_through_file() {
    let dir = tempfile::tempdir().unwrap();
    let model = ToyTranslator::random(Vocab::build(["a b"]), tiny_dims(), 1);
    let path = dir.path().join("m.json");
    model.save(&path, Some("abc")).unwrap();
    assert_eq!(ToyTranslator::load(&path).unwrap(), model);
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.contains("\"config_hash\":\"abc\""));
    std::fs::write(&path, text.replace("\"version\":1", "\"version\":9")).unwrap();
    assert!(ToyTranslator::load(&path).is_err());
}
