//! Command implementations behind the `termpo` binary.
//!
//! Every command reads and writes UTF-8 files; corpora and datasets are
//! JSON-lines. The argument types live here so they can be parsed in tests.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dictionary::{dictionary_stats, load_dictionary, random_baseline_accuracy, DictError, TermDictionary};
use crate::eval::{approx_randomization_test, mean, segment_chrf, term_eval, EvalError, SignificanceResult};
use crate::losses::{finite_difference_residuals, loss_term, LossConfig, LossError, SequenceScore};
use crate::matching::DEFAULT_THRESHOLD;
use crate::mining::{
    mine_corpus, split_dataset, DatasetSplit, MiningError, MiningReport, PreferenceExample,
    SegmentTriple, SplitExample, WhitespaceTokenizer,
};
use crate::toymodel::model::{ModelDims, ModelError, ToyTranslator, Vocab};
use crate::toymodel::synth::{gen_synthetic_corpus, ParallelPair, SynthError, SynthSpec};
use crate::toymodel::train::{
    derive_seed, evaluate_model, hex, run_setting, train, train_with, EvaluationRow, HeldOutLossEvaluator,
    ModelEvaluation, StoppingMetric, TrainConfig, TrainError, TrainingHistory,
};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        source: serde_json::Error,
    },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Dict(#[from] DictError),
    #[error(transparent)]
    Mining(#[from] MiningError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error("{phase} failed: {source}")]
    Phase {
        phase: String,
        source: Box<CliError>,
    },
}

type Result<T> = std::result::Result<T, CliError>;

fn phase<T>(name: impl Into<String>, r: Result<T>) -> Result<T> {
    r.map_err(|e| CliError::Phase {
        phase: name.into(),
        source: Box::new(e),
    })
}

#[derive(Debug, Parser)]
#[command(name = "termpo", version, about = "Terminology disambiguation from post-edits")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mine preference examples from (source, mt, pe) triples.
    Mine(MineArgs),
    /// Dictionary statistics and the random-choice baseline.
    Stats(StatsArgs),
    /// Balanced validation/test split of a mined dataset.
    Split(SplitArgs),
    /// Generate a synthetic ambiguous-terminology corpus.
    Synth(SynthArgs),
    /// Train the toy translator on a split.
    Train(TrainArgs),
    /// Greedy-decode source sentences with a checkpoint.
    Translate(TranslateArgs),
    /// Term accuracy and ChrF of hypotheses against a dataset.
    Evaluate(EvaluateArgs),
    /// Paired approximate randomization test on per-segment scores.
    Significance(SignificanceArgs),
    /// Loss values, gradients and finite-difference residuals for a batch.
    LossCheck(LossCheckArgs),
    /// Baseline pre-training, fine-tuning settings, evaluation and significance.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Args)]
pub struct MineArgs {
    /// JSON-lines file of {"source", "mt", "pe"} objects.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Term dictionary (TSV, or JSON when the extension is .json).
    #[arg(long)]
    pub dict: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    /// Output directory for dataset.jsonl, non_term.jsonl and report.json.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub dict: PathBuf,
    /// Optional mined dataset; adds the random-choice baseline accuracy.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Mined dataset (dataset.jsonl).
    #[arg(long)]
    pub corpus: PathBuf,
    /// Triples without terminology (non_term.jsonl).
    #[arg(long)]
    pub non_term: PathBuf,
    #[arg(long, default_value_t = 200)]
    pub val_size: usize,
    #[arg(long, default_value_t = 200)]
    pub test_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for train/validation/test.jsonl.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// JSON SynthSpec; the flags below override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub terms: Option<usize>,
    #[arg(long)]
    pub variants: Option<usize>,
    #[arg(long)]
    pub cues: Option<usize>,
    #[arg(long)]
    pub size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for dictionary.tsv, corpus.jsonl, ground_truth.jsonl and pretrain.jsonl.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Split directory holding train.jsonl and validation.jsonl.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub dict: PathBuf,
    /// JSON TrainConfig; fine-tuning defaults when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Use the loss of fine-tuning setting 1..=6.
    #[arg(long)]
    pub setting: Option<u8>,
    /// Checkpoint to start from; a fresh model over the split's vocabulary otherwise.
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory for checkpoint.json and history.jsonl.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TranslateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// One source sentence per line.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long, default_value_t = 64)]
    pub max_tokens: usize,
    /// Output file, one hypothesis per line; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Dataset (JSON-lines of preference or split examples).
    #[arg(long)]
    pub corpus: PathBuf,
    /// One hypothesis per line, aligned with the dataset.
    #[arg(long)]
    pub hypotheses: PathBuf,
    #[arg(long)]
    pub dict: PathBuf,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub threshold: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SignificanceArgs {
    /// Per-segment scores of system A, one number per line.
    #[arg(long)]
    pub a: PathBuf,
    /// Per-segment scores of system B.
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LossCheckArgs {
    /// JSON-lines of {"w": SequenceScore, "l": SequenceScore}.
    #[arg(long)]
    pub corpus: PathBuf,
    /// JSON LossConfig.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Use the loss of fine-tuning setting 1..=6.
    #[arg(long)]
    pub setting: Option<u8>,
    #[arg(long, default_value_t = 1e-6)]
    pub step: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// JSON ExperimentConfig.
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the global seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides the setting list; repeatable.
    #[arg(long)]
    pub setting: Vec<u8>,
    /// Overrides the dictionary path.
    #[arg(long)]
    pub dict: Option<PathBuf>,
    /// Overrides the corpus path.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Mine(a) => cmd_mine(&a),
        Command::Stats(a) => cmd_stats(&a),
        Command::Split(a) => cmd_split(&a),
        Command::Synth(a) => cmd_synth(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Translate(a) => cmd_translate(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Significance(a) => cmd_significance(&a),
        Command::LossCheck(a) => cmd_loss_check(&a),
        Command::Experiment(a) => cmd_experiment(&a),
    }
}

// ---- file helpers ----

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_text(path)?).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        line: source.line(),
        source,
    })
}

/// Non-blank lines parsed one record each.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = read_text(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|source| CliError::Json {
                path: path.to_path_buf(),
                line: i + 1,
                source,
            })
        })
        .collect()
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    items
        .iter()
        .map(|t| serde_json::to_string(t).expect("serializable record") + "\n")
        .collect()
}

fn pretty<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("serializable report") + "\n"
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_text(p, text),
        None => {
            std::io::stdout().write_all(text.as_bytes()).map_err(|source| CliError::Io {
                path: PathBuf::from("<stdout>"),
                source,
            })
        }
    }
}

fn load_dict(path: &Path) -> Result<TermDictionary> {
    Ok(load_dictionary(path)?)
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    Ok(read_text(path)?.lines().map(str::to_string).collect())
}

// ---- commands ----

pub fn cmd_mine(args: &MineArgs) -> Result<()> {
    let dict = load_dict(&args.dict)?;
    let text = read_text(&args.corpus)?;
    let triples = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str::<SegmentTriple>);
    let mined = mine_corpus(triples, &dict, args.threshold, &WhitespaceTokenizer)?;
    create_dir(&args.out)?;
    write_text(&args.out.join("dataset.jsonl"), &to_jsonl(&mined.examples))?;
    write_text(&args.out.join("non_term.jsonl"), &to_jsonl(&mined.non_term))?;
    write_text(&args.out.join("report.json"), &pretty(&mined.report))?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct StatsReport {
    #[serde(flatten)]
    stats: crate::dictionary::DictStats,
    #[serde(skip_serializing_if = "Option::is_none")]
    random_baseline_accuracy: Option<f64>,
}

pub fn cmd_stats(args: &StatsArgs) -> Result<()> {
    let dict = load_dict(&args.dict)?;
    let random = match &args.corpus {
        Some(path) => {
            let examples: Vec<PreferenceExample> = read_jsonl(path)?;
            let pairs: Vec<(String, String)> = examples
                .iter()
                .filter(|e| e.is_term())
                .filter_map(|e| e.w_variants.first().map(|v| (e.source_term.clone(), v.clone())))
                .collect();
            Some(random_baseline_accuracy(&pairs, &dict)?)
        }
        None => None,
    };
    let report = StatsReport {
        stats: dictionary_stats(&dict)?,
        random_baseline_accuracy: random,
    };
    emit(args.out.as_deref(), &pretty(&report))
}

pub fn cmd_split(args: &SplitArgs) -> Result<()> {
    let term: Vec<PreferenceExample> = read_jsonl(&args.corpus)?;
    let non_term: Vec<SegmentTriple> = read_jsonl(&args.non_term)?;
    let non_term: Vec<PreferenceExample> = non_term.iter().map(PreferenceExample::non_term).collect();
    let split = split_dataset(&term, &non_term, args.val_size, args.test_size, args.seed)?;
    write_split(&args.out, &split)
}

fn write_split(dir: &Path, split: &DatasetSplit) -> Result<()> {
    create_dir(dir)?;
    write_text(&dir.join("train.jsonl"), &to_jsonl(&split.train))?;
    write_text(&dir.join("validation.jsonl"), &to_jsonl(&split.validation))?;
    write_text(&dir.join("test.jsonl"), &to_jsonl(&split.test))?;
    Ok(())
}

fn read_split(dir: &Path) -> Result<DatasetSplit> {
    let part = |name: &str| -> Result<Vec<SplitExample>> {
        let path = dir.join(name);
        if path.exists() {
            read_jsonl(&path)
        } else {
            Ok(Vec::new())
        }
    };
    Ok(DatasetSplit {
        train: read_jsonl(&dir.join("train.jsonl"))?,
        validation: read_jsonl(&dir.join("validation.jsonl"))?,
        test: part("test.jsonl")?,
    })
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let mut spec = match &args.config {
        Some(path) => read_json(path)?,
        None => SynthSpec::new(20, 3, 3, 2000, 0),
    };
    if let Some(v) = args.terms {
        spec.n_source_terms = v;
    }
    if let Some(v) = args.variants {
        spec.variants_per_term = v;
    }
    if let Some(v) = args.cues {
        spec.n_context_cues = v;
    }
    if let Some(v) = args.size {
        spec.corpus_size = v;
    }
    if let Some(v) = args.seed {
        spec.seed = v;
    }
    let corpus = gen_synthetic_corpus(&spec)?;
    create_dir(&args.out)?;
    write_text(&args.out.join("dictionary.tsv"), &corpus.dictionary.to_tsv())?;
    let mut all = corpus.triples.clone();
    all.extend(corpus.non_term.iter().cloned());
    write_text(&args.out.join("corpus.jsonl"), &to_jsonl(&all))?;
    write_text(&args.out.join("ground_truth.jsonl"), &to_jsonl(&corpus.ground_truth))?;
    write_text(&args.out.join("pretrain.jsonl"), &to_jsonl(&corpus.pretrain))?;
    write_text(&args.out.join("spec.json"), &pretty(&spec))?;
    Ok(())
}

fn split_texts(split: &DatasetSplit) -> impl Iterator<Item = &str> {
    split
        .train
        .iter()
        .chain(&split.validation)
        .chain(&split.test)
        .flat_map(|e| [e.example.x.as_str(), e.example.y_w.as_str(), e.example.y_l.as_str()])
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let dict = load_dict(&args.dict)?;
    let split = read_split(&args.corpus)?;
    let mut config = match &args.config {
        Some(path) => read_json(path)?,
        None => TrainConfig::fine_tuning(LossConfig::setting(6)?, 0),
    };
    if let Some(id) = args.setting {
        config.loss = LossConfig::setting(id)?;
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let model = match &args.init {
        Some(path) => ToyTranslator::load(path)?,
        None => ToyTranslator::random(
            Vocab::build(split_texts(&split)),
            ModelDims::default(),
            derive_seed(config.seed, "init"),
        ),
    };
    let (model, history) = train(&model, &split, &config, &dict)?;
    create_dir(&args.out)?;
    write_text(
        &args.out.join("checkpoint.json"),
        &model.to_checkpoint_json(Some(&config.hash()))?,
    )?;
    write_text(&args.out.join("history.jsonl"), &history.to_jsonl())?;
    Ok(())
}

pub fn cmd_translate(args: &TranslateArgs) -> Result<()> {
    let model = ToyTranslator::load(&args.model)?;
    let mut out = String::new();
    for line in read_lines(&args.corpus)? {
        out.push_str(&model.greedy_decode(&line, args.max_tokens)?);
        out.push('\n');
    }
    emit(args.out.as_deref(), &out)
}

#[derive(Debug, Serialize)]
struct EvaluateReport {
    chrf: f64,
    segments: usize,
    term_segments: usize,
    #[serde(flatten)]
    term: Option<crate::eval::TermEvalResult>,
}

/// Accepts both plain preference examples and split examples.
#[derive(Deserialize)]
#[serde(untagged)]
enum AnyExample {
    Split(SplitExample),
    Plain(PreferenceExample),
}

impl AnyExample {
    fn into_example(self) -> PreferenceExample {
        match self {
            AnyExample::Split(s) => s.example,
            AnyExample::Plain(p) => p,
        }
    }
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let dict = load_dict(&args.dict)?;
    let examples: Vec<PreferenceExample> = read_jsonl::<AnyExample>(&args.corpus)?
        .into_iter()
        .map(AnyExample::into_example)
        .collect();
    let hyps = read_lines(&args.hypotheses)?;
    if hyps.len() != examples.len() {
        return Err(EvalError::LengthMismatch {
            hypotheses: hyps.len(),
            examples: examples.len(),
        }
        .into());
    }
    let pairs: Vec<(&str, &str)> = hyps.iter().zip(&examples).map(|(h, e)| (h.as_str(), e.y_w.as_str())).collect();
    let chrf = mean(&segment_chrf(&pairs)?);
    let (th, te): (Vec<&str>, Vec<&PreferenceExample>) = hyps
        .iter()
        .zip(&examples)
        .filter(|(_, e)| e.is_term())
        .map(|(h, e)| (h.as_str(), e))
        .unzip();
    let term = if te.is_empty() {
        None
    } else {
        Some(term_eval(&th, &te, &dict, args.threshold)?)
    };
    let report = EvaluateReport {
        chrf,
        segments: examples.len(),
        term_segments: te.len(),
        term,
    };
    emit(args.out.as_deref(), &pretty(&report))
}

fn read_scores(path: &Path) -> Result<Vec<f64>> {
    read_lines(path)?
        .iter()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse()
                .map_err(|_| CliError::Config(format!("{}:{}: not a number: {l}", path.display(), i + 1)))
        })
        .collect()
}

pub fn cmd_significance(args: &SignificanceArgs) -> Result<()> {
    let a = read_scores(&args.a)?;
    let b = read_scores(&args.b)?;
    let result = approx_randomization_test(&a, &b, mean, args.iterations, args.seed)?;
    emit(args.out.as_deref(), &pretty(&result))
}

#[derive(Debug, Deserialize)]
struct LossCheckRecord {
    w: SequenceScore,
    #[serde(default)]
    l: Option<SequenceScore>,
}

#[derive(Debug, Serialize)]
struct LossCheckLine {
    index: usize,
    value: f64,
    grad_w: Vec<f64>,
    grad_l: Vec<f64>,
    max_residual: f64,
}

pub fn cmd_loss_check(args: &LossCheckArgs) -> Result<()> {
    let config = match (&args.config, args.setting) {
        (Some(_), Some(_)) => return Err(CliError::Config("give either --config or --setting".into())),
        (Some(path), None) => read_json::<LossConfig>(path)?,
        (None, Some(id)) => LossConfig::setting(id)?,
        (None, None) => LossConfig::setting(6)?,
    };
    config.validate()?;
    let records: Vec<LossCheckRecord> = read_jsonl(&args.corpus)?;
    let mut out = String::new();
    for (index, r) in records.iter().enumerate() {
        let l = r.l.clone().unwrap_or_else(|| SequenceScore::new(Vec::new()));
        let value = loss_term(&r.w, &l, &config)?;
        let (rw, rl) = finite_difference_residuals(&r.w, &l, &config, args.step)?;
        let max_residual = rw.iter().chain(&rl).copied().fold(0.0, f64::max);
        let line = LossCheckLine {
            index,
            value: value.value,
            grad_w: value.grad_w,
            grad_l: value.grad_l,
            max_residual,
        };
        out.push_str(&serde_json::to_string(&line).expect("serializable"));
        out.push('\n');
    }
    emit(args.out.as_deref(), &out)
}

// ---- experiment ----

fn default_threshold() -> f64 {
    DEFAULT_THRESHOLD
}

fn default_iterations() -> usize {
    1000
}

fn default_held_out_fraction() -> f64 {
    0.1
}

/// A full run: data, baseline pre-training, fine-tuning settings, evaluation.
///
/// Data comes either from `dictionary` + `corpus` files or from `synth`.
/// Seeds of every phase (and of the generator) derive from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dictionary: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<PathBuf>,
    /// Optional JSON-lines {"source", "target"} pairs for baseline
    /// pre-training; the training split's post-edits are used otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrain: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSpec>,
    pub val_size: usize,
    pub test_size: usize,
    pub baseline: TrainConfig,
    pub fine_tuning: TrainConfig,
    pub settings: Vec<u8>,
    pub out: PathBuf,
    pub seed: u64,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub model: ModelDims,
    #[serde(default = "default_iterations")]
    pub significance_iterations: usize,
    /// Share of the pre-training pairs held out for baseline early stopping.
    #[serde(default = "default_held_out_fraction")]
    pub held_out_fraction: f64,
}

impl ExperimentConfig {
    /// A synthetic-data experiment with the default training recipe.
    pub fn synthetic(spec: SynthSpec, settings: Vec<u8>, out: PathBuf, seed: u64) -> Self {
        let val_size = 2 * (spec.corpus_size / 12);
        Self {
            dictionary: None,
            corpus: None,
            pretrain: None,
            synth: Some(spec),
            val_size,
            test_size: val_size,
            baseline: TrainConfig::pretraining(0),
            fine_tuning: TrainConfig::fine_tuning(LossConfig::setting(6).expect("valid setting"), 0),
            settings,
            out,
            seed,
            threshold: DEFAULT_THRESHOLD,
            model: ModelDims::default(),
            significance_iterations: default_iterations(),
            held_out_fraction: default_held_out_fraction(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.synth, &self.dictionary, &self.corpus) {
            (Some(spec), None, None) => spec.validate()?,
            (None, Some(d), Some(c)) => {
                for p in [d, c].into_iter().chain(&self.pretrain) {
                    if !p.exists() {
                        return Err(CliError::Config(format!("{} does not exist", p.display())));
                    }
                }
            }
            _ => {
                return Err(CliError::Config(
                    "give either `synth` or both `dictionary` and `corpus`".into(),
                ))
            }
        }
        if let Some(bad) = self.settings.iter().find(|s| !(1..=6).contains(*s)) {
            return Err(CliError::Config(format!("setting {bad} is not in 1..=6")));
        }
        if !(self.threshold > 0.0 && self.threshold <= 1.0) {
            return Err(CliError::Config(format!("threshold {} is not in (0, 1]", self.threshold)));
        }
        if !(self.held_out_fraction > 0.0 && self.held_out_fraction < 1.0) {
            return Err(CliError::Config("held_out_fraction must lie in (0, 1)".into()));
        }
        if self.significance_iterations == 0 {
            return Err(CliError::Config("significance_iterations must be positive".into()));
        }
        self.baseline.validate()?;
        self.fine_tuning.validate()?;
        Ok(())
    }

    /// Hex SHA-256 of the JSON encoding, ignoring the output directory.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(&Self {
            out: PathBuf::new(),
            ..self.clone()
        })
        .expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSizes {
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub test_term: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowSignificance {
    pub chrf: SignificanceResult,
    pub term_accuracy: SignificanceResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    #[serde(flatten)]
    pub row: EvaluationRow,
    pub steps: usize,
    pub best_step: usize,
    /// Against the baseline; absent on the baseline row.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub significance: Option<RowSignificance>,
    pub chrf_marker: String,
    pub term_marker: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config_hash: String,
    pub seed: u64,
    pub mining: MiningReport,
    pub split: SplitSizes,
    pub random_baseline_accuracy: f64,
    pub rows: Vec<ReportRow>,
}

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;
pub const TERM_MARKER: &str = "*";
pub const CHRF_MARKER: &str = "†";

/// `marker` when `result` is significant at the 0.05 level.
pub fn significance_marker(result: &SignificanceResult, marker: &str) -> String {
    if result.is_significant(SIGNIFICANCE_LEVEL) {
        marker.to_string()
    } else {
        String::new()
    }
}

impl ExperimentReport {
    /// Tab-separated table: ChrF, then the term metrics, as percentages.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("system\tchrf\texact_accuracy\tvalid_rate\tmt_repeat_rate\n");
        for r in &self.rows {
            writeln!(
                s,
                "{}\t{:.2}{}\t{:.2}{}\t{:.2}\t{:.2}",
                r.row.name,
                r.row.chrf,
                r.chrf_marker,
                100.0 * r.row.exact_accuracy,
                r.term_marker,
                100.0 * r.row.valid_rate,
                100.0 * r.row.mt_repeat_rate
            )
            .expect("writing to a String");
        }
        s
    }

    pub fn row(&self, setting: Option<u8>) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.row.setting == setting)
    }
}

/// Everything an experiment produces, before it is written to disk.
pub struct ExperimentOutput {
    pub report: ExperimentReport,
    pub dictionary: TermDictionary,
    pub dataset: DatasetSplit,
    pub baseline: ToyTranslator,
    pub baseline_history: TrainingHistory,
    pub baseline_eval: ModelEvaluation,
    pub settings: Vec<(u8, crate::toymodel::train::SettingRun)>,
    pub(crate) checkpoint_hashes: Vec<String>,
}

struct PreparedData {
    dictionary: TermDictionary,
    mining: MiningReport,
    dataset: DatasetSplit,
    pretrain: Vec<ParallelPair>,
    vocab: Vocab,
}

fn prepare_data(config: &ExperimentConfig) -> Result<PreparedData> {
    let (dictionary, triples, pretrain) = match &config.synth {
        Some(spec) => {
            let spec = SynthSpec {
                seed: derive_seed(config.seed, "synth"),
                ..spec.clone()
            };
            let c = gen_synthetic_corpus(&spec)?;
            let mut triples = c.triples;
            triples.extend(c.non_term);
            (c.dictionary, triples, Some(c.pretrain))
        }
        None => {
            let dict = load_dict(config.dictionary.as_deref().expect("validated"))?;
            let triples: Vec<SegmentTriple> = read_jsonl(config.corpus.as_deref().expect("validated"))?;
            let pretrain = match &config.pretrain {
                Some(p) => Some(read_jsonl::<ParallelPair>(p)?),
                None => None,
            };
            (dict, triples, pretrain)
        }
    };
    let mined = mine_corpus(
        triples.into_iter().map(Ok::<_, std::convert::Infallible>),
        &dictionary,
        config.threshold,
        &WhitespaceTokenizer,
    )?;
    let non_term: Vec<PreferenceExample> = mined.non_term.iter().map(PreferenceExample::non_term).collect();
    let dataset = split_dataset(
        &mined.examples,
        &non_term,
        config.val_size,
        config.test_size,
        derive_seed(config.seed, "split"),
    )?;
    let pretrain = pretrain.unwrap_or_else(|| {
        dataset
            .train
            .iter()
            .map(|e| ParallelPair {
                source: e.example.x.clone(),
                target: e.example.y_w.clone(),
            })
            .collect()
    });
    let vocab = Vocab::build(
        split_texts(&dataset).chain(pretrain.iter().flat_map(|p| [p.source.as_str(), p.target.as_str()])),
    );
    Ok(PreparedData {
        dictionary,
        mining: mined.report,
        dataset,
        pretrain,
        vocab,
    })
}

fn pretrain_baseline(
    config: &ExperimentConfig,
    data: &PreparedData,
) -> Result<(ToyTranslator, TrainingHistory)> {
    let init = ToyTranslator::random(data.vocab.clone(), config.model, derive_seed(config.seed, "init"));
    let n_held = ((data.pretrain.len() as f64 * config.held_out_fraction).round() as usize)
        .clamp(1, data.pretrain.len().saturating_sub(1).max(1));
    if data.pretrain.len() < 2 {
        return Err(CliError::Config("need at least two pre-training pairs".into()));
    }
    let (held, train_pairs) = data.pretrain.split_at(n_held);
    let examples: Vec<PreferenceExample> = train_pairs
        .iter()
        .map(|p| PreferenceExample {
            x: p.source.clone(),
            y_w: p.target.clone(),
            ..Default::default()
        })
        .collect();
    let evaluator = HeldOutLossEvaluator {
        pairs: held.iter().map(|p| (p.source.clone(), p.target.clone())).collect(),
    };
    let tc = TrainConfig {
        seed: derive_seed(config.seed, "baseline"),
        early_stopping_metric: StoppingMetric::HeldOutLoss,
        ..config.baseline.clone()
    };
    Ok(train_with(&init, &examples, &tc, &evaluator)?)
}

fn compare(
    base: &ModelEvaluation,
    other: &ModelEvaluation,
    iterations: usize,
    seed: u64,
) -> Result<RowSignificance> {
    let chrf = approx_randomization_test(
        &other.chrf_segments,
        &base.chrf_segments,
        mean,
        iterations,
        derive_seed(seed, "chrf"),
    )?;
    let term_accuracy = approx_randomization_test(
        &other.term.exact_indicators(),
        &base.term.exact_indicators(),
        mean,
        iterations,
        derive_seed(seed, "term-accuracy"),
    )?;
    Ok(RowSignificance { chrf, term_accuracy })
}

/// Runs every phase in order; errors name the failing phase.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    phase("config", config.validate())?;
    let data = phase("data", prepare_data(config))?;
    let (baseline, baseline_history) = phase("baseline", pretrain_baseline(config, &data))?;
    let max_tokens = config.fine_tuning.max_new_tokens;
    let baseline_eval = phase(
        "baseline evaluation",
        evaluate_model(
            "baseline",
            None,
            &baseline,
            &data.dataset.test,
            &data.dictionary,
            config.threshold,
            max_tokens,
        )
        .map_err(CliError::from),
    )?;

    let test_terms: Vec<(String, String)> = DatasetSplit::term_examples(&data.dataset.test)
        .iter()
        .filter_map(|e| e.w_variants.first().map(|v| (e.source_term.clone(), v.clone())))
        .collect();
    let random_baseline = random_baseline_accuracy(&test_terms, &data.dictionary)?;

    let mut rows = vec![ReportRow {
        row: baseline_eval.row.clone(),
        steps: baseline_history.steps,
        best_step: baseline_history.best_step,
        significance: None,
        chrf_marker: String::new(),
        term_marker: String::new(),
    }];
    let mut settings = Vec::new();
    for &id in &config.settings {
        let name = format!("setting {id}");
        let base = TrainConfig {
            seed: derive_seed(config.seed, &format!("setting-{id}")),
            ..config.fine_tuning.clone()
        };
        let run = phase(
            name.clone(),
            run_setting(id, &baseline, &data.dataset, &data.dictionary, &base).map_err(CliError::from),
        )?;
        let sig = phase(
            format!("{name} significance"),
            compare(
                &baseline_eval,
                &run.evaluation,
                config.significance_iterations,
                derive_seed(config.seed, &format!("significance-{id}")),
            ),
        )?;
        rows.push(ReportRow {
            row: run.evaluation.row.clone(),
            steps: run.history.steps,
            best_step: run.history.best_step,
            chrf_marker: significance_marker(&sig.chrf, CHRF_MARKER),
            term_marker: significance_marker(&sig.term_accuracy, TERM_MARKER),
            significance: Some(sig),
        });
        settings.push((id, run));
    }

    let config_hash = config.hash();
    let report = ExperimentReport {
        config_hash: config_hash.clone(),
        seed: config.seed,
        mining: data.mining.clone(),
        split: SplitSizes {
            train: data.dataset.train.len(),
            validation: data.dataset.validation.len(),
            test: data.dataset.test.len(),
            test_term: test_terms.len(),
        },
        random_baseline_accuracy: random_baseline,
        rows,
    };
    let mut checkpoint_hashes = vec![config.baseline.hash()];
    checkpoint_hashes.extend(settings.iter().map(|(id, _)| {
        TrainConfig {
            loss: LossConfig::setting(*id).expect("validated"),
            ..config.fine_tuning.clone()
        }
        .hash()
    }));
    Ok(ExperimentOutput {
        report,
        dictionary: data.dictionary,
        dataset: data.dataset,
        baseline,
        baseline_history,
        baseline_eval,
        settings,
        checkpoint_hashes,
    })
}

/// Writes the report (JSON and TSV), checkpoints, histories and test
/// translations under `dir`.
pub fn write_experiment(dir: &Path, output: &ExperimentOutput) -> Result<()> {
    create_dir(dir)?;
    write_text(&dir.join("report.json"), &pretty(&output.report))?;
    write_text(&dir.join("report.tsv"), &output.report.to_tsv())?;
    let ckpt_dir = dir.join("checkpoints");
    create_dir(&ckpt_dir)?;
    let mut models = vec![("baseline".to_string(), &output.baseline, &output.baseline_history, &output.baseline_eval)];
    for (id, run) in &output.settings {
        models.push((format!("setting-{id}"), &run.model, &run.history, &run.evaluation));
    }
    for ((name, model, history, eval), hash) in models.into_iter().zip(&output.checkpoint_hashes) {
        write_text(&ckpt_dir.join(format!("{name}.json")), &model.to_checkpoint_json(Some(hash))?)?;
        write_text(&dir.join(format!("history-{name}.jsonl")), &history.to_jsonl())?;
        let mut hyps = eval.hypotheses.join("\n");
        hyps.push('\n');
        write_text(&dir.join(format!("translations-{name}.txt")), &hyps)?;
    }
    Ok(())
}

pub fn cmd_experiment(args: &ExperimentArgs) -> Result<()> {
    let mut config: ExperimentConfig = read_json(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = &args.out {
        config.out = out.clone();
    }
    if !args.setting.is_empty() {
        config.settings = args.setting.clone();
    }
    if let Some(d) = &args.dict {
        config.dictionary = Some(d.clone());
    }
    if let Some(c) = &args.corpus {
        config.corpus = Some(c.clone());
    }
    if let Some(t) = args.threshold {
        config.threshold = t;
    }
    let output = run_experiment(&config)?;
    phase("write", write_experiment(&config.out, &output))?;
    eprint!("{}", output.report.to_tsv());
    Ok(())
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code, printing errors to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
