//! A desk-scale translator, synthetic data and the two-phase training recipe.

pub mod model;
pub mod synth;
pub mod train;

pub use model::{ModelDims, ModelError, ToyTranslator, Vocab};
pub use synth::{gen_synthetic_corpus, GroundTruth, ParallelPair, SynthCorpus, SynthSpec};
pub use train::{
    derive_seed, evaluate_model, run_setting, train, train_with, EvaluationRow, StoppingMetric, TrainConfig,
    TrainError, Trainer, TrainingHistory,
};
