//! Terminology disambiguation from post-edited machine translation.
//!
//! The crate covers the whole loop:
//!
//! * [`dictionary`]: one-to-many term dictionaries and their statistics,
//! * [`matching`]: indel-distance fuzzy matching and partial alignment,
//! * [`mining`]: turning (source, MT, post-edit) triples into preference
//!   examples with term-token masks, and balanced dataset splits,
//! * [`losses`]: preference-optimization and fine-tuning objectives (full
//!   sequence and term-masked) with analytic gradients,
//! * [`toymodel`]: a small autoregressive translator, a synthetic ambiguous
//!   terminology corpus and a trainer with early stopping,
//! * [`eval`]: term accuracy, ChrF and approximate randomization tests,
//! * [`cli`]: the command implementations behind the `termpo` binary.
//!
//! See the `examples/` directory of this crate for one runnable program per
//! capability.

pub mod cli;
pub mod dictionary;
pub mod eval;
pub mod losses;
pub mod matching;
pub mod mining;
pub mod text;
pub mod toymodel;

pub use dictionary::{dictionary_stats, load_dictionary, random_baseline_accuracy, DictStats, TermDictionary};
pub use eval::{approx_randomization_test, chrf, corpus_chrf, term_eval, SignificanceResult, TermEvalResult};
pub use losses::{LossConfig, LossValue, SequenceScore};
pub use matching::{find_term_matches, indel_distance, normalized_similarity, partial_ratio_alignment, resolve_containment, FuzzyMatch};
pub use mining::{mine_corpus, mine_example, split_dataset, DatasetSplit, PreferenceExample, SegmentTriple};
