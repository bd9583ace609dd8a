//! Trains the toy translator with the likelihood objective, then fine-tunes it
//! under one preference setting and compares term accuracy on the test split.
//!
//! Usage: `cargo run --release --example train_setting -- [setting] [seed]`

use termpo::losses::LossConfig;
use termpo::mining::{mine_corpus, split_dataset, PreferenceExample, WhitespaceTokenizer};
use termpo::toymodel::{
    derive_seed, evaluate_model, gen_synthetic_corpus, run_setting, train, ModelDims, SynthSpec, ToyTranslator,
    TrainConfig, Vocab,
};

fn main() {
    let mut args = std::env::args().skip(1);
    let setting: u8 = args.next().map_or(6, |s| s.parse().expect("setting id"));
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));

    let corpus = gen_synthetic_corpus(&SynthSpec::new(12, 3, 2, 900, seed)).expect("valid spec");
    let mined = mine_corpus(corpus.triples.iter().cloned().map(Ok::<_, String>), &corpus.dictionary, 0.95, &WhitespaceTokenizer)
        .expect("valid threshold");
    let non_term: Vec<PreferenceExample> = corpus.non_term.iter().map(PreferenceExample::non_term).collect();
    let split = split_dataset(&mined.examples, &non_term, 150, 150, seed).expect("enough examples");
    let texts = split.train.iter().chain(&split.validation).chain(&split.test).flat_map(|e| {
        [e.example.x.as_str(), e.example.y_w.as_str(), e.example.y_l.as_str()]
    });
    let init = ToyTranslator::random(Vocab::build(texts), ModelDims::default(), derive_seed(seed, "init"));

    let sft = TrainConfig::fine_tuning(LossConfig::baseline(), derive_seed(seed, "sft"));
    let (baseline, history) = train(&init, &split, &sft, &corpus.dictionary).expect("training");
    let before = evaluate_model("baseline", None, &baseline, &split.test, &corpus.dictionary, 0.95, 64)
        .expect("evaluation");
    println!("baseline: {} steps, exact {:.1}%, MT repeat {:.1}%, ChrF {:.1}",
        history.steps, 100.0 * before.row.exact_accuracy, 100.0 * before.row.mt_repeat_rate, before.row.chrf);

    let run = run_setting(setting, &baseline, &split, &corpus.dictionary, &sft).expect("fine-tuning");
    let after = &run.evaluation.row;
    println!("setting {setting}: {} steps, exact {:.1}%, MT repeat {:.1}%, ChrF {:.1}",
        run.history.steps, 100.0 * after.exact_accuracy, 100.0 * after.mt_repeat_rate, after.chrf);
}
