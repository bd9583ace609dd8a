//! Baseline pre-training followed by fine-tuning settings on synthetic data.
//!
//! Usage: `cargo run --release --example desk_experiment -- [seed] [setting ...]`

use std::time::Instant;

use termpo::cli::{run_experiment, ExperimentConfig};
use termpo::toymodel::SynthSpec;

fn main() {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(0, |s| s.parse().expect("seed"));
    let mut settings: Vec<u8> = args.map(|s| s.parse().expect("setting id")).collect();
    if settings.is_empty() {
        settings = vec![3, 6];
    }
    let spec = SynthSpec::new(20, 3, 3, 2400, seed);
    let config = ExperimentConfig::synthetic(spec, settings, "desk-experiment".into(), seed);
    let started = Instant::now();
    let out = run_experiment(&config).expect("experiment");
    print!("{}", out.report.to_tsv());
    println!(
        "random baseline {:.2}%, train {} / validation {} / test {}, {:.1}s",
        100.0 * out.report.random_baseline_accuracy,
        out.report.split.train,
        out.report.split.validation,
        out.report.split.test,
        started.elapsed().as_secs_f64()
    );
    for r in &out.report.rows {
        println!("{}: {} steps, best at {}", r.row.name, r.steps, r.best_step);
    }
}
