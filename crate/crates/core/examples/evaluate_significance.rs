//! Scores two systems with ChrF and term accuracy, then tests whether their
//! difference is significant with approximate randomization.
//!
//! Usage: `cargo run --example evaluate_significance`

use termpo::dictionary::TermDictionary;
use termpo::eval::{approx_randomization_test, mean, segment_chrf, term_eval};
use termpo::mining::{mine_example, SegmentTriple, WhitespaceTokenizer};

fn main() {
    let dict = TermDictionary::parse_tsv(include_str!("../fixtures/transfer.tsv")).expect("fixture");
    let example = mine_example(
        &SegmentTriple::new("stock transfer", "Übertragung des Bestands", "Umlagerung des Bestands"),
        &dict,
        0.95,
        &WhitespaceTokenizer,
    )
    .expect("term example");
    let examples = vec![example; 24];

    // system A mostly produces the preferred variant, system B repeats the MT term
    let a: Vec<&str> = (0..24).map(|i| if i % 6 == 0 { "Umbuchung des Bestands" } else { "Umlagerung des Bestands" }).collect();
    let b: Vec<&str> = (0..24).map(|i| if i % 6 == 0 { "Umlagerung des Bestands" } else { "Übertragung des Bestands" }).collect();

    for (name, hyps) in [("A", &a), ("B", &b)] {
        let r = term_eval(hyps, &examples, &dict, 0.95).expect("aligned inputs");
        let pairs: Vec<(&str, &str)> = hyps.iter().zip(&examples).map(|(h, e)| (*h, e.y_w.as_str())).collect();
        let chrf = mean(&segment_chrf(&pairs).expect("valid orders"));
        println!(
            "{name}: ChrF {chrf:.1}, exact {:.1}%, valid {:.1}%, MT repeat {:.1}%",
            100.0 * r.exact_accuracy,
            100.0 * r.valid_rate,
            100.0 * r.mt_repeat_rate
        );
    }

    let score = |hyps: &[&str]| term_eval(hyps, &examples, &dict, 0.95).expect("aligned inputs").exact_indicators();
    let result = approx_randomization_test(&score(&a), &score(&b), mean, 10_000, 0).expect("paired scores");
    println!(
        "exact accuracy difference {:+.3}, p = {:.4} ({} iterations)",
        result.observed_delta, result.p_value, result.iterations
    );
}
