//! Loads a term dictionary and prints its variant statistics.
//!
//! Usage: `cargo run --example dictionary_stats -- [dictionary.tsv]`

use termpo::dictionary::{dictionary_stats, load_dictionary, random_baseline_accuracy};

fn main() {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/transfer.tsv").to_string());
    let dict = load_dictionary(&path).expect("readable dictionary");
    let stats = dictionary_stats(&dict).expect("non-empty dictionary");
    println!("{path}: {} source terms", stats.term_count);
    println!(
        "variants per term: mean {:.2}, std {:.2}, max {}",
        stats.mean_variants, stats.std_variants, stats.max_variants
    );
    for (variants, terms) in &stats.histogram {
        println!("  {variants:>3} variants: {terms} terms");
    }

    // picking a variant uniformly at random, once per term
    let pairs: Vec<(&str, &str)> = dict.iter().map(|(t, v)| (t, v[0].as_str())).collect();
    let acc = random_baseline_accuracy(&pairs, &dict).expect("known terms");
    println!("random-choice accuracy {:.2}%", 100.0 * acc);
}
