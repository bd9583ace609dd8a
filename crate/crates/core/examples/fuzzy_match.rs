//! Fuzzy term detection: best-window alignment, thresholds and containment.
//!
//! Usage: `cargo run --example fuzzy_match -- [text] [variant ...]`

use termpo::matching::{find_term_matches, partial_ratio_alignment, resolve_containment};
use termpo::text::char_slice;

fn main() {
    let mut args = std::env::args().skip(1);
    let text = args.next().unwrap_or_else(|| "Die Übergaben der Warenüberführung".to_string());
    let mut variants: Vec<String> = args.collect();
    if variants.is_empty() {
        variants = ["Übergabe", "Überführung", "Warenüberführung", "Umbuchung"].map(String::from).to_vec();
    }

    println!("text: {text}");
    for v in &variants {
        let m = partial_ratio_alignment(&v.to_lowercase(), &text.to_lowercase()).expect("non-empty input");
        println!("  {v:<18} best window {:?} score {:.3}", char_slice(&text, m.start, m.end), m.score);
    }

    for threshold in [0.8, 0.95, 1.0] {
        let matches = find_term_matches(&text, &variants, threshold).expect("valid threshold");
        let kept = resolve_containment(&matches);
        let names: Vec<&str> = kept.iter().map(|m| m.variant.as_str()).collect();
        println!("threshold {threshold}: {} matches, {} after containment {names:?}", matches.len(), kept.len());
    }
}
