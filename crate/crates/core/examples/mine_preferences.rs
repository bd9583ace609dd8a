//! Mines preference pairs with token masks from (source, MT, post-edit) triples.
//!
//! Usage: `cargo run --example mine_preferences`

use termpo::dictionary::TermDictionary;
use termpo::mining::{mine_corpus, rejection_counts, split_dataset, PreferenceExample, SegmentTriple, WhitespaceTokenizer};

fn main() {
    let dict = TermDictionary::parse_tsv(include_str!("../fixtures/transfer.tsv")).expect("fixture");
    let triples = [
        SegmentTriple::new("plant stock transfer", "Übertragung des Bestands im Werk", "Umlagerung des Bestands im Werk"),
        SegmentTriple::new("transfer the order", "die Übergabe des Auftrags", "die Übergabe der Bestellung"),
        SegmentTriple::new("open the order", "den Auftrag öffnen", "die Bestellung öffnen"),
        SegmentTriple::new("transfer posting", "Buchung", "Umbuchung"),
    ];
    let mined = mine_corpus(triples.iter().cloned().map(Ok::<_, String>), &dict, 0.95, &WhitespaceTokenizer)
        .expect("valid threshold");

    for e in &mined.examples {
        let tokens = |s: &str, mask: &[usize]| -> Vec<String> {
            s.split_whitespace().enumerate().filter(|(i, _)| mask.contains(i)).map(|(_, t)| t.to_string()).collect()
        };
        println!("{} | {:?} over {:?}", e.source_term, e.w_variants, e.l_variants);
        println!("  y_w {:?} masked {:?}", e.y_w, tokens(&e.y_w, &e.delta_w));
        println!("  y_l {:?} masked {:?}", e.y_l, tokens(&e.y_l, &e.delta_l));
    }
    for (reason, count) in rejection_counts(&mined.report) {
        println!("rejected {reason:?}: {count}");
    }

    let non_term: Vec<PreferenceExample> = mined.non_term.iter().map(PreferenceExample::non_term).collect();
    let split = split_dataset(&mined.examples, &non_term, 0, 2, 7).expect("enough examples");
    println!("split: {} train, {} test", split.train.len(), split.test.len());
}
