use std::collections::BTreeSet;

use proptest::prelude::*;

use termpo::dictionary::TermDictionary;
use termpo::mining::{
    build_masks, mine_corpus, mine_example, split_dataset, CharTokenizer, ExampleKind, MiningError, PreferenceExample,
    Rejection, SegmentTriple, WhitespaceTokenizer,
};
use termpo::toymodel::{gen_synthetic_corpus, SynthSpec};
use termpo::FuzzyMatch;

fn transfer() -> TermDictionary {
    TermDictionary::parse_tsv(include_str!("../fixtures/transfer.tsv")).unwrap()
}

fn mine(s: &str, mt: &str, pe: &str) -> Result<PreferenceExample, Rejection> {
    mine_example(&SegmentTriple::new(s, mt, pe), &transfer(), 0.95, &WhitespaceTokenizer)
}

#[test]
fn accepted_example_has_masks_on_term_words() {
    let e = mine("plant stock transfer", "Übertragung des Bestands", "Übergabe des Bestands").unwrap();
    assert_eq!(e.source_term, "transfer");
    assert_eq!(e.w_variants, ["Übergabe"]);
    assert_eq!(e.l_variants, ["Übertragung"]);
    assert_eq!(e.delta_w, [0]);
    assert_eq!(e.delta_l, [0]);
}

#[test]
fn rejection_reasons() {
    assert_eq!(mine("hello", "a", "b").unwrap_err(), Rejection::NoSourceTerm);
    assert_eq!(mine("transfer", "nichts", "Übergabe").unwrap_err(), Rejection::MissingMtTerm);
    assert_eq!(mine("transfer", "Übergabe", "nichts").unwrap_err(), Rejection::MissingPeTerm);
    assert_eq!(mine("transfer", "Übergabe", "die Übergabe").unwrap_err(), Rejection::SameTerm);
    assert_eq!(Rejection::SameTerm.to_string(), "same-term");
}

#[test]
fn report_counts_every_segment() {
    let triples = vec![
        SegmentTriple::new("plant stock transfer", "Übertragung des Bestands", "Übergabe des Bestands"),
        SegmentTriple::new("stock transfer order", "Übergabe der Ware", "Übergabe der Waren"),
        SegmentTriple::new("hello world", "Hallo Welt", "Hallo, Welt"),
    ];
    let mined = mine_corpus(triples.into_iter().map(Ok::<_, String>), &transfer(), 0.95, &WhitespaceTokenizer).unwrap();
    let r = &mined.report;
    assert_eq!((r.total, r.accepted, r.same_term, r.no_source_term), (3, 1, 1, 1));
    assert_eq!(mined.accepted_ids, [0]);
    assert_eq!(mined.non_term.len(), 1);
    let json = serde_json::to_value(r).unwrap();
    assert_eq!(json["same-term"], 1);
    assert_eq!(json["no-source-term"], 1);
}

#[test]
fn malformed_segment_is_reported_with_index() {
    let items: Vec<Result<SegmentTriple, String>> =
        vec![Ok(SegmentTriple::new("a", "b", "c")), Err("bad json".into())];
    match mine_corpus(items, &transfer(), 0.95, &WhitespaceTokenizer) {
        Err(MiningError::Segment { index, .. }) => assert_eq!(index, 1),
        other => panic!("{other:?}"),
    }
}

#[test]
fn masks_cover_overlapping_tokens() {
    let m = |start, end| FuzzyMatch {
        start,
        end,
        variant: "x".into(),
        score: 1.0,
    };
    assert_eq!(build_masks("ab cd ef", &[m(3, 5)], &WhitespaceTokenizer).unwrap(), [1]);
    assert_eq!(build_masks("ab cd ef", &[m(1, 4)], &WhitespaceTokenizer).unwrap(), [0, 1]);
    assert_eq!(build_masks("ab cd", &[m(1, 3)], &CharTokenizer).unwrap(), [1, 2]);
    assert!(build_masks("ab", &[m(1, 5)], &WhitespaceTokenizer).is_err());
}

#[test]
fn synthetic_corpus_is_fully_accepted() {
    let corpus = gen_synthetic_corpus(&SynthSpec::new(20, 3, 3, 600, 1)).unwrap();
    let mined = mine_corpus(
        corpus.triples.iter().cloned().map(Ok::<_, String>),
        &corpus.dictionary,
        0.95,
        &WhitespaceTokenizer,
    )
    .unwrap();
    assert_eq!(mined.report.accepted, 600);
    for (e, g) in mined.examples.iter().zip(&corpus.ground_truth) {
        assert_eq!(e.w_variants, [g.correct_variant.clone()]);
        assert_eq!(e.l_variants, [g.mt_variant.clone()]);
        assert_eq!(e.delta_w, [2]);
    }
    let non = mine_corpus(
        corpus.non_term.iter().cloned().map(Ok::<_, String>),
        &corpus.dictionary,
        0.95,
        &WhitespaceTokenizer,
    )
    .unwrap();
    assert_eq!(non.report.no_source_term, corpus.non_term.len());
}

fn pools(n_term: usize, n_non: usize) -> (Vec<PreferenceExample>, Vec<PreferenceExample>) {
    let term = (0..n_term)
        .map(|i| PreferenceExample {
            x: format!("t{i}"),
            source_term: "t".into(),
            ..Default::default()
        })
        .collect();
    let non = (0..n_non)
        .map(|i| PreferenceExample::non_term(&SegmentTriple::new(format!("n{i}"), "a", "b")))
        .collect();
    (term, non)
}

proptest! {
    #[test]
    fn split_is_balanced_and_disjoint(n_term in 10usize..60, n_non in 10usize..40, val in 0usize..10, test in 0usize..10, seed in 0u64..1000) {
        let (term, non) = pools(n_term, n_non);
        let s = split_dataset(&term, &non, val, test, seed).unwrap();
        let count = |part: &[termpo::mining::SplitExample], k| part.iter().filter(|e| e.kind == k).count();
        prop_assert_eq!(count(&s.validation, ExampleKind::Term), val.div_ceil(2));
        prop_assert_eq!(count(&s.validation, ExampleKind::NonTerm), val / 2);
        prop_assert_eq!(count(&s.test, ExampleKind::Term), test.div_ceil(2));
        prop_assert_eq!(count(&s.test, ExampleKind::NonTerm), test / 2);
        prop_assert_eq!(s.train.len(), n_term - val.div_ceil(2) - test.div_ceil(2));
        let ids = |part: &[termpo::mining::SplitExample], k| -> BTreeSet<usize> {
            part.iter().filter(|e| e.kind == k).map(|e| e.id).collect()
        };
        let (a, b, c) = (ids(&s.train, ExampleKind::Term), ids(&s.validation, ExampleKind::Term), ids(&s.test, ExampleKind::Term));
        prop_assert!(a.is_disjoint(&b) && a.is_disjoint(&c) && b.is_disjoint(&c));
        prop_assert_eq!(a.len() + b.len() + c.len(), n_term);
        prop_assert_eq!(&s, &split_dataset(&term, &non, val, test, seed).unwrap());
    }
}

#[test]
fn split_rejects_small_pools() {
    let (term, non) = pools(3, 1);
    assert!(matches!(
        split_dataset(&term, &non, 4, 4, 0),
        Err(MiningError::InsufficientPool { pool: "term", .. })
    ));
}

#[test]
fn preference_example_wire_format() {
    let e = mine("plant stock transfer", "Übertragung des Bestands", "Übergabe des Bestands").unwrap();
    let line = serde_json::to_string(&e).unwrap();
    let back: PreferenceExample = serde_json::from_str(&line).unwrap();
    assert_eq!(back, e);
    let minimal: PreferenceExample = serde_json::from_str(r#"{"x":"a","y_w":"b","y_l":"c"}"#).unwrap();
    assert!(!minimal.is_term());
}
