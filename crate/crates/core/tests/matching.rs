mod common;

use proptest::prelude::*;

use common::{containment_oracle, indel_dp, partial_ratio_oracle};
use termpo::matching::{
    find_term_matches, indel_distance, normalized_similarity, partial_ratio_alignment, resolve_containment,
    FuzzyMatch, MatchError,
};
use termpo::text::{case_fold, char_slice};

fn chars(s: &str) -> Vec<char> {
    s.chars().collect()
}

proptest! {
    #[test]
    fn indel_matches_dp(a in "[abcü]{0,12}", b in "[abcü]{0,12}") {
        prop_assert_eq!(indel_distance(&a, &b), indel_dp(&chars(&a), &chars(&b)));
    }

    #[test]
    fn indel_is_a_metric(a in "[abc]{0,8}", b in "[abc]{0,8}", c in "[abc]{0,8}") {
        prop_assert_eq!(indel_distance(&a, &b), indel_distance(&b, &a));
        prop_assert_eq!(indel_distance(&a, &a), 0);
        prop_assert!(indel_distance(&a, &c) <= indel_distance(&a, &b) + indel_distance(&b, &c));
        let len = a.chars().count() + b.chars().count();
        prop_assert!(indel_distance(&a, &b) <= len);
        prop_assert_eq!(indel_distance(&a, &b) % 2, len % 2);
    }

    #[test]
    fn similarity_range(a in "[abc]{0,8}", b in "[abc]{0,8}") {
        let s = normalized_similarity(&a, &b);
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert_eq!(s, normalized_similarity(&b, &a));
        prop_assert_eq!(s == 1.0, a == b);
    }

    #[test]
    fn alignment_matches_exhaustive_search(needle in "[abcd ]{1,8}", hay in "[abcd ]{1,30}") {
        let got = partial_ratio_alignment(&needle, &hay).unwrap();
        let (s, e, score) = partial_ratio_oracle(&needle, &hay);
        prop_assert_eq!((got.start, got.end), (s, e));
        prop_assert!((got.score - score).abs() <= 1e-12);
    }

    #[test]
    fn embedded_needle_scores_one(pre in "[ab]{0,6}", needle in "[abc]{1,6}", post in "[ab]{0,6}") {
        let hay = format!("{pre}{needle}{post}");
        let m = partial_ratio_alignment(&needle, &hay).unwrap();
        prop_assert_eq!(m.score, 1.0);
        prop_assert_eq!(char_slice(&hay, m.start, m.end), needle.as_str());
    }

    #[test]
    fn threshold_one_is_substring_search(text in "[abAB ]{0,20}", variant in "[ab]{1,4}") {
        let found = find_term_matches(&text, &[&variant], 1.0).unwrap();
        let contains = case_fold(&text).contains(&case_fold(&variant));
        prop_assert_eq!(!found.is_empty(), contains);
    }

    #[test]
    fn containment_matches_pairwise_oracle(
        raw in prop::collection::vec((0usize..20, 1usize..6, 0usize..3, 0usize..3), 0..10)
    ) {
        let set: Vec<FuzzyMatch> = raw
            .iter()
            .map(|&(start, len, v, s)| FuzzyMatch {
                start,
                end: start + len,
                variant: ["x", "y", "z"][v].to_string(),
                score: [0.95, 0.98, 1.0][s],
            })
            .collect();
        let kept = resolve_containment(&set);
        prop_assert_eq!(&kept, &containment_oracle(&set));
        // no survivor lies inside another survivor
        for (i, a) in kept.iter().enumerate() {
            for (j, b) in kept.iter().enumerate() {
                prop_assert!(i == j || !a.contains(b));
            }
        }
    }
}

#[test]
fn pluralized_variant_clears_threshold() {
    let m = partial_ratio_alignment("Übergabe", "die Übergaben der Ware").unwrap();
    assert_eq!(m.score, 1.0);
    assert_eq!((m.start, m.end), (4, 12));
    let found = find_term_matches("Die Übergaben", &["Übergabe", "Transfer"], 0.95).unwrap();
    assert_eq!(found.len(), 1);
    assert_eq!(found[0].variant, "Übergabe");
}

#[test]
fn matching_is_case_insensitive_with_original_spans() {
    let text = "ÜBERGABE erfolgt";
    let found = find_term_matches(text, &["übergabe"], 0.95).unwrap();
    assert_eq!(char_slice(text, found[0].start, found[0].end), "ÜBERGABE");
}

#[test]
fn no_shared_characters() {
    let m = partial_ratio_alignment("xyz", "abc").unwrap();
    assert_eq!((m.start, m.end, m.score), (0, 1, 0.0));
}

#[test]
fn domain_errors() {
    assert_eq!(partial_ratio_alignment("", "abc").unwrap_err(), MatchError::EmptyNeedle);
    assert!(find_term_matches("", &["a"], 0.95).unwrap().is_empty());
    assert!(find_term_matches("a", &["a"], 1.5).is_err());
}

#[test]
fn longer_match_wins_containment() {
    let found = find_term_matches("Umlagerung", &["Umlagerung", "Lagerung"], 0.95).unwrap();
    assert_eq!(found.len(), 2);
    let kept = resolve_containment(&found);
    assert_eq!(kept.len(), 1);
    assert_eq!(kept[0].variant, "Umlagerung");
}
