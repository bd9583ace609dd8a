//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use std::collections::BTreeMap;

use termpo::FuzzyMatch;

/// Edit distance with unit insertions/deletions and substitutions costing 2.
pub fn indel_dp(a: &[char], b: &[char]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    for i in 1..=a.len() {
        let mut cur = vec![i; b.len() + 1];
        for j in 1..=b.len() {
            let sub = prev[j - 1] + if a[i - 1] == b[j - 1] { 0 } else { 2 };
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        prev = cur;
    }
    prev[b.len()]
}

/// Best substring of `hay` for `needle` by exhaustive search.
///
/// Scores are compared as exact fractions `(m + L - d) / (m + L)`; ties keep
/// the earliest start, then the shortest window.
pub fn partial_ratio_oracle(needle: &str, hay: &str) -> (usize, usize, f64) {
    let n: Vec<char> = needle.chars().collect();
    let h: Vec<char> = hay.chars().collect();
    let mut best = (0, 1, 0usize, 1usize);
    for s in 0..h.len() {
        for e in s + 1..=h.len() {
            let den = n.len() + (e - s);
            let num = den - indel_dp(&n, &h[s..e]);
            if num * best.3 > best.2 * den {
                best = (s, e, num, den);
            }
        }
    }
    (best.0, best.1, best.2 as f64 / best.3 as f64)
}

/// Survivors of containment resolution by pairwise comparison: a match is
/// dropped when another one spans it and is longer, or has the same span
/// and ranks higher (score, then variant, then position in the input).
pub fn containment_oracle(matches: &[FuzzyMatch]) -> Vec<FuzzyMatch> {
    let beats = |(i, a): (usize, &FuzzyMatch), (j, b): (usize, &FuzzyMatch)| -> bool {
        if !(a.start <= b.start && b.end <= a.end) || i == j {
            return false;
        }
        if a.end - a.start > b.end - b.start {
            return true;
        }
        if a.score != b.score {
            return a.score > b.score;
        }
        if a.variant != b.variant {
            return a.variant < b.variant;
        }
        i < j
    };
    let mut out: Vec<FuzzyMatch> = matches
        .iter()
        .enumerate()
        .filter(|&(j, b)| !matches.iter().enumerate().any(|(i, a)| beats((i, a), (j, b))))
        .map(|(_, m)| m.clone())
        .collect();
    out.sort_by(|a, b| (a.start, a.end, &a.variant).cmp(&(b.start, b.end, &b.variant)));
    out
}

/// ChrF by listing every n-gram as a string and counting matches pairwise.
pub fn chrf_oracle(hyp: &str, reference: &str, max_n: usize, beta: f64) -> f64 {
    let h: Vec<char> = hyp.chars().filter(|c| !c.is_whitespace()).collect();
    let r: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
    let grams = |s: &[char], n: usize| -> Vec<String> {
        (0..s.len().saturating_sub(n - 1))
            .filter(|&i| i + n <= s.len())
            .map(|i| s[i..i + n].iter().collect())
            .collect()
    };
    let (mut p, mut rc, mut k) = (0.0, 0.0, 0.0);
    for n in 1..=max_n {
        let (hg, rg) = (grams(&h, n), grams(&r, n));
        if hg.is_empty() || rg.is_empty() {
            break;
        }
        let mut count: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
        for g in &hg {
            count.entry(g).or_default().0 += 1;
        }
        for g in &rg {
            count.entry(g).or_default().1 += 1;
        }
        let matched: usize = count.values().map(|&(a, b)| a.min(b)).sum();
        p += matched as f64 / hg.len() as f64;
        rc += matched as f64 / rg.len() as f64;
        k += 1.0;
    }
    if k == 0.0 {
        return 0.0;
    }
    let (p, r) = (p / k, rc / k);
    let b2 = beta * beta;
    if b2 * p + r == 0.0 {
        return 0.0;
    }
    100.0 * (1.0 + b2) * p * r / (b2 * p + r)
}

/// Exact share of the 2^n swap patterns whose mean difference is at least
/// as extreme as the observed one.
pub fn exact_swap_p(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    assert!(n <= 20);
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let observed = (mean(a) - mean(b)).abs();
    let mut hits = 0u64;
    for pattern in 0u64..(1 << n) {
        let (mut sa, mut sb) = (0.0, 0.0);
        for i in 0..n {
            if pattern >> i & 1 == 1 {
                sa += b[i];
                sb += a[i];
            } else {
                sa += a[i];
                sb += b[i];
            }
        }
        let d = ((sa - sb) / n as f64).abs();
        if d >= observed - 1e-12 * observed.max(1.0) {
            hits += 1;
        }
    }
    hits as f64 / (1u64 << n) as f64
}

/// Central difference of `f` at `x`.
pub fn central_difference(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

/// `|a - b| <= rel * max(|a|, |b|) + abs`.
pub fn close(a: f64, b: f64, rel: f64, abs: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) + abs
}
