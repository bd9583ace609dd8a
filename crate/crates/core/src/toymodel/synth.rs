//! Synthetic ambiguous-terminology corpora.
//!
//! Every term has `variants_per_term` valid translations. A context cue word
//! in the source sentence decides which one is correct. The MT output prefers
//! the term's first ("house default") variant, so it is wrong whenever the cue
//! asks for another one; the post-edit always uses the correct variant.
//!
//! A separate pre-training corpus stands in for general in-domain post-edits
//! by inconsistent editors: with probability `default_bias` a term is written
//! with the house default regardless of the cue.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dictionary::TermDictionary;
use crate::mining::SegmentTriple;
use crate::text::case_fold;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("invalid synthetic corpus spec: {0}")]
pub struct SynthError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_source_terms: usize,
    pub variants_per_term: usize,
    pub n_context_cues: usize,
    /// Number of term-bearing (source, MT, post-edit) triples.
    pub corpus_size: usize,
    pub seed: u64,
    /// Segments without terminology; defaults to `corpus_size / 4`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub non_term_size: Option<usize>,
    /// Pre-training pairs; defaults to `2 * corpus_size`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pretrain_size: Option<usize>,
    /// Probability that a pre-training segment uses the house default variant.
    #[serde(default = "default_bias")]
    pub default_bias: f64,
}

fn default_bias() -> f64 {
    0.7
}

const LEXICON_SIZE: usize = 8;

impl SynthSpec {
    pub fn new(n_source_terms: usize, variants_per_term: usize, n_context_cues: usize, corpus_size: usize, seed: u64) -> Self {
        Self {
            n_source_terms,
            variants_per_term,
            n_context_cues,
            corpus_size,
            seed,
            non_term_size: None,
            pretrain_size: None,
            default_bias: default_bias(),
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        if self.variants_per_term < 2 {
            return Err(SynthError("variants_per_term must be at least 2".into()));
        }
        if self.n_source_terms == 0 || self.n_context_cues == 0 {
            return Err(SynthError("need at least one term and one context cue".into()));
        }
        if !(0.0..=1.0).contains(&self.default_bias) {
            return Err(SynthError("default_bias must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn non_term_size(&self) -> usize {
        self.non_term_size.unwrap_or(self.corpus_size / 4)
    }

    pub fn pretrain_size(&self) -> usize {
        self.pretrain_size.unwrap_or(2 * self.corpus_size)
    }
}

/// What the generator planted in one triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub segment: usize,
    pub source_term: String,
    pub cue: String,
    pub correct_variant: String,
    pub mt_variant: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParallelPair {
    pub source: String,
    pub target: String,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub dictionary: TermDictionary,
    pub triples: Vec<SegmentTriple>,
    pub ground_truth: Vec<GroundTruth>,
    pub non_term: Vec<SegmentTriple>,
    pub pretrain: Vec<ParallelPair>,
}

/// A bilingual word: source spelling and its translation.
type Entry = (String, String);

struct World {
    terms: Vec<String>,
    variants: Vec<Vec<String>>,
    offsets: Vec<usize>,
    cues: Vec<Entry>,
    subjects: Vec<Entry>,
    objects: Vec<Entry>,
    nouns: Vec<Entry>,
}

/// Pronounceable pseudo-words, at most 7 characters long and never a
/// substring of one another, so a 0.95 fuzzy match can only be verbatim.
struct WordMaker {
    rng: ChaCha8Rng,
    taken: Vec<String>,
}

impl WordMaker {
    const CONSONANTS: &'static [u8] = b"bdfgklmnprstvz";
    const VOWELS: &'static [u8] = b"aeiou";

    fn make(&mut self, syllables: usize, coda: bool, capital: bool) -> String {
        loop {
            let mut w = String::new();
            for _ in 0..syllables {
                w.push(*Self::CONSONANTS.choose(&mut self.rng).unwrap() as char);
                w.push(*Self::VOWELS.choose(&mut self.rng).unwrap() as char);
            }
            if coda {
                w.push(*Self::CONSONANTS.choose(&mut self.rng).unwrap() as char);
            }
            let folded = case_fold(&w);
            if self.taken.iter().any(|t| t.contains(&folded) || folded.contains(t.as_str())) {
                continue;
            }
            self.taken.push(folded);
            if capital {
                let mut cs = w.chars();
                let first = cs.next().unwrap().to_ascii_uppercase();
                w = std::iter::once(first).chain(cs).collect();
            }
            return w;
        }
    }

    fn entries(&mut self, n: usize) -> Vec<Entry> {
        (0..n)
            .map(|_| (self.make(2, true, false), self.make(2, true, false)))
            .collect()
    }
}

impl World {
    fn new(spec: &SynthSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        rng.set_stream(0);
        let mut words = WordMaker {
            rng: rng.clone(),
            taken: Vec::new(),
        };
        let terms: Vec<String> = (0..spec.n_source_terms).map(|_| words.make(3, false, false)).collect();
        let variants = (0..spec.n_source_terms)
            .map(|_| {
                (0..spec.variants_per_term)
                    .map(|_| words.make(3, true, true))
                    .collect()
            })
            .collect();
        let cues = words.entries(spec.n_context_cues);
        let subjects = words.entries(LEXICON_SIZE);
        let objects = words.entries(LEXICON_SIZE);
        let nouns = words.entries(LEXICON_SIZE);
        let offsets = (0..spec.n_source_terms)
            .map(|_| words.rng.gen_range(0..spec.variants_per_term))
            .collect();
        Self {
            terms,
            variants,
            offsets,
            cues,
            subjects,
            objects,
            nouns,
        }
    }

    fn correct(&self, term: usize, cue: usize) -> usize {
        (self.offsets[term] + cue) % self.variants[term].len()
    }

    fn dictionary(&self) -> TermDictionary {
        let mut dict = TermDictionary::new();
        for (t, vs) in self.terms.iter().zip(&self.variants) {
            dict.insert(t, vs).expect("generated entries are valid");
        }
        dict
    }

    fn sentence(&self, cue: usize, subj: usize, middle: &Entry, obj: usize) -> (String, String) {
        let (c, s, o) = (&self.cues[cue], &self.subjects[subj], &self.objects[obj]);
        (
            format!("{} {} {} {}", c.0, s.0, middle.0, o.0),
            format!("{} {} {} {}", c.1, s.1, middle.1, o.1),
        )
    }
}

struct Draw {
    term: usize,
    cue: usize,
    subj: usize,
    obj: usize,
}

fn draw(rng: &mut ChaCha8Rng, world: &World) -> Draw {
    Draw {
        term: rng.gen_range(0..world.terms.len()),
        cue: rng.gen_range(0..world.cues.len()),
        subj: rng.gen_range(0..LEXICON_SIZE),
        obj: rng.gen_range(0..LEXICON_SIZE),
    }
}

/// Builds the dictionary, the triples with their planted answers, a non-term
/// pool and the pre-training pairs. Deterministic in `spec`.
pub fn gen_synthetic_corpus(spec: &SynthSpec) -> Result<SynthCorpus, SynthError> {
    spec.validate()?;
    let world = World::new(spec);
    let k = spec.variants_per_term;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let mut triples = Vec::with_capacity(spec.corpus_size);
    let mut ground_truth = Vec::with_capacity(spec.corpus_size);
    for segment in 0..spec.corpus_size {
        let d = draw(&mut rng, &world);
        let correct = world.correct(d.term, d.cue);
        let wrong = if correct != 0 { 0 } else { rng.gen_range(1..k) };
        let term = &world.terms[d.term];
        let vs = &world.variants[d.term];
        let (source, pe) = world.sentence(d.cue, d.subj, &(term.clone(), vs[correct].clone()), d.obj);
        let (_, mt) = world.sentence(d.cue, d.subj, &(term.clone(), vs[wrong].clone()), d.obj);
        triples.push(SegmentTriple { source, mt, pe });
        ground_truth.push(GroundTruth {
            segment,
            source_term: term.clone(),
            cue: world.cues[d.cue].0.clone(),
            correct_variant: vs[correct].clone(),
            mt_variant: vs[wrong].clone(),
        });
    }

    rng.set_stream(2);
    rng.set_word_pos(0);
    let non_term = (0..spec.non_term_size())
        .map(|_| {
            let d = draw(&mut rng, &world);
            let noun = &world.nouns[rng.gen_range(0..LEXICON_SIZE)];
            let (source, pe) = world.sentence(d.cue, d.subj, noun, d.obj);
            let other = (d.obj + rng.gen_range(1..LEXICON_SIZE)) % LEXICON_SIZE;
            let (_, mt) = world.sentence(d.cue, d.subj, noun, other);
            SegmentTriple { source, mt, pe }
        })
        .collect();

    rng.set_stream(3);
    rng.set_word_pos(0);
    let pretrain = (0..spec.pretrain_size())
        .map(|_| {
            let d = draw(&mut rng, &world);
            let (source, target) = if rng.gen_bool(2.0 / 3.0) {
                let variant = if rng.gen_bool(spec.default_bias) {
                    0
                } else {
                    world.correct(d.term, d.cue)
                };
                let entry = (world.terms[d.term].clone(), world.variants[d.term][variant].clone());
                world.sentence(d.cue, d.subj, &entry, d.obj)
            } else {
                let noun = &world.nouns[rng.gen_range(0..LEXICON_SIZE)];
                world.sentence(d.cue, d.subj, noun, d.obj)
            };
            ParallelPair { source, target }
        })
        .collect();

    Ok(SynthCorpus {
        dictionary: world.dictionary(),
        triples,
        ground_truth,
        non_term,
        pretrain,
    })
}

/// Distinct words of a corpus, for sanity checks.
pub fn corpus_words(corpus: &SynthCorpus) -> HashSet<String> {
    let mut words = HashSet::new();
    let mut add = |s: &str| words.extend(s.split_whitespace().map(str::to_string));
    for t in corpus.triples.iter().chain(&corpus.non_term) {
        add(&t.source);
        add(&t.mt);
        add(&t.pe);
    }
    for p in &corpus.pretrain {
        add(&p.source);
        add(&p.target);
    }
    words
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unambiguous_terms() {
        assert!(gen_synthetic_corpus(&SynthSpec::new(3, 1, 2, 10, 0)).is_err());
    }

    #[test]
    fn seeded() {
        let spec = SynthSpec::new(5, 3, 3, 50, 11);
        let a = gen_synthetic_corpus(&spec).unwrap();
        let b = gen_synthetic_corpus(&spec).unwrap();
        assert_eq!(a.triples, b.triples);
        assert_eq!(a.pretrain, b.pretrain);
        assert_eq!(a.dictionary, b.dictionary);
        let c = gen_synthetic_corpus(&SynthSpec { seed: 12, ..spec }).unwrap();
        assert_ne!(a.triples, c.triples);
    }

    #[test]
    fn shapes() {
        let spec = SynthSpec::new(4, 3, 2, 40, 1);
        let c = gen_synthetic_corpus(&spec).unwrap();
        assert_eq!(c.dictionary.len(), 4);
        assert!(c.dictionary.iter().all(|(_, vs)| vs.len() == 3));
        assert_eq!(c.triples.len(), 40);
        assert_eq!(c.non_term.len(), 10);
        assert_eq!(c.pretrain.len(), 80);
        for (t, g) in c.triples.iter().zip(&c.ground_truth) {
            assert_ne!(t.mt, t.pe);
            assert!(t.pe.split_whitespace().any(|w| w == g.correct_variant));
            assert!(t.mt.split_whitespace().any(|w| w == g.mt_variant));
            assert_ne!(g.correct_variant, g.mt_variant);
        }
    }
}
