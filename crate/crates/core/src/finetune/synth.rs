use std::collections::HashSet;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::bio::Tag;
use super::conll::{TaggedCorpus, TaggedSentence};
use crate::error::{Error, Result};
use crate::synth::{Lexicon, FUNCTION_WORDS};

pub const CLASSES: [&str; 3] = ["PER", "LOC", "ORG"];
const TRIGGERS: [&str; 3] = ["by", "in", "at"];

/// Templated sequence-labelling corpus over the toy lexicon.
///
/// Topic `t` supplies entities of class `CLASSES[t % 3]`. With `separable`
/// set every entity is one topic word, so the tag is a function of the token.
/// Otherwise entities span one or two words and, with probability
/// `ambiguity`, use a class-neutral cue word whose class is signalled only by
/// the preceding trigger word.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NerCorpusSpec {
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub entity_rate: f64,
    pub separable: bool,
    pub ambiguity: f64,
    pub n_topics: usize,
    pub words_per_topic: usize,
    pub seed: u64,
}

impl Default for NerCorpusSpec {
    fn default() -> Self {
        Self {
            n_train: 400,
            n_dev: 100,
            n_test: 100,
            min_len: 5,
            max_len: 10,
            entity_rate: 0.3,
            separable: false,
            ambiguity: 0.3,
            n_topics: 40,
            words_per_topic: 10,
            seed: 0,
        }
    }
}

fn sentence<R: Rng + ?Sized>(lex: &Lexicon, spec: &NerCorpusSpec, rng: &mut R) -> TaggedSentence {
    let len = rng.random_range(spec.min_len..=spec.max_len);
    let (mut toks, mut tags): (Vec<String>, Vec<Tag>) = (Vec::new(), Vec::new());
    while toks.len() < len {
        if !rng.random_bool(spec.entity_rate) {
            toks.push(FUNCTION_WORDS.choose(rng).unwrap().to_string());
            tags.push(Tag::O);
            continue;
        }
        let t = rng.random_range(0..lex.topics.len());
        let c = t % CLASSES.len();
        let class = CLASSES[c].to_string();
        if spec.separable {
            toks.push(lex.topics[t].choose(rng).unwrap().clone());
            tags.push(Tag::B(class));
            continue;
        }
        let ambiguous = rng.random_bool(spec.ambiguity);
        if ambiguous {
            toks.push(TRIGGERS[c].to_string());
            tags.push(Tag::O);
        }
        let first = if ambiguous {
            lex.cues.choose(rng).unwrap().clone()
        } else {
            lex.topics[t].choose(rng).unwrap().clone()
        };
        toks.push(first);
        tags.push(Tag::B(class.clone()));
        if rng.random_bool(0.5) {
            toks.push(lex.topics[t].choose(rng).unwrap().clone());
            tags.push(Tag::I(class));
        }
    }
    TaggedSentence { tokens: toks, tags }
}

/// Deterministic corpus with no sentence repeated within or across splits.
pub fn ner_corpus(spec: &NerCorpusSpec) -> Result<TaggedCorpus> {
    if spec.min_len == 0 || spec.min_len > spec.max_len || spec.n_topics < CLASSES.len() {
        return Err(Error::config(
            "ner",
            "need 0 < min_len <= max_len and at least 3 topics",
        ));
    }
    let lex = Lexicon::new(spec.n_topics, spec.words_per_topic);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut seen = HashSet::new();
    let mut draw = |n: usize| -> Result<Vec<TaggedSentence>> {
        let mut out = Vec::with_capacity(n);
        let mut misses = 0;
        while out.len() < n {
            let s = sentence(&lex, spec, &mut rng);
            if seen.insert(s.tokens.clone()) {
                out.push(s);
            } else {
                misses += 1;
                if misses > 100 * n.max(1) {
                    return Err(Error::Sampling(
                        "synthetic NER corpus too small for unique sentences".into(),
                    ));
                }
            }
        }
        Ok(out)
    };
    let corpus = TaggedCorpus {
        train: draw(spec.n_train)?,
        dev: draw(spec.n_dev)?,
        test: draw(spec.n_test)?,
    };
    corpus.validate()?;
    Ok(corpus)
}

/// Plain text of every split, one sentence per line.
pub fn corpus_text(c: &TaggedCorpus) -> String {
    c.splits()
        .into_iter()
        .flatten()
        .map(|s| s.tokens.join(" ") + "\n")
        .collect()
}
