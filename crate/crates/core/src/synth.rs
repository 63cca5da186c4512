//! Deterministic synthetic corpora for toy runs and tests.
//!
//! Sentences are drawn from topics: every content word belongs to exactly one
//! topic, and a sentence opens with its topic's cue word followed by a mix of
//! function words and words from that topic. A masked content word is thus
//! predictable from its left context. Cue words are frequent enough to sit in
//! the excluded top band of the episode sampler.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const FUNCTION_WORDS: [&str; 40] = [
    "the", "a", "of", "and", "to", "in", "is", "was", "on", "with", "for", "at", "by", "it",
    "that", "this", "from", "as", "we", "they", "he", "she", "but", "or", "not", "have", "had",
    "be", "were", "are", "so", "then", "there", "when", "near", "after", "before", "into", "over",
    "under",
];

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyCorpusSpec {
    pub n_topics: usize,
    pub words_per_topic: usize,
    pub n_sentences: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that a slot after the first is a topic word.
    pub topic_density: f64,
    pub seed: u64,
}

impl Default for ToyCorpusSpec {
    fn default() -> Self {
        Self {
            n_topics: 40,
            words_per_topic: 10,
            n_sentences: 6000,
            min_len: 6,
            max_len: 10,
            topic_density: 0.5,
            seed: 0,
        }
    }
}

fn syllable(i: usize) -> String {
    let c = CONSONANTS[i % CONSONANTS.len()] as char;
    let v = VOWELS[(i / CONSONANTS.len()) % VOWELS.len()] as char;
    format!("{c}{v}")
}

/// `i`-th pseudo word: two or more consonant-vowel syllables.
pub fn pseudo_word(i: usize) -> String {
    let base = CONSONANTS.len() * VOWELS.len();
    let mut w = syllable(i % base);
    let mut rest = i / base;
    loop {
        w.push_str(&syllable(rest % base));
        rest /= base;
        if rest == 0 {
            break;
        }
    }
    w
}

/// Topic-partitioned content vocabulary with one cue word per topic.
#[derive(Clone, Debug, PartialEq)]
pub struct Lexicon {
    pub topics: Vec<Vec<String>>,
    pub cues: Vec<String>,
}

impl Lexicon {
    pub fn new(n_topics: usize, words_per_topic: usize) -> Self {
        let topics = (0..n_topics)
            .map(|t| {
                (0..words_per_topic)
                    .map(|j| pseudo_word(t * words_per_topic + j))
                    .collect()
            })
            .collect();
        let first_cue = n_topics * words_per_topic;
        let cues = (0..n_topics).map(|t| pseudo_word(first_cue + t)).collect();
        Self { topics, cues }
    }

    pub fn topic_of(&self, word: &str) -> Option<usize> {
        self.topics.iter().position(|t| t.iter().any(|w| w == word))
    }
}

pub fn toy_sentence<R: Rng + ?Sized>(lex: &Lexicon, spec: &ToyCorpusSpec, rng: &mut R) -> String {
    let t = rng.random_range(0..lex.topics.len());
    let topic = &lex.topics[t];
    let len = rng.random_range(spec.min_len..=spec.max_len);
    let mut words: Vec<&str> = Vec::with_capacity(len + 1);
    words.push(&lex.cues[t]);
    words.push(FUNCTION_WORDS.choose(rng).unwrap());
    for _ in 2..len {
        let w = if rng.random_bool(spec.topic_density) {
            topic.choose(rng).unwrap().as_str()
        } else {
            FUNCTION_WORDS.choose(rng).unwrap()
        };
        words.push(w);
    }
    if !words.iter().any(|w| topic.iter().any(|t| t == w)) {
        words[len - 1] = topic.choose(rng).unwrap();
    }
    format!("{} .", words.join(" "))
}

/// One sentence per line.
pub fn toy_corpus(spec: &ToyCorpusSpec) -> String {
    let lex = Lexicon::new(spec.n_topics, spec.words_per_topic);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = String::new();
    for _ in 0..spec.n_sentences {
        out.push_str(&toy_sentence(&lex, spec, &mut rng));
        out.push('\n');
    }
    out
}
