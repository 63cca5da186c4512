use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::TokenId;

pub const PAD: TokenId = 0;
pub const UNK: TokenId = 1;
pub const MASK: TokenId = 2;
pub const EOS: TokenId = 3;

const SPECIALS: [&str; 4] = ["<pad>", "<unk>", "<mask>", "<eos>"];
const PUNCT: &[char] = &['.', ',', '!', '?', ';', ':'];

/// Maps raw sentences to token ids.
pub trait Tokenizer {
    fn encode(&self, sentence: &str) -> Vec<TokenId>;
    fn decode(&self, ids: &[TokenId]) -> String;
    fn vocab_size(&self) -> usize;
    fn mask_id(&self) -> TokenId;
    fn is_special(&self, id: TokenId) -> bool;
}

/// Splits text into sentences on newlines and after `.`, `!` and `?`.
pub fn split_sentences(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for line in text.lines() {
        let mut cur = String::new();
        for ch in line.chars() {
            cur.push(ch);
            if matches!(ch, '.' | '!' | '?') {
                push_trimmed(&mut out, &cur);
                cur.clear();
            }
        }
        push_trimmed(&mut out, &cur);
    }
    out
}

fn push_trimmed(out: &mut Vec<String>, s: &str) {
    let t = s.trim();
    if !t.is_empty() {
        out.push(t.to_string());
    }
}

fn words(sentence: &str) -> Vec<&str> {
    let mut out = Vec::new();
    for raw in sentence.split_whitespace() {
        let mut w = raw;
        let mut trailing = Vec::new();
        while let Some(c) = w.chars().last().filter(|c| PUNCT.contains(c)) {
            if w.len() == c.len_utf8() {
                break;
            }
            let cut = w.len() - c.len_utf8();
            trailing.push(&w[cut..]);
            w = &w[..cut];
        }
        out.push(w);
        out.extend(trailing.into_iter().rev());
    }
    out
}

/// Whitespace tokenizer with a corpus-built vocabulary.
///
/// Ids 0..4 are reserved for `<pad>`, `<unk>`, `<mask>` and `<eos>`; the rest
/// are ordered by descending corpus frequency, ties broken lexicographically.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WhitespaceTokenizer {
    vocab: Vec<String>,
    #[serde(skip)]
    lookup: HashMap<String, TokenId>,
}

impl WhitespaceTokenizer {
    pub fn fit(text: &str, max_vocab: Option<usize>) -> Result<Self> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        let sentences = split_sentences(text);
        for s in &sentences {
            for w in words(s) {
                if !SPECIALS.contains(&w) {
                    *counts.entry(w).or_default() += 1;
                }
            }
        }
        if counts.is_empty() {
            return Err(Error::Input("corpus contains no tokens".into()));
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        if let Some(cap) = max_vocab {
            ranked.truncate(cap.saturating_sub(SPECIALS.len()));
        }
        let vocab = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(ranked.into_iter().map(|(w, _)| w.to_string()))
            .collect();
        Ok(Self::from_vocab(vocab))
    }

    pub fn from_vocab(vocab: Vec<String>) -> Self {
        let lookup = vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as TokenId))
            .collect();
        Self { vocab, lookup }
    }

    /// Rebuilds the reverse map after deserialization.
    pub fn reindex(self) -> Self {
        Self::from_vocab(self.vocab)
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn id(&self, word: &str) -> Option<TokenId> {
        self.lookup.get(word).copied()
    }
}

impl Tokenizer for WhitespaceTokenizer {
    fn encode(&self, sentence: &str) -> Vec<TokenId> {
        words(sentence)
            .into_iter()
            .map(|w| self.lookup.get(w).copied().unwrap_or(UNK))
            .collect()
    }

    fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&i| self.vocab.get(i as usize).map_or("<unk>", String::as_str))
            .collect::<Vec<_>>()
            .join(" ")
    }

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn mask_id(&self) -> TokenId {
        MASK
    }

    fn is_special(&self, id: TokenId) -> bool {
        (id as usize) < SPECIALS.len()
    }
}
