use std::collections::BTreeMap;

use super::tokenizer::{split_sentences, Tokenizer};
use crate::error::{Error, Result};
use crate::TokenId;

/// Which tokens may serve as episode class words.
#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyBand {
    /// The most frequent tokens are treated as function words and skipped.
    pub exclude_top: usize,
    /// Minimum number of distinct sentences containing the token.
    pub min_sentences: usize,
    /// Sentences longer than this are left out of the index.
    pub max_sentence_len: Option<usize>,
}

impl FrequencyBand {
    pub fn new(k_shots: usize, q_queries: usize) -> Self {
        Self {
            exclude_top: 100,
            min_sentences: k_shots + q_queries,
            max_sentence_len: None,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CorpusIndex {
    pub sentences: Vec<Vec<TokenId>>,
    /// Candidate token -> ascending ids of sentences containing it.
    pub postings: BTreeMap<TokenId, Vec<usize>>,
    pub mask_id: TokenId,
}

impl CorpusIndex {
    pub fn build(text: &str, tokenizer: &impl Tokenizer, band: &FrequencyBand) -> Result<Self> {
        let sentences: Vec<Vec<TokenId>> = split_sentences(text)
            .iter()
            .map(|s| tokenizer.encode(s))
            .filter(|s| !s.is_empty())
            .collect();
        Self::from_sentences(
            sentences,
            |id| tokenizer.is_special(id),
            tokenizer.mask_id(),
            band,
        )
    }

    pub fn from_sentences(
        sentences: Vec<Vec<TokenId>>,
        is_special: impl Fn(TokenId) -> bool,
        mask_id: TokenId,
        band: &FrequencyBand,
    ) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::Input("corpus is empty after tokenization".into()));
        }
        let mut counts: BTreeMap<TokenId, usize> = BTreeMap::new();
        for s in &sentences {
            for &t in s {
                *counts.entry(t).or_default() += 1;
            }
        }
        let mut ranked: Vec<(TokenId, usize)> = counts
            .into_iter()
            .filter(|&(t, _)| !is_special(t))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let band_tokens: Vec<TokenId> = ranked.iter().skip(band.exclude_top).map(|p| p.0).collect();

        let sentences: Vec<Vec<TokenId>> = match band.max_sentence_len {
            Some(max) => sentences.into_iter().filter(|s| s.len() <= max).collect(),
            None => sentences,
        };
        let mut postings: BTreeMap<TokenId, Vec<usize>> =
            band_tokens.iter().map(|&t| (t, Vec::new())).collect();
        for (sid, s) in sentences.iter().enumerate() {
            for &t in s {
                if let Some(p) = postings.get_mut(&t) {
                    if p.last() != Some(&sid) {
                        p.push(sid);
                    }
                }
            }
        }
        postings.retain(|_, p| p.len() >= band.min_sentences);
        if postings.is_empty() {
            return Err(Error::CorpusTooSmall(format!(
                "no token outside the top {} occurs in at least {} sentences",
                band.exclude_top, band.min_sentences
            )));
        }
        Ok(Self {
            sentences,
            postings,
            mask_id,
        })
    }

    pub fn candidates(&self) -> Vec<TokenId> {
        self.postings.keys().copied().collect()
    }

    pub fn n_candidates(&self) -> usize {
        self.postings.len()
    }
}
