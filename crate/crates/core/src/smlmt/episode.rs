use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::index::CorpusIndex;
use crate::error::{Error, Result};
use crate::TokenId;

const MAX_ATTEMPTS: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeItem {
    pub sentence_id: usize,
    pub tokens: Vec<TokenId>,
    pub mask_position: usize,
    pub label: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpisodeShape {
    pub n_ways: usize,
    pub k_shots: usize,
    pub q_queries: usize,
    pub mask_id: TokenId,
}

/// One N-way K-shot masked-word classification task.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub config: EpisodeShape,
    pub class_words: Vec<TokenId>,
    pub support: Vec<EpisodeItem>,
    pub query: Vec<EpisodeItem>,
}

/// Masks every occurrence of any class word; returns the first position of `own`.
fn mask_sentence(
    tokens: &[TokenId],
    own: TokenId,
    class_words: &[TokenId],
    mask: TokenId,
) -> Option<(Vec<TokenId>, usize)> {
    let pos = tokens.iter().position(|&t| t == own)?;
    let masked = tokens
        .iter()
        .map(|t| if class_words.contains(t) { mask } else { *t })
        .collect();
    Some((masked, pos))
}

pub fn sample_episode<R: Rng + ?Sized>(
    idx: &CorpusIndex,
    n_ways: usize,
    k_shots: usize,
    q_queries: usize,
    rng: &mut R,
) -> Result<Episode> {
    if n_ways == 0 || k_shots == 0 || q_queries == 0 {
        return Err(Error::Sampling(
            "n_ways, k_shots and q_queries must be positive".into(),
        ));
    }
    let candidates = idx.candidates();
    if candidates.len() < n_ways {
        return Err(Error::Sampling(format!(
            "{n_ways} ways requested but only {} candidate words qualify",
            candidates.len()
        )));
    }
    let per_class = k_shots + q_queries;
    let mut last_short = None;
    for _ in 0..MAX_ATTEMPTS {
        let class_words: Vec<TokenId> = sample(rng, candidates.len(), n_ways)
            .into_iter()
            .map(|i| candidates[i])
            .collect();
        let mut used = BTreeSet::new();
        let mut chosen: Vec<Vec<usize>> = Vec::with_capacity(n_ways);
        for &w in &class_words {
            let post = &idx.postings[&w];
            let order = sample(rng, post.len(), post.len());
            let picks: Vec<usize> = order
                .into_iter()
                .map(|i| post[i])
                .filter(|s| !used.contains(s))
                .take(per_class)
                .collect();
            if picks.len() < per_class {
                last_short = Some(w);
                break;
            }
            used.extend(picks.iter().copied());
            chosen.push(picks);
        }
        if chosen.len() < n_ways {
            continue;
        }
        let mut support = Vec::with_capacity(n_ways * k_shots);
        let mut query = Vec::with_capacity(n_ways * q_queries);
        for (label, (picks, &w)) in chosen.iter().zip(&class_words).enumerate() {
            for (j, &sid) in picks.iter().enumerate() {
                let (tokens, mask_position) =
                    mask_sentence(&idx.sentences[sid], w, &class_words, idx.mask_id).ok_or_else(
                        || {
                            Error::Contract(format!(
                                "posting for {w} points at sentence {sid} without it"
                            ))
                        },
                    )?;
                let item = EpisodeItem {
                    sentence_id: sid,
                    tokens,
                    mask_position,
                    label,
                };
                if j < k_shots {
                    support.push(item);
                } else {
                    query.push(item);
                }
            }
        }
        return Ok(Episode {
            config: EpisodeShape {
                n_ways,
                k_shots,
                q_queries,
                mask_id: idx.mask_id,
            },
            class_words,
            support,
            query,
        });
    }
    Err(Error::Sampling(format!(
        "could not find {per_class} unused sentences for word {} after {MAX_ATTEMPTS} attempts",
        last_short.unwrap_or_default()
    )))
}

/// Builds an episode from explicit, unmasked sentences (labels index `class_words`).
pub fn assemble_episode(
    class_words: Vec<TokenId>,
    support: &[(Vec<TokenId>, usize)],
    query: &[(Vec<TokenId>, usize)],
    mask_id: TokenId,
) -> Result<Episode> {
    let n_ways = class_words.len();
    if n_ways == 0 || support.is_empty() || query.is_empty() {
        return Err(Error::Input(
            "episode needs classes, support and query items".into(),
        ));
    }
    let build = |items: &[(Vec<TokenId>, usize)], offset: usize| -> Result<Vec<EpisodeItem>> {
        items
            .iter()
            .enumerate()
            .map(|(i, (toks, label))| {
                let w = *class_words
                    .get(*label)
                    .ok_or_else(|| Error::Input(format!("label {label} out of range")))?;
                let (tokens, mask_position) = mask_sentence(toks, w, &class_words, mask_id)
                    .ok_or_else(|| Error::Input(format!("item {i} lacks its class word")))?;
                Ok(EpisodeItem {
                    sentence_id: offset + i,
                    tokens,
                    mask_position,
                    label: *label,
                })
            })
            .collect()
    };
    let support_items = build(support, 0)?;
    let query_items = build(query, support.len())?;
    let k_shots = support.len() / n_ways;
    let ep = Episode {
        config: EpisodeShape {
            n_ways,
            k_shots,
            q_queries: query.len().div_ceil(n_ways),
            mask_id,
        },
        class_words,
        support: support_items,
        query: query_items,
    };
    Ok(ep)
}

impl Episode {
    /// Checks disjointness, label balance, masking and leakage-freedom.
    pub fn validate(&self) -> Result<()> {
        let c = self.config;
        if self.class_words.len() != c.n_ways {
            return Err(Error::Input(
                "class_words length differs from n_ways".into(),
            ));
        }
        if self.support.len() != c.n_ways * c.k_shots || self.query.is_empty() {
            return Err(Error::Input(
                "support must hold n_ways * k_shots items and query must be nonempty".into(),
            ));
        }
        let mut per_class = vec![0usize; c.n_ways];
        for it in &self.support {
            *per_class.get_mut(it.label).ok_or_else(|| {
                Error::Input(format!("support label {} out of range", it.label))
            })? += 1;
        }
        if per_class.iter().any(|&n| n != c.k_shots) {
            return Err(Error::Input(format!(
                "unbalanced support labels {per_class:?}"
            )));
        }
        let support_ids: BTreeSet<usize> = self.support.iter().map(|i| i.sentence_id).collect();
        if support_ids.len() != self.support.len() {
            return Err(Error::Input("support repeats a sentence".into()));
        }
        for it in &self.query {
            if support_ids.contains(&it.sentence_id) {
                return Err(Error::Input(format!(
                    "sentence {} in both support and query",
                    it.sentence_id
                )));
            }
            if it.label >= c.n_ways {
                return Err(Error::Input(format!(
                    "query label {} out of range",
                    it.label
                )));
            }
        }
        for it in self.support.iter().chain(&self.query) {
            if it.tokens.get(it.mask_position) != Some(&c.mask_id) {
                return Err(Error::Input(format!(
                    "sentence {} lacks the mask at its mask position",
                    it.sentence_id
                )));
            }
            if it.tokens.iter().any(|t| self.class_words.contains(t)) {
                return Err(Error::Input(format!(
                    "sentence {} leaks a class word",
                    it.sentence_id
                )));
            }
        }
        Ok(())
    }

    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json_line(line: &str) -> Result<Self> {
        Ok(serde_json::from_str(line)?)
    }
}

pub fn write_dump(path: &Path, episodes: &[Episode]) -> Result<()> {
    let mut f =
        std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
    for ep in episodes {
        writeln!(f, "{}", ep.to_json_line()?).map_err(|e| Error::io(path, e))?;
    }
    f.flush().map_err(|e| Error::io(path, e))
}

pub fn read_dump(path: &Path) -> Result<Vec<Episode>> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in std::io::BufReader::new(f).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            out.push(Episode::from_json_line(&line)?);
        }
    }
    Ok(out)
}

/// Bits of label uncertainty in an `n`-way task.
pub fn task_entropy_bits(n: usize) -> f64 {
    (n as f64).log2()
}
