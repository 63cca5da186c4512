use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// One BIO tag.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tag {
    O,
    B(String),
    I(String),
}

impl Tag {
    pub fn class(&self) -> Option<&str> {
        match self {
            Tag::O => None,
            Tag::B(c) | Tag::I(c) => Some(c),
        }
    }
}

impl fmt::Display for Tag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tag::O => write!(f, "O"),
            Tag::B(c) => write!(f, "B-{c}"),
            Tag::I(c) => write!(f, "I-{c}"),
        }
    }
}

impl FromStr for Tag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "O" {
            return Ok(Tag::O);
        }
        match s.split_once('-') {
            Some(("B", c)) if !c.is_empty() => Ok(Tag::B(c.to_string())),
            Some(("I", c)) if !c.is_empty() => Ok(Tag::I(c.to_string())),
            _ => Err(Error::Input(format!("malformed BIO tag `{s}`"))),
        }
    }
}

impl Serialize for Tag {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Tag {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Rewrites every `I-X` that does not continue an `X` entity as `B-X`.
pub fn repair(tags: &[Tag]) -> Vec<Tag> {
    let mut out: Vec<Tag> = Vec::with_capacity(tags.len());
    for t in tags {
        let fixed = match t {
            Tag::I(c) if out.last().and_then(Tag::class) != Some(c.as_str()) => Tag::B(c.clone()),
            other => other.clone(),
        };
        out.push(fixed);
    }
    out
}

/// Entity mention: class and half-open token range.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub class: String,
    pub start: usize,
    pub end: usize,
}

/// Decodes spans after repairing dangling `I-` tags.
pub fn spans(tags: &[Tag]) -> Vec<Span> {
    let tags = repair(tags);
    let mut out = Vec::new();
    let mut open: Option<Span> = None;
    for (i, t) in tags.iter().enumerate() {
        match t {
            Tag::I(_) => {
                if let Some(s) = open.as_mut() {
                    s.end = i + 1;
                }
            }
            Tag::B(c) => {
                out.extend(open.take());
                open = Some(Span {
                    class: c.clone(),
                    start: i,
                    end: i + 1,
                });
            }
            Tag::O => out.extend(open.take()),
        }
    }
    out.extend(open);
    out
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold: usize,
    pub predicted: usize,
    pub correct: usize,
}

impl Score {
    fn from_counts(gold: usize, predicted: usize, correct: usize) -> Self {
        let (precision, recall, f1) = match (gold, predicted) {
            (0, 0) => (1.0, 1.0, 1.0),
            (0, _) | (_, 0) => (0.0, 0.0, 0.0),
            _ => {
                let p = correct as f64 / predicted as f64;
                let r = correct as f64 / gold as f64;
                let f = if correct == 0 {
                    0.0
                } else {
                    2.0 * p * r / (p + r)
                };
                (p, r, f)
            }
        };
        Self {
            precision,
            recall,
            f1,
            gold,
            predicted,
            correct,
        }
    }
}

/// Span-level micro scores plus the per-class breakdown.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub micro: Score,
    pub per_class: BTreeMap<String, Score>,
}

pub fn f1_report(gold: &[Vec<Tag>], pred: &[Vec<Tag>]) -> Result<F1Report> {
    if gold.len() != pred.len() {
        return Err(Error::Input(format!(
            "{} gold sequences but {} predicted",
            gold.len(),
            pred.len()
        )));
    }
    let mut counts: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    for (i, (g, p)) in gold.iter().zip(pred).enumerate() {
        if g.len() != p.len() {
            return Err(Error::Input(format!(
                "sequence {i}: {} gold tags but {} predicted",
                g.len(),
                p.len()
            )));
        }
        let gs: BTreeSet<Span> = spans(g).into_iter().collect();
        let ps: BTreeSet<Span> = spans(p).into_iter().collect();
        for s in &gs {
            counts.entry(s.class.clone()).or_default().0 += 1;
        }
        for s in &ps {
            let e = counts.entry(s.class.clone()).or_default();
            e.1 += 1;
            if gs.contains(s) {
                e.2 += 1;
            }
        }
    }
    let (mut tg, mut tp, mut tc) = (0, 0, 0);
    let per_class = counts
        .into_iter()
        .map(|(c, (g, p, k))| {
            tg += g;
            tp += p;
            tc += k;
            (c, Score::from_counts(g, p, k))
        })
        .collect();
    Ok(F1Report {
        micro: Score::from_counts(tg, tp, tc),
        per_class,
    })
}

/// Span-level micro-F1 over aligned tag sequences.
pub fn micro_f1(gold: &[Vec<Tag>], pred: &[Vec<Tag>]) -> Result<f64> {
    Ok(f1_report(gold, pred)?.micro.f1)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tags(s: &str) -> Vec<Tag> {
        s.split_whitespace().map(|t| t.parse().unwrap()).collect()
    }

    #[test]
    fn parse_and_display_round_trip() {
        for s in ["O", "B-PER", "I-LOC", "B-MISC-X"] {
            assert_eq!(s.parse::<Tag>().unwrap().to_string(), s);
        }
        for bad in ["", "B", "B-", "X-PER", "o"] {
            assert!(bad.parse::<Tag>().is_err(), "{bad}");
        }
    }

    #[test]
    fn dangling_inside_tags_open_new_spans() {
        assert_eq!(
            repair(&tags("I-PER I-PER O I-LOC B-ORG I-LOC")),
            tags("B-PER I-PER O B-LOC B-ORG B-LOC")
        );
        let s = spans(&tags("B-PER I-PER B-PER O I-LOC"));
        assert_eq!(
            s,
            vec![
                Span {
                    class: "PER".into(),
                    start: 0,
                    end: 2
                },
                Span {
                    class: "PER".into(),
                    start: 2,
                    end: 3
                },
                Span {
                    class: "LOC".into(),
                    start: 4,
                    end: 5
                },
            ]
        );
    }

    #[test]
    fn degenerate_span_sets() {
        let g = vec![tags("B-PER O")];
        assert_eq!(micro_f1(&g, &g).unwrap(), 1.0);
        assert_eq!(micro_f1(&g, &[tags("O O")]).unwrap(), 0.0);
        assert_eq!(micro_f1(&[tags("O O")], &[tags("O O")]).unwrap(), 1.0);
        assert!(micro_f1(&g, &[tags("O")]).is_err());
        assert!(micro_f1(&g, &[]).is_err());
    }
}
