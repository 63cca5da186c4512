use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bio::{repair, Tag};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaggedSentence {
    pub tokens: Vec<String>,
    pub tags: Vec<Tag>,
}

impl TaggedSentence {
    pub fn new(tokens: Vec<String>, tags: Vec<Tag>) -> Result<Self> {
        if tokens.len() != tags.len() {
            return Err(Error::Input(format!(
                "{} tokens but {} tags",
                tokens.len(),
                tags.len()
            )));
        }
        if tokens.is_empty() {
            return Err(Error::Input("empty tagged sentence".into()));
        }
        Ok(Self {
            tokens,
            tags: repair(&tags),
        })
    }
}

/// Parses token-per-line text: token in the first column, tag in the last,
/// blank lines between sentences. `#` comment lines and `-DOCSTART-` are
/// skipped; ill-formed BIO is repaired.
pub fn parse_conll(text: &str) -> Result<Vec<TaggedSentence>> {
    let mut out = Vec::new();
    let (mut toks, mut tags) = (Vec::new(), Vec::new());
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            if !toks.is_empty() {
                out.push(TaggedSentence::new(
                    std::mem::take(&mut toks),
                    std::mem::take(&mut tags),
                )?);
            }
            continue;
        }
        if line.starts_with('#') || line.starts_with("-DOCSTART-") {
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        if cols.len() < 2 {
            return Err(Error::Input(format!(
                "line {}: expected `token tag`",
                n + 1
            )));
        }
        let tag = cols[cols.len() - 1]
            .parse()
            .map_err(|e| Error::Input(format!("line {}: {e}", n + 1)))?;
        toks.push(cols[0].to_string());
        tags.push(tag);
    }
    if !toks.is_empty() {
        out.push(TaggedSentence::new(toks, tags)?);
    }
    Ok(out)
}

pub fn format_conll(sentences: &[TaggedSentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        for (t, g) in s.tokens.iter().zip(&s.tags) {
            let _ = writeln!(out, "{t}\t{g}");
        }
        out.push('\n');
    }
    out
}

pub fn read_conll(path: &Path) -> Result<Vec<TaggedSentence>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_conll(&text)
}

pub fn write_conll(path: &Path, sentences: &[TaggedSentence]) -> Result<()> {
    std::fs::write(path, format_conll(sentences)).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaggedCorpus {
    pub train: Vec<TaggedSentence>,
    pub dev: Vec<TaggedSentence>,
    pub test: Vec<TaggedSentence>,
}

pub const SPLITS: [&str; 3] = ["train", "dev", "test"];

impl TaggedCorpus {
    /// Loads `train.conll`, `dev.conll` and `test.conll` from `dir`.
    pub fn load(dir: &Path) -> Result<Self> {
        let read = |s: &str| read_conll(&dir.join(format!("{s}.conll")));
        let c = Self {
            train: read("train")?,
            dev: read("dev")?,
            test: read("test")?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, split) in SPLITS.iter().zip(self.splits()) {
            write_conll(&dir.join(format!("{name}.conll")), split)?;
        }
        Ok(())
    }

    pub fn splits(&self) -> [&Vec<TaggedSentence>; 3] {
        [&self.train, &self.dev, &self.test]
    }

    /// Non-empty splits with no sentence shared between two of them.
    pub fn validate(&self) -> Result<()> {
        for (name, split) in SPLITS.iter().zip(self.splits()) {
            if split.is_empty() {
                return Err(Error::Input(format!("{name} split is empty")));
            }
        }
        let mut seen: HashSet<&Vec<String>> = HashSet::new();
        for (name, split) in SPLITS.iter().zip(self.splits()) {
            let here: HashSet<&Vec<String>> = split.iter().map(|s| &s.tokens).collect();
            if let Some(dup) = here.iter().find(|t| seen.contains(*t)) {
                return Err(Error::Input(format!(
                    "{name} split repeats an earlier sentence: `{}`",
                    dup.join(" ")
                )));
            }
            seen.extend(here);
        }
        Ok(())
    }

    /// Entity classes present anywhere in the corpus, sorted.
    pub fn classes(&self) -> Vec<String> {
        let set: BTreeSet<&str> = self
            .splits()
            .into_iter()
            .flatten()
            .flat_map(|s| s.tags.iter().filter_map(Tag::class))
            .collect();
        set.into_iter().map(str::to_string).collect()
    }
}

/// Fixed label inventory: `O`, then `B-X`, `I-X` per class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    pub labels: Vec<Tag>,
}

impl LabelSet {
    pub fn new(classes: &[String]) -> Self {
        let mut labels = vec![Tag::O];
        for c in classes {
            labels.push(Tag::B(c.clone()));
            labels.push(Tag::I(c.clone()));
        }
        Self { labels }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index(&self, tag: &Tag) -> Result<usize> {
        self.labels
            .iter()
            .position(|t| t == tag)
            .ok_or_else(|| Error::Input(format!("tag `{tag}` outside the label inventory")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conll_round_trip_with_repair() {
        let text = "# comment\n-DOCSTART- O\n\nalice B-PER\nsmith I-PER\nin O\nparis I-LOC\n\n\nbob\tX y B-PER\n";
        let s = parse_conll(text).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[0].tags[3], Tag::B("LOC".into()));
        assert_eq!(s[1].tokens, vec!["bob"]);
        assert_eq!(parse_conll(&format_conll(&s)).unwrap(), s);
        assert!(parse_conll("lonely\n").is_err());
        assert!(parse_conll("w Q-PER\n").is_err());
    }
}
