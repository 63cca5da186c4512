use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::MONITORED;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::smlmt::FrequencyBand;
use crate::synth::ToyCorpusSpec;
use crate::trainer::{MetaPlan, Schedule, TrainPlan};

/// Outer optimisation and branch mixing.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    pub hybrid_ratio: f64,
    pub lr: f64,
    pub warmup_steps: u64,
    pub schedule: Schedule,
    pub weight_decay: f64,
    pub accumulation_steps: usize,
    pub batch_size: usize,
    pub max_steps: u64,
    pub seed: u64,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let p = TrainPlan::default();
        Self {
            hybrid_ratio: p.hybrid_ratio,
            lr: p.lr,
            warmup_steps: p.warmup_steps,
            schedule: p.schedule,
            weight_decay: p.weight_decay,
            accumulation_steps: p.accumulation_steps,
            batch_size: p.batch_size,
            max_steps: p.max_steps,
            seed: p.seed,
        }
    }
}

/// Episode shape, inner loop and classifier head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetaSection {
    pub n_ways: usize,
    pub k_shots: usize,
    pub q_queries: usize,
    pub inner_steps: usize,
    pub inner_lr: f64,
    pub head_layers: usize,
    pub head_hidden: usize,
    pub head_dropout: f64,
    pub head_init: String,
    pub head_reinit: bool,
    pub exclude_top: usize,
}

impl Default for MetaSection {
    fn default() -> Self {
        let m = MetaPlan::default();
        let p = TrainPlan::default();
        Self {
            n_ways: m.n_ways,
            k_shots: m.k_shots,
            q_queries: m.q_queries,
            inner_steps: p.inner_steps,
            inner_lr: p.inner_lr,
            head_layers: m.head_layers,
            head_hidden: m.head_hidden,
            head_dropout: m.head_dropout,
            head_init: m.head_init,
            head_reinit: m.head_reinit,
            exclude_top: m.exclude_top,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Plain-text corpus; relative paths resolve against the config file.
    pub corpus: Option<PathBuf>,
    /// Generate the topic corpus instead of reading `corpus`.
    pub synthetic: Option<ToyCorpusSpec>,
    pub tokenizer: String,
    pub eval_fraction: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            corpus: None,
            synthetic: None,
            tokenizer: "whitespace".into(),
            eval_fraction: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonitoringSection {
    pub layers: Vec<String>,
    pub log_every: u64,
    pub eval_every: u64,
    pub eval_batch_size: usize,
    pub checkpoint_every: u64,
    /// Smoothing window (in records) for knee detection.
    pub knee_window: usize,
    pub knee_prominence: Option<f64>,
}

impl Default for MonitoringSection {
    fn default() -> Self {
        let p = TrainPlan::default();
        Self {
            layers: MONITORED.iter().map(|s| s.to_string()).collect(),
            log_every: p.log_every,
            eval_every: p.eval_every,
            eval_batch_size: p.eval_batch_size,
            checkpoint_every: p.checkpoint_every,
            knee_window: 5,
            knee_prominence: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RanksimSection {
    pub world_size: usize,
}

impl Default for RanksimSection {
    fn default() -> Self {
        Self { world_size: 1 }
    }
}

/// Full run description. `model.vocab_size` caps the fitted vocabulary; the
/// backbone is sized to the vocabulary actually fitted.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub training: TrainingSection,
    pub meta: MetaSection,
    pub data: DataSection,
    pub monitoring: MonitoringSection,
    pub ranksim: RanksimSection,
}

fn toml_err(e: impl std::fmt::Display) -> Error {
    Error::config(
        "config",
        e.to_string()
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .collect::<Vec<_>>()
            .join(" "),
    )
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(toml_err)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(toml_err)
    }

    /// Reads `path` (or defaults when `None`), applies `key=value` overrides
    /// and resolves a relative corpus path against the config directory.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                text.parse().map_err(toml_err)?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let mut cfg: Self = toml::Value::Table(doc).try_into().map_err(toml_err)?;
        if let (Some(p), Some(c)) = (path, cfg.data.corpus.as_mut()) {
            if c.is_relative() {
                *c = p.parent().unwrap_or(Path::new(".")).join(&*c);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.tokenizer != "whitespace" {
            return Err(Error::config(
                "data.tokenizer",
                format!("unsupported tokenizer `{}`", self.data.tokenizer),
            ));
        }
        if self.data.synthetic.is_none() {
            match &self.data.corpus {
                None => return Err(Error::config("data.corpus", "not set")),
                Some(p) if !p.is_file() => return Err(Error::config("data.corpus", "not found")),
                _ => {}
            }
        }
        if self.monitoring.knee_window == 0 {
            return Err(Error::config("monitoring.knee_window", "must be positive"));
        }
        let mut probe = self.model.clone();
        probe.vocab_size = probe.vocab_size.max(5);
        probe.validate()?;
        self.meta_plan().validate()?;
        self.train_plan().validate(self.ranksim.world_size)
    }

    pub fn train_plan(&self) -> TrainPlan {
        let t = &self.training;
        let m = &self.monitoring;
        TrainPlan {
            hybrid_ratio: t.hybrid_ratio,
            inner_steps: self.meta.inner_steps,
            inner_lr: self.meta.inner_lr,
            lr: t.lr,
            warmup_steps: t.warmup_steps,
            schedule: t.schedule,
            weight_decay: t.weight_decay,
            accumulation_steps: t.accumulation_steps,
            batch_size: t.batch_size,
            max_steps: t.max_steps,
            checkpoint_every: m.checkpoint_every,
            log_every: m.log_every,
            eval_every: m.eval_every,
            eval_batch_size: m.eval_batch_size,
            seed: t.seed,
        }
    }

    pub fn meta_plan(&self) -> MetaPlan {
        let m = &self.meta;
        MetaPlan {
            n_ways: m.n_ways,
            k_shots: m.k_shots,
            q_queries: m.q_queries,
            head_layers: m.head_layers,
            head_hidden: m.head_hidden,
            head_dropout: m.head_dropout,
            head_init: m.head_init.clone(),
            head_reinit: m.head_reinit,
            exclude_top: m.exclude_top,
        }
    }

    pub fn band(&self) -> FrequencyBand {
        FrequencyBand {
            exclude_top: self.meta.exclude_top,
            min_sentences: self.meta.k_shots + self.meta.q_queries,
            max_sentence_len: Some(self.model.seq_len),
        }
    }

    /// First eight hex digits of the SHA-256 of the config with the seed zeroed.
    pub fn hash8(&self) -> Result<String> {
        let mut c = self.clone();
        c.training.seed = 0;
        let digest = Sha256::digest(c.to_toml()?.as_bytes());
        Ok(digest.iter().take(4).map(|b| format!("{b:02x}")).collect())
    }

    pub fn run_dir(&self, out: &Path) -> Result<PathBuf> {
        Ok(out.join(format!("{}-s{}", self.hash8()?, self.training.seed)))
    }
}

/// Applies `section.key=value` (any depth) to a TOML document. The value is
/// parsed as TOML and falls back to a bare string.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::config("--set", format!("expected key=value, got `{assignment}`")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::config("--set", format!("malformed key `{key}`")));
    }
    let mut cur = doc;
    for p in &parts[..parts.len() - 1] {
        let next = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = next
            .as_table_mut()
            .ok_or_else(|| Error::config(key, format!("`{p}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}
