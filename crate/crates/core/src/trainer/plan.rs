use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Cosine,
    Linear,
}

/// Outer-loop hyper-parameters of a hybrid run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainPlan {
    /// Probability that a sub-batch takes the meta branch.
    pub hybrid_ratio: f64,
    pub inner_steps: usize,
    pub inner_lr: f64,
    /// Peak outer learning rate.
    pub lr: f64,
    pub warmup_steps: u64,
    pub schedule: Schedule,
    pub weight_decay: f64,
    pub accumulation_steps: usize,
    /// Sequences per outer step across all ranks and sub-batches.
    pub batch_size: usize,
    pub max_steps: u64,
    pub checkpoint_every: u64,
    pub log_every: u64,
    pub eval_every: u64,
    pub eval_batch_size: usize,
    pub seed: u64,
}

impl Default for TrainPlan {
    fn default() -> Self {
        Self {
            hybrid_ratio: 0.5,
            inner_steps: 10,
            inner_lr: 0.001,
            lr: 3e-4,
            warmup_steps: 2500,
            schedule: Schedule::Cosine,
            weight_decay: 0.01,
            accumulation_steps: 128,
            batch_size: 1024,
            max_steps: 200_000,
            checkpoint_every: 100,
            log_every: 100,
            eval_every: 100,
            eval_batch_size: 16,
            seed: 0,
        }
    }
}

impl TrainPlan {
    pub fn validate(&self, world_size: usize) -> Result<()> {
        let f = |name: &str| format!("training.{name}");
        if !(0.0..=1.0).contains(&self.hybrid_ratio) {
            return Err(Error::config(f("hybrid_ratio"), "must lie in [0, 1]"));
        }
        if !(self.inner_lr > 0.0) {
            return Err(Error::config(f("inner_lr"), "must be positive"));
        }
        if !(self.lr >= 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::config(
                f("lr"),
                "lr and weight_decay must be nonnegative",
            ));
        }
        if self.warmup_steps > self.max_steps {
            return Err(Error::config(
                f("warmup_steps"),
                "must not exceed max_steps",
            ));
        }
        if self.accumulation_steps == 0 || self.batch_size == 0 {
            return Err(Error::config(
                f("accumulation_steps"),
                "accumulation_steps and batch_size must be positive",
            ));
        }
        if !self
            .batch_size
            .is_multiple_of(self.accumulation_steps * world_size)
        {
            return Err(Error::config(
                f("batch_size"),
                format!(
                    "{} is not divisible by accumulation_steps x world_size = {}",
                    self.batch_size,
                    self.accumulation_steps * world_size
                ),
            ));
        }
        for (name, v) in [
            ("checkpoint_every", self.checkpoint_every),
            ("log_every", self.log_every),
            ("eval_every", self.eval_every),
        ] {
            if v == 0 {
                return Err(Error::config(f(name), "must be positive"));
            }
        }
        if self.eval_batch_size == 0 {
            return Err(Error::config(f("eval_batch_size"), "must be positive"));
        }
        Ok(())
    }

    /// Sequences handled by one rank in one sub-batch.
    pub fn micro_batch(&self, world_size: usize) -> usize {
        self.batch_size / (self.accumulation_steps * world_size)
    }
}

/// Episode shape and classifier head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaPlan {
    pub n_ways: usize,
    pub k_shots: usize,
    pub q_queries: usize,
    pub head_layers: usize,
    pub head_hidden: usize,
    pub head_dropout: f64,
    pub head_init: String,
    /// Fresh head per episode instead of a persistent, outer-updated one.
    pub head_reinit: bool,
    /// Most frequent tokens excluded from class-word candidacy.
    pub exclude_top: usize,
}

impl Default for MetaPlan {
    fn default() -> Self {
        Self {
            n_ways: 32,
            k_shots: 4,
            q_queries: 1,
            head_layers: 4,
            head_hidden: 128,
            head_dropout: 0.1,
            head_init: "xavier".into(),
            head_reinit: false,
            exclude_top: 100,
        }
    }
}

impl MetaPlan {
    pub fn validate(&self) -> Result<()> {
        if self.n_ways == 0 || self.k_shots == 0 || self.q_queries == 0 {
            return Err(Error::config(
                "meta.n_ways",
                "n_ways, k_shots and q_queries must be positive",
            ));
        }
        if self.head_init != "xavier" {
            return Err(Error::config(
                "meta.head_init",
                format!("unsupported init `{}`", self.head_init),
            ));
        }
        Ok(())
    }
}
