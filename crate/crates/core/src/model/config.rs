use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture hyper-parameters of the decoder backbone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub ffn_hidden: usize,
    pub vocab_size: usize,
    pub seq_len: usize,
    pub rope_theta: f64,
    pub norm_eps: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_model: 768,
            n_layers: 12,
            n_heads: 12,
            n_kv_heads: 4,
            ffn_hidden: 3072,
            vocab_size: 50_304,
            seq_len: 2048,
            rope_theta: 10_000.0,
            norm_eps: 1e-6,
        }
    }
}

impl ModelConfig {
    /// Width-only scaling, `ffn_hidden = 4 * d_model`.
    pub fn with_width(d_model: usize) -> Self {
        Self {
            d_model,
            ffn_hidden: 4 * d_model,
            ..Self::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn kv_dim(&self) -> usize {
        self.n_kv_heads * self.head_dim()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("model.d_model", self.d_model),
            ("model.n_layers", self.n_layers),
            ("model.n_heads", self.n_heads),
            ("model.n_kv_heads", self.n_kv_heads),
            ("model.ffn_hidden", self.ffn_hidden),
            ("model.vocab_size", self.vocab_size),
            ("model.seq_len", self.seq_len),
        ];
        for (field, v) in positive {
            if v == 0 {
                return Err(Error::config(field, "must be positive"));
            }
        }
        if !self.n_heads.is_multiple_of(self.n_kv_heads) {
            return Err(Error::config(
                "model.n_kv_heads",
                format!(
                    "{} does not divide n_heads {}",
                    self.n_kv_heads, self.n_heads
                ),
            ));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::config(
                "model.n_heads",
                format!("{} does not divide d_model {}", self.n_heads, self.d_model),
            ));
        }
        if !self.head_dim().is_multiple_of(2) {
            return Err(Error::config(
                "model.n_heads",
                "head dimension must be even for rotary embeddings",
            ));
        }
        if !(self.rope_theta > 0.0) {
            return Err(Error::config("model.rope_theta", "must be positive"));
        }
        if !(self.norm_eps > 0.0) {
            return Err(Error::config("model.norm_eps", "must be positive"));
        }
        Ok(())
    }
}
