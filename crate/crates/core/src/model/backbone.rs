//! LLaMA-style decoder stack: RMSNorm, grouped-query causal attention with
//! rotary position embeddings, SwiGLU feed-forward, untied LM projection.

use rand::Rng;

use super::config::ModelConfig;
use super::params::{lookup, xavier_uniform, Bound, ParameterStore};
use crate::error::{Error, Result};
use crate::numcore::{Matrix, NodeId, Tape};
use crate::TokenId;

pub const EMBEDDING: &str = "tok_embeddings.weight";
pub const OUTPUT_NORM: &str = "output_norm.weight";
pub const LM_HEAD: &str = "lm_head.weight";

pub fn layer_param(layer: usize, suffix: &str) -> String {
    format!("layers.{layer}.{suffix}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Backbone {
    pub config: ModelConfig,
    pub params: ParameterStore,
}

/// Node handles produced by one forward pass over a single sequence.
#[derive(Clone, Debug)]
pub struct ForwardNodes {
    /// `seq x d_model`: normalised final hidden states (the LM projection input).
    pub hidden: NodeId,
    /// `seq x vocab`, present when requested.
    pub logits: Option<NodeId>,
    /// `attention[layer][head]`: `seq x seq` causal probability matrices.
    pub attention: Vec<Vec<NodeId>>,
}

/// Materialised outputs of [`Backbone::forward`].
#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub hidden: Matrix,
    pub logits: Matrix,
}

impl Backbone {
    /// Fresh backbone: Xavier-uniform projections and embeddings, unit norm gains.
    pub fn init<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let q_dim = config.n_heads * config.head_dim();
        let kv = config.kv_dim();
        let mut params = ParameterStore::new();
        params.insert(EMBEDDING, xavier_uniform(config.vocab_size, d, rng));
        for l in 0..config.n_layers {
            params.insert(
                layer_param(l, "attention_norm.weight"),
                Matrix::filled(1, d, 1.0),
            );
            params.insert(
                layer_param(l, "attention.q_proj"),
                xavier_uniform(d, q_dim, rng),
            );
            params.insert(
                layer_param(l, "attention.k_proj"),
                xavier_uniform(d, kv, rng),
            );
            params.insert(
                layer_param(l, "attention.v_proj"),
                xavier_uniform(d, kv, rng),
            );
            params.insert(
                layer_param(l, "attention.o_proj"),
                xavier_uniform(q_dim, d, rng),
            );
            params.insert(
                layer_param(l, "swiglu_norm.weight"),
                Matrix::filled(1, d, 1.0),
            );
            params.insert(
                layer_param(l, "swiglu.w_0"),
                xavier_uniform(d, config.ffn_hidden, rng),
            );
            params.insert(
                layer_param(l, "swiglu.w_1"),
                xavier_uniform(d, config.ffn_hidden, rng),
            );
            params.insert(
                layer_param(l, "swiglu.w_2"),
                xavier_uniform(config.ffn_hidden, d, rng),
            );
        }
        params.insert(OUTPUT_NORM, Matrix::filled(1, d, 1.0));
        params.insert(LM_HEAD, xavier_uniform(d, config.vocab_size, rng));
        Ok(Self { config, params })
    }

    /// Checks that every expected parameter exists with the configured shape.
    pub fn check_shapes(&self) -> Result<()> {
        let c = &self.config;
        let d = c.d_model;
        let q_dim = c.n_heads * c.head_dim();
        let mut expected = vec![
            (EMBEDDING.to_string(), (c.vocab_size, d)),
            (OUTPUT_NORM.to_string(), (1, d)),
            (LM_HEAD.to_string(), (d, c.vocab_size)),
        ];
        for l in 0..c.n_layers {
            expected.extend([
                (layer_param(l, "attention_norm.weight"), (1, d)),
                (layer_param(l, "attention.q_proj"), (d, q_dim)),
                (layer_param(l, "attention.k_proj"), (d, c.kv_dim())),
                (layer_param(l, "attention.v_proj"), (d, c.kv_dim())),
                (layer_param(l, "attention.o_proj"), (q_dim, d)),
                (layer_param(l, "swiglu_norm.weight"), (1, d)),
                (layer_param(l, "swiglu.w_0"), (d, c.ffn_hidden)),
                (layer_param(l, "swiglu.w_1"), (d, c.ffn_hidden)),
                (layer_param(l, "swiglu.w_2"), (c.ffn_hidden, d)),
            ]);
        }
        if expected.len() != self.params.len() {
            return Err(Error::Contract(format!(
                "backbone has {} parameters, config implies {}",
                self.params.len(),
                expected.len()
            )));
        }
        for (name, shape) in expected {
            let got = self.params.get(&name)?.shape();
            if got != shape {
                return Err(Error::Contract(format!(
                    "parameter `{name}` has shape {got:?}, expected {shape:?}"
                )));
            }
        }
        Ok(())
    }

    pub fn check_tokens(&self, tokens: &[TokenId]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::Input("empty token sequence".into()));
        }
        if tokens.len() > self.config.seq_len {
            return Err(Error::Input(format!(
                "sequence of {} tokens exceeds seq_len {}",
                tokens.len(),
                self.config.seq_len
            )));
        }
        if let Some(bad) = tokens
            .iter()
            .find(|&&t| t as usize >= self.config.vocab_size)
        {
            return Err(Error::Input(format!(
                "token id {bad} out of range for vocab {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    /// Records the forward pass of one sequence on `tape`.
    pub fn forward_on(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        tokens: &[TokenId],
        with_logits: bool,
    ) -> Result<ForwardNodes> {
        self.check_tokens(tokens)?;
        let c = &self.config;
        let hd = c.head_dim();
        let group = c.n_heads / c.n_kv_heads;
        let scale = 1.0 / (hd as f64).sqrt();
        let ids: Vec<usize> = tokens.iter().map(|&t| t as usize).collect();

        let mut x = tape.row_gather(lookup(bound, EMBEDDING)?, &ids)?;
        let mut attention = Vec::with_capacity(c.n_layers);
        for l in 0..c.n_layers {
            let p = |s: &str| lookup(bound, &layer_param(l, s));

            let h = tape.rms_norm(x, p("attention_norm.weight")?, c.norm_eps)?;
            let q = tape.matmul(h, p("attention.q_proj")?)?;
            let k = tape.matmul(h, p("attention.k_proj")?)?;
            let v = tape.matmul(h, p("attention.v_proj")?)?;
            let q = tape.rope(q, hd, c.rope_theta, 0)?;
            let k = tape.rope(k, hd, c.rope_theta, 0)?;

            let mut heads = Vec::with_capacity(c.n_heads);
            let mut probs = Vec::with_capacity(c.n_heads);
            for head in 0..c.n_heads {
                let kv_head = head / group;
                let qh = tape.col_slice(q, head * hd, hd)?;
                let kh = tape.col_slice(k, kv_head * hd, hd)?;
                let vh = tape.col_slice(v, kv_head * hd, hd)?;
                let scores = tape.matmul_t(qh, kh)?;
                let scores = tape.scale(scores, scale);
                let pr = tape.causal_softmax(scores)?;
                probs.push(pr);
                heads.push(tape.matmul(pr, vh)?);
            }
            attention.push(probs);
            let cat = tape.concat_cols(&heads)?;
            let attn_out = tape.matmul(cat, p("attention.o_proj")?)?;
            x = tape.add(x, attn_out)?;

            let h = tape.rms_norm(x, p("swiglu_norm.weight")?, c.norm_eps)?;
            let gate = tape.matmul(h, p("swiglu.w_0")?)?;
            let gate = tape.silu(gate);
            let up = tape.matmul(h, p("swiglu.w_1")?)?;
            let act = tape.mul(gate, up)?;
            let down = tape.matmul(act, p("swiglu.w_2")?)?;
            x = tape.add(x, down)?;
        }
        let hidden = tape.rms_norm(x, lookup(bound, OUTPUT_NORM)?, c.norm_eps)?;
        let logits = if with_logits {
            Some(tape.matmul(hidden, lookup(bound, LM_HEAD)?)?)
        } else {
            None
        };
        Ok(ForwardNodes {
            hidden,
            logits,
            attention,
        })
    }

    /// Evaluation-only forward over one sequence.
    pub fn forward(&self, tokens: &[TokenId]) -> Result<ForwardOutput> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let nodes = self.forward_on(&mut tape, &bound, tokens, true)?;
        let logits = nodes.logits.expect("logits requested");
        Ok(ForwardOutput {
            hidden: tape.value(nodes.hidden).clone(),
            logits: tape.value(logits).clone(),
        })
    }

    /// Causal attention distributions, indexed `[layer][head]`.
    pub fn attention_probabilities(&self, tokens: &[TokenId]) -> Result<Vec<Vec<Matrix>>> {
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let nodes = self.forward_on(&mut tape, &bound, tokens, false)?;
        Ok(nodes
            .attention
            .iter()
            .map(|layer| layer.iter().map(|&n| tape.value(n).clone()).collect())
            .collect())
    }

    /// Names of the parameter matrices whose name ends with `suffix`
    /// (e.g. `attention.v_proj` selects that projection in every layer).
    pub fn resolve_layers(&self, suffix: &str) -> Vec<String> {
        self.params
            .names()
            .filter(|n| n.as_str() == suffix || n.ends_with(&format!(".{suffix}")))
            .cloned()
            .collect()
    }
}
