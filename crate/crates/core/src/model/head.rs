use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::{lookup, xavier_uniform, Bound, ParameterStore};
use crate::error::{Error, Result};
use crate::numcore::{Matrix, NodeId, Tape};

/// Shape of the episodic classifier head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub n_classes: usize,
    pub dropout: f64,
}

impl HeadSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.input_dim == 0 || self.hidden_dim == 0 || self.n_classes == 0
        {
            return Err(Error::config(
                "meta.head",
                "all head dimensions must be positive",
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("meta.head_dropout", "must lie in [0, 1)"));
        }
        Ok(())
    }

    fn dims(&self) -> Vec<(usize, usize)> {
        (0..self.n_layers)
            .map(|i| {
                let fan_in = if i == 0 {
                    self.input_dim
                } else {
                    self.hidden_dim
                };
                let fan_out = if i + 1 == self.n_layers {
                    self.n_classes
                } else {
                    self.hidden_dim
                };
                (fan_in, fan_out)
            })
            .collect()
    }
}

pub fn head_weight(i: usize) -> String {
    format!("head.{i}.weight")
}

pub fn head_bias(i: usize) -> String {
    format!("head.{i}.bias")
}

/// Stacked affine + SiLU classifier consuming one hidden state per example.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskHead {
    pub spec: HeadSpec,
    pub params: ParameterStore,
}

impl TaskHead {
    /// Xavier-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(spec: HeadSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = ParameterStore::new();
        for (i, (fan_in, fan_out)) in spec.dims().into_iter().enumerate() {
            params.insert(head_weight(i), xavier_uniform(fan_in, fan_out, rng));
            params.insert(head_bias(i), Matrix::zeros(1, fan_out));
        }
        Ok(Self { spec, params })
    }

    /// Records the head on `tape` for a `rows x input_dim` node.
    ///
    /// Dropout is applied after every hidden activation only when `dropout_rng`
    /// is supplied; evaluation passes hand in `None`.
    pub fn forward_on<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        input: NodeId,
        dropout_rng: Option<&mut R>,
    ) -> Result<NodeId> {
        let cols = tape.value(input).cols();
        if cols != self.spec.input_dim {
            return Err(Error::Input(format!(
                "head expects width {}, got {cols}",
                self.spec.input_dim
            )));
        }
        let mut rng = dropout_rng;
        let keep = 1.0 - self.spec.dropout;
        let mut x = input;
        for i in 0..self.spec.n_layers {
            let z = tape.matmul(x, lookup(bound, &head_weight(i))?)?;
            x = tape.add_row(z, lookup(bound, &head_bias(i))?)?;
            if i + 1 < self.spec.n_layers {
                x = tape.silu(x);
                if let Some(r) = rng.as_deref_mut() {
                    if self.spec.dropout > 0.0 {
                        let (rows, c) = tape.value(x).shape();
                        let mask = Matrix::from_fn(rows, c, |_, _| {
                            if r.random::<f64>() < keep {
                                1.0 / keep
                            } else {
                                0.0
                            }
                        });
                        let m = tape.constant(mask);
                        x = tape.mul(x, m)?;
                    }
                }
            }
        }
        Ok(x)
    }

    /// Logits for a single hidden vector.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        hidden: &[f64],
        train_mode: bool,
        rng: &mut R,
    ) -> Result<Vec<f64>> {
        if hidden.len() != self.spec.input_dim {
            return Err(Error::Input(format!(
                "head expects width {}, got {}",
                self.spec.input_dim,
                hidden.len()
            )));
        }
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let x = tape.constant(Matrix::row_vector(hidden.to_vec()));
        let out = if train_mode {
            self.forward_on(&mut tape, &bound, x, Some(rng))?
        } else {
            self.forward_on::<R>(&mut tape, &bound, x, None)?
        };
        Ok(tape.value(out).data().to_vec())
    }

    /// Weight matrices only (biases excluded), in layer order.
    pub fn weights(&self) -> impl Iterator<Item = &Matrix> {
        (0..self.spec.n_layers).filter_map(move |i| self.params.get(&head_weight(i)).ok())
    }
}
