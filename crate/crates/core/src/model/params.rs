use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numcore::{Matrix, NodeId, Tape};

/// Named parameter matrices in a deterministic (sorted) order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterStore {
    params: BTreeMap<String, Matrix>,
}

/// Name → tape node for one forward pass.
pub type Bound = BTreeMap<String, NodeId>;

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, m: Matrix) {
        self.params.insert(name.into(), m);
    }

    pub fn get(&self, name: &str) -> Result<&Matrix> {
        self.params
            .get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Matrix> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Matrix)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Matrix)> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.params.values().map(Matrix::len).sum()
    }

    /// Registers every matrix on the tape as a differentiable parameter.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        self.params
            .iter()
            .map(|(n, m)| (n.clone(), tape.param(n.clone(), m)))
            .collect()
    }

    /// Registers every matrix as a constant (no gradient tracking).
    pub fn bind_frozen(&self, tape: &mut Tape) -> Bound {
        self.params
            .iter()
            .map(|(n, m)| (n.clone(), tape.constant(m.clone())))
            .collect()
    }

    /// SHA-256 over names, shapes and raw bits; identical iff bit-identical.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for (name, m) in &self.params {
            h.update(name.as_bytes());
            h.update((m.rows() as u64).to_le_bytes());
            h.update((m.cols() as u64).to_le_bytes());
            for v in m.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Xavier/Glorot uniform init: `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`.
pub fn xavier_uniform<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-a..a))
}

pub(crate) fn lookup(bound: &Bound, name: &str) -> Result<NodeId> {
    bound
        .get(name)
        .copied()
        .ok_or_else(|| Error::Contract(format!("parameter `{name}` not bound on tape")))
}
