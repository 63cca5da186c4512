use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::plan::{Schedule, TrainPlan};
use crate::error::{Error, Result};
use crate::model::ParameterStore;
use crate::numcore::Matrix;

/// Learning rate for the update issued at `step` (0-based).
pub fn lr_at(plan: &TrainPlan, step: u64) -> f64 {
    let peak = plan.lr;
    if step >= plan.max_steps {
        return 0.0;
    }
    if step < plan.warmup_steps {
        return peak * step as f64 / plan.warmup_steps as f64;
    }
    let span = (plan.max_steps - plan.warmup_steps) as f64;
    let frac = (step - plan.warmup_steps) as f64 / span;
    match plan.schedule {
        Schedule::Cosine => peak * 0.5 * (1.0 + (PI * frac).cos()),
        Schedule::Linear => peak * (1.0 - frac),
    }
}

/// AdamW with decoupled weight decay.
///
/// Parameters without an entry in the gradient map are left untouched,
/// including their moments and decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub m: BTreeMap<String, Matrix>,
    pub v: BTreeMap<String, Matrix>,
    /// Per-parameter update counts for bias correction.
    pub t: BTreeMap<String, u64>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
            t: BTreeMap::new(),
        }
    }

    pub fn check_finite(grads: &BTreeMap<String, Matrix>) -> Result<()> {
        for (name, g) in grads {
            if !g.is_finite() {
                return Err(Error::NonFiniteGradient {
                    param: name.clone(),
                });
            }
        }
        Ok(())
    }

    pub fn step(
        &mut self,
        stores: &mut [&mut ParameterStore],
        grads: &BTreeMap<String, Matrix>,
        lr: f64,
    ) -> Result<()> {
        Self::check_finite(grads)?;
        for (name, g) in grads {
            let store = stores
                .iter_mut()
                .find(|s| s.contains(name))
                .ok_or_else(|| {
                    Error::Contract(format!("gradient for unknown parameter `{name}`"))
                })?;
            let p = store.get_mut(name)?;
            if p.shape() != g.shape() {
                return Err(Error::Contract(format!(
                    "gradient shape mismatch for `{name}`"
                )));
            }
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Matrix::zeros(g.rows(), g.cols()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Matrix::zeros(g.rows(), g.cols()));
            let t = self.t.entry(name.clone()).or_insert(0);
            *t += 1;
            let bc1 = 1.0 - self.beta1.powi(*t as i32);
            let bc2 = 1.0 - self.beta2.powi(*t as i32);
            let decay = 1.0 - lr * self.weight_decay;
            for (((pi, gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *pi = *pi * decay - lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}
