//! Spectral and statistical learning-dynamics diagnostics.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Backbone, TaskHead};
use crate::numcore::{singular_values, Matrix};

/// Default monitored matrices, resolved in every layer.
pub const MONITORED: [&str; 3] = ["attention.v_proj", "attention.o_proj", "swiglu.w_2"];

/// Effective rank `exp(H(p))` with `p = σ / Σσ`, and its proportion of `d`.
///
/// `d` defaults to the number of singular values, which for a spectrum
/// produced by [`singular_values`] is `min(rows, cols)`.
pub fn effective_rank(sigma: &[f64], d: Option<usize>) -> Result<(f64, f64)> {
    if sigma.iter().any(|s| !s.is_finite() || *s < 0.0) {
        return Err(Error::Input(
            "singular values must be finite and nonnegative".into(),
        ));
    }
    let d = d.unwrap_or(sigma.len());
    if d == 0 || d < sigma.iter().filter(|s| **s > 0.0).count() {
        return Err(Error::Input(format!(
            "d = {d} is smaller than the number of nonzero singular values"
        )));
    }
    let total: f64 = sigma.iter().sum();
    if total == 0.0 {
        return Err(Error::ZeroSpectrum);
    }
    let h: f64 = sigma
        .iter()
        .filter(|s| **s > 0.0)
        .map(|s| {
            let p = s / total;
            -p * p.ln()
        })
        .sum();
    let nonzero = sigma.iter().filter(|s| **s > 0.0).count() as f64;
    let er = h.exp().clamp(1.0, nonzero);
    Ok((er, er / d as f64))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Weights,
    Gradients,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralSnapshot {
    pub step: u64,
    pub layer: String,
    pub kind: Kind,
    pub sigma: Vec<f64>,
    pub er: f64,
    pub per: f64,
    /// Set when the matrix was all zeros; `er` and `per` are then 0.
    pub zero: bool,
}

pub fn snapshot_matrix(step: u64, layer: &str, kind: Kind, m: &Matrix) -> Result<SpectralSnapshot> {
    let sigma = singular_values(m)?;
    let (er, per, zero) = match effective_rank(&sigma, None) {
        Ok((er, per)) => (er, per, false),
        Err(Error::ZeroSpectrum) => (0.0, 0.0, true),
        Err(e) => return Err(e),
    };
    Ok(SpectralSnapshot {
        step,
        layer: layer.to_string(),
        kind,
        sigma,
        er,
        per,
        zero,
    })
}

/// Expands monitored names (full names or per-layer suffixes) into parameter names.
pub fn resolve_monitored(b: &Backbone, monitored: &[String]) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for m in monitored {
        let names = b.resolve_layers(m);
        if names.is_empty() {
            return Err(Error::config(
                "monitoring.layers",
                format!("`{m}` matches no parameter"),
            ));
        }
        out.extend(names);
    }
    Ok(out)
}

/// Weight snapshots for every monitored matrix, plus gradient snapshots when
/// `grads` is given (a missing gradient is treated as zero).
pub fn snapshot(
    b: &Backbone,
    grads: Option<&BTreeMap<String, Matrix>>,
    step: u64,
    monitored: &[String],
) -> Result<Vec<SpectralSnapshot>> {
    let names = resolve_monitored(b, monitored)?;
    let mut out = Vec::with_capacity(names.len() * 2);
    for name in &names {
        let w = b.params.get(name)?;
        out.push(snapshot_matrix(step, name, Kind::Weights, w)?);
        if let Some(g) = grads {
            let gm = g
                .get(name)
                .cloned()
                .unwrap_or_else(|| Matrix::zeros(w.rows(), w.cols()));
            out.push(snapshot_matrix(step, name, Kind::Gradients, &gm)?);
        }
    }
    Ok(out)
}

/// Mean entropy (nats) over the rows of one head's causal attention matrix.
///
/// With `normalized`, row `i` is divided by `ln(i + 1)` and row 0 is skipped.
pub fn attention_entropy(probs: &Matrix, normalized: bool) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..probs.rows() {
        let row = probs.row(i);
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-6 || row.iter().any(|a| *a < 0.0) {
            return Err(Error::Input(format!(
                "attention row {i} is not a distribution (sum {s})"
            )));
        }
        let h: f64 = row.iter().filter(|a| **a > 0.0).map(|a| -a * a.ln()).sum();
        if normalized {
            if i == 0 {
                continue;
            }
            total += h / ((i + 1) as f64).ln();
        } else {
            total += h;
        }
        count += 1;
    }
    if count == 0 {
        return Err(Error::Input("no attention rows to average".into()));
    }
    Ok(total / count as f64)
}

/// Population mean and standard deviation over all head weight entries.
pub fn head_stats(head: &TaskHead) -> (f64, f64) {
    weight_stats(head.weights())
}

pub fn weight_stats<'a>(weights: impl Iterator<Item = &'a Matrix>) -> (f64, f64) {
    let mut n = 0usize;
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for w in weights {
        for &x in w.data() {
            n += 1;
            let delta = x - mean;
            mean += delta / n as f64;
            m2 += delta * (x - mean);
        }
    }
    if n == 0 {
        return (0.0, 0.0);
    }
    (mean, (m2 / n as f64).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KneeReport {
    pub layer: String,
    pub rise: (u64, u64),
    pub peak_step: u64,
    pub peak_value: f64,
    pub fall: (u64, u64),
    /// Smaller of the peak's heights above the first and last smoothed values.
    pub prominence: f64,
    pub threshold: f64,
    pub detected: bool,
}

/// Centered moving average; windows are truncated at the ends.
pub fn smooth(values: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    (0..values.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(values.len());
            values[lo..hi].iter().sum::<f64>() / (hi - lo) as f64
        })
        .collect()
}

/// Locates the rise-then-fall peak of a metric curve.
///
/// `prominence` defaults to 5% of the smoothed curve's range.
pub fn detect_knee(
    layer: &str,
    curve: &[(u64, f64)],
    window: usize,
    prominence: Option<f64>,
) -> Result<KneeReport> {
    if curve.len() < 5 {
        return Err(Error::Input(format!(
            "knee detection needs at least 5 samples, got {}",
            curve.len()
        )));
    }
    if window == 0 {
        return Err(Error::Input("smoothing window must be positive".into()));
    }
    let values: Vec<f64> = curve.iter().map(|p| p.1).collect();
    let s = smooth(&values, window);
    let mut peak = 0;
    for (i, v) in s.iter().enumerate() {
        if *v > s[peak] {
            peak = i;
        }
    }
    let lo = s.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let threshold = prominence.unwrap_or(0.05 * (hi - lo));
    let first = s[0];
    let last = s[s.len() - 1];
    let prom = (s[peak] - first).min(s[peak] - last);
    // Differences at rounding level are not a peak.
    let floor = 1e-12 * s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let detected = prom > floor && prom >= threshold;
    let step = |i: usize| curve[i].0;
    Ok(KneeReport {
        layer: layer.to_string(),
        rise: (step(0), step(peak)),
        peak_step: step(peak),
        peak_value: s[peak],
        fall: (step(peak), step(curve.len() - 1)),
        prominence: prom,
        threshold,
        detected,
    })
}
