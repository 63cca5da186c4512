use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::finetune::{FinetuneResult, Regime};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub dataset: String,
    pub regime: Regime,
    pub runs: usize,
    pub seeds: Vec<u64>,
    pub test_f1_mean: f64,
    pub test_f1_std: f64,
    pub dev_f1_mean: f64,
    pub per_class_test_f1: BTreeMap<String, f64>,
    /// Head-only groups: every run passed the freeze check.
    pub freeze_ok: Option<bool>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (
        m,
        (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt(),
    )
}

/// Aggregates fine-tune records per (dataset, regime).
pub fn summarize(results: &[FinetuneResult]) -> Vec<GroupSummary> {
    let mut groups: BTreeMap<(String, String), Vec<&FinetuneResult>> = BTreeMap::new();
    for r in results {
        groups
            .entry((r.dataset.clone(), r.regime.to_string()))
            .or_default()
            .push(r);
    }
    groups
        .into_values()
        .map(|rs| {
            let test: Vec<f64> = rs.iter().map(|r| r.test_f1).collect();
            let dev: Vec<f64> = rs.iter().map(|r| r.dev_f1).collect();
            let (test_f1_mean, test_f1_std) = mean_std(&test);
            let mut per: BTreeMap<String, Vec<f64>> = BTreeMap::new();
            for r in &rs {
                for (c, f) in &r.per_class_test_f1 {
                    per.entry(c.clone()).or_default().push(*f);
                }
            }
            let checks: Vec<bool> = rs.iter().filter_map(|r| r.freeze_check).collect();
            GroupSummary {
                dataset: rs[0].dataset.clone(),
                regime: rs[0].regime,
                runs: rs.len(),
                seeds: rs.iter().map(|r| r.seed).collect(),
                test_f1_mean,
                test_f1_std,
                dev_f1_mean: mean_std(&dev).0,
                per_class_test_f1: per.into_iter().map(|(c, v)| (c, mean_std(&v).0)).collect(),
                freeze_ok: (!checks.is_empty()).then(|| checks.iter().all(|&c| c)),
            }
        })
        .collect()
}
