use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{detect_knee, Kind, KneeReport, SpectralSnapshot};
use crate::error::{Error, Result};
use crate::trainer::{MetricRecord, METRICS_FILE, SPECTRAL_FILE};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub points: usize,
    pub first: f64,
    pub last: f64,
    pub min: f64,
    pub min_step: u64,
    pub max: f64,
    pub max_step: u64,
}

impl CurveSummary {
    pub fn of(curve: &[(u64, f64)]) -> Option<Self> {
        let (first, last) = (curve.first()?, curve.last()?);
        let min = curve
            .iter()
            .cloned()
            .fold(*first, |a, b| if b.1 < a.1 { b } else { a });
        let max = curve
            .iter()
            .cloned()
            .fold(*first, |a, b| if b.1 > a.1 { b } else { a });
        Some(Self {
            points: curve.len(),
            first: first.1,
            last: last.1,
            min: min.1,
            min_step: min.0,
            max: max.1,
            max_step: max.0,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaSummary {
    pub support_acc: Option<CurveSummary>,
    pub query_acc: Option<CurveSummary>,
    pub meta_loss: Option<CurveSummary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    pub layer: String,
    pub kind: Kind,
    pub per: Option<CurveSummary>,
    pub er: Option<CurveSummary>,
    pub knee: Option<KneeReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadPoint {
    pub step: u64,
    pub mean: f64,
    pub std: f64,
}

/// Machine-readable summary of one run directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub records: usize,
    pub last_step: Option<u64>,
    pub meta_branches: u64,
    pub ar_branches: u64,
    pub train_loss: Option<CurveSummary>,
    pub perplexity: Option<CurveSummary>,
    /// Absent when the run never took a meta branch.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub meta: Option<MetaSummary>,
    pub head: Vec<HeadPoint>,
    /// Knee of the per-layer mean normalised attention entropy.
    pub attention_entropy: Vec<KneeReport>,
    pub spectral: Vec<SpectralSummary>,
    pub warnings: Vec<String>,
}

/// Parses a line-delimited log, skipping (and reporting) malformed lines such
/// as a partially written final record.
fn read_lines<T: for<'de> Deserialize<'de>>(
    path: &Path,
    warnings: &mut Vec<String>,
) -> Result<Vec<T>> {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let text = match std::fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            warnings.push(format!("{name}: missing"));
            return Ok(Vec::new());
        }
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str(line) {
            Ok(r) => out.push(r),
            Err(_) => warnings.push(format!(
                "{name}: line {} is malformed and was skipped",
                i + 1
            )),
        }
    }
    Ok(out)
}

fn curve(records: &[MetricRecord], f: impl Fn(&MetricRecord) -> Option<f64>) -> Vec<(u64, f64)> {
    records
        .iter()
        .filter_map(|r| f(r).map(|v| (r.step, v)))
        .collect()
}

fn knee(
    label: &str,
    c: &[(u64, f64)],
    window: usize,
    prominence: Option<f64>,
    warnings: &mut Vec<String>,
) -> Option<KneeReport> {
    match detect_knee(label, c, window, prominence) {
        Ok(k) => Some(k),
        Err(e) => {
            warnings.push(format!("{label}: {e}"));
            None
        }
    }
}

pub fn analyze_run(dir: &Path, window: usize, prominence: Option<f64>) -> Result<AnalysisReport> {
    if !dir.is_dir() {
        return Err(Error::Input(format!(
            "run directory {} not found",
            dir.display()
        )));
    }
    let mut warnings = Vec::new();
    let records: Vec<MetricRecord> = read_lines(&dir.join(METRICS_FILE), &mut warnings)?;
    let snaps: Vec<SpectralSnapshot> = read_lines(&dir.join(SPECTRAL_FILE), &mut warnings)?;

    let last = records.last();
    let meta_branches = last.map_or(0, |r| r.meta_branches);
    let meta = (meta_branches > 0).then(|| MetaSummary {
        support_acc: CurveSummary::of(&curve(&records, |r| r.support_acc)),
        query_acc: CurveSummary::of(&curve(&records, |r| r.query_acc)),
        meta_loss: CurveSummary::of(&curve(&records, |r| r.meta_loss)),
    });

    let mut entropy: BTreeMap<usize, Vec<(u64, f64)>> = BTreeMap::new();
    for r in &records {
        for (l, heads) in r.attn_entropy.iter().flatten().enumerate() {
            if !heads.is_empty() {
                let mean = heads.iter().sum::<f64>() / heads.len() as f64;
                entropy.entry(l).or_default().push((r.step, mean));
            }
        }
    }
    let attention_entropy = entropy
        .iter()
        .filter_map(|(l, c)| {
            knee(
                &format!("layers.{l}.attention"),
                c,
                window,
                prominence,
                &mut warnings,
            )
        })
        .collect();

    let mut series: BTreeMap<(String, Kind), Vec<&SpectralSnapshot>> = BTreeMap::new();
    for s in &snaps {
        series.entry((s.layer.clone(), s.kind)).or_default().push(s);
    }
    let spectral = series
        .into_iter()
        .map(|((layer, kind), pts)| {
            let per: Vec<(u64, f64)> = pts.iter().map(|s| (s.step, s.per)).collect();
            let er: Vec<(u64, f64)> = pts.iter().map(|s| (s.step, s.er)).collect();
            let label = format!("{layer}/{}", kind_name(kind));
            SpectralSummary {
                knee: knee(&label, &per, window, prominence, &mut warnings),
                per: CurveSummary::of(&per),
                er: CurveSummary::of(&er),
                layer,
                kind,
            }
        })
        .collect();

    Ok(AnalysisReport {
        records: records.len(),
        last_step: last.map(|r| r.step),
        meta_branches,
        ar_branches: last.map_or(0, |r| r.ar_branches),
        train_loss: CurveSummary::of(&curve(&records, |r| r.train_loss)),
        perplexity: CurveSummary::of(&curve(&records, |r| r.perplexity)),
        meta,
        head: records
            .iter()
            .map(|r| HeadPoint {
                step: r.step,
                mean: r.head_mean,
                std: r.head_std,
            })
            .collect(),
        attention_entropy,
        spectral,
        warnings,
    })
}

fn kind_name(k: Kind) -> &'static str {
    match k {
        Kind::Weights => "weights",
        Kind::Gradients => "gradients",
    }
}
