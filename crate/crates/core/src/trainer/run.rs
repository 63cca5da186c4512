use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::checkpoint::{self, LogOffsets};
use super::data::TrainData;
use super::plan::{MetaPlan, TrainPlan};
use super::state::{Trainer, Window};
use super::steps::eval_loss;
use crate::dynamics::{attention_entropy, resolve_monitored, snapshot};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::ranksim::{Comm, RankGroup};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SPECTRAL_FILE: &str = "spectral.jsonl";
pub const CHECKPOINT_DIR: &str = "checkpoints";

/// One line of the metric log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    pub meta_branches: u64,
    pub ar_branches: u64,
    /// Mean loss of the sub-batches since the previous record, whichever branch they took.
    pub train_loss: Option<f64>,
    pub ar_loss: Option<f64>,
    pub meta_loss: Option<f64>,
    pub perplexity: Option<f64>,
    pub support_acc: Option<f64>,
    pub query_acc: Option<f64>,
    pub head_mean: f64,
    pub head_std: f64,
    pub lr: f64,
    /// `[layer][head]` normalised attention entropy on the probe sequence.
    pub attn_entropy: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub world_size: usize,
    pub monitored: Vec<String>,
    /// Stop (and checkpoint) once this many outer steps are complete.
    pub stop_at: Option<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub step: u64,
    pub resumed_from: Option<u64>,
    pub backbone_fingerprint: String,
}

fn open_append(path: &Path) -> Result<File> {
    OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))
}

fn truncate(path: &Path, len: u64) -> Result<()> {
    let f = OpenOptions::new()
        .create(true)
        .write(true)
        .truncate(false)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    f.set_len(len).map_err(|e| Error::io(path, e))
}

fn file_len(path: &Path) -> Result<u64> {
    Ok(fs::metadata(path).map_err(|e| Error::io(path, e))?.len())
}

struct Logs {
    metrics_path: PathBuf,
    spectral_path: PathBuf,
    metrics: File,
    spectral: File,
}

impl Logs {
    fn line<T: Serialize>(f: &mut File, path: &Path, v: &T) -> Result<()> {
        let mut s = serde_json::to_string(v)?;
        s.push('\n');
        f.write_all(s.as_bytes()).map_err(|e| Error::io(path, e))
    }

    fn offsets(&mut self) -> Result<LogOffsets> {
        self.metrics
            .flush()
            .map_err(|e| Error::io(&self.metrics_path, e))?;
        self.spectral
            .flush()
            .map_err(|e| Error::io(&self.spectral_path, e))?;
        Ok(LogOffsets {
            metrics: file_len(&self.metrics_path)?,
            spectral: file_len(&self.spectral_path)?,
        })
    }
}

fn record(
    t: &Trainer,
    window: &Window,
    lr: f64,
    perplexity: Option<f64>,
    attn: Option<Vec<Vec<f64>>>,
) -> MetricRecord {
    let (head_mean, head_std) = t.head_stats();
    MetricRecord {
        step: t.step,
        meta_branches: t.meta_count,
        ar_branches: t.ar_count,
        train_loss: window.train_loss(),
        ar_loss: window.ar_loss(),
        meta_loss: window.meta_loss(),
        perplexity,
        support_acc: window.support_acc(),
        query_acc: window.query_acc(),
        head_mean,
        head_std,
        lr,
        attn_entropy: attn,
    }
}

/// Runs (or resumes) training in `opts.out_dir` across `opts.world_size` simulated ranks.
pub fn run(
    model: &ModelConfig,
    plan: &TrainPlan,
    meta: &MetaPlan,
    data: &TrainData,
    opts: &RunOptions,
) -> Result<RunSummary> {
    plan.validate(opts.world_size)?;
    let dir = &opts.out_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let ckpt_root = dir.join(CHECKPOINT_DIR);
    let metrics_path = dir.join(METRICS_FILE);
    let spectral_path = dir.join(SPECTRAL_FILE);

    let (trainer, resumed_from) = match checkpoint::latest(&ckpt_root)? {
        Some(latest) => {
            let (t, offsets) = checkpoint::load(&latest)?;
            if t.backbone.config != *model || t.plan != *plan || t.meta != *meta {
                return Err(Error::config(
                    "checkpoint",
                    "configuration differs from the checkpointed run",
                ));
            }
            truncate(&metrics_path, offsets.metrics)?;
            truncate(&spectral_path, offsets.spectral)?;
            let s = t.step;
            (t, Some(s))
        }
        None => {
            truncate(&metrics_path, 0)?;
            truncate(&spectral_path, 0)?;
            (
                Trainer::new(model.clone(), plan.clone(), meta.clone())?,
                None,
            )
        }
    };
    resolve_monitored(&trainer.backbone, &opts.monitored)?;
    let seq_len = model.seq_len;
    let eval_windows = data.eval_windows(plan.eval_batch_size, seq_len);
    let probe = eval_windows.first().map(|w| w[..seq_len].to_vec());
    let target = opts
        .stop_at
        .map_or(plan.max_steps, |s| s.min(plan.max_steps));

    let results = RankGroup::run(opts.world_size, |rank, group| {
        let comm = Comm {
            group: group.clone(),
            rank,
        };
        let mut t = trainer.clone();
        let mut logs = if comm.is_root() {
            Some(Logs {
                metrics: open_append(&metrics_path)?,
                spectral: open_append(&spectral_path)?,
                metrics_path: metrics_path.clone(),
                spectral_path: spectral_path.clone(),
            })
        } else {
            None
        };
        let mut saved_at = t.step;
        while t.step < target {
            let report = t.outer_step(data, &comm)?;
            let s = report.step;
            let eval = s % plan.eval_every == 0;
            let log = s % plan.log_every == 0 || eval;
            if let Some(logs) = logs.as_mut() {
                let mut perplexity = None;
                let mut attn = None;
                if eval {
                    if !eval_windows.is_empty() {
                        perplexity = Some(eval_loss(&t.backbone, &eval_windows)?.exp());
                    }
                    if let Some(p) = &probe {
                        let probs = t.backbone.attention_probabilities(p)?;
                        attn = Some(
                            probs
                                .iter()
                                .map(|layer| {
                                    layer
                                        .iter()
                                        .map(|h| attention_entropy(h, true))
                                        .collect::<Result<Vec<_>>>()
                                })
                                .collect::<Result<Vec<_>>>()?,
                        );
                    }
                    for snap in snapshot(&t.backbone, Some(&report.grads), s, &opts.monitored)? {
                        Logs::line(&mut logs.spectral, &logs.spectral_path, &snap)?;
                    }
                }
                if log {
                    let rec = record(&t, &t.window, report.lr, perplexity, attn);
                    Logs::line(&mut logs.metrics, &logs.metrics_path, &rec)?;
                }
            }
            if log {
                t.window = Window::default();
            }
            if comm.is_root() && (s % plan.checkpoint_every == 0 || s == target) {
                let offsets = logs.as_mut().expect("root owns the logs").offsets()?;
                checkpoint::save(&ckpt_root, &t, offsets)?;
                saved_at = s;
            }
        }
        if comm.is_root() && saved_at != t.step {
            let offsets = logs.as_mut().expect("root owns the logs").offsets()?;
            checkpoint::save(&ckpt_root, &t, offsets)?;
        }
        Ok(RunSummary {
            step: t.step,
            resumed_from,
            backbone_fingerprint: t.backbone.params.fingerprint(),
        })
    })?;
    let mut first = None;
    for r in results {
        let r = r?;
        first.get_or_insert(r);
    }
    first.ok_or_else(|| Error::Contract("no ranks ran".into()))
}

/// Parses a metric log.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
