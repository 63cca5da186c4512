//! Command-line entry points: pretraining, episode dumps, run analysis,
//! downstream fine-tuning and result reports.

mod analyze;
mod config;
mod report;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub use analyze::{
    analyze_run, AnalysisReport, CurveSummary, HeadPoint, MetaSummary, SpectralSummary,
};
pub use config::{
    apply_override, DataSection, MetaSection, MonitoringSection, RanksimSection, RunConfig,
    TrainingSection,
};
pub use report::{summarize, GroupSummary};

use crate::error::{Error, Result};
use crate::finetune::{self, FinetunePlan, FinetuneResult, NerCorpusSpec, Regime, TaggedCorpus};
use crate::model::ModelConfig;
use crate::rng::{stream, Stream};
use crate::smlmt::{sample_episode, write_dump, Tokenizer, WhitespaceTokenizer};
use crate::synth::{toy_corpus, ToyCorpusSpec};
use crate::trainer::{checkpoint, run, RunOptions, TrainData};

pub const CONFIG_FILE: &str = "config.toml";
pub const VOCAB_FILE: &str = "vocab.json";

#[derive(Debug, Parser)]
#[command(
    name = "metatrain",
    version,
    about = "Hybrid next-token / meta-learning pretraining at desk scale"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, clap::Args)]
pub struct ConfigArgs {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a config field, e.g. `--set training.hybrid_ratio=0`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Replaces `training.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a backbone; writes logs and checkpoints under `<out>/<hash>-s<seed>`.
    Pretrain {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Stop after this many outer steps (the run stays resumable).
        #[arg(long)]
        stop_at: Option<u64>,
    },
    /// Dump episodes sampled under the config seed as JSON lines.
    Episodes {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value = "episodes.jsonl")]
        out: PathBuf,
    },
    /// Summarise a run directory: curves, knees, head statistics.
    Analyze {
        run: PathBuf,
        /// Smoothing window in records; defaults to the run's monitoring setting.
        #[arg(long)]
        window: Option<usize>,
        #[arg(long)]
        prominence: Option<f64>,
        /// Write the JSON report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fine-tune a checkpoint on a BIO-tagged corpus and append a result record.
    Finetune {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Directory with train/dev/test `.conll` files.
        #[arg(long, conflicts_with = "synthetic")]
        corpus: Option<PathBuf>,
        /// Use the generated entity corpus instead of `--corpus`.
        #[arg(long)]
        synthetic: bool,
        /// Generated corpus has one-token entities whose tag is fixed by the word.
        #[arg(long, requires = "synthetic")]
        separable: bool,
        /// `head_only` or `full`.
        #[arg(long, default_value = "head_only")]
        regime: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        patience: Option<usize>,
        /// Vocabulary file; defaults to the one in the checkpoint's run directory.
        #[arg(long)]
        vocab: Option<PathBuf>,
        #[arg(long, default_value = "results.jsonl")]
        out: PathBuf,
    },
    /// Aggregate fine-tune result records per dataset and regime.
    Report {
        results: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a synthetic corpus: `toy` text to a file or `ner` splits to a directory.
    Synth {
        kind: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        separable: bool,
    },
}

/// Failure of a CLI invocation with its exit status.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = if matches!(e, Error::Config { .. }) {
            2
        } else {
            1
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

fn io_write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(args.config.as_deref(), &args.overrides)?;
    if let Some(s) = args.seed {
        cfg.training.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Corpus text, fitted tokenizer, sized model config and data splits.
pub fn prepare(cfg: &RunConfig) -> Result<(WhitespaceTokenizer, ModelConfig, TrainData)> {
    let text = match (&cfg.data.synthetic, &cfg.data.corpus) {
        (Some(spec), _) => toy_corpus(spec),
        (None, Some(p)) => {
            std::fs::read_to_string(p).map_err(|_| Error::config("data.corpus", "not found"))?
        }
        (None, None) => return Err(Error::config("data.corpus", "not set")),
    };
    let tok = WhitespaceTokenizer::fit(&text, Some(cfg.model.vocab_size))?;
    let model = ModelConfig {
        vocab_size: tok.vocab_size(),
        ..cfg.model.clone()
    };
    let data = TrainData::from_text(&text, &tok, cfg.data.eval_fraction, &cfg.band())?;
    Ok((tok, model, data))
}

fn pretrain(cfg: &RunConfig, out: &Path, stop_at: Option<u64>) -> Result<String> {
    let (tok, model, data) = prepare(cfg)?;
    let dir = cfg.run_dir(out)?;
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let cfg_text = cfg.to_toml()?;
    let cfg_path = dir.join(CONFIG_FILE);
    match std::fs::read_to_string(&cfg_path) {
        Ok(existing) if existing != cfg_text => {
            return Err(Error::config(
                "config",
                format!("{} holds a different configuration", dir.display()),
            ))
        }
        Ok(_) => {}
        Err(_) => io_write(&cfg_path, &cfg_text)?,
    }
    let vocab_path = dir.join(VOCAB_FILE);
    if !vocab_path.exists() {
        io_write(&vocab_path, &serde_json::to_string(&tok)?)?;
    }
    let opts = RunOptions {
        out_dir: dir.clone(),
        world_size: cfg.ranksim.world_size,
        monitored: cfg.monitoring.layers.clone(),
        stop_at,
    };
    let s = run(&model, &cfg.train_plan(), &cfg.meta_plan(), &data, &opts)?;
    Ok(format!(
        "{}\nstep={} resumed_from={} backbone={}",
        dir.display(),
        s.step,
        s.resumed_from.map_or("none".to_string(), |r| r.to_string()),
        &s.backbone_fingerprint[..16]
    ))
}

fn episodes(cfg: &RunConfig, count: usize, out: &Path) -> Result<String> {
    let (_, _, data) = prepare(cfg)?;
    let m = &cfg.meta;
    let mut rng = stream(cfg.training.seed, Stream::Episode);
    let eps = (0..count)
        .map(|_| {
            let ep = sample_episode(&data.index, m.n_ways, m.k_shots, m.q_queries, &mut rng)?;
            ep.validate()?;
            Ok(ep)
        })
        .collect::<Result<Vec<_>>>()?;
    write_dump(out, &eps)?;
    Ok(format!("{} episodes -> {}", eps.len(), out.display()))
}

fn load_vocab(path: &Path) -> Result<WhitespaceTokenizer> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let tok: WhitespaceTokenizer = serde_json::from_str(&text)?;
    Ok(tok.reindex())
}

#[allow(clippy::too_many_arguments)]
fn finetune_cmd(
    ckpt: &Path,
    corpus: Option<&Path>,
    synthetic: bool,
    separable: bool,
    regime: Regime,
    seed: u64,
    plan_overrides: (Option<f64>, Option<usize>, Option<usize>),
    vocab: Option<&Path>,
    out: &Path,
) -> Result<(String, String)> {
    let (trainer, _) = checkpoint::load(ckpt)?;
    let vocab_path = match vocab {
        Some(v) => v.to_path_buf(),
        None => ckpt
            .parent()
            .and_then(Path::parent)
            .map(|d| d.join(VOCAB_FILE))
            .ok_or_else(|| Error::Input("cannot locate the run vocabulary; pass --vocab".into()))?,
    };
    let tok = load_vocab(&vocab_path)?;
    let (data, dataset) = match (corpus, synthetic) {
        (Some(dir), _) => (
            TaggedCorpus::load(dir)?,
            dir.file_name()
                .map_or("corpus".into(), |n| n.to_string_lossy().into_owned()),
        ),
        (None, true) => {
            let spec = NerCorpusSpec {
                separable,
                ..NerCorpusSpec::default()
            };
            let name = if separable {
                "synthetic-separable"
            } else {
                "synthetic"
            };
            (finetune::ner_corpus(&spec)?, name.to_string())
        }
        (None, false) => return Err(Error::Input("pass --corpus DIR or --synthetic".into())),
    };
    let defaults = FinetunePlan::default();
    let plan = FinetunePlan {
        regime,
        seed,
        lr: plan_overrides.0.unwrap_or(defaults.lr),
        max_epochs: plan_overrides.1.unwrap_or(defaults.max_epochs),
        patience: plan_overrides.2.unwrap_or(defaults.patience),
        ..defaults
    };
    let outcome = finetune::finetune(&trainer.backbone, &tok, &data, &plan)?;
    let rec = FinetuneResult::new(&dataset, &plan, &trainer.backbone, &outcome);
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    rec.append(out)?;
    let check = match rec.freeze_check {
        Some(true) => "backbone hash check: passed",
        Some(false) => "backbone hash check: FAILED",
        None => "backbone hash check: not applicable (full regime)",
    };
    Ok((serde_json::to_string(&rec)?, check.to_string()))
}

/// Runs one parsed command; returns (stdout, stderr) text on success.
pub fn execute(cli: Cli) -> std::result::Result<(String, String), Failure> {
    match cli.command {
        Command::Pretrain { cfg, out, stop_at } => {
            let cfg = load_config(&cfg)?;
            Ok((pretrain(&cfg, &out, stop_at)?, String::new()))
        }
        Command::Episodes { cfg, count, out } => {
            let cfg = load_config(&cfg)?;
            Ok((String::new(), episodes(&cfg, count, &out)?))
        }
        Command::Analyze {
            run,
            window,
            prominence,
            out,
        } => {
            let saved = RunConfig::from_toml(
                &std::fs::read_to_string(run.join(CONFIG_FILE)).unwrap_or_default(),
            )
            .unwrap_or_default();
            let window = window.unwrap_or(saved.monitoring.knee_window);
            let prominence = prominence.or(saved.monitoring.knee_prominence);
            let report = analyze_run(&run, window, prominence)?;
            let json = serde_json::to_string_pretty(&report).map_err(Error::from)?;
            let warn = report
                .warnings
                .iter()
                .map(|w| format!("warning: {w}"))
                .collect::<Vec<_>>()
                .join("\n");
            match out {
                Some(p) => {
                    io_write(&p, &json)?;
                    Ok((p.display().to_string(), warn))
                }
                None => Ok((json, warn)),
            }
        }
        Command::Finetune {
            checkpoint,
            corpus,
            synthetic,
            separable,
            regime,
            seed,
            lr,
            epochs,
            patience,
            vocab,
            out,
        } => {
            let regime: Regime = regime.parse().map_err(|e: Error| usage(e.to_string()))?;
            let (line, check) = finetune_cmd(
                &checkpoint,
                corpus.as_deref(),
                synthetic,
                separable,
                regime,
                seed,
                (lr, epochs, patience),
                vocab.as_deref(),
                &out,
            )?;
            Ok((line, check))
        }
        Command::Report { results, out } => {
            let recs = finetune::read_results(&results)?;
            let json = serde_json::to_string_pretty(&summarize(&recs)).map_err(Error::from)?;
            match out {
                Some(p) => {
                    io_write(&p, &json)?;
                    Ok((p.display().to_string(), String::new()))
                }
                None => Ok((json, String::new())),
            }
        }
        Command::Synth {
            kind,
            out,
            seed,
            separable,
        } => match kind.as_str() {
            "toy" => {
                io_write(
                    &out,
                    &toy_corpus(&ToyCorpusSpec {
                        seed,
                        ..ToyCorpusSpec::default()
                    }),
                )?;
                Ok((out.display().to_string(), String::new()))
            }
            "ner" => {
                finetune::ner_corpus(&NerCorpusSpec {
                    seed,
                    separable,
                    ..NerCorpusSpec::default()
                })?
                .save(&out)?;
                Ok((out.display().to_string(), String::new()))
            }
            other => Err(usage(format!(
                "unknown corpus kind `{other}` (expected toy or ner)"
            ))),
        },
    }
}

/// Parses `args` and runs the command. Failures carry a one-line reason.
pub fn main_with<I, T>(args: I) -> std::result::Result<(String, String), Failure>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                return Ok((e.to_string(), String::new()));
            }
            let text = e.to_string();
            let line = text
                .lines()
                .find(|l| !l.trim().is_empty())
                .unwrap_or("usage error");
            return Err(usage(line.trim_start_matches("error: ").to_string()));
        }
    };
    execute(cli)
}
