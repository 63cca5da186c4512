//! Checkpoint directories: `manifest.json`, `params.bin`, `optimizer.bin`.
//!
//! Tensors are stored as raw little-endian `f64` in the order listed by the
//! manifest, so a restored run is bit-identical to the saved one.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::optim::AdamW;
use super::plan::{MetaPlan, TrainPlan};
use super::state::{head_spec, StreamStates, Streams, Trainer, Window};
use crate::error::{Error, Result};
use crate::model::{Backbone, ModelConfig, ParameterStore, TaskHead};
use crate::numcore::Matrix;

const FORMAT: u32 = 1;
const LATEST: &str = "latest";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

/// Byte lengths of the append-only logs at save time.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogOffsets {
    pub metrics: u64,
    pub spectral: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: u32,
    pub step: u64,
    pub meta_count: u64,
    pub ar_count: u64,
    pub window: Window,
    pub model: ModelConfig,
    pub plan: TrainPlan,
    pub meta: MetaPlan,
    pub backbone_params: Vec<TensorEntry>,
    pub head_params: Vec<TensorEntry>,
    pub optimizer: OptimizerManifest,
    pub streams: StreamStates,
    pub logs: LogOffsets,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerManifest {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub t: BTreeMap<String, u64>,
    pub moments: Vec<TensorEntry>,
}

fn entries<'a>(it: impl Iterator<Item = (&'a String, &'a Matrix)>) -> Vec<TensorEntry> {
    it.map(|(n, m)| TensorEntry {
        name: n.clone(),
        rows: m.rows(),
        cols: m.cols(),
    })
    .collect()
}

fn push_f64(buf: &mut Vec<u8>, m: &Matrix) {
    for v in m.data() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Reader<'_> {
    fn matrix(&mut self, e: &TensorEntry) -> Result<Matrix> {
        let n = e.rows * e.cols;
        let end = self.pos + 8 * n;
        let chunk = self.bytes.get(self.pos..end).ok_or_else(|| {
            Error::Format(format!(
                "{} is truncated at {}",
                self.path.display(),
                e.name
            ))
        })?;
        self.pos = end;
        let data = chunk
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Matrix::new(e.rows, e.cols, data)
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!(
                "{} has trailing bytes",
                self.path.display()
            )));
        }
        Ok(())
    }
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn checkpoint_name(step: u64) -> String {
    format!("step-{step:08}")
}

/// Writes `trainer` under `root/step-XXXXXXXX` and points `root/latest` at it.
pub fn save(root: &Path, trainer: &Trainer, logs: LogOffsets) -> Result<PathBuf> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let name = checkpoint_name(trainer.step);
    let tmp = root.join(format!(".tmp-{name}"));
    let dst = root.join(&name);
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;

    let mut params = Vec::new();
    for (_, m) in trainer
        .backbone
        .params
        .iter()
        .chain(trainer.head.params.iter())
    {
        push_f64(&mut params, m);
    }
    write(&tmp.join("params.bin"), &params)?;

    let opt = &trainer.opt;
    let mut moments = Vec::new();
    for (name, m) in &opt.m {
        push_f64(&mut moments, m);
        push_f64(&mut moments, &opt.v[name]);
    }
    write(&tmp.join("optimizer.bin"), &moments)?;

    let manifest = Manifest {
        format: FORMAT,
        step: trainer.step,
        meta_count: trainer.meta_count,
        ar_count: trainer.ar_count,
        window: trainer.window.clone(),
        model: trainer.backbone.config.clone(),
        plan: trainer.plan.clone(),
        meta: trainer.meta.clone(),
        backbone_params: entries(trainer.backbone.params.iter()),
        head_params: entries(trainer.head.params.iter()),
        optimizer: OptimizerManifest {
            beta1: opt.beta1,
            beta2: opt.beta2,
            eps: opt.eps,
            weight_decay: opt.weight_decay,
            t: opt.t.clone(),
            moments: entries(opt.m.iter()),
        },
        streams: trainer.streams.capture(),
        logs,
    };
    write(
        &tmp.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?.as_bytes(),
    )?;

    if dst.exists() {
        fs::remove_dir_all(&dst).map_err(|e| Error::io(&dst, e))?;
    }
    fs::rename(&tmp, &dst).map_err(|e| Error::io(&dst, e))?;
    let latest_tmp = root.join(".latest.tmp");
    write(&latest_tmp, name.as_bytes())?;
    fs::rename(&latest_tmp, root.join(LATEST)).map_err(|e| Error::io(root.join(LATEST), e))?;
    Ok(dst)
}

/// Directory of the newest complete checkpoint, if any.
pub fn latest(root: &Path) -> Result<Option<PathBuf>> {
    let p = root.join(LATEST);
    if !p.exists() {
        return Ok(None);
    }
    let name = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    Ok(Some(root.join(name.trim())))
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let p = dir.join("manifest.json");
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let m: Manifest = serde_json::from_str(&text)?;
    if m.format != FORMAT {
        return Err(Error::Format(format!(
            "unsupported checkpoint format {}",
            m.format
        )));
    }
    Ok(m)
}

fn read_store(r: &mut Reader<'_>, list: &[TensorEntry]) -> Result<ParameterStore> {
    let mut s = ParameterStore::new();
    for e in list {
        s.insert(e.name.clone(), r.matrix(e)?);
    }
    Ok(s)
}

/// Loads a checkpoint directory; returns the trainer and its log offsets.
pub fn load(dir: &Path) -> Result<(Trainer, LogOffsets)> {
    let m = read_manifest(dir)?;
    let pp = dir.join("params.bin");
    let bytes = fs::read(&pp).map_err(|e| Error::io(&pp, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path: &pp,
    };
    let backbone = Backbone {
        config: m.model.clone(),
        params: read_store(&mut r, &m.backbone_params)?,
    };
    backbone.check_shapes()?;
    let head = TaskHead {
        spec: head_spec(&m.model, &m.meta),
        params: read_store(&mut r, &m.head_params)?,
    };
    r.finish()?;

    let op = dir.join("optimizer.bin");
    let bytes = fs::read(&op).map_err(|e| Error::io(&op, e))?;
    let mut r = Reader {
        bytes: &bytes,
        pos: 0,
        path: &op,
    };
    let mut opt = AdamW::new(m.optimizer.weight_decay);
    opt.beta1 = m.optimizer.beta1;
    opt.beta2 = m.optimizer.beta2;
    opt.eps = m.optimizer.eps;
    opt.t = m.optimizer.t.clone();
    for e in &m.optimizer.moments {
        opt.m.insert(e.name.clone(), r.matrix(e)?);
        opt.v.insert(e.name.clone(), r.matrix(e)?);
    }
    r.finish()?;

    let trainer = Trainer {
        plan: m.plan,
        meta: m.meta,
        backbone,
        head,
        opt,
        streams: Streams::restore(&m.streams)?,
        step: m.step,
        meta_count: m.meta_count,
        ar_count: m.ar_count,
        window: m.window,
    };
    Ok((trainer, m.logs))
}
