use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::TrainData;
use super::optim::{lr_at, AdamW};
use super::plan::{MetaPlan, TrainPlan};
use super::steps::{ar_step, branch_decide, meta_step, Branch};
use crate::dynamics::head_stats;
use crate::error::{Error, Result};
use crate::model::{Backbone, HeadSpec, ModelConfig, TaskHead};
use crate::numcore::Matrix;
use crate::ranksim::Comm;
use crate::rng::{stream, Stream, StreamState};
use crate::smlmt::{sample_episode, Episode};

/// The random streams a run consumes after initialisation.
#[derive(Clone, Debug)]
pub struct Streams {
    pub branch: ChaCha8Rng,
    pub data: ChaCha8Rng,
    pub episode: ChaCha8Rng,
    pub head_reinit: ChaCha8Rng,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamStates {
    pub branch: StreamState,
    pub data: StreamState,
    pub episode: StreamState,
    pub head_reinit: StreamState,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Self {
            branch: stream(seed, Stream::Branch),
            data: stream(seed, Stream::Data),
            episode: stream(seed, Stream::Episode),
            head_reinit: stream(seed, Stream::HeadReinit),
        }
    }

    pub fn capture(&self) -> StreamStates {
        StreamStates {
            branch: StreamState::capture(&self.branch),
            data: StreamState::capture(&self.data),
            episode: StreamState::capture(&self.episode),
            head_reinit: StreamState::capture(&self.head_reinit),
        }
    }

    pub fn restore(s: &StreamStates) -> Result<Self> {
        Ok(Self {
            branch: s.branch.restore()?,
            data: s.data.restore()?,
            episode: s.episode.restore()?,
            head_reinit: s.head_reinit.restore()?,
        })
    }
}

/// Running sums between two metric records.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub loss_sum: f64,
    pub loss_n: u64,
    pub ar_sum: f64,
    pub ar_n: u64,
    pub meta_sum: f64,
    pub support_acc_sum: f64,
    pub query_acc_sum: f64,
    pub meta_n: u64,
}

fn mean(sum: f64, n: u64) -> Option<f64> {
    (n > 0).then(|| sum / n as f64)
}

impl Window {
    pub fn train_loss(&self) -> Option<f64> {
        mean(self.loss_sum, self.loss_n)
    }
    pub fn ar_loss(&self) -> Option<f64> {
        mean(self.ar_sum, self.ar_n)
    }
    pub fn meta_loss(&self) -> Option<f64> {
        mean(self.meta_sum, self.meta_n)
    }
    pub fn support_acc(&self) -> Option<f64> {
        mean(self.support_acc_sum, self.meta_n)
    }
    pub fn query_acc(&self) -> Option<f64> {
        mean(self.query_acc_sum, self.meta_n)
    }
}

/// What one outer step did.
#[derive(Clone, Debug)]
pub struct StepReport {
    /// Completed outer updates after this step.
    pub step: u64,
    pub lr: f64,
    pub branches: Vec<Branch>,
    /// Rank-averaged accumulated gradient that was applied.
    pub grads: BTreeMap<String, Matrix>,
}

/// One rank's replica of the full training state.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub plan: TrainPlan,
    pub meta: MetaPlan,
    pub backbone: Backbone,
    pub head: TaskHead,
    pub opt: AdamW,
    pub streams: Streams,
    pub step: u64,
    pub meta_count: u64,
    pub ar_count: u64,
    pub window: Window,
}

pub fn head_spec(model: &ModelConfig, meta: &MetaPlan) -> HeadSpec {
    HeadSpec {
        input_dim: model.d_model,
        hidden_dim: meta.head_hidden,
        n_layers: meta.head_layers,
        n_classes: meta.n_ways,
        dropout: meta.head_dropout,
    }
}

fn accumulate(
    acc: &mut BTreeMap<String, Matrix>,
    grads: BTreeMap<String, Matrix>,
    weight: f64,
) -> Result<()> {
    for (name, mut g) in grads {
        g.scale(weight);
        match acc.get_mut(&name) {
            Some(a) => a.add_assign(&g)?,
            None => {
                acc.insert(name, g);
            }
        }
    }
    Ok(())
}

impl Trainer {
    pub fn new(model: ModelConfig, plan: TrainPlan, meta: MetaPlan) -> Result<Self> {
        model.validate()?;
        meta.validate()?;
        let mut init = stream(plan.seed, Stream::Init);
        let backbone = Backbone::init(model.clone(), &mut init)?;
        let head = TaskHead::init(head_spec(&model, &meta), &mut init)?;
        Ok(Self {
            opt: AdamW::new(plan.weight_decay),
            streams: Streams::new(plan.seed),
            plan,
            meta,
            backbone,
            head,
            step: 0,
            meta_count: 0,
            ar_count: 0,
            window: Window::default(),
        })
    }

    fn episode(&mut self, data: &TrainData, comm: &Comm) -> Result<Episode> {
        let ep = if comm.is_root() {
            Some(sample_episode(
                &data.index,
                self.meta.n_ways,
                self.meta.k_shots,
                self.meta.q_queries,
                &mut self.streams.episode,
            )?)
        } else {
            None
        };
        comm.group
            .broadcast(comm.rank, 0, ep)?
            .ok_or_else(|| Error::Contract("rank 0 broadcast no episode".into()))
    }

    /// Runs `accumulation_steps` sub-batches and applies one AdamW update.
    pub fn outer_step(&mut self, data: &TrainData, comm: &Comm) -> Result<StepReport> {
        let world = comm.world_size();
        let micro = self.plan.micro_batch(world);
        let seq_len = self.backbone.config.seq_len;
        let accum = self.plan.accumulation_steps;
        let weight = 1.0 / accum as f64;
        let mut acc: BTreeMap<String, Matrix> = BTreeMap::new();
        let mut branches = Vec::with_capacity(accum);
        let mut local_losses = Vec::with_capacity(accum);
        let mut meta_stats = Vec::new();
        for _ in 0..accum {
            let branch = branch_decide(comm, &mut self.streams.branch, self.plan.hybrid_ratio)?;
            branches.push(branch);
            match branch {
                Branch::Meta => {
                    let ep = self.episode(data, comm)?;
                    if self.meta.head_reinit {
                        self.head =
                            TaskHead::init(self.head.spec.clone(), &mut self.streams.head_reinit)?;
                    }
                    let out = meta_step(
                        &self.backbone,
                        &mut self.head,
                        &ep,
                        self.plan.inner_steps,
                        self.plan.inner_lr,
                        comm,
                    )?;
                    local_losses.push(out.query_loss);
                    meta_stats.push((out.query_loss, out.support_acc, out.query_acc));
                    accumulate(&mut acc, out.grads, weight)?;
                }
                Branch::Ar => {
                    let global =
                        data.sample_windows(&mut self.streams.data, micro * world, seq_len)?;
                    let mine = &global[comm.rank * micro..(comm.rank + 1) * micro];
                    let (loss, grads) = ar_step(&self.backbone, mine)?;
                    local_losses.push(loss);
                    accumulate(&mut acc, grads, weight)?;
                }
            }
        }
        let losses = comm
            .group
            .all_gather(comm.rank, &Matrix::row_vector(local_losses))?;
        let grads = comm.group.all_reduce_mean(comm.rank, &acc)?;
        AdamW::check_finite(&grads)?;
        let lr = lr_at(&self.plan, self.step);
        self.opt.step(
            &mut [&mut self.backbone.params, &mut self.head.params],
            &grads,
            lr,
        )?;
        comm.group.barrier(comm.rank)?;

        for (i, branch) in branches.iter().enumerate() {
            let l = (0..world).map(|r| losses.get(r, i)).sum::<f64>() / world as f64;
            self.window.loss_sum += l;
            self.window.loss_n += 1;
            match branch {
                Branch::Meta => self.meta_count += 1,
                Branch::Ar => {
                    self.ar_count += 1;
                    self.window.ar_sum += l;
                    self.window.ar_n += 1;
                }
            }
        }
        for (q, s, a) in meta_stats {
            self.window.meta_sum += q;
            self.window.support_acc_sum += s;
            self.window.query_acc_sum += a;
            self.window.meta_n += 1;
        }
        self.step += 1;
        Ok(StepReport {
            step: self.step,
            lr,
            branches,
            grads,
        })
    }

    pub fn head_stats(&self) -> (f64, f64) {
        head_stats(&self.head)
    }
}
