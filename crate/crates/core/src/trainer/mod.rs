//! Hybrid outer loop: a Bernoulli branch per sub-batch between a first-order
//! meta episode and a next-token update, accumulated into one AdamW step.

pub mod checkpoint;
mod data;
mod optim;
mod plan;
mod run;
mod state;
mod steps;

pub use data::TrainData;
pub use optim::{lr_at, AdamW};
pub use plan::{MetaPlan, Schedule, TrainPlan};
pub use run::{
    read_metrics, run, MetricRecord, RunOptions, RunSummary, CHECKPOINT_DIR, METRICS_FILE,
    SPECTRAL_FILE,
};
pub use state::{head_spec, StepReport, StreamStates, Streams, Trainer, Window};
pub use steps::{
    ar_step, branch_decide, eval_loss, frozen_hidden, inner_sgd_step, meta_step,
    query_loss_and_grads, Branch, MetaOutcome,
};
