use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Backbone, Bound, TaskHead, LM_HEAD};
use crate::numcore::{argmax, forward_backward, Matrix, NodeId, Tape};
use crate::ranksim::Comm;
use crate::smlmt::{Episode, EpisodeItem};
use crate::TokenId;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Meta,
    Ar,
}

/// Rank 0 draws `u ~ U[0, 1)` and broadcasts it; `u < rho` selects the meta branch.
pub fn branch_decide<R: Rng + ?Sized>(comm: &Comm, rng: &mut R, rho: f64) -> Result<Branch> {
    let u: f64 = if comm.is_root() { rng.random() } else { 0.0 };
    let u = comm.group.broadcast(comm.rank, 0, u)?;
    Ok(if u < rho { Branch::Meta } else { Branch::Ar })
}

/// Mean next-token cross-entropy over every position of `batch`, with
/// gradients for the backbone.
pub fn ar_step(b: &Backbone, batch: &[Vec<TokenId>]) -> Result<(f64, BTreeMap<String, Matrix>)> {
    if batch.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    if let Some(s) = batch.iter().find(|s| s.len() < 2) {
        return Err(Error::Input(format!(
            "sequence of length {} has no next-token target",
            s.len()
        )));
    }
    let total: usize = batch.iter().map(|s| s.len() - 1).sum();
    let mut tape = Tape::new();
    let bound = b.params.bind(&mut tape);
    let mut loss: Option<NodeId> = None;
    for s in batch {
        let n = s.len() - 1;
        let nodes = b.forward_on(&mut tape, &bound, &s[..n], true)?;
        let targets: Vec<usize> = s[1..].iter().map(|&t| t as usize).collect();
        let ce = tape.cross_entropy(nodes.logits.expect("logits requested"), &targets)?;
        let part = tape.scale(ce, n as f64 / total as f64);
        loss = Some(match loss {
            Some(acc) => tape.add(acc, part)?,
            None => part,
        });
    }
    let loss = loss.expect("nonempty batch");
    let value = tape.value(loss).data()[0];
    Ok((value, forward_backward(&tape, loss)?))
}

/// Held-out loss without gradient tracking.
pub fn eval_loss(b: &Backbone, batch: &[Vec<TokenId>]) -> Result<f64> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for s in batch {
        if s.len() < 2 {
            return Err(Error::Input("evaluation sequence shorter than 2".into()));
        }
        let out = b.forward(&s[..s.len() - 1])?;
        for (i, &t) in s[1..].iter().enumerate() {
            sum += crate::numcore::softmax_cross_entropy(out.logits.row(i), t as usize)?.0;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Input("empty evaluation batch".into()));
    }
    Ok(sum / count as f64)
}

/// `1 x d` hidden state at the item's mask position. Tokens after the mask
/// cannot influence it under causal attention and are not fed.
fn mask_hidden(b: &Backbone, tape: &mut Tape, bound: &Bound, item: &EpisodeItem) -> Result<NodeId> {
    let prefix = item.tokens.get(..=item.mask_position).ok_or_else(|| {
        Error::Input(format!("mask position {} out of range", item.mask_position))
    })?;
    let nodes = b.forward_on(tape, bound, prefix, false)?;
    tape.row_gather(nodes.hidden, &[item.mask_position])
}

/// Hidden states of `items` under frozen backbone parameters.
pub fn frozen_hidden(b: &Backbone, items: &[EpisodeItem]) -> Result<Matrix> {
    let mut tape = Tape::new();
    let bound = b.params.bind_frozen(&mut tape);
    let rows = items
        .iter()
        .map(|it| mask_hidden(b, &mut tape, &bound, it).map(|n| tape.value(n).clone()))
        .collect::<Result<Vec<_>>>()?;
    Matrix::vstack(&rows.iter().collect::<Vec<_>>())
}

fn accuracy(logits: &Matrix, labels: &[usize]) -> f64 {
    let hits = labels
        .iter()
        .enumerate()
        .filter(|(i, l)| argmax(logits.row(*i)) == **l)
        .count();
    hits as f64 / labels.len() as f64
}

fn head_logits(head: &TaskHead, x: &Matrix) -> Result<Matrix> {
    let mut tape = Tape::new();
    let bound = head.params.bind_frozen(&mut tape);
    let xn = tape.constant(x.clone());
    let z = head.forward_on::<ChaCha8Rng>(&mut tape, &bound, xn, None)?;
    Ok(tape.value(z).clone())
}

/// One SGD step of the head on fixed inputs; returns the pre-step loss.
pub fn inner_sgd_step(head: &mut TaskHead, x: &Matrix, labels: &[usize], lr: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = head.params.bind(&mut tape);
    let xn = tape.constant(x.clone());
    let z = head.forward_on::<ChaCha8Rng>(&mut tape, &bound, xn, None)?;
    let loss = tape.cross_entropy(z, labels)?;
    let value = tape.value(loss).data()[0];
    let grads = forward_backward(&tape, loss)?;
    for (name, g) in &grads {
        head.params.get_mut(name)?.axpy(-lr, g)?;
    }
    Ok(value)
}

#[derive(Clone, Debug)]
pub struct MetaOutcome {
    pub query_loss: f64,
    /// First-order gradients of the query loss for the backbone and the head.
    pub grads: BTreeMap<String, Matrix>,
    pub support_acc: f64,
    pub query_acc: f64,
    /// Support loss before each inner step.
    pub support_losses: Vec<f64>,
    /// The adapted head used for the query loss.
    pub adapted: TaskHead,
}

/// Query loss and its gradients at `(θ, φ)` with `φ` as given.
pub fn query_loss_and_grads(
    b: &Backbone,
    head: &TaskHead,
    query: &[EpisodeItem],
) -> Result<(f64, BTreeMap<String, Matrix>, f64)> {
    if query.is_empty() {
        return Err(Error::Input("episode has no query items".into()));
    }
    let mut tape = Tape::new();
    let mut bound = b.params.bind(&mut tape);
    bound.extend(head.params.bind(&mut tape));
    let inv = 1.0 / query.len() as f64;
    let mut total: Option<NodeId> = None;
    let mut logits_rows = Vec::with_capacity(query.len());
    for it in query {
        let h = mask_hidden(b, &mut tape, &bound, it)?;
        let z = head.forward_on::<ChaCha8Rng>(&mut tape, &bound, h, None)?;
        logits_rows.push(tape.value(z).clone());
        let ce = tape.cross_entropy(z, &[it.label])?;
        let part = tape.scale(ce, inv);
        total = Some(match total {
            Some(acc) => tape.add(acc, part)?,
            None => part,
        });
    }
    let loss = total.expect("nonempty query");
    let value = tape.value(loss).data()[0];
    let mut grads = forward_backward(&tape, loss)?;
    grads.remove(LM_HEAD);
    let logits = Matrix::vstack(&logits_rows.iter().collect::<Vec<_>>())?;
    let labels: Vec<usize> = query.iter().map(|i| i.label).collect();
    Ok((value, grads, accuracy(&logits, &labels)))
}

/// First-order meta step on one episode.
///
/// The head is snapshotted, adapted with `inner_steps` SGD steps on the
/// support set (backbone frozen), evaluated on the query set, and restored.
/// The returned gradients are taken at the adapted head and are meant to be
/// applied to the restored parameters.
pub fn meta_step(
    b: &Backbone,
    head: &mut TaskHead,
    ep: &Episode,
    inner_steps: usize,
    inner_lr: f64,
    comm: &Comm,
) -> Result<MetaOutcome> {
    ep.validate()?;
    if head.spec.n_classes != ep.config.n_ways {
        return Err(Error::Input(format!(
            "head has {} classes but the episode has {} ways",
            head.spec.n_classes, ep.config.n_ways
        )));
    }
    let support_x = frozen_hidden(b, &ep.support)?;
    let support_y: Vec<usize> = ep.support.iter().map(|i| i.label).collect();

    let snapshot = head.clone();
    comm.group.enter_inner(comm.rank)?;
    let mut support_losses = Vec::with_capacity(inner_steps);
    for _ in 0..inner_steps {
        support_losses.push(inner_sgd_step(head, &support_x, &support_y, inner_lr)?);
        comm.group.inner_step_barrier(comm.rank)?;
    }
    comm.group.exit_inner(comm.rank)?;
    let support_acc = accuracy(&head_logits(head, &support_x)?, &support_y);

    let (query_loss, grads, query_acc) = query_loss_and_grads(b, head, &ep.query)?;
    let adapted = std::mem::replace(head, snapshot);
    Ok(MetaOutcome {
        query_loss,
        grads,
        support_acc,
        query_acc,
        support_losses,
        adapted,
    })
}
