use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::bio::{f1_report, F1Report, Tag};
use super::conll::{LabelSet, TaggedCorpus, TaggedSentence};
use crate::error::{Error, Result};
use crate::model::{xavier_uniform, Backbone, ParameterStore};
use crate::numcore::{argmax, forward_backward, Matrix, NodeId, Tape};
use crate::rng::{stream, Stream};
use crate::smlmt::{WhitespaceTokenizer, UNK};
use crate::trainer::AdamW;
use crate::TokenId;

pub const CLASSIFIER_WEIGHT: &str = "classifier.weight";
pub const CLASSIFIER_BIAS: &str = "classifier.bias";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    HeadOnly,
    Full,
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "head_only" | "head-only" => Ok(Regime::HeadOnly),
            "full" => Ok(Regime::Full),
            _ => Err(Error::Input(format!(
                "unknown regime `{s}` (expected head_only or full)"
            ))),
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Regime::HeadOnly => "head_only",
            Regime::Full => "full",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinetunePlan {
    pub regime: Regime,
    pub lr: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for FinetunePlan {
    fn default() -> Self {
        Self {
            regime: Regime::HeadOnly,
            lr: 3e-5,
            max_epochs: 10,
            patience: 2,
            batch_size: 8,
            weight_decay: 0.01,
            seed: 0,
        }
    }
}

impl FinetunePlan {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config("finetune.lr", "must be positive"));
        }
        if self.max_epochs == 0 {
            return Err(Error::config("finetune.max_epochs", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("finetune.batch_size", "must be at least 1"));
        }
        Ok(())
    }
}

/// Token-wise affine map from final hidden states to BIO labels.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenClassifier {
    pub labels: LabelSet,
    pub params: ParameterStore,
}

impl TokenClassifier {
    pub fn init<R: Rng + ?Sized>(d_model: usize, labels: LabelSet, rng: &mut R) -> Self {
        let mut params = ParameterStore::new();
        params.insert(
            CLASSIFIER_WEIGHT,
            xavier_uniform(d_model, labels.len(), rng),
        );
        params.insert(CLASSIFIER_BIAS, Matrix::zeros(1, labels.len()));
        Self { labels, params }
    }
}

/// A sentence cut into pieces no longer than the backbone context.
struct Encoded {
    chunks: Vec<Vec<TokenId>>,
    targets: Vec<Vec<usize>>,
}

fn encode(
    s: &TaggedSentence,
    tok: &WhitespaceTokenizer,
    labels: &LabelSet,
    seq_len: usize,
) -> Result<Encoded> {
    let ids: Vec<TokenId> = s.tokens.iter().map(|w| tok.id(w).unwrap_or(UNK)).collect();
    let tgt = s
        .tags
        .iter()
        .map(|t| labels.index(t))
        .collect::<Result<Vec<_>>>()?;
    Ok(Encoded {
        chunks: ids.chunks(seq_len).map(<[_]>::to_vec).collect(),
        targets: tgt.chunks(seq_len).map(<[_]>::to_vec).collect(),
    })
}

fn logits_on(
    tape: &mut Tape,
    b: &Backbone,
    c: &TokenClassifier,
    regime: Regime,
    chunk: &[TokenId],
    tracked: bool,
) -> Result<NodeId> {
    let mut bound = if tracked {
        b.params.bind(tape)
    } else {
        b.params.bind_frozen(tape)
    };
    bound.extend(if tracked {
        c.params.bind(tape)
    } else {
        c.params.bind_frozen(tape)
    });
    let nodes = b.forward_on(tape, &bound, chunk, false)?;
    let h = match regime {
        Regime::HeadOnly => tape.stop_gradient(nodes.hidden),
        Regime::Full => nodes.hidden,
    };
    let z = tape.matmul(h, bound[CLASSIFIER_WEIGHT])?;
    tape.add_row(z, bound[CLASSIFIER_BIAS])
}

/// Predicted tags for each sentence.
pub fn predict(
    b: &Backbone,
    c: &TokenClassifier,
    tok: &WhitespaceTokenizer,
    sentences: &[TaggedSentence],
) -> Result<Vec<Vec<Tag>>> {
    sentences
        .iter()
        .map(|s| {
            let enc = encode(s, tok, &c.labels, b.config.seq_len)?;
            let mut tags = Vec::with_capacity(s.tokens.len());
            for chunk in &enc.chunks {
                let mut tape = Tape::new();
                let z = logits_on(&mut tape, b, c, Regime::HeadOnly, chunk, false)?;
                let z = tape.value(z);
                tags.extend((0..z.rows()).map(|r| c.labels.labels[argmax(z.row(r))].clone()));
            }
            Ok(tags)
        })
        .collect()
}

pub fn evaluate(
    b: &Backbone,
    c: &TokenClassifier,
    tok: &WhitespaceTokenizer,
    sentences: &[TaggedSentence],
) -> Result<F1Report> {
    let pred = predict(b, c, tok, sentences)?;
    let gold: Vec<Vec<Tag>> = sentences.iter().map(|s| s.tags.clone()).collect();
    f1_report(&gold, &pred)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_f1: f64,
}

#[derive(Clone, Debug)]
pub struct FinetuneOutcome {
    pub backbone: Backbone,
    pub classifier: TokenClassifier,
    /// 1-based epoch whose state was kept.
    pub best_epoch: usize,
    pub trace: Vec<EpochRecord>,
    pub dev: F1Report,
    pub test: F1Report,
    /// Sum of squared backbone gradient entries seen by the optimizer.
    pub backbone_grad_sq: f64,
}

/// Attaches a fresh classifier and trains it (and, under `Full`, the
/// backbone) with AdamW at a constant rate, keeping the state with the best
/// development micro-F1 and stopping after `patience` epochs without gain.
pub fn finetune(
    backbone: &Backbone,
    tok: &WhitespaceTokenizer,
    corpus: &TaggedCorpus,
    plan: &FinetunePlan,
) -> Result<FinetuneOutcome> {
    plan.validate()?;
    corpus.validate()?;
    let labels = LabelSet::new(&corpus.classes());
    let mut rng = stream(plan.seed, Stream::Finetune);
    let mut b = backbone.clone();
    let mut c = TokenClassifier::init(b.config.d_model, labels, &mut rng);
    let mut opt = AdamW::new(plan.weight_decay);
    let train = corpus
        .train
        .iter()
        .map(|s| encode(s, tok, &c.labels, b.config.seq_len))
        .collect::<Result<Vec<_>>>()?;
    let pieces: Vec<(&[TokenId], &[usize])> = train
        .iter()
        .flat_map(|e| {
            e.chunks
                .iter()
                .zip(&e.targets)
                .map(|(x, y)| (x.as_slice(), y.as_slice()))
        })
        .collect();

    let mut best: Option<(f64, usize, Backbone, TokenClassifier)> = None;
    let mut trace = Vec::new();
    let mut since_best = 0;
    let mut backbone_grad_sq = 0.0;
    let mut order: Vec<usize> = (0..pieces.len()).collect();
    for epoch in 1..=plan.max_epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut n_tok) = (0.0, 0usize);
        for batch in order.chunks(plan.batch_size) {
            let total: usize = batch.iter().map(|&i| pieces[i].1.len()).sum();
            let mut tape = Tape::new();
            let mut acc: Option<NodeId> = None;
            for &i in batch {
                let (x, y) = pieces[i];
                let z = logits_on(&mut tape, &b, &c, plan.regime, x, true)?;
                let ce = tape.cross_entropy(z, y)?;
                let w = tape.scale(ce, y.len() as f64 / total as f64);
                acc = Some(match acc {
                    Some(a) => tape.add(a, w)?,
                    None => w,
                });
            }
            let loss = acc.expect("non-empty batch");
            loss_sum += tape.value(loss).data()[0] * total as f64;
            n_tok += total;
            let mut grads = forward_backward(&tape, loss)?;
            if plan.regime == Regime::HeadOnly {
                let theta: Vec<String> = grads
                    .keys()
                    .filter(|k| b.params.contains(k))
                    .cloned()
                    .collect();
                for k in theta {
                    backbone_grad_sq += grads.remove(&k).map_or(0.0, |g| g.frobenius_sq());
                }
                opt.step(&mut [&mut c.params], &grads, plan.lr)?;
            } else {
                backbone_grad_sq += grads
                    .iter()
                    .filter(|(k, _)| b.params.contains(k))
                    .map(|(_, g)| g.frobenius_sq())
                    .sum::<f64>();
                opt.step(&mut [&mut b.params, &mut c.params], &grads, plan.lr)?;
            }
        }
        let dev_f1 = evaluate(&b, &c, tok, &corpus.dev)?.micro.f1;
        trace.push(EpochRecord {
            epoch,
            train_loss: loss_sum / n_tok as f64,
            dev_f1,
        });
        if best.as_ref().is_none_or(|(f, ..)| dev_f1 > *f) {
            best = Some((dev_f1, epoch, b.clone(), c.clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        if since_best >= plan.patience {
            break;
        }
    }
    let (_, best_epoch, b, c) = best.expect("at least one epoch");
    Ok(FinetuneOutcome {
        dev: evaluate(&b, &c, tok, &corpus.dev)?,
        test: evaluate(&b, &c, tok, &corpus.test)?,
        backbone: b,
        classifier: c,
        best_epoch,
        trace,
        backbone_grad_sq,
    })
}

/// One line of the fine-tune results log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneResult {
    pub regime: Regime,
    pub dataset: String,
    pub seed: u64,
    pub best_epoch: usize,
    pub dev_f1: f64,
    pub test_f1: f64,
    pub per_class_test_f1: BTreeMap<String, f64>,
    pub trace: Vec<EpochRecord>,
    pub backbone_before: String,
    pub backbone_after: String,
    /// Head-only runs: backbone bit-unchanged and no gradient reached it.
    pub freeze_check: Option<bool>,
}

impl FinetuneResult {
    pub fn new(
        dataset: &str,
        plan: &FinetunePlan,
        before: &Backbone,
        out: &FinetuneOutcome,
    ) -> Self {
        let backbone_before = before.params.fingerprint();
        let backbone_after = out.backbone.params.fingerprint();
        let freeze_check = (plan.regime == Regime::HeadOnly)
            .then(|| backbone_before == backbone_after && out.backbone_grad_sq == 0.0);
        Self {
            regime: plan.regime,
            dataset: dataset.to_string(),
            seed: plan.seed,
            best_epoch: out.best_epoch,
            dev_f1: out.dev.micro.f1,
            test_f1: out.test.micro.f1,
            per_class_test_f1: out
                .test
                .per_class
                .iter()
                .map(|(k, s)| (k.clone(), s.f1))
                .collect(),
            trace: out.trace.clone(),
            backbone_before,
            backbone_after,
            freeze_check,
        }
    }

    pub fn append(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let line = serde_json::to_string(self)?;
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))
    }
}

pub fn read_results(path: &Path) -> Result<Vec<FinetuneResult>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}
