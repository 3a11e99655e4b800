//! Glue between data, encoder, and heads: encoded training items, the full
//! trainable model (encoder + head), batched prediction, and the official
//! per-task metric used for checkpoint selection.

use crate::corpus::{Language, PairExample, TextExample};
use crate::encoder::{self, Mode, ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::metrics;
use crate::seeds::{derive_seed, streams};
use crate::task::TaskKind;
use crate::taskheads::{self, Decision, HeadKind, HeadParams, Prediction};
use crate::tokenizer::{self, EncodedInput};
use ndarray::Array2;

/// Gold target of one item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    Binary(u8),
    Multilabel([u8; 6]),
    PairSide(u8),
}

/// One encoded example ready for training or prediction. `target` is absent
/// on unlabeled test items.
#[derive(Debug, Clone)]
pub struct TaskItem {
    pub id: String,
    pub language: Language,
    pub encoded: EncodedInput,
    pub target: Option<Target>,
}

/// Encoder plus task head; the unit the optimizer and checkpoints operate
/// on. Head tensors are addressed as `head.weight` / `head.bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub encoder: ModelParams,
    pub head: HeadParams,
}

impl Model {
    /// Fresh model; encoder and head draw from independent streams derived
    /// from `seed`.
    pub fn init(config: &ModelConfig, head_kind: HeadKind, seed: u64) -> Result<Model> {
        Ok(Model {
            encoder: encoder::init_params(config, derive_seed(seed, streams::INIT))?,
            head: HeadParams::init(head_kind, config.d_model, derive_seed(seed, streams::HEAD_INIT)),
        })
    }

    pub fn zeros_like(&self) -> Model {
        Model {
            encoder: ModelParams::zeros_like(&self.encoder.config),
            head: self.head.zeros_like(),
        }
    }

    pub fn tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = self.encoder.tensors();
        out.push(("head.weight".into(), &self.head.weight));
        out.push(("head.bias".into(), &self.head.bias));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Array2<f64>)> {
        let mut out = self.encoder.tensors_mut();
        out.push(("head.weight".into(), &mut self.head.weight));
        out.push(("head.bias".into(), &mut self.head.bias));
        out
    }

    pub fn add_assign(&mut self, other: &Model) -> Result<()> {
        let theirs = other.tensors();
        for ((name, mine), (other_name, t)) in self.tensors_mut().into_iter().zip(theirs) {
            if name != other_name || mine.dim() != t.dim() {
                return Err(Error::State(format!(
                    "tensor mismatch: {name} {:?} vs {other_name} {:?}",
                    mine.dim(),
                    t.dim()
                )));
            }
            *mine += t;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for (_, t) in self.tensors_mut() {
            t.mapv_inplace(|v| v * factor);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }
}

/// Encode single-text examples for Task A or B. Labels become targets when
/// present; Task B items without sub-labels stay unlabeled.
pub fn prepare_text_items(
    task: TaskKind,
    examples: &[TextExample],
    max_seq_len: usize,
) -> Result<Vec<TaskItem>> {
    if task == TaskKind::TaskC {
        return Err(Error::Config(
            "task_c items are pairs; use prepare_pair_items".into(),
        ));
    }
    examples
        .iter()
        .map(|ex| {
            let target = match task {
                TaskKind::TaskA => ex.target_a(),
                TaskKind::TaskB => ex.sublabels.map(Target::Multilabel),
                TaskKind::TaskC => unreachable!(),
            };
            Ok(TaskItem {
                id: ex.id.clone(),
                language: ex.language,
                encoded: tokenizer::encode(&ex.text, max_seq_len)?,
                target,
            })
        })
        .collect()
}

impl TextExample {
    fn target_a(&self) -> Option<Target> {
        self.sarcastic.map(Target::Binary)
    }
}

/// Cross-encode pairs for Task C.
pub fn prepare_pair_items(pairs: &[PairExample], max_seq_len: usize) -> Result<Vec<TaskItem>> {
    pairs
        .iter()
        .map(|p| {
            Ok(TaskItem {
                id: p.id.clone(),
                language: p.language,
                encoded: tokenizer::encode_pair(&p.text_a, &p.text_b, max_seq_len)?,
                target: Some(Target::PairSide(p.label)),
            })
        })
        .collect()
}

fn head_probabilities(head: HeadKind, logits: &Array2<f64>) -> Array2<f64> {
    let mut probs = Array2::zeros(logits.raw_dim());
    for (b, row) in logits.rows().into_iter().enumerate() {
        match head {
            HeadKind::Binary | HeadKind::Pair => {
                let p = taskheads::softmax(&row.to_vec());
                for (c, v) in p.iter().enumerate() {
                    probs[(b, c)] = *v;
                }
            }
            HeadKind::Multilabel6 => {
                for (c, &z) in row.iter().enumerate() {
                    probs[(b, c)] = taskheads::sigmoid(z);
                }
            }
        }
    }
    probs
}

/// Probabilities for a list of items (softmax rows for the 2-class heads,
/// independent sigmoids for the multi-label head), computed in eval mode in
/// deterministic fixed-size batches.
pub fn predict_probs(model: &Model, items: &[TaskItem], batch_size: usize) -> Result<Array2<f64>> {
    let classes = model.head.kind.class_count();
    let mut probs = Array2::zeros((items.len(), classes));
    let chunk = batch_size.max(1);
    for (start, batch_items) in items.chunks(chunk).enumerate().map(|(i, c)| (i * chunk, c)) {
        let encoded: Vec<EncodedInput> = batch_items.iter().map(|x| x.encoded.clone()).collect();
        let batch = tokenizer::pad_batch(&encoded)?;
        let (cls, _) = encoder::forward_cls(&model.encoder, &batch, Mode::Eval, 0)?;
        let logits = model.head.logits(&cls);
        let p = head_probabilities(model.head.kind, &logits);
        for (row, b) in (start..start + batch_items.len()).enumerate() {
            for c in 0..classes {
                probs[(b, c)] = p[(row, c)];
            }
        }
    }
    Ok(probs)
}

/// Apply the task's decision rule to a probability matrix.
pub fn decide(task: TaskKind, probs: &Array2<f64>, threshold: f64) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(probs.nrows());
    for row in probs.rows() {
        let p = row.to_vec();
        let decision = match task {
            TaskKind::TaskA => Decision::Label(taskheads::predict_binary(&p)),
            TaskKind::TaskC => Decision::Label(taskheads::predict_pair(&p)),
            TaskKind::TaskB => Decision::LabelSet(taskheads::predict_multilabel(&p, threshold)?),
        };
        out.push(Prediction {
            probabilities: p,
            decision,
        });
    }
    Ok(out)
}

fn binary_golds(items: &[TaskItem]) -> Result<Vec<u8>> {
    items
        .iter()
        .map(|it| match &it.target {
            Some(Target::Binary(b)) | Some(Target::PairSide(b)) => Ok(*b),
            _ => Err(Error::Schema(format!("item '{}' has no binary label", it.id))),
        })
        .collect()
}

fn multilabel_golds(items: &[TaskItem]) -> Result<Vec<[u8; 6]>> {
    items
        .iter()
        .map(|it| match &it.target {
            Some(Target::Multilabel(bits)) => Ok(*bits),
            _ => Err(Error::Schema(format!("item '{}' has no sub-labels", it.id))),
        })
        .collect()
}

/// The task's official score of a probability matrix against the items'
/// gold targets (threshold 0.5 for Task B decisions).
pub fn score(task: TaskKind, items: &[TaskItem], probs: &Array2<f64>) -> Result<f64> {
    let predictions = decide(task, probs, 0.5)?;
    match task {
        TaskKind::TaskA | TaskKind::TaskC => {
            let preds: Vec<u8> = predictions
                .iter()
                .map(|p| match p.decision {
                    Decision::Label(l) => l,
                    Decision::LabelSet(_) => unreachable!(),
                })
                .collect();
            let golds = binary_golds(items)?;
            match task {
                TaskKind::TaskA => metrics::task_a_score(&preds, &golds),
                TaskKind::TaskC => metrics::task_c_score(&preds, &golds),
                TaskKind::TaskB => unreachable!(),
            }
        }
        TaskKind::TaskB => {
            let preds: Vec<[u8; 6]> = predictions
                .iter()
                .map(|p| match p.decision {
                    Decision::LabelSet(bits) => bits,
                    Decision::Label(_) => unreachable!(),
                })
                .collect();
            let golds = multilabel_golds(items)?;
            metrics::task_b_score(&preds, &golds)
        }
    }
}

/// Full metrics report of decided predictions against gold targets.
pub fn report(
    task: TaskKind,
    items: &[TaskItem],
    predictions: &[Prediction],
    language: Option<Language>,
) -> Result<metrics::MetricsReport> {
    if items.len() != predictions.len() {
        return Err(Error::Schema(format!(
            "{} items vs {} predictions",
            items.len(),
            predictions.len()
        )));
    }
    match task {
        TaskKind::TaskA | TaskKind::TaskC => {
            let preds: Vec<u8> = predictions
                .iter()
                .map(|p| match p.decision {
                    Decision::Label(l) => Ok(l),
                    Decision::LabelSet(_) => {
                        Err(Error::Schema("label-set decision on a binary task".into()))
                    }
                })
                .collect::<Result<_>>()?;
            metrics::binary_report(task, &preds, &binary_golds(items)?, language)
        }
        TaskKind::TaskB => {
            let preds: Vec<[u8; 6]> = predictions
                .iter()
                .map(|p| match p.decision {
                    Decision::LabelSet(bits) => Ok(bits),
                    Decision::Label(_) => {
                        Err(Error::Schema("single-label decision on task_b".into()))
                    }
                })
                .collect::<Result<_>>()?;
            metrics::multilabel_report(&preds, &multilabel_golds(items)?, language)
        }
    }
}

/// Mean loss over labeled items, computed in eval mode (no dropout, no
/// gradients).
pub fn mean_loss(
    model: &Model,
    items: &[TaskItem],
    batch_size: usize,
    class_weights: Option<&[f64]>,
) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let chunk = batch_size.max(1);
    let mut total = 0.0;
    for batch_items in items.chunks(chunk) {
        let encoded: Vec<EncodedInput> = batch_items.iter().map(|x| x.encoded.clone()).collect();
        let batch = tokenizer::pad_batch(&encoded)?;
        let (cls, _) = encoder::forward_cls(&model.encoder, &batch, Mode::Eval, 0)?;
        let logits = model.head.logits(&cls);
        for (b, item) in batch_items.iter().enumerate() {
            let row = logits.row(b).to_vec();
            let loss = match (&item.target, model.head.kind) {
                (Some(Target::Binary(t)), HeadKind::Binary)
                | (Some(Target::PairSide(t)), HeadKind::Pair) => {
                    taskheads::ce_loss_weighted(&row, usize::from(*t), class_weights).0
                }
                (Some(Target::Multilabel(bits)), HeadKind::Multilabel6) => {
                    taskheads::bce_multilabel(&row, bits).0
                }
                (None, _) => {
                    return Err(Error::Schema(format!("item '{}' has no label", item.id)))
                }
                (Some(_), kind) => {
                    return Err(Error::Schema(format!(
                        "item '{}' target does not match head {kind:?}",
                        item.id
                    )))
                }
            };
            total += loss;
        }
    }
    Ok(total / items.len() as f64)
}

/// Mean loss and full-model gradients of one micro-batch. The per-example
/// losses (and logit gradients) are averaged, so accumulating micro-batch
/// gradients reproduces the gradient of the concatenated batch.
pub fn micro_batch_gradients(
    model: &Model,
    items: &[&TaskItem],
    dropout_seed: u64,
    class_weights: Option<&[f64]>,
) -> Result<(f64, Model)> {
    if items.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let encoded: Vec<EncodedInput> = items.iter().map(|x| x.encoded.clone()).collect();
    let batch = tokenizer::pad_batch(&encoded)?;
    let (cls, cache) = encoder::forward_cls(&model.encoder, &batch, Mode::Train, dropout_seed)?;
    let cache = cache.expect("train-mode forward returns a cache");
    let logits = model.head.logits(&cls);

    let n = items.len() as f64;
    let classes = model.head.kind.class_count();
    let mut d_logits = Array2::zeros((items.len(), classes));
    let mut total_loss = 0.0;
    for (b, item) in items.iter().enumerate() {
        let row = logits.row(b).to_vec();
        let (loss, grad) = match (&item.target, model.head.kind) {
            (Some(Target::Binary(t)), HeadKind::Binary)
            | (Some(Target::PairSide(t)), HeadKind::Pair) => {
                taskheads::ce_loss_weighted(&row, usize::from(*t), class_weights)
            }
            (Some(Target::Multilabel(bits)), HeadKind::Multilabel6) => {
                taskheads::bce_multilabel(&row, bits)
            }
            (None, _) => {
                return Err(Error::Schema(format!(
                    "item '{}' has no label; cannot train on it",
                    item.id
                )))
            }
            (Some(_), kind) => {
                return Err(Error::Schema(format!(
                    "item '{}' target does not match head {kind:?}",
                    item.id
                )))
            }
        };
        total_loss += loss / n;
        for (c, g) in grad.iter().enumerate() {
            d_logits[(b, c)] = g / n;
        }
    }

    let (d_head_w, d_head_b, d_cls) = model.head.backward(&cls, &d_logits);
    let encoder_grads = encoder::backward(&model.encoder, &cache, &d_cls)?;
    let mut head_grads = model.head.zeros_like();
    head_grads.weight = d_head_w;
    head_grads.bias = d_head_b;
    Ok((
        total_loss,
        Model {
            encoder: encoder_grads,
            head: head_grads,
        },
    ))
}
