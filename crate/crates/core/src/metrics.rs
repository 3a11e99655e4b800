//! Evaluation metrics: confusion counts, precision/recall/F1/accuracy, and
//! the three official task scores (F1 of the sarcastic class for Task A,
//! macro-F1 over the six labels for Task B, accuracy for Task C).

use crate::corpus::{Language, SUBLABEL_NAMES};
use crate::error::{Error, Result};
use crate::task::TaskKind;
use serde::{Deserialize, Serialize};

/// Confusion counts with respect to a declared positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub true_pos: u64,
    pub false_pos: u64,
    pub true_neg: u64,
    pub false_neg: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.true_pos + self.false_pos + self.true_neg + self.false_neg
    }
}

/// Precision, recall, F1, and accuracy derived from confusion counts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf1 {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub accuracy: f64,
}

/// Count confusion outcomes of binary predictions against gold labels.
pub fn confusion(preds: &[u8], golds: &[u8], positive_class: u8) -> Result<ConfusionCounts> {
    if preds.len() != golds.len() {
        return Err(Error::Schema(format!(
            "prediction/gold length mismatch: {} vs {}",
            preds.len(),
            golds.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Schema("cannot score an empty prediction list".into()));
    }
    let mut c = ConfusionCounts {
        true_pos: 0,
        false_pos: 0,
        true_neg: 0,
        false_neg: 0,
    };
    for (&p, &g) in preds.iter().zip(golds) {
        match (p == positive_class, g == positive_class) {
            (true, true) => c.true_pos += 1,
            (true, false) => c.false_pos += 1,
            (false, false) => c.true_neg += 1,
            (false, true) => c.false_neg += 1,
        }
    }
    Ok(c)
}

/// Precision = TP/(TP+FP), recall = TP/(TP+FN),
/// F1 = 2·precision·recall/(precision+recall), accuracy = (TP+TN)/total.
/// Every 0/0 resolves to 0. F1 is evaluated in the equivalent integer form
/// 2TP/(2TP+FP+FN), which agrees with the ratio form in all cases including
/// the zero conventions and is exact for rational inputs.
pub fn prf1(counts: &ConfusionCounts) -> Prf1 {
    let tp = counts.true_pos as f64;
    let fp = counts.false_pos as f64;
    let tn = counts.true_neg as f64;
    let fneg = counts.false_neg as f64;
    let ratio = |num: f64, den: f64| if den == 0.0 { 0.0 } else { num / den };
    Prf1 {
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fneg),
        f1: ratio(2.0 * tp, 2.0 * tp + fp + fneg),
        accuracy: ratio(tp + tn, tp + fp + tn + fneg),
    }
}

/// Task A official score: F1 with the sarcastic class (1) as positive.
pub fn task_a_score(preds: &[u8], golds: &[u8]) -> Result<f64> {
    Ok(prf1(&confusion(preds, golds, 1)?).f1)
}

/// Per-column F1 scores of a multi-label prediction matrix (positive = 1).
pub fn per_label_f1(preds: &[[u8; 6]], golds: &[[u8; 6]]) -> Result<[f64; 6]> {
    if preds.len() != golds.len() {
        return Err(Error::Schema(format!(
            "prediction/gold length mismatch: {} vs {}",
            preds.len(),
            golds.len()
        )));
    }
    if preds.is_empty() {
        return Err(Error::Schema("cannot score an empty prediction list".into()));
    }
    let mut out = [0.0; 6];
    for (label, slot) in out.iter_mut().enumerate() {
        let p: Vec<u8> = preds.iter().map(|r| r[label]).collect();
        let g: Vec<u8> = golds.iter().map(|r| r[label]).collect();
        *slot = prf1(&confusion(&p, &g, 1)?).f1;
    }
    Ok(out)
}

/// Task B official score: unweighted mean of the six per-label F1 scores.
pub fn task_b_score(preds: &[[u8; 6]], golds: &[[u8; 6]]) -> Result<f64> {
    let per = per_label_f1(preds, golds)?;
    Ok(per.iter().sum::<f64>() / 6.0)
}

/// Variant macro-F1 that adds a seventh "none" pseudo-label, set when all
/// six labels are 0. Some scorers average over that class too; the six-label
/// form above is the default everywhere in this crate.
pub fn task_b_score_with_none(preds: &[[u8; 6]], golds: &[[u8; 6]]) -> Result<f64> {
    let per = per_label_f1(preds, golds)?;
    let none_of = |rows: &[[u8; 6]]| -> Vec<u8> {
        rows.iter()
            .map(|r| u8::from(r.iter().all(|&b| b == 0)))
            .collect()
    };
    let none_f1 = prf1(&confusion(&none_of(preds), &none_of(golds), 1)?).f1;
    Ok((per.iter().sum::<f64>() + none_f1) / 7.0)
}

/// Task C official score: plain accuracy (fraction of exact matches).
pub fn task_c_score(preds: &[u8], golds: &[u8]) -> Result<f64> {
    Ok(prf1(&confusion(preds, golds, 1)?).accuracy)
}

/// Scores for one task on one evaluation set. Binary tasks fill the four
/// headline fields with respect to class 1; Task B reports macro-averaged
/// precision/recall, macro-F1 (also mirrored into `f1`), per-label F1, and
/// exact-match accuracy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: TaskKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub language: Option<Language>,
    pub count: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_label_f1: Option<Vec<LabelScore>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub macro_f1: Option<f64>,
    /// The task's official score (f1 for A, macro_f1 for B, accuracy for C).
    pub official: f64,
}

/// One sub-label's F1, kept with its name for readable reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelScore {
    pub label: String,
    pub f1: f64,
}

/// Build a report for a binary task (A or C).
pub fn binary_report(
    task: TaskKind,
    preds: &[u8],
    golds: &[u8],
    language: Option<Language>,
) -> Result<MetricsReport> {
    if task == TaskKind::TaskB {
        return Err(Error::Schema("binary_report does not apply to task_b".into()));
    }
    let scores = prf1(&confusion(preds, golds, 1)?);
    let official = match task {
        TaskKind::TaskA => scores.f1,
        TaskKind::TaskC => scores.accuracy,
        TaskKind::TaskB => unreachable!(),
    };
    Ok(MetricsReport {
        task,
        language,
        count: preds.len(),
        accuracy: scores.accuracy,
        precision: scores.precision,
        recall: scores.recall,
        f1: scores.f1,
        per_label_f1: None,
        macro_f1: None,
        official,
    })
}

/// Build a report for Task B.
pub fn multilabel_report(
    preds: &[[u8; 6]],
    golds: &[[u8; 6]],
    language: Option<Language>,
) -> Result<MetricsReport> {
    let per = per_label_f1(preds, golds)?;
    let macro_f1 = per.iter().sum::<f64>() / 6.0;
    let mut macro_p = 0.0;
    let mut macro_r = 0.0;
    for label in 0..6 {
        let p: Vec<u8> = preds.iter().map(|r| r[label]).collect();
        let g: Vec<u8> = golds.iter().map(|r| r[label]).collect();
        let s = prf1(&confusion(&p, &g, 1)?);
        macro_p += s.precision / 6.0;
        macro_r += s.recall / 6.0;
    }
    let exact = preds
        .iter()
        .zip(golds)
        .filter(|(p, g)| p == g)
        .count() as f64
        / preds.len() as f64;
    Ok(MetricsReport {
        task: TaskKind::TaskB,
        language,
        count: preds.len(),
        accuracy: exact,
        precision: macro_p,
        recall: macro_r,
        f1: macro_f1,
        per_label_f1: Some(
            SUBLABEL_NAMES
                .iter()
                .zip(per.iter())
                .map(|(name, &f1)| LabelScore {
                    label: (*name).to_string(),
                    f1,
                })
                .collect(),
        ),
        macro_f1: Some(macro_f1),
        official: macro_f1,
    })
}
