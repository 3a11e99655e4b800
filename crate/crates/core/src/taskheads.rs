//! Task-specific classification heads and losses.
//!
//! Every head is one fully-connected layer over the [CLS] vector: a 2-way
//! softmax for Task A, six independent sigmoids for Task B, and a 2-way
//! softmax over the cross-encoded pair for Task C. Ties always resolve to
//! class 0.

use crate::error::{Error, Result};
use crate::seeds::SplitMix64;
use ndarray::{Array2, Axis};
use serde::{Deserialize, Serialize};

/// Which head sits on top of the encoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Binary,
    Multilabel6,
    Pair,
}

impl HeadKind {
    pub fn class_count(self) -> usize {
        match self {
            HeadKind::Binary | HeadKind::Pair => 2,
            HeadKind::Multilabel6 => 6,
        }
    }

    pub fn for_task(task: crate::task::TaskKind) -> HeadKind {
        match task {
            crate::task::TaskKind::TaskA => HeadKind::Binary,
            crate::task::TaskKind::TaskB => HeadKind::Multilabel6,
            crate::task::TaskKind::TaskC => HeadKind::Pair,
        }
    }
}

/// Head parameters: a d_model × C weight and a 1 × C bias.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub kind: HeadKind,
    pub weight: Array2<f64>,
    pub bias: Array2<f64>,
}

impl HeadParams {
    pub fn init(kind: HeadKind, d_model: usize, seed: u64) -> Self {
        let classes = kind.class_count();
        let mut rng = SplitMix64::new(seed);
        let mut weight = Array2::zeros((d_model, classes));
        for v in weight.iter_mut() {
            *v = 0.02 * rng.next_normal();
        }
        HeadParams {
            kind,
            weight,
            bias: Array2::zeros((1, classes)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        HeadParams {
            kind: self.kind,
            weight: Array2::zeros(self.weight.raw_dim()),
            bias: Array2::zeros(self.bias.raw_dim()),
        }
    }

    /// Logits for a batch of [CLS] vectors.
    pub fn logits(&self, cls: &Array2<f64>) -> Array2<f64> {
        cls.dot(&self.weight) + &self.bias
    }

    /// Gradients of the head and of its input given d(loss)/d(logits).
    pub fn backward(
        &self,
        cls: &Array2<f64>,
        d_logits: &Array2<f64>,
    ) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let d_weight = cls.t().dot(d_logits);
        let d_bias = d_logits.sum_axis(Axis(0)).insert_axis(Axis(0));
        let d_cls = d_logits.dot(&self.weight.t());
        (d_weight, d_bias, d_cls)
    }
}

/// A scored example: class probabilities plus the decided label(s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probabilities: Vec<f64>,
    pub decision: Decision,
}

/// A single class index for the softmax heads, or six bits for the
/// multi-label head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Decision {
    Label(u8),
    LabelSet([u8; 6]),
}

/// Max-subtracted stable softmax; the output sums to 1.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Cross-entropy loss against a class index: −log softmax(logits)[target],
/// with gradient softmax(logits) − onehot(target). Computed in log-sum-exp
/// form so confident logits never overflow.
pub fn ce_loss(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    debug_assert!(target < logits.len());
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum_exp = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    let loss = log_sum_exp - logits[target];
    let mut grad = softmax(logits);
    grad[target] -= 1.0;
    (loss, grad)
}

/// [`ce_loss`] scaled by an optional per-class weight on the target class.
pub fn ce_loss_weighted(
    logits: &[f64],
    target: usize,
    class_weights: Option<&[f64]>,
) -> (f64, Vec<f64>) {
    let (loss, mut grad) = ce_loss(logits, target);
    match class_weights {
        Some(w) => {
            let scale = w[target];
            for g in &mut grad {
                *g *= scale;
            }
            (loss * scale, grad)
        }
        None => (loss, grad),
    }
}

/// Mean binary cross-entropy over the six labels, computed in the stable
/// logits form max(z,0) − z·t + ln(1 + e^{−|z|}); gradient (σ(z) − t)/6.
pub fn bce_multilabel(logits: &[f64], targets: &[u8]) -> (f64, Vec<f64>) {
    debug_assert_eq!(logits.len(), 6);
    debug_assert_eq!(targets.len(), 6);
    let mut loss = 0.0;
    let mut grad = vec![0.0; 6];
    for i in 0..6 {
        let z = logits[i];
        let t = f64::from(targets[i]);
        loss += z.max(0.0) - z * t + (-z.abs()).exp().ln_1p();
        grad[i] = (sigmoid(z) - t) / 6.0;
    }
    (loss / 6.0, grad)
}

/// Argmax of a 2-class probability vector; an exact tie goes to class 0
/// (non-sarcastic).
pub fn predict_binary(probabilities: &[f64]) -> u8 {
    u8::from(probabilities[1] > probabilities[0])
}

/// Per-label thresholding: bit i is 1 iff p_i strictly exceeds the
/// threshold.
pub fn predict_multilabel(probabilities: &[f64], threshold: f64) -> Result<[u8; 6]> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Config(format!(
            "multi-label threshold must lie in (0, 1), got {threshold}"
        )));
    }
    let mut bits = [0u8; 6];
    for (bit, &p) in bits.iter_mut().zip(probabilities) {
        *bit = u8::from(p > threshold);
    }
    Ok(bits)
}

/// Pair decision: 0 means the first sentence is the sarcastic one, 1 the
/// second; tie goes to 0.
pub fn predict_pair(probabilities: &[f64]) -> u8 {
    predict_binary(probabilities)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_symmetry() {
        assert_eq!(softmax(&[0.0, 0.0]), vec![0.5, 0.5]);
    }

    #[test]
    fn softmax_hand_value() {
        let p = softmax(&[2.0f64.ln(), 0.0]);
        assert!((p[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((p[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_shift_invariance() {
        for c in [-1000.0, -3.2, 0.0, 7.5, 1000.0] {
            let a = softmax(&[0.3, -1.1]);
            let b = softmax(&[0.3 + c, -1.1 + c]);
            assert!((a[0] - b[0]).abs() < 1e-12);
            assert!((a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[3.0, -2.0, 0.5, 9.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn ce_loss_uniform_logits() {
        let (loss, _) = ce_loss(&[0.0, 0.0], 0);
        assert!((loss - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn ce_loss_confident_correct_is_near_zero() {
        let (loss, _) = ce_loss(&[40.0, -40.0], 0);
        assert!(loss < 1e-12);
    }

    #[test]
    fn ce_grad_sums_to_zero() {
        let (_, grad) = ce_loss(&[1.3, -0.2, 0.8], 2);
        assert!(grad.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn ce_grad_matches_finite_differences() {
        let logits = [0.7, -1.2, 0.3];
        let (_, grad) = ce_loss(&logits, 1);
        let h = 1e-7;
        for i in 0..3 {
            let mut plus = logits;
            plus[i] += h;
            let mut minus = logits;
            minus[i] -= h;
            let fd = (ce_loss(&plus, 1).0 - ce_loss(&minus, 1).0) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-6, "coord {i}");
        }
    }

    #[test]
    fn weighted_ce_scales_loss_and_grad() {
        let logits = [0.4, -0.9];
        let (l0, g0) = ce_loss(&logits, 1);
        let (l1, g1) = ce_loss_weighted(&logits, 1, Some(&[1.0, 3.0]));
        assert!((l1 - 3.0 * l0).abs() < 1e-12);
        for (a, b) in g0.iter().zip(&g1) {
            assert!((3.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn bce_all_zero_logits() {
        let (loss, _) = bce_multilabel(&[0.0; 6], &[1, 0, 1, 0, 0, 1]);
        assert!((loss - 2.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bce_satire_sarcastic_example() {
        // "#Satire #Sarcastic" encodes as (1,0,1,0,0,0); confident logits
        // matching it drive the loss toward zero.
        let targets = [1u8, 0, 1, 0, 0, 0];
        let logits = [40.0, -40.0, 40.0, -40.0, -40.0, -40.0];
        let (loss, _) = bce_multilabel(&logits, &targets);
        assert!(loss < 1e-12);
    }

    #[test]
    fn bce_confident_all_ones() {
        let (loss, _) = bce_multilabel(&[40.0; 6], &[1; 6]);
        assert!(loss < 1e-12);
    }

    #[test]
    fn bce_stable_form_matches_naive_form() {
        let logits = [0.2, -3.0, 1.7, -0.4, 2.2, -1.1];
        let targets = [1u8, 0, 0, 1, 1, 0];
        let (stable, _) = bce_multilabel(&logits, &targets);
        let naive: f64 = logits
            .iter()
            .zip(&targets)
            .map(|(&z, &t)| {
                let p = sigmoid(z);
                let t = f64::from(t);
                -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
            })
            .sum::<f64>()
            / 6.0;
        assert!((stable - naive).abs() < 1e-6);
    }

    #[test]
    fn bce_grad_matches_finite_differences() {
        let logits = [0.2, -3.0, 1.7, -0.4, 2.2, -1.1];
        let targets = [1u8, 0, 0, 1, 1, 0];
        let (_, grad) = bce_multilabel(&logits, &targets);
        let h = 1e-7;
        for i in 0..6 {
            let mut plus = logits;
            plus[i] += h;
            let mut minus = logits;
            minus[i] -= h;
            let fd = (bce_multilabel(&plus, &targets).0 - bce_multilabel(&minus, &targets).0)
                / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-6, "coord {i}");
        }
    }

    #[test]
    fn binary_decisions() {
        assert_eq!(predict_binary(&[0.3, 0.7]), 1);
        assert_eq!(predict_binary(&[0.5, 0.5]), 0);
        assert_eq!(predict_binary(&[0.7, 0.3]), 0);
    }

    #[test]
    fn binary_decision_is_argmax_invariant() {
        // Any strictly monotone rescaling that preserves the order keeps
        // the decision.
        let cases = [[0.2, 0.8], [0.9, 0.1], [0.4, 0.6]];
        for probs in cases {
            let base = predict_binary(&probs);
            let cubed: Vec<f64> = probs.iter().map(|p| p.powi(3)).collect();
            let scaled: Vec<f64> = probs.iter().map(|p| 0.3 * p + 0.01).collect();
            assert_eq!(predict_binary(&cubed), base);
            assert_eq!(predict_binary(&scaled), base);
        }
    }

    #[test]
    fn multilabel_threshold_rule() {
        assert_eq!(
            predict_multilabel(&[0.6, 0.2, 0.9, 0.1, 0.1, 0.1], 0.5).unwrap(),
            [1, 0, 1, 0, 0, 0]
        );
        // Strict inequality: exactly-at-threshold stays 0.
        assert_eq!(predict_multilabel(&[0.5; 6], 0.5).unwrap(), [0; 6]);
        assert_eq!(predict_multilabel(&[0.1; 6], 0.05).unwrap(), [1; 6]);
    }

    #[test]
    fn multilabel_threshold_bounds() {
        assert!(predict_multilabel(&[0.5; 6], 0.0).is_err());
        assert!(predict_multilabel(&[0.5; 6], 1.0).is_err());
    }

    #[test]
    fn pair_decisions() {
        assert_eq!(predict_pair(&[0.9, 0.1]), 0);
        assert_eq!(predict_pair(&[0.1, 0.9]), 1);
    }

    #[test]
    fn head_backward_matches_finite_differences() {
        let head = HeadParams::init(HeadKind::Binary, 8, 3);
        let mut rng = SplitMix64::new(5);
        let cls = Array2::from_shape_fn((2, 8), |_| rng.next_normal());
        let logits = head.logits(&cls);
        // Loss: mean CE against fixed targets.
        let targets = [0usize, 1];
        let mut d_logits = Array2::zeros((2, 2));
        let mut base_loss = 0.0;
        for (b, &t) in targets.iter().enumerate() {
            let (l, g) = ce_loss(&logits.row(b).to_vec(), t);
            base_loss += l / 2.0;
            for (c, &gv) in g.iter().enumerate() {
                d_logits[(b, c)] = gv / 2.0;
            }
        }
        let _ = base_loss;
        let (dw, _, _) = head.backward(&cls, &d_logits);
        let h = 1e-6;
        for (i, j) in [(0usize, 0usize), (3, 1), (7, 0)] {
            let mut perturbed = head.clone();
            perturbed.weight[(i, j)] += h;
            let lp: f64 = {
                let logits = perturbed.logits(&cls);
                targets
                    .iter()
                    .enumerate()
                    .map(|(b, &t)| ce_loss(&logits.row(b).to_vec(), t).0 / 2.0)
                    .sum()
            };
            perturbed.weight[(i, j)] -= 2.0 * h;
            let lm: f64 = {
                let logits = perturbed.logits(&cls);
                targets
                    .iter()
                    .enumerate()
                    .map(|(b, &t)| ce_loss(&logits.row(b).to_vec(), t).0 / 2.0)
                    .sum()
            };
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - dw[(i, j)]).abs() < 1e-6);
        }
    }
}
