//! Tversky loss over class-probability maps.

use serde::{Deserialize, Serialize};

use crate::volume::{ClassProbabilities, LabelMap};
use crate::{Error, Result};

/// `TI = (TP + eps) / (TP + alpha * FN + beta * FP + eps)` with soft
/// counts. `alpha` weights false negatives, `beta` false positives;
/// `epsilon` smooths both numerator and denominator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TverskyParams {
    pub alpha: f64,
    pub beta: f64,
    pub epsilon: f64,
}

impl Default for TverskyParams {
    fn default() -> Self {
        Self { alpha: 0.7, beta: 0.3, epsilon: 1e-6 }
    }
}

impl TverskyParams {
    pub fn validate(&self) -> Result<()> {
        if self.alpha >= 0.0 && self.beta >= 0.0 && self.epsilon > 0.0 && self.alpha.is_finite() && self.beta.is_finite()
        {
            Ok(())
        } else {
            Err(Error::Validation(format!(
                "Tversky parameters need alpha >= 0, beta >= 0, epsilon > 0 (got {self:?})"
            )))
        }
    }
}

/// Per-class sums feeding one Tversky index.
#[derive(Debug, Clone, Copy)]
struct ClassSums {
    tp: f64,
    pred: f64,
    truth: f64,
}

impl ClassSums {
    fn of(p: impl Iterator<Item = f64>, g: impl Iterator<Item = f64>) -> Self {
        let mut s = Self { tp: 0.0, pred: 0.0, truth: 0.0 };
        for (p, g) in p.zip(g) {
            s.tp += p * g;
            s.pred += p;
            s.truth += g;
        }
        s
    }

    fn numerator(&self, t: &TverskyParams) -> f64 {
        self.tp + t.epsilon
    }

    fn denominator(&self, t: &TverskyParams) -> f64 {
        self.tp + t.alpha * (self.truth - self.tp) + t.beta * (self.pred - self.tp) + t.epsilon
    }

    fn index(&self, t: &TverskyParams) -> f64 {
        self.numerator(t) / self.denominator(t)
    }
}

/// Per-class Tversky indices of `probs` (class-major, `classes` blocks of
/// `n`) against integer labels.
pub(crate) fn tversky_indices(probs: &[f64], labels: &[u8], classes: usize, t: &TverskyParams) -> Vec<f64> {
    let n = labels.len();
    (0..classes)
        .map(|c| {
            let g = labels.iter().map(|&l| f64::from(u8::from(usize::from(l) == c)));
            ClassSums::of(probs[c * n..(c + 1) * n].iter().copied(), g).index(t)
        })
        .collect()
}

/// Loss `sum_c (1 - TI_c)` and its gradient with respect to every probability.
pub(crate) fn tversky_loss_and_grad(probs: &[f64], labels: &[u8], classes: usize, t: &TverskyParams) -> (f64, Vec<f64>) {
    let n = labels.len();
    let mut loss = 0.0;
    let mut grad = vec![0.0; probs.len()];
    for c in 0..classes {
        let p = &probs[c * n..(c + 1) * n];
        let g = |i: usize| f64::from(u8::from(usize::from(labels[i]) == c));
        let sums = ClassSums::of(p.iter().copied(), (0..n).map(g));
        let (num, den) = (sums.numerator(t), sums.denominator(t));
        loss += 1.0 - num / den;
        let den2 = den * den;
        for (i, out) in grad[c * n..(c + 1) * n].iter_mut().enumerate() {
            let gi = g(i);
            let dden = gi - t.alpha * gi + t.beta * (1.0 - gi);
            *out = -(gi * den - num * dden) / den2;
        }
    }
    (loss, grad)
}

fn check_inputs(pred: &ClassProbabilities, truth: &LabelMap, params: &TverskyParams) -> Result<()> {
    params.validate()?;
    if pred.shape() != truth.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} and truth {:?} differ",
            pred.shape(),
            truth.shape()
        )));
    }
    if truth.labels().iter().any(|&l| usize::from(l) >= pred.num_classes()) {
        return Err(Error::Domain("truth label outside the predicted classes".into()));
    }
    if let Some(p) = pred.data().iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Domain(format!("probability {p} outside [0, 1]")));
    }
    Ok(())
}

/// Tversky loss between predicted probabilities and a label map.
pub fn tversky_loss(pred: &ClassProbabilities, truth: &LabelMap, params: &TverskyParams) -> Result<f64> {
    check_inputs(pred, truth, params)?;
    Ok(tversky_indices(pred.data(), truth.labels(), pred.num_classes(), params)
        .iter()
        .map(|ti| 1.0 - ti)
        .sum())
}

/// Per-class Tversky index, same conventions as [`tversky_loss`].
pub fn tversky_index(pred: &ClassProbabilities, truth: &LabelMap, params: &TverskyParams) -> Result<Vec<f64>> {
    check_inputs(pred, truth, params)?;
    Ok(tversky_indices(pred.data(), truth.labels(), pred.num_classes(), params))
}

/// Loss and its gradient with respect to every probability (class-major,
/// laid out like `pred.data()`).
pub fn tversky_loss_gradient(
    pred: &ClassProbabilities,
    truth: &LabelMap,
    params: &TverskyParams,
) -> Result<(f64, Vec<f64>)> {
    check_inputs(pred, truth, params)?;
    Ok(tversky_loss_and_grad(pred.data(), truth.labels(), pred.num_classes(), params))
}
