//! Softmax regression trained on soft targets.

use serde::{Deserialize, Serialize};

use crate::error::{Result, StarError};
use crate::matrix::{log_sum_exp, Matrix};
use crate::nn::{Adam, AdamConfig, ParamTensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierConfig {
    pub l2: f64,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            l2: 1e-3,
            epochs: 500,
            lr: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LinearClassifier {
    /// `d × N`.
    pub weight: ParamTensor,
    /// `1 × N`.
    pub bias: ParamTensor,
    pub l2: f64,
}

impl LinearClassifier {
    pub fn zeros(dim: usize, classes: usize, l2: f64) -> Self {
        LinearClassifier {
            weight: ParamTensor::new("clf.weight", Matrix::zeros(dim, classes)),
            bias: ParamTensor::new("clf.bias", Matrix::zeros(1, classes)),
            l2,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.weight.value.cols()
    }

    pub fn logits(&self, z: &Matrix) -> Result<Matrix> {
        if z.cols() != self.weight.value.rows() {
            return Err(StarError::dims(
                "classifier input",
                self.weight.value.rows(),
                z.cols(),
            ));
        }
        let mut out = z.matmul(&self.weight.value)?;
        out.add_row_vector(self.bias.value.row(0))?;
        Ok(out)
    }
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut p = logits.clone();
    for r in 0..p.rows() {
        let row = p.row_mut(r);
        let lse = log_sum_exp(row.iter().copied());
        row.iter_mut().for_each(|v| *v = (*v - lse).exp());
    }
    p
}

/// Mean soft cross-entropy plus `l2·‖W‖²`, with gradients for `W` and `b`.
pub fn soft_cross_entropy(
    clf: &LinearClassifier,
    z: &Matrix,
    targets: &Matrix,
) -> Result<(f64, Matrix, Matrix)> {
    let logits = clf.logits(z)?;
    if targets.shape() != logits.shape() {
        return Err(StarError::dims(
            "soft targets",
            format!("{:?}", logits.shape()),
            format!("{:?}", targets.shape()),
        ));
    }
    let m = z.rows() as f64;
    let mut loss = 0.0;
    let mut dlogits = Matrix::zeros(logits.rows(), logits.cols());
    for r in 0..logits.rows() {
        let row = logits.row(r);
        let lse = log_sum_exp(row.iter().copied());
        let t = targets.row(r);
        let d = dlogits.row_mut(r);
        for c in 0..row.len() {
            loss -= t[c] * (row[c] - lse);
            d[c] = ((row[c] - lse).exp() - t[c]) / m;
        }
    }
    let w = &clf.weight.value;
    let penalty: f64 = w.as_slice().iter().map(|v| v * v).sum();
    let mut dw = z.t_matmul(&dlogits)?;
    dw.add_assign(&w.scale(2.0 * clf.l2))?;
    let db = Matrix::from_vec(1, dlogits.cols(), dlogits.sum_rows())?;
    Ok((loss / m + clf.l2 * penalty, dw, db))
}

fn validate_targets(targets: &Matrix) -> Result<()> {
    if !targets.is_finite() {
        return Err(StarError::NonFinite("soft targets"));
    }
    for (r, row) in targets.row_iter().enumerate() {
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > 1e-6 || row.iter().any(|&v| v < -1e-12) {
            return Err(StarError::InvalidArgument(format!(
                "soft target row {r} is not a distribution (sum {s})"
            )));
        }
    }
    Ok(())
}

/// Full-batch Adam on [`soft_cross_entropy`] from zero parameters.
/// Returns the classifier and the loss before every step.
pub fn train_soft(
    z: &Matrix,
    targets: &Matrix,
    cfg: &ClassifierConfig,
) -> Result<(LinearClassifier, Vec<f64>)> {
    if !z.is_finite() {
        return Err(StarError::NonFinite("classifier inputs"));
    }
    if cfg.l2.is_nan() || cfg.l2 < 0.0 {
        return Err(StarError::OutOfRange {
            name: "clf_l2",
            value: cfg.l2,
            range: "[0, inf)",
        });
    }
    validate_targets(targets)?;
    if targets.rows() != z.rows() {
        return Err(StarError::dims(
            "soft targets rows",
            z.rows(),
            targets.rows(),
        ));
    }
    let mut clf = LinearClassifier::zeros(z.cols(), targets.cols(), cfg.l2);
    let mut adam = Adam::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let (loss, dw, db) = soft_cross_entropy(&clf, z, targets)?;
        history.push(loss);
        clf.weight.grad = dw;
        clf.bias.grad = db;
        adam.step(&mut [&mut clf.weight, &mut clf.bias])?;
    }
    Ok((clf, history))
}

/// Argmax labels (lowest index wins ties) and probability rows.
pub fn predict(clf: &LinearClassifier, z: &Matrix) -> Result<(Vec<usize>, Matrix)> {
    let probs = softmax_rows(&clf.logits(z)?);
    let labels = probs.row_iter().map(argmax).collect();
    Ok((labels, probs))
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(StarError::dims("accuracy", truth.len(), pred.len()));
    }
    if pred.is_empty() {
        return Err(StarError::InvalidArgument(
            "accuracy of an empty prediction".into(),
        ));
    }
    let hits = pred.iter().zip(truth).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}

/// `labels.len() × classes` indicator matrix.
pub fn one_hot(labels: &[usize], classes: usize) -> Result<Matrix> {
    let mut m = Matrix::zeros(labels.len(), classes);
    for (r, &l) in labels.iter().enumerate() {
        if l >= classes {
            return Err(StarError::InvalidArgument(format!(
                "label {l} out of range for {classes} classes"
            )));
        }
        m[(r, l)] = 1.0;
    }
    Ok(m)
}
