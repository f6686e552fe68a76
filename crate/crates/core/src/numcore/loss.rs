use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// `log Σ exp(row)`, stabilized.
pub fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Mean negative log-likelihood of `labels` under row-wise softmax of
/// `logits`, with its gradient `(softmax - onehot) / rows`.
pub fn cross_entropy_loss(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if labels.len() != logits.rows() {
        return Err(Error::shape(
            "cross_entropy_loss",
            format!("{} labels for {} rows", labels.len(), logits.rows()),
        ));
    }
    if logits.rows() == 0 {
        return Err(Error::Precondition("cross-entropy over an empty batch".into()));
    }
    if let Some((i, &y)) = labels.iter().enumerate().find(|(_, &y)| y >= logits.cols()) {
        return Err(Error::Index(format!(
            "label {y} at row {i} out of range for {} classes",
            logits.cols()
        )));
    }
    let n = logits.rows() as f64;
    let mut grad = softmax_rows(logits);
    let mut loss = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        loss += log_sum_exp(logits.row(r)) - logits.get(r, y);
        grad.set(r, y, grad.get(r, y) - 1.0);
    }
    grad.scale(1.0 / n);
    Ok((loss / n, grad))
}
