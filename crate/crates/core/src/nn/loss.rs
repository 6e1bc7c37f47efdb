use ndarray::{Array1, Array2, Axis};

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - m).exp());
        let z = row.sum();
        row.mapv_inplace(|v| v / z);
    }
    p
}

/// Mean cross-entropy of integer targets under softmax(logits) and its
/// gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Array2<f64>, targets: &[usize]) -> (f64, Array2<f64>) {
    assert_eq!(logits.nrows(), targets.len());
    let n = targets.len().max(1) as f64;
    let mut probs = softmax(logits);
    let mut loss = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        let row = logits.row(r);
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - row[t];
        probs[[r, t]] -= 1.0;
    }
    (loss / n, probs / n)
}

/// Mean over rows of `0.5 * ||pred - target||^2` (unit-variance Gaussian
/// negative log-likelihood up to a constant) and its gradient.
pub fn gaussian_nll_unit_var(pred: &Array2<f64>, target: &Array2<f64>) -> (f64, Array2<f64>) {
    assert_eq!(pred.dim(), target.dim());
    let n = pred.nrows().max(1) as f64;
    let diff = pred - target;
    let loss = 0.5 * diff.mapv(|v| v * v).sum() / n;
    (loss, diff / n)
}

/// Per-row version of the same quantity, without gradient.
pub fn gaussian_nll_rows(pred: &Array2<f64>, target: &Array2<f64>) -> Array1<f64> {
    (pred - target).mapv(|v| 0.5 * v * v).sum_axis(Axis(1))
}

/// Mean squared error over all entries and its gradient.
pub fn mse(pred: &Array2<f64>, target: &Array2<f64>) -> (f64, Array2<f64>) {
    let n = pred.len().max(1) as f64;
    let diff = pred - target;
    (diff.mapv(|v| v * v).sum() / n, diff * (2.0 / n))
}
