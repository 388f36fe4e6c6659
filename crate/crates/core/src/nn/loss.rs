use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-wise softmax of `(n, c)` logits, computed in `f64`.
pub fn softmax(logits: &Tensor) -> Tensor {
    let c = logits.row_len().max(1);
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.data().chunks(c) {
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
        let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| (e / z) as f32));
    }
    Tensor::new(logits.shape().to_vec(), out).expect("same shape")
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mean softmax cross-entropy and its gradient with respect to the logits.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let n = logits.rows();
    let c = logits.row_len();
    if labels.len() != n {
        return Err(Error::shape("labels", &[n], &[labels.len()]));
    }
    if n == 0 {
        return Err(Error::Empty("batch"));
    }
    let mut grad = Vec::with_capacity(n * c);
    let mut total = 0f64;
    let inv_n = 1.0 / n as f64;
    for (row, &y) in logits.data().chunks(c).zip(labels) {
        if y >= c {
            return Err(Error::invalid(format!("label {y} outside [0, {c})")));
        }
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
        let exps: Vec<f64> = row.iter().map(|&v| (v as f64 - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        total += z.ln() + max - row[y] as f64;
        for (k, e) in exps.iter().enumerate() {
            let p = e / z - if k == y { 1.0 } else { 0.0 };
            grad.push((p * inv_n) as f32);
        }
    }
    Ok((total * inv_n, Tensor::new(vec![n, c], grad)?))
}
