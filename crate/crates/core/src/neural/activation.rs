use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn relu(x: &Tensor) -> Tensor {
    x.map(|v| v.max(0.0))
}

/// Gradient through a ReLU given its output.
pub fn relu_backward(out: &Tensor, grad_out: &Tensor) -> Tensor {
    let mut g = grad_out.clone();
    for (gv, &o) in g.data_mut().iter_mut().zip(out.data()) {
        if o <= 0.0 {
            *gv = 0.0;
        }
    }
    g
}

/// Inverted-dropout mask: entries are 0 with probability `rate`, else `1 / (1 - rate)`.
pub fn dropout_mask(shape: &[usize], rate: f64, rng: &mut impl Rng) -> Tensor {
    let keep = 1.0 - rate;
    let scale = 1.0 / keep;
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| if rng.gen::<f64>() < keep { scale } else { 0.0 })
        .collect();
    Tensor::from_vec(shape, data).expect("shape matches")
}

pub fn apply_mask(x: &mut Tensor, mask: &Tensor) {
    for (v, m) in x.data_mut().iter_mut().zip(mask.data()) {
        *v *= m;
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Mean categorical cross-entropy over rows of `[N, K]` logits.
///
/// Returns `(loss, probabilities, d loss / d logits)`; the per-row gradient
/// is `(p - onehot) / N`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor, Tensor)> {
    if logits.rank() != 2 || logits.shape()[0] != labels.len() || labels.is_empty() {
        return Err(Error::Shape(format!(
            "logits {:?} vs {} labels",
            logits.shape(),
            labels.len()
        )));
    }
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    let mut probs = Vec::with_capacity(n * k);
    let mut loss = 0.0;
    for (row, &y) in logits.data().chunks_exact(k).zip(labels) {
        if y >= k {
            return Err(Error::Argument(format!("label {y} outside {k} classes")));
        }
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[y];
        probs.extend(softmax(row));
    }
    let probs = Tensor::from_vec(&[n, k], probs)?;
    let mut grad = probs.clone();
    for (r, &y) in labels.iter().enumerate() {
        grad.data_mut()[r * k + y] -= 1.0;
    }
    grad.data_mut().iter_mut().for_each(|g| *g /= n as f64);
    Ok((loss / n as f64, probs, grad))
}
