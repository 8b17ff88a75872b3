//! Softmax cross-entropy with analytic gradient.

use crate::error::{HarnessError, HarnessResult};

/// Loss `-log softmax(logits)[label]` and its gradient
/// `softmax(logits) - onehot(label)`.
pub fn softmax_xent(logits: &[f64], label: usize) -> HarnessResult<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(HarnessError::Config(format!(
            "label {label} out of range for {} logits",
            logits.len()
        )));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    let loss = z.ln() + max - logits[label];
    let mut grad: Vec<f64> = exps.iter().map(|&e| e / z).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}
