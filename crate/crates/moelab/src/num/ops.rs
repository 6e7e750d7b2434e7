//! Differentiable scalar/vector primitives: softmax and cross-entropy.

use crate::error::{Error, Result};

/// Numerically stabilized softmax (max-subtraction). Entries of the result
/// are positive and sum to 1 within 1e-12 for finite inputs.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(Error::Argument("softmax of an empty vector".into()));
    }
    if !v.iter().all(|x| x.is_finite()) {
        return Err(Error::Numeric("softmax input contains non-finite entries".into()));
    }
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for o in out.iter_mut() {
        *o /= sum;
    }
    Ok(out)
}

/// Cross-entropy loss of `logits` against a class index, with the gradient
/// w.r.t. the logits: `softmax(logits) − onehot(label)`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::Argument(format!(
            "label {} out of range for {} logits",
            label,
            logits.len()
        )));
    }
    let probs = softmax(logits)?;
    // -log softmax via the stabilized form: max + log(sum exp(x - max)) - x[label].
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = logits.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
    let loss = max + log_sum - logits[label];
    let mut grad = probs;
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Entropy of a probability vector, with the 0·ln 0 = 0 convention.
pub fn entropy(probs: &[f64]) -> f64 {
    probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum()
}
