//! Auxiliary training losses over batches of gate distributions.
//!
//! Both functions take one probability row per token; for masked models,
//! pass rows compacted to the active experts so that the row length equals
//! the number of live experts.

use crate::error::{Error, Result};

fn validate_rows(probs: &[Vec<f64>]) -> Result<usize> {
    let first = probs
        .first()
        .ok_or_else(|| Error::Argument("empty batch of gate probabilities".into()))?;
    let m = first.len();
    if m == 0 {
        return Err(Error::Argument("gate probability rows are empty".into()));
    }
    for (t, row) in probs.iter().enumerate() {
        if row.len() != m {
            return Err(Error::Dimension(format!(
                "row {t} has length {} but row 0 has {m}",
                row.len()
            )));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Argument(format!(
                "row {t} sums to {sum}, not a gate distribution"
            )));
        }
    }
    Ok(m)
}

/// Switch-style load-balance loss: M · Σ_i f_i · p̄_i, where f_i is the
/// fraction of tokens whose top-1 expert is i and p̄_i the mean gate
/// probability of expert i. Equals 1 exactly under perfectly balanced
/// routing.
pub fn load_balance_loss(probs: &[Vec<f64>]) -> Result<f64> {
    let m = validate_rows(probs)?;
    let n = probs.len() as f64;
    let mut freq = vec![0.0; m];
    let mut mean = vec![0.0; m];
    for row in probs {
        let mut best = 0;
        for (i, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = i;
            }
            mean[i] += p;
        }
        freq[best] += 1.0;
    }
    let mut acc = 0.0;
    for i in 0..m {
        acc += (freq[i] / n) * (mean[i] / n);
    }
    Ok(m as f64 * acc)
}

/// Mean per-token KL divergence from the uniform distribution over the M
/// experts: 0 iff every token routes uniformly, at most ln M.
pub fn entanglement_loss(probs: &[Vec<f64>], num_experts: usize) -> Result<f64> {
    let m = validate_rows(probs)?;
    if m != num_experts {
        return Err(Error::Dimension(format!(
            "rows of length {m} against num_experts {num_experts}"
        )));
    }
    let m_f = num_experts as f64;
    let mut acc = 0.0;
    for row in probs {
        let mut kl = 0.0;
        for &p in row {
            if p > 0.0 {
                kl += p * (p * m_f).ln();
            }
        }
        // Guard tiny negative round-off.
        acc += kl.max(0.0);
    }
    Ok(acc / probs.len() as f64)
}
