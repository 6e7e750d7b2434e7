//! Top-k expert selection with masked softmax gates.

use crate::error::{Error, Result};
use crate::num::ops::softmax;

/// Routing decision for one token at one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct RouteResult {
    /// Selected expert indices, ascending.
    pub selected: Vec<usize>,
    /// Gate weights aligned with `selected`; positive, sum to 1.
    pub gates: Vec<f64>,
    /// Softmax over all active experts; inactive entries are exactly 0.
    /// Length M. Used for soft attribution and the entanglement loss.
    pub full_probs: Vec<f64>,
}

/// Rank masked logits and select the top-k' (k' = min(k, active count)).
/// Ties break toward the lower expert index. Gates renormalize over the
/// selected logits only.
pub fn route(router_logits: &[f64], k: usize, mask: &[bool]) -> Result<RouteResult> {
    let m = router_logits.len();
    if mask.len() != m {
        return Err(Error::Dimension(format!(
            "mask of length {} against {} logits",
            mask.len(),
            m
        )));
    }
    let active: Vec<usize> = (0..m).filter(|&i| mask[i]).collect();
    if active.is_empty() {
        return Err(Error::State("routing with an all-false expert mask".into()));
    }
    let k_eff = k.min(active.len());

    // Descending logit, ascending index on ties.
    let mut ranked = active.clone();
    ranked.sort_by(|&a, &b| {
        router_logits[b]
            .partial_cmp(&router_logits[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut selected: Vec<usize> = ranked[..k_eff].to_vec();
    selected.sort_unstable();

    let selected_logits: Vec<f64> = selected.iter().map(|&i| router_logits[i]).collect();
    let gates = softmax(&selected_logits)?;

    let active_logits: Vec<f64> = active.iter().map(|&i| router_logits[i]).collect();
    let active_probs = softmax(&active_logits)?;
    let mut full_probs = vec![0.0; m];
    for (&i, &p) in active.iter().zip(&active_probs) {
        full_probs[i] = p;
    }

    Ok(RouteResult {
        selected,
        gates,
        full_probs,
    })
}
