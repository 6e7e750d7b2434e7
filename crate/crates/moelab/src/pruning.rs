//! Pruning plans: turn attribution reports into per-layer retained-expert
//! sets, apply them to models via the active mask, and account for the
//! parameters a compacted export would shed.
//!
//! Pruning is mask-based rather than tensor-reshaping: checkpoints stay
//! diffable and the retain-all / zero-attribution no-op invariants hold
//! exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attribution::AttributionReport;
use crate::error::{Error, Result};
use crate::io;
use crate::moe::config::ModelConfig;
use crate::moe::model::MoeModel;
use crate::num::rng::Rng;

pub const PLAN_FORMAT_VERSION: u32 = 1;

/// Selection rule and its parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum PruneStrategy {
    /// Keep the k highest-ranked experts in every layer.
    TopkLayerwise { k: usize },
    /// Keep the k highest-ranked (layer, expert) pairs overall; each layer's
    /// top-1 expert is always kept, added beyond k if needed.
    TopkGlobal { k: usize },
    /// Keep every expert with attribution >= tau.
    Threshold { tau: f64 },
    /// Keep k seeded-random experts per layer (baseline for curves).
    Random { k: usize, seed: u64 },
}

/// A pruning decision: strategy, per-layer retained sets, and any lenient
/// fallback warnings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PruningPlan {
    pub format_version: u32,
    pub config_hash: String,
    pub master_seed: u64,
    #[serde(flatten)]
    pub strategy: PruneStrategy,
    /// Retained expert indices per layer, ascending.
    pub retained: Vec<Vec<usize>>,
    pub warnings: Vec<String>,
    /// Hash of the attribution report the plan was built from.
    pub source_report: String,
    pub strict: bool,
}

impl PruningPlan {
    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<PruningPlan> {
        io::read_json(path)
    }

    pub fn experts_removed(&self, num_experts: usize) -> usize {
        self.retained
            .iter()
            .map(|r| num_experts - r.len())
            .sum()
    }
}

/// Build a plan from an attribution report.
///
/// Strategies:
/// - layerwise top-k: the first k of each layer's ranking;
/// - global top-k: the first k of the global ranking, then each layer's
///   top-1 expert added beyond k if the cut left that layer empty;
/// - threshold: per layer, every expert with A_i >= tau. A layer whose
///   threshold set comes out empty is an error in strict mode; lenient mode
///   retains that layer's argmax and records a warning.
pub fn make_plan(
    report: &AttributionReport,
    strategy: PruneStrategy,
    strict: bool,
) -> Result<PruningPlan> {
    let num_layers = report.per_layer.len();
    let m = report
        .per_layer
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::Argument("attribution report has no layers".into()))?;

    let mut warnings = Vec::new();
    let retained: Vec<Vec<usize>> = match strategy {
        PruneStrategy::TopkLayerwise { k } => {
            if k < 1 || k > m {
                return Err(Error::Argument(format!(
                    "layerwise top-k needs 1 <= k <= {m} (got {k})"
                )));
            }
            report
                .layerwise_ranking
                .iter()
                .map(|ranking| {
                    let mut keep: Vec<usize> = ranking[..k].to_vec();
                    keep.sort_unstable();
                    keep
                })
                .collect()
        }
        PruneStrategy::TopkGlobal { k } => {
            if k < 1 || k > num_layers * m {
                return Err(Error::Argument(format!(
                    "global top-k needs 1 <= k <= {} (got {k})",
                    num_layers * m
                )));
            }
            let mut keep: Vec<Vec<usize>> = vec![Vec::new(); num_layers];
            for &(l, i) in report.global_ranking.iter().take(k) {
                keep[l].push(i);
            }
            for (l, layer_keep) in keep.iter_mut().enumerate() {
                if layer_keep.is_empty() {
                    // Guarantee the layer's argmax expert survives.
                    let top = report.layerwise_ranking[l][0];
                    layer_keep.push(top);
                    warnings.push(format!(
                        "layer {l}: global cut left no experts; retained its top-1 expert {top}"
                    ));
                }
                layer_keep.sort_unstable();
            }
            keep
        }
        PruneStrategy::Threshold { tau } => {
            if !(0.0..=1.0).contains(&tau) {
                return Err(Error::Argument(format!(
                    "threshold tau must be in [0, 1] (got {tau})"
                )));
            }
            let mut keep = Vec::with_capacity(num_layers);
            for (l, scores) in report.per_layer.iter().enumerate() {
                let mut set: Vec<usize> =
                    (0..m).filter(|&i| scores[i] >= tau).collect();
                if set.is_empty() {
                    if strict {
                        return Err(Error::Plan(format!(
                            "threshold {tau} retains no experts in layer {l}"
                        )));
                    }
                    let top = report.layerwise_ranking[l][0];
                    set.push(top);
                    warnings.push(format!(
                        "layer {l}: threshold {tau} wiped the layer; retained its argmax expert {top}"
                    ));
                }
                keep.push(set);
            }
            keep
        }
        PruneStrategy::Random { k, seed } => {
            if k < 1 || k > m {
                return Err(Error::Argument(format!(
                    "random plan needs 1 <= k <= {m} (got {k})"
                )));
            }
            let mut rng = Rng::new(seed).derive("random-plan");
            let ids: Vec<usize> = (0..m).collect();
            (0..num_layers)
                .map(|_| {
                    let mut keep = rng.sample_without_replacement(&ids, k);
                    keep.sort_unstable();
                    keep
                })
                .collect()
        }
    };

    Ok(PruningPlan {
        format_version: PLAN_FORMAT_VERSION,
        config_hash: report.config_hash.clone(),
        master_seed: report.master_seed,
        strategy,
        retained,
        warnings,
        source_report: io::hash_of(&report.per_layer)?,
        strict,
    })
}

/// Seeded random plan without an attribution report (curve baseline).
pub fn make_random_plan(num_layers: usize, num_experts: usize, k: usize, seed: u64) -> Result<PruningPlan> {
    if k < 1 || k > num_experts {
        return Err(Error::Argument(format!(
            "random plan needs 1 <= k <= {num_experts} (got {k})"
        )));
    }
    let mut rng = Rng::new(seed).derive("random-plan");
    let ids: Vec<usize> = (0..num_experts).collect();
    let retained = (0..num_layers)
        .map(|_| {
            let mut keep = rng.sample_without_replacement(&ids, k);
            keep.sort_unstable();
            keep
        })
        .collect();
    Ok(PruningPlan {
        format_version: PLAN_FORMAT_VERSION,
        config_hash: "unconfigured".into(),
        master_seed: seed,
        strategy: PruneStrategy::Random { k, seed },
        retained,
        warnings: Vec::new(),
        source_report: "none".into(),
        strict: false,
    })
}

/// Apply a plan, producing the pruned surrogate. The surviving mask equals
/// the plan's retained sets; pruned experts' parameters are zeroed (and
/// their router rows with them), so checkpoints shrink and routing
/// renormalizes over survivors.
pub fn apply_plan(model: &MoeModel, plan: &PruningPlan) -> Result<MoeModel> {
    let m = model.config.num_experts;
    if plan.retained.len() != model.config.num_layers {
        return Err(Error::Argument(format!(
            "plan covers {} layers, model has {}",
            plan.retained.len(),
            model.config.num_layers
        )));
    }
    for (l, keep) in plan.retained.iter().enumerate() {
        if keep.is_empty() {
            return Err(Error::Plan(format!("plan retains no experts in layer {l}")));
        }
        for &i in keep {
            if i >= m {
                return Err(Error::Argument(format!(
                    "plan retains expert {i} in layer {l}, model has {m}"
                )));
            }
            if !model.layers[l].active[i] {
                return Err(Error::Argument(format!(
                    "plan retains expert {i} in layer {l}, which is already pruned"
                )));
            }
        }
    }
    let mut pruned = model.clone();
    for (l, keep) in plan.retained.iter().enumerate() {
        let layer = &mut pruned.layers[l];
        for i in 0..m {
            let keep_it = keep.contains(&i);
            layer.active[i] = keep_it;
            if !keep_it {
                layer.experts[i].zero_out();
                layer.router.row_mut(i).iter_mut().for_each(|v| *v = 0.0);
                if let Some(ads) = &mut layer.adapters {
                    ads[i].scale.fill(0.0);
                    ads[i].bias.fill(0.0);
                }
            }
        }
    }
    pruned.validate_mask()?;
    Ok(pruned)
}

/// Exact parameter accounting for a plan against a config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompressionStats {
    pub experts_removed: usize,
    /// Removed expert parameters / total expert parameters.
    pub expert_params_removed_fraction: f64,
    /// Removed parameters (experts + their router rows) / total parameters.
    pub total_params_removed_fraction: f64,
}

pub fn compression_stats(plan: &PruningPlan, config: &ModelConfig) -> CompressionStats {
    let m = config.num_experts;
    let experts_removed = plan.experts_removed(m);
    let per_expert = config.params_per_expert();
    let total_expert_params = config.num_layers * m * per_expert;
    let removed_expert_params = experts_removed * per_expert;
    let removed_router_params = experts_removed * config.params_per_router_row();
    CompressionStats {
        experts_removed,
        expert_params_removed_fraction: removed_expert_params as f64
            / total_expert_params as f64,
        total_params_removed_fraction: (removed_expert_params + removed_router_params) as f64
            / config.total_params() as f64,
    }
}
