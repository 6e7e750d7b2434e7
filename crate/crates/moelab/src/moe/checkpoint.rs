//! Checkpoint serialization: one JSON document with a header and named
//! parameter arrays as plain number lists. Round-trips bit-exactly at
//! float64 (serde_json emits shortest round-trip decimal forms).
//!
//! Parameters of inactive (pruned) experts are zero by construction and are
//! excluded from the file; loading restores them as zeros.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::moe::config::ModelConfig;
use crate::moe::model::{build_model, MoeModel};
use crate::num::rng::Rng;
use crate::num::tensor::Tensor2;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Provenance stamped into every artifact: the effective run-config hash
/// and the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub config_hash: String,
    pub master_seed: u64,
}

impl Provenance {
    pub fn local(seed: u64) -> Self {
        Provenance {
            config_hash: "unconfigured".into(),
            master_seed: seed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub kind: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub config: ModelConfig,
    pub active_mask: Vec<Vec<bool>>,
    pub has_adapters: bool,
    pub params: BTreeMap<String, Vec<f64>>,
}

fn is_inactive_expert_param(name: &str, mask: &[Vec<bool>]) -> bool {
    // Names look like "layer{l}.expert{i}.<leaf>".
    let Some(rest) = name.strip_prefix("layer") else {
        return false;
    };
    let Some((l_str, rest)) = rest.split_once(".expert") else {
        return false;
    };
    let Some((i_str, _)) = rest.split_once('.') else {
        return false;
    };
    match (l_str.parse::<usize>(), i_str.parse::<usize>()) {
        (Ok(l), Ok(i)) => !mask[l][i],
        _ => false,
    }
}

/// Snapshot a model into its checkpoint form.
pub fn to_checkpoint(model: &MoeModel, provenance: &Provenance) -> Checkpoint {
    let mask = model.active_mask();
    let mut params = BTreeMap::new();
    for (name, tensor) in model.param_entries() {
        if is_inactive_expert_param(&name, &mask) {
            continue;
        }
        params.insert(name, tensor.as_slice().to_vec());
    }
    Checkpoint {
        format_version: CHECKPOINT_FORMAT_VERSION,
        kind: "moelab.checkpoint".into(),
        config_hash: provenance.config_hash.clone(),
        master_seed: provenance.master_seed,
        config: model.config.clone(),
        active_mask: mask,
        has_adapters: model.has_adapters(),
        params,
    }
}

/// Rebuild a model from a checkpoint.
pub fn from_checkpoint(cp: &Checkpoint) -> Result<MoeModel> {
    if cp.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Argument(format!(
            "unsupported checkpoint format_version {}",
            cp.format_version
        )));
    }
    cp.config.validate()?;
    if cp.active_mask.len() != cp.config.num_layers
        || cp.active_mask.iter().any(|m| m.len() != cp.config.num_experts)
    {
        return Err(Error::Dimension("active_mask shape does not match config".into()));
    }
    // Build a scaffold with the right shapes, then overwrite every tensor.
    let mut model = build_model(&cp.config, &mut Rng::new(cp.config.seed))?;
    if cp.has_adapters {
        model.ensure_adapters();
    }
    for (l, layer) in model.layers.iter_mut().enumerate() {
        layer.active = cp.active_mask[l].clone();
    }
    let mask = cp.active_mask.clone();
    let names: Vec<String> = model.param_entries().iter().map(|(n, _)| n.clone()).collect();
    let shapes: Vec<(usize, usize)> = model
        .param_entries()
        .iter()
        .map(|(_, t)| t.shape())
        .collect();
    for ((name, shape), slot) in names.iter().zip(&shapes).zip(model.params_mut()) {
        match cp.params.get(name) {
            Some(data) => {
                *slot = Tensor2::from_vec(shape.0, shape.1, data.clone()).map_err(|e| {
                    Error::Argument(format!("parameter {name}: {e}"))
                })?;
            }
            None => {
                if !is_inactive_expert_param(name, &mask) {
                    return Err(Error::Argument(format!(
                        "checkpoint is missing active parameter {name}"
                    )));
                }
                *slot = Tensor2::zeros(shape.0, shape.1);
            }
        }
    }
    // Reject stray arrays that match no parameter.
    for key in cp.params.keys() {
        if !names.iter().any(|n| n == key) {
            return Err(Error::Argument(format!("checkpoint has unknown parameter {key}")));
        }
    }
    Ok(model)
}

/// Content hash of a model (config + mask + parameters), independent of
/// provenance. Stamped into trace and report metadata.
pub fn model_hash(model: &MoeModel) -> Result<String> {
    let cp = to_checkpoint(model, &Provenance::local(0));
    let essence = (&cp.config, &cp.active_mask, &cp.params);
    io::hash_of(&essence)
}

pub fn save(model: &MoeModel, path: &Path, provenance: &Provenance) -> Result<()> {
    io::write_json(path, &to_checkpoint(model, provenance))
}

pub fn load(path: &Path) -> Result<(MoeModel, Checkpoint)> {
    let cp: Checkpoint = io::read_json(path)?;
    let model = from_checkpoint(&cp)?;
    Ok((model, cp))
}
