//! Expert attribution: routing-trace logging over a dataset, hard
//! (selection-count) and soft (gate-mass) attribution, and layerwise /
//! global expert rankings.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::moe::checkpoint::{model_hash, Provenance};
use crate::moe::forward::forward;
use crate::moe::model::MoeModel;
use crate::num::tensor::Tensor2;

pub const TRACE_FORMAT_VERSION: u32 = 1;
pub const REPORT_FORMAT_VERSION: u32 = 1;

/// Trace header, written as the first JSONL line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceMeta {
    pub format_version: u32,
    pub config_hash: String,
    pub master_seed: u64,
    pub model_hash: String,
    pub dataset_id: String,
    /// Routing decision units logged (examples).
    pub tokens: usize,
    pub num_layers: usize,
    pub num_experts: usize,
    pub top_k: usize,
}

/// One routing decision: example id, layer, full gate distribution, and the
/// selected expert set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceRow {
    pub ex: usize,
    pub layer: usize,
    pub probs: Vec<f64>,
    pub sel: Vec<usize>,
}

/// A full routing trace: header plus one row per (example, layer).
#[derive(Debug, Clone)]
pub struct RoutingTrace {
    pub meta: TraceMeta,
    pub rows: Vec<TraceRow>,
}

#[derive(Serialize, Deserialize)]
struct MetaLine {
    meta: TraceMeta,
}

impl RoutingTrace {
    /// Serialize as JSONL: `{"meta": {...}}` then one object per row.
    pub fn to_jsonl(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(&serde_json::to_vec(&MetaLine {
            meta: self.meta.clone(),
        })?);
        out.push(b'\n');
        for row in &self.rows {
            out.extend_from_slice(&serde_json::to_vec(row)?);
            out.push(b'\n');
        }
        Ok(out)
    }

    pub fn from_jsonl(text: &str) -> Result<RoutingTrace> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Argument("trace file has no header line".into()))?;
        let meta: MetaLine = serde_json::from_str(header)?;
        let rows: Vec<TraceRow> = lines
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        Ok(RoutingTrace {
            meta: meta.meta,
            rows,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::atomic_write(path, &self.to_jsonl()?)
    }

    pub fn load(path: &Path) -> Result<RoutingTrace> {
        RoutingTrace::from_jsonl(&io::read_to_string(path)?)
    }

    /// Check row-level invariants: probs rows sum to 1 over active experts
    /// (within 1e-9) and selections carry nonzero probability.
    pub fn validate(&self) -> Result<()> {
        for (n, row) in self.rows.iter().enumerate() {
            if row.layer >= self.meta.num_layers || row.probs.len() != self.meta.num_experts {
                return Err(Error::Dimension(format!(
                    "trace row {n} does not match header dimensions"
                )));
            }
            let sum: f64 = row.probs.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::Argument(format!("trace row {n} probs sum to {sum}")));
            }
            if row.sel.iter().any(|&i| i >= row.probs.len() || row.probs[i] <= 0.0) {
                return Err(Error::Argument(format!(
                    "trace row {n} selects an expert with zero probability"
                )));
            }
        }
        Ok(())
    }
}

/// Run the model over a dataset and log one trace row per (example, layer).
/// Bit-deterministic; when `out_path` is given the JSONL file is also
/// written (atomically).
pub fn log_trace(
    model: &MoeModel,
    inputs: &Tensor2,
    dataset_id: &str,
    provenance: &Provenance,
    out_path: Option<&Path>,
) -> Result<RoutingTrace> {
    let meta = TraceMeta {
        format_version: TRACE_FORMAT_VERSION,
        config_hash: provenance.config_hash.clone(),
        master_seed: provenance.master_seed,
        model_hash: model_hash(model)?,
        dataset_id: dataset_id.to_string(),
        tokens: inputs.rows(),
        num_layers: model.config.num_layers,
        num_experts: model.config.num_experts,
        top_k: model.config.top_k,
    };
    let mut rows = Vec::with_capacity(inputs.rows() * model.config.num_layers);
    if inputs.rows() > 0 {
        let out = forward(model, inputs, true)?;
        let trace = out.trace.expect("trace requested");
        for (ex, per_layer) in trace.into_iter().enumerate() {
            for (layer, entry) in per_layer.into_iter().enumerate() {
                rows.push(TraceRow {
                    ex,
                    layer,
                    probs: entry.full_probs,
                    sel: entry.selected,
                });
            }
        }
    }
    let trace = RoutingTrace { meta, rows };
    if let Some(path) = out_path {
        trace.save(path)?;
    }
    Ok(trace)
}

/// Attribution flavor: selection counts (hard) or gate mass (soft).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributionMode {
    Hard,
    Soft,
}

/// Ranking scope for `rank_experts`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RankScope {
    Layerwise,
    Global,
}

/// Per-layer attribution vectors plus deterministic rankings.
///
/// The global ranking compares per-layer-normalized scores across layers
/// directly; there is no cross-layer calibration (see `comparability_note`).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttributionReport {
    pub format_version: u32,
    pub mode: AttributionMode,
    pub config_hash: String,
    pub master_seed: u64,
    pub model_hash: String,
    pub dataset_id: String,
    /// Routing decision units behind the report.
    pub tokens: usize,
    /// One normalized attribution vector per layer.
    pub per_layer: Vec<Vec<f64>>,
    /// Per-layer expert order, best first.
    pub layerwise_ranking: Vec<Vec<usize>>,
    /// (layer, expert) pairs ordered best first.
    pub global_ranking: Vec<(usize, usize)>,
    pub comparability_note: String,
}

const COMPARABILITY_NOTE: &str =
    "global ranking compares per-layer-normalized scores across layers without cross-layer calibration";

fn rank_one_layer(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

fn rank_global(per_layer: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(usize, usize)> = per_layer
        .iter()
        .enumerate()
        .flat_map(|(l, scores)| (0..scores.len()).map(move |i| (l, i)))
        .collect();
    pairs.sort_by(|&(la, ia), &(lb, ib)| {
        per_layer[lb][ib]
            .partial_cmp(&per_layer[la][ia])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(la.cmp(&lb))
            .then(ia.cmp(&ib))
    });
    pairs
}

fn assemble_report(
    trace: &RoutingTrace,
    mode: AttributionMode,
    per_layer: Vec<Vec<f64>>,
) -> AttributionReport {
    let layerwise_ranking = per_layer.iter().map(|a| rank_one_layer(a)).collect();
    let global_ranking = rank_global(&per_layer);
    AttributionReport {
        format_version: REPORT_FORMAT_VERSION,
        mode,
        config_hash: trace.meta.config_hash.clone(),
        master_seed: trace.meta.master_seed,
        model_hash: trace.meta.model_hash.clone(),
        dataset_id: trace.meta.dataset_id.clone(),
        tokens: trace.meta.tokens,
        per_layer,
        layerwise_ranking,
        global_ranking,
        comparability_note: COMPARABILITY_NOTE.into(),
    }
}

fn split_rows_by_layer(trace: &RoutingTrace) -> Result<Vec<Vec<&TraceRow>>> {
    if trace.rows.is_empty() {
        return Err(Error::Argument("empty trace: no routing rows to attribute".into()));
    }
    let mut by_layer: Vec<Vec<&TraceRow>> = vec![Vec::new(); trace.meta.num_layers];
    for row in &trace.rows {
        if row.layer >= by_layer.len() {
            return Err(Error::Dimension(format!(
                "trace row references layer {} of {}",
                row.layer, trace.meta.num_layers
            )));
        }
        by_layer[row.layer].push(row);
    }
    for (l, rows) in by_layer.iter().enumerate() {
        if rows.is_empty() {
            return Err(Error::Argument(format!("trace has no rows for layer {l}")));
        }
    }
    Ok(by_layer)
}

/// Hard attribution: the share of selection slots each expert occupies.
/// Per layer, A_i = (count of rows selecting i) / (total selections), so
/// each vector sums to 1 even when masked layers select fewer than k.
pub fn attribution_hard(trace: &RoutingTrace) -> Result<AttributionReport> {
    let by_layer = split_rows_by_layer(trace)?;
    let m = trace.meta.num_experts;
    let mut per_layer = Vec::with_capacity(by_layer.len());
    for rows in &by_layer {
        let mut counts = vec![0.0_f64; m];
        let mut total = 0.0_f64;
        for row in rows {
            for &i in &row.sel {
                if i >= m {
                    return Err(Error::Dimension(format!(
                        "selected expert {i} out of range ({m} experts)"
                    )));
                }
                counts[i] += 1.0;
                total += 1.0;
            }
        }
        if total == 0.0 {
            return Err(Error::Argument("trace rows carry no selections".into()));
        }
        per_layer.push(counts.into_iter().map(|c| c / total).collect());
    }
    Ok(assemble_report(trace, AttributionMode::Hard, per_layer))
}

/// Soft attribution: each expert's share of total gate mass per layer,
/// A_i = Σ_t g_{t,i} / Σ_j Σ_t g_{t,j}.
pub fn attribution_soft(trace: &RoutingTrace) -> Result<AttributionReport> {
    let by_layer = split_rows_by_layer(trace)?;
    let m = trace.meta.num_experts;
    let mut per_layer = Vec::with_capacity(by_layer.len());
    for rows in &by_layer {
        let mut mass = vec![0.0_f64; m];
        for row in rows {
            if row.probs.len() != m {
                return Err(Error::Dimension(format!(
                    "probs row of length {} for {m} experts",
                    row.probs.len()
                )));
            }
            for (acc, &p) in mass.iter_mut().zip(&row.probs) {
                *acc += p;
            }
        }
        let denom: f64 = mass.iter().sum();
        if denom <= 0.0 {
            return Err(Error::Argument("trace rows carry no gate mass".into()));
        }
        per_layer.push(mass.into_iter().map(|v| v / denom).collect());
    }
    Ok(assemble_report(trace, AttributionMode::Soft, per_layer))
}

/// Compute attribution in the requested mode.
pub fn attribute(trace: &RoutingTrace, mode: AttributionMode) -> Result<AttributionReport> {
    match mode {
        AttributionMode::Hard => attribution_hard(trace),
        AttributionMode::Soft => attribution_soft(trace),
    }
}

/// Ranking extracted from a report, per the requested scope.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Ranking {
    Layerwise(Vec<Vec<usize>>),
    Global(Vec<(usize, usize)>),
}

/// Re-rank a report's attribution vectors. Tie-breaking is deterministic:
/// higher score first, then lower layer, then lower expert index.
pub fn rank_experts(report: &AttributionReport, scope: RankScope) -> Ranking {
    match scope {
        RankScope::Layerwise => {
            Ranking::Layerwise(report.per_layer.iter().map(|a| rank_one_layer(a)).collect())
        }
        RankScope::Global => Ranking::Global(rank_global(&report.per_layer)),
    }
}

impl AttributionReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<AttributionReport> {
        io::read_json(path)
    }

    /// Mean over layers of the Shannon entropy of each layer's attribution
    /// vector. Flatter attribution → higher value.
    pub fn mean_layer_entropy(&self) -> f64 {
        let total: f64 = self
            .per_layer
            .iter()
            .map(|a| crate::num::ops::entropy(a))
            .sum();
        total / self.per_layer.len() as f64
    }
}
