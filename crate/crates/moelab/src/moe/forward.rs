//! Forward and backward passes for the MoE classifier.
//!
//! Layer computation: router logits z = R·h over active experts, top-k
//! selection with gates renormalized over the selected logits, layer output
//! = h + Σ gate_i · expert_i(h) (residual). The backward pass differentiates
//! the composite objective (cross-entropy + weighted load-balance +
//! weighted entanglement) exactly, treating the top-k selection and the
//! per-batch top-1 frequencies as locally constant.

use crate::error::{Error, Result};
use crate::moe::loss::{entanglement_loss, load_balance_loss};
use crate::moe::model::{ExpertMlp, MoeModel};
use crate::moe::routing::{route, RouteResult};
use crate::num::ops::cross_entropy;
use crate::num::tensor::Tensor2;

/// Batch-level auxiliary loss values (unweighted), averaged over layers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuxLosses {
    pub load_balance: f64,
    pub entanglement: f64,
}

/// One routing record: the full gate distribution and the selected set.
#[derive(Debug, Clone)]
pub struct TraceEntry {
    pub full_probs: Vec<f64>,
    pub selected: Vec<usize>,
}

/// Output of a (possibly traced) forward pass over a batch.
#[derive(Debug, Clone)]
pub struct ForwardResult {
    /// Class logits, batch x C.
    pub logits: Tensor2,
    /// When requested: one entry per (example, layer), indexed [example][layer].
    pub trace: Option<Vec<Vec<TraceEntry>>>,
    pub aux: AuxLosses,
}

/// Loss components of the composite objective. `total` applies the
/// configured lambda weights.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub task: f64,
    pub load_balance: f64,
    pub entanglement: f64,
    pub total: f64,
}

struct LayerCache {
    h_in: Vec<f64>,
    route: RouteResult,
    /// Per selected expert: pre-activation, ReLU output, raw expert output,
    /// and the (possibly adapter-transformed) final output.
    pre: Vec<Vec<f64>>,
    act: Vec<Vec<f64>>,
    raw: Vec<Vec<f64>>,
    out: Vec<Vec<f64>>,
}

struct ExampleCache {
    x: Vec<f64>,
    layers: Vec<LayerCache>,
    h_final: Vec<f64>,
    logits: Vec<f64>,
}

fn expert_eval(e: &ExpertMlp, h: &[f64]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let mut pre = e.w1.matvec(h)?;
    for (p, b) in pre.iter_mut().zip(e.b1.as_slice()) {
        *p += b;
    }
    let act: Vec<f64> = pre.iter().map(|&q| if q > 0.0 { q } else { 0.0 }).collect();
    let mut out = e.w2.matvec(&act)?;
    for (o, b) in out.iter_mut().zip(e.b2.as_slice()) {
        *o += b;
    }
    Ok((pre, act, out))
}

fn forward_one(model: &MoeModel, x: &[f64]) -> Result<ExampleCache> {
    let mut h = model.input_proj.matvec(x)?;
    let mut layers = Vec::with_capacity(model.config.num_layers);
    for layer in &model.layers {
        let logits = layer.router.matvec(&h)?;
        let routed = route(&logits, model.config.top_k, &layer.active)?;
        let mut pre = Vec::with_capacity(routed.selected.len());
        let mut act = Vec::with_capacity(routed.selected.len());
        let mut raw = Vec::with_capacity(routed.selected.len());
        let mut out = Vec::with_capacity(routed.selected.len());
        let mut h_out = h.clone();
        for (s, &i) in routed.selected.iter().enumerate() {
            let (p, a, r) = expert_eval(&layer.experts[i], &h)?;
            let o = match &layer.adapters {
                Some(ads) => {
                    let scale = ads[i].scale.as_slice();
                    let bias = ads[i].bias.as_slice();
                    r.iter()
                        .zip(scale.iter().zip(bias))
                        .map(|(&v, (&s, &b))| s * v + b)
                        .collect::<Vec<f64>>()
                }
                None => r.clone(),
            };
            let g = routed.gates[s];
            for (ho, &ov) in h_out.iter_mut().zip(&o) {
                *ho += g * ov;
            }
            pre.push(p);
            act.push(a);
            raw.push(r);
            out.push(o);
        }
        layers.push(LayerCache {
            h_in: h,
            route: routed,
            pre,
            act,
            raw,
            out,
        });
        h = h_out;
    }
    let logits = model.output_head.matvec(&h)?;
    Ok(ExampleCache {
        x: x.to_vec(),
        layers,
        h_final: h,
        logits,
    })
}

fn check_width(model: &MoeModel, inputs: &Tensor2) -> Result<()> {
    if inputs.cols() != model.config.input_dim {
        return Err(Error::Dimension(format!(
            "input width {} does not match model input_dim {}",
            inputs.cols(),
            model.config.input_dim
        )));
    }
    Ok(())
}

/// Per-layer probability rows compacted to active experts only, plus the
/// active index list.
fn compact_layer_probs(caches: &[ExampleCache], model: &MoeModel, layer: usize) -> (Vec<usize>, Vec<Vec<f64>>) {
    let active: Vec<usize> = (0..model.config.num_experts)
        .filter(|&i| model.layers[layer].active[i])
        .collect();
    let rows = caches
        .iter()
        .map(|c| active.iter().map(|&i| c.layers[layer].route.full_probs[i]).collect())
        .collect();
    (active, rows)
}

fn aux_from_caches(model: &MoeModel, caches: &[ExampleCache]) -> Result<AuxLosses> {
    let num_layers = model.config.num_layers as f64;
    let mut lb = 0.0;
    let mut ent = 0.0;
    for l in 0..model.config.num_layers {
        let (active, rows) = compact_layer_probs(caches, model, l);
        lb += load_balance_loss(&rows)?;
        ent += entanglement_loss(&rows, active.len())?;
    }
    Ok(AuxLosses {
        load_balance: lb / num_layers,
        entanglement: ent / num_layers,
    })
}

/// Run the model over a batch. When `record_trace` is set, the result holds
/// one trace entry per (example, layer) with the full gate distribution and
/// the selected expert set.
pub fn forward(model: &MoeModel, inputs: &Tensor2, record_trace: bool) -> Result<ForwardResult> {
    check_width(model, inputs)?;
    model.validate_mask()?;
    let mut caches = Vec::with_capacity(inputs.rows());
    for r in 0..inputs.rows() {
        caches.push(forward_one(model, inputs.row(r))?);
    }
    let mut logits = Tensor2::zeros(inputs.rows(), model.config.num_classes);
    for (r, c) in caches.iter().enumerate() {
        logits.row_mut(r).copy_from_slice(&c.logits);
    }
    let aux = if caches.is_empty() {
        AuxLosses {
            load_balance: 0.0,
            entanglement: 0.0,
        }
    } else {
        aux_from_caches(model, &caches)?
    };
    let trace = record_trace.then(|| {
        caches
            .iter()
            .map(|c| {
                c.layers
                    .iter()
                    .map(|lc| TraceEntry {
                        full_probs: lc.route.full_probs.clone(),
                        selected: lc.route.selected.clone(),
                    })
                    .collect()
            })
            .collect()
    });
    Ok(ForwardResult { logits, trace, aux })
}

/// Composite loss value only (no gradients). Used by the finite-difference
/// checker and by evaluation.
pub fn composite_loss(model: &MoeModel, inputs: &Tensor2, labels: &[usize]) -> Result<LossParts> {
    let (parts, _) = loss_only_or_grads(model, inputs, labels, false)
        .map(|(p, g)| (p, g))?;
    Ok(parts)
}

/// Composite loss and the full analytic gradient in canonical registry order.
pub fn loss_and_grads(
    model: &MoeModel,
    inputs: &Tensor2,
    labels: &[usize],
) -> Result<(LossParts, Vec<Tensor2>)> {
    let (parts, grads) = loss_only_or_grads(model, inputs, labels, true)?;
    Ok((parts, grads.expect("gradients requested")))
}

fn loss_only_or_grads(
    model: &MoeModel,
    inputs: &Tensor2,
    labels: &[usize],
    want_grads: bool,
) -> Result<(LossParts, Option<Vec<Tensor2>>)> {
    check_width(model, inputs)?;
    model.validate_mask()?;
    let batch = inputs.rows();
    if batch == 0 || labels.len() != batch {
        return Err(Error::Argument(format!(
            "batch of {batch} inputs with {} labels",
            labels.len()
        )));
    }
    let num_classes = model.config.num_classes;
    for &y in labels {
        if y >= num_classes {
            return Err(Error::Argument(format!(
                "label {y} out of range for {num_classes} classes"
            )));
        }
    }

    let caches: Vec<ExampleCache> = (0..batch)
        .map(|r| forward_one(model, inputs.row(r)))
        .collect::<Result<_>>()?;

    // Task loss and its logit gradients.
    let mut task = 0.0;
    let mut dlogits: Vec<Vec<f64>> = Vec::with_capacity(batch);
    for (c, &y) in caches.iter().zip(labels) {
        let (loss, grad) = cross_entropy(&c.logits, y)?;
        task += loss;
        dlogits.push(grad);
    }
    task /= batch as f64;

    let aux = aux_from_caches(model, &caches)?;
    let cfg = &model.config;
    let total = task + cfg.lambda_lb * aux.load_balance + cfg.lambda_ent * aux.entanglement;
    if !total.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite composite loss (task {task}, lb {}, ent {})",
            aux.load_balance, aux.entanglement
        )));
    }
    let parts = LossParts {
        task,
        load_balance: aux.load_balance,
        entanglement: aux.entanglement,
        total,
    };
    if !want_grads {
        return Ok((parts, None));
    }

    let mut grads = model.zero_grads();
    let layout = model.layout();
    let inv_batch = 1.0 / batch as f64;
    let inv_layers = 1.0 / cfg.num_layers as f64;

    // Per-layer aux-loss gradients w.r.t. the compacted full_probs rows.
    // d(lb)/dp[t][j] = m_a * f_j / batch, d(ent)/dp[t][j] = (ln(p*m_a)+1)/batch,
    // each then scaled by the layer average and its lambda.
    let mut aux_dprobs: Vec<Vec<Vec<f64>>> = Vec::with_capacity(cfg.num_layers); // [layer][example][active_j]
    let mut layer_active: Vec<Vec<usize>> = Vec::with_capacity(cfg.num_layers);
    for l in 0..cfg.num_layers {
        let (active, rows) = compact_layer_probs(&caches, model, l);
        let m_a = active.len() as f64;
        // Top-1 frequencies over the batch (ties toward lower index).
        let mut freq = vec![0.0; active.len()];
        for row in &rows {
            let mut best = 0;
            for (j, &p) in row.iter().enumerate() {
                if p > row[best] {
                    best = j;
                }
            }
            freq[best] += 1.0;
        }
        for f in freq.iter_mut() {
            *f *= inv_batch;
        }
        let mut per_example = Vec::with_capacity(batch);
        for row in &rows {
            let mut d = vec![0.0; active.len()];
            for (j, &p) in row.iter().enumerate() {
                let mut v = cfg.lambda_lb * m_a * freq[j] * inv_batch;
                if cfg.lambda_ent > 0.0 && p > 0.0 {
                    v += cfg.lambda_ent * ((p * m_a).ln() + 1.0) * inv_batch;
                }
                d[j] = v * inv_layers;
            }
            per_example.push(d);
        }
        aux_dprobs.push(per_example);
        layer_active.push(active);
    }

    for (t, cache) in caches.iter().enumerate() {
        // Head.
        let mut dlogit = dlogits[t].clone();
        for v in dlogit.iter_mut() {
            *v *= inv_batch;
        }
        grads[layout.output_head()].add_outer(&dlogit, &cache.h_final, 1.0);
        let mut dh = model.output_head.matvec_t(&dlogit)?;

        // Layers in reverse.
        for l in (0..cfg.num_layers).rev() {
            let lc = &cache.layers[l];
            let layer = &model.layers[l];
            let mut dh_in = dh.clone(); // residual path

            // Expert paths and gate-value gradients.
            let mut dgates = vec![0.0; lc.route.selected.len()];
            for (s, &i) in lc.route.selected.iter().enumerate() {
                let g = lc.route.gates[s];
                // d loss / d (final expert output)
                let dout: Vec<f64> = dh.iter().map(|&v| v * g).collect();
                dgates[s] = lc.out[s].iter().zip(&dh).map(|(&o, &d)| o * d).sum();

                // Adapter, if present.
                let draw: Vec<f64> = match &layer.adapters {
                    Some(ads) => {
                        let [scale_idx, bias_idx] = layout.adapter(l, i);
                        let scale = ads[i].scale.as_slice();
                        {
                            let gscale = grads[scale_idx].as_mut_slice();
                            for (gs, (&d, &r)) in gscale.iter_mut().zip(dout.iter().zip(&lc.raw[s])) {
                                *gs += d * r;
                            }
                        }
                        {
                            let gbias = grads[bias_idx].as_mut_slice();
                            for (gb, &d) in gbias.iter_mut().zip(&dout) {
                                *gb += d;
                            }
                        }
                        dout.iter().zip(scale).map(|(&d, &sc)| d * sc).collect()
                    }
                    None => dout,
                };

                // Expert MLP backward.
                let e = &layer.experts[i];
                let [w1_idx, b1_idx, w2_idx, b2_idx] = layout.expert(l, i);
                grads[w2_idx].add_outer(&draw, &lc.act[s], 1.0);
                {
                    let gb2 = grads[b2_idx].as_mut_slice();
                    for (gb, &d) in gb2.iter_mut().zip(&draw) {
                        *gb += d;
                    }
                }
                let dact = e.w2.matvec_t(&draw)?;
                let dpre: Vec<f64> = dact
                    .iter()
                    .zip(&lc.pre[s])
                    .map(|(&da, &q)| if q > 0.0 { da } else { 0.0 })
                    .collect();
                grads[w1_idx].add_outer(&dpre, &lc.h_in, 1.0);
                {
                    let gb1 = grads[b1_idx].as_mut_slice();
                    for (gb, &d) in gb1.iter_mut().zip(&dpre) {
                        *gb += d;
                    }
                }
                let dh_expert = e.w1.matvec_t(&dpre)?;
                for (a, b) in dh_in.iter_mut().zip(&dh_expert) {
                    *a += b;
                }
            }

            // Router logits gradient: gate softmax over the selected set...
            let m = cfg.num_experts;
            let mut dz = vec![0.0; m];
            let weighted: f64 = dgates
                .iter()
                .zip(&lc.route.gates)
                .map(|(&dg, &g)| dg * g)
                .sum();
            for (s, &i) in lc.route.selected.iter().enumerate() {
                dz[i] += lc.route.gates[s] * (dgates[s] - weighted);
            }
            // ...plus the aux-loss path through the full softmax over active experts.
            let active = &layer_active[l];
            let dp = &aux_dprobs[l][t];
            let probs: Vec<f64> = active.iter().map(|&i| lc.route.full_probs[i]).collect();
            let p_dot: f64 = probs.iter().zip(dp).map(|(&p, &d)| p * d).sum();
            for (j, &i) in active.iter().enumerate() {
                dz[i] += probs[j] * (dp[j] - p_dot);
            }

            for (i, &dzi) in dz.iter().enumerate() {
                if dzi != 0.0 {
                    let h_in = &lc.h_in;
                    let row = grads[layout.router(l)].row_mut(i);
                    for (r, &h) in row.iter_mut().zip(h_in) {
                        *r += dzi * h;
                    }
                }
            }
            let dh_router = layer.router.matvec_t(&dz)?;
            for (a, b) in dh_in.iter_mut().zip(&dh_router) {
                *a += b;
            }

            dh = dh_in;
        }

        grads[layout.input_proj()].add_outer(&dh, &cache.x, 1.0);
    }

    Ok((parts, Some(grads)))
}

/// Fraction of examples whose argmax logit matches the label (argmax ties
/// break toward the lower class index).
pub fn accuracy(model: &MoeModel, inputs: &Tensor2, labels: &[usize]) -> Result<f64> {
    if inputs.rows() == 0 {
        return Err(Error::Argument("accuracy over an empty batch".into()));
    }
    let out = forward(model, inputs, false)?;
    let mut hits = 0usize;
    for (r, &y) in labels.iter().enumerate() {
        let row = out.logits.row(r);
        let mut best = 0;
        for (c, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = c;
            }
        }
        if best == y {
            hits += 1;
        }
    }
    Ok(hits as f64 / inputs.rows() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::moe::config::ModelConfig;
    use crate::moe::model::build_model;
    use crate::num::gradcheck::finite_diff_check;
    use crate::num::rng::Rng;

    fn tiny_batch(rng: &mut Rng, n: usize, d: usize) -> Tensor2 {
        Tensor2::uniform(n, d, 2.0, rng)
    }

    #[test]
    fn single_expert_gate_is_exactly_one() {
        let cfg = ModelConfig {
            num_layers: 1,
            num_experts: 1,
            top_k: 1,
            ..Default::default()
        };
        let model = build_model(&cfg, &mut Rng::new(5)).unwrap();
        let x = tiny_batch(&mut Rng::new(6), 1, cfg.input_dim);
        let out = forward(&model, &x, true).unwrap();
        let trace = out.trace.unwrap();
        assert_eq!(trace[0][0].selected, vec![0]);
        assert_eq!(trace[0][0].full_probs, vec![1.0]);
    }

    #[test]
    fn trace_row_count_is_batch_times_layers() {
        let cfg = ModelConfig::default();
        let model = build_model(&cfg, &mut Rng::new(1)).unwrap();
        let x = tiny_batch(&mut Rng::new(2), 7, cfg.input_dim);
        let out = forward(&model, &x, true).unwrap();
        let trace = out.trace.unwrap();
        let rows: usize = trace.iter().map(|t| t.len()).sum();
        assert_eq!(rows, 7 * cfg.num_layers);
    }

    #[test]
    fn width_mismatch_is_a_dimension_error() {
        let cfg = ModelConfig::default();
        let model = build_model(&cfg, &mut Rng::new(1)).unwrap();
        let x = tiny_batch(&mut Rng::new(2), 3, cfg.input_dim + 1);
        assert!(matches!(
            forward(&model, &x, false),
            Err(Error::Dimension(_))
        ));
    }

    /// Gradient of the full composite loss matches central differences on a
    /// random 2-layer, 4-expert model with both aux losses switched on.
    #[test]
    fn composite_gradient_matches_finite_differences() {
        let cfg = ModelConfig {
            input_dim: 8,
            num_layers: 2,
            num_experts: 4,
            top_k: 2,
            expert_hidden_dim: 10,
            num_classes: 3,
            lambda_lb: 0.05,
            lambda_ent: 0.7,
            seed: 0,
        };
        let model = build_model(&cfg, &mut Rng::new(13)).unwrap();
        let mut data_rng = Rng::new(14);
        let x = tiny_batch(&mut data_rng, 6, cfg.input_dim);
        let y: Vec<usize> = (0..6).map(|_| data_rng.below(cfg.num_classes)).collect();

        let mut params: Vec<Tensor2> = model
            .param_entries()
            .into_iter()
            .map(|(_, t)| t.clone())
            .collect();
        let restore = |ps: &[Tensor2]| {
            let mut m = model.clone();
            for (dst, src) in m.params_mut().into_iter().zip(ps) {
                *dst = src.clone();
            }
            m
        };
        let x2 = x.clone();
        let y2 = y.clone();
        let err = finite_diff_check(
            &mut params,
            |ps| Ok(composite_loss(&restore(ps), &x, &y)?.total),
            |ps| Ok(loss_and_grads(&restore(ps), &x2, &y2)?.1),
            &mut Rng::new(15),
            120,
        )
        .unwrap();
        assert!(err <= 1e-5, "composite gradient relative error {err}");
    }

    /// Same check with adapters installed: adapter gradients flow too.
    #[test]
    fn adapter_gradient_matches_finite_differences() {
        let cfg = ModelConfig {
            input_dim: 6,
            num_layers: 1,
            num_experts: 3,
            top_k: 2,
            expert_hidden_dim: 5,
            num_classes: 3,
            lambda_lb: 0.02,
            lambda_ent: 0.3,
            seed: 0,
        };
        let mut model = build_model(&cfg, &mut Rng::new(23)).unwrap();
        model.ensure_adapters();
        // Move adapters off identity so their gradients are generic.
        let mut r = Rng::new(24);
        for layer in &mut model.layers {
            for a in layer.adapters.as_mut().unwrap() {
                for v in a.scale.as_mut_slice() {
                    *v = 1.0 + r.uniform(-0.3, 0.3);
                }
                for v in a.bias.as_mut_slice() {
                    *v = r.uniform(-0.2, 0.2);
                }
            }
        }
        let mut data_rng = Rng::new(25);
        let x = tiny_batch(&mut data_rng, 4, cfg.input_dim);
        let y: Vec<usize> = (0..4).map(|_| data_rng.below(cfg.num_classes)).collect();
        let mut params: Vec<Tensor2> = model
            .param_entries()
            .into_iter()
            .map(|(_, t)| t.clone())
            .collect();
        let restore = |ps: &[Tensor2]| {
            let mut m = model.clone();
            for (dst, src) in m.params_mut().into_iter().zip(ps) {
                *dst = src.clone();
            }
            m
        };
        let x2 = x.clone();
        let y2 = y.clone();
        let err = finite_diff_check(
            &mut params,
            |ps| Ok(composite_loss(&restore(ps), &x, &y)?.total),
            |ps| Ok(loss_and_grads(&restore(ps), &x2, &y2)?.1),
            &mut Rng::new(26),
            80,
        )
        .unwrap();
        assert!(err <= 1e-5, "adapter gradient relative error {err}");
    }

    #[test]
    fn forward_is_deterministic() {
        let cfg = ModelConfig::default();
        let model = build_model(&cfg, &mut Rng::new(31)).unwrap();
        let x = tiny_batch(&mut Rng::new(32), 5, cfg.input_dim);
        let a = forward(&model, &x, false).unwrap();
        let b = forward(&model, &x, false).unwrap();
        assert!(a.logits.bit_eq(&b.logits));
    }
}
