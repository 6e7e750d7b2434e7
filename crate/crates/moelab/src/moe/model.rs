//! Model structure, initialization, and the canonical parameter registry.

use crate::error::{Error, Result};
use crate::moe::config::ModelConfig;
use crate::num::rng::Rng;
use crate::num::tensor::Tensor2;

/// Two-layer perceptron with a ReLU inner nonlinearity.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertMlp {
    pub w1: Tensor2, // hidden x d
    pub b1: Tensor2, // 1 x hidden
    pub w2: Tensor2, // d x hidden
    pub b2: Tensor2, // 1 x d
}

impl ExpertMlp {
    pub fn zero_out(&mut self) {
        self.w1.fill(0.0);
        self.b1.fill(0.0);
        self.w2.fill(0.0);
        self.b2.fill(0.0);
    }
}

/// Per-expert output adapter: a diagonal scale and bias applied to the
/// expert output. Identity at initialization (scale 1, bias 0), so enabling
/// adapters does not change model behavior until they are trained.
#[derive(Debug, Clone, PartialEq)]
pub struct Adapter {
    pub scale: Tensor2, // 1 x d
    pub bias: Tensor2,  // 1 x d
}

impl Adapter {
    fn identity(d: usize) -> Self {
        let mut scale = Tensor2::zeros(1, d);
        scale.fill(1.0);
        Adapter {
            scale,
            bias: Tensor2::zeros(1, d),
        }
    }
}

/// One MoE layer: a router, M experts, optional adapters, and the
/// active-expert mask realizing pruning.
#[derive(Debug, Clone, PartialEq)]
pub struct MoeLayer {
    pub router: Tensor2, // M x d
    pub experts: Vec<ExpertMlp>,
    pub adapters: Option<Vec<Adapter>>,
    pub active: Vec<bool>,
}

impl MoeLayer {
    pub fn active_count(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }
}

/// The toy MoE classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct MoeModel {
    pub config: ModelConfig,
    pub input_proj: Tensor2, // d x d
    pub layers: Vec<MoeLayer>,
    pub output_head: Tensor2, // C x d
}

/// Scaled-uniform fan-in initialization bound.
fn init_bound(fan_in: usize) -> f64 {
    (1.0 / fan_in as f64).sqrt()
}

/// Build a model from its config, drawing weights from `rng` in a fixed
/// order. All experts start active.
pub fn build_model(config: &ModelConfig, rng: &mut Rng) -> Result<MoeModel> {
    config.validate()?;
    let d = config.input_dim;
    let h = config.expert_hidden_dim;
    let input_proj = Tensor2::uniform(d, d, init_bound(d), rng);
    let mut layers = Vec::with_capacity(config.num_layers);
    for _ in 0..config.num_layers {
        let router = Tensor2::uniform(config.num_experts, d, init_bound(d), rng);
        let experts = (0..config.num_experts)
            .map(|_| ExpertMlp {
                w1: Tensor2::uniform(h, d, init_bound(d), rng),
                b1: Tensor2::zeros(1, h),
                w2: Tensor2::uniform(d, h, init_bound(h), rng),
                b2: Tensor2::zeros(1, d),
            })
            .collect();
        layers.push(MoeLayer {
            router,
            experts,
            adapters: None,
            active: vec![true; config.num_experts],
        });
    }
    let output_head = Tensor2::uniform(config.num_classes, d, init_bound(d), rng);
    Ok(MoeModel {
        config: config.clone(),
        input_proj,
        layers,
        output_head,
    })
}

impl MoeModel {
    pub fn has_adapters(&self) -> bool {
        self.layers.first().is_some_and(|l| l.adapters.is_some())
    }

    /// Install identity adapters on every expert (no behavior change until
    /// they are trained). Idempotent.
    pub fn ensure_adapters(&mut self) {
        let d = self.config.input_dim;
        for layer in &mut self.layers {
            if layer.adapters.is_none() {
                layer.adapters =
                    Some((0..self.config.num_experts).map(|_| Adapter::identity(d)).collect());
            }
        }
    }

    /// Effective top-k for a layer: min(k, active experts there).
    pub fn effective_k(&self, layer: usize) -> usize {
        self.config.top_k.min(self.layers[layer].active_count())
    }

    pub fn active_mask(&self) -> Vec<Vec<bool>> {
        self.layers.iter().map(|l| l.active.clone()).collect()
    }

    /// Every layer must keep at least one active expert.
    pub fn validate_mask(&self) -> Result<()> {
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.active_count() == 0 {
                return Err(Error::State(format!("layer {l} has no active experts")));
            }
        }
        Ok(())
    }

    /// Named parameter tensors in canonical order: input_proj, then per
    /// layer the router and each expert's w1/b1/w2/b2 (plus adapter scale
    /// and bias when adapters are installed), then output_head.
    pub fn param_entries(&self) -> Vec<(String, &Tensor2)> {
        let mut out: Vec<(String, &Tensor2)> = Vec::new();
        out.push(("input_proj".to_string(), &self.input_proj));
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("layer{l}.router"), &layer.router));
            for (i, e) in layer.experts.iter().enumerate() {
                out.push((format!("layer{l}.expert{i}.w1"), &e.w1));
                out.push((format!("layer{l}.expert{i}.b1"), &e.b1));
                out.push((format!("layer{l}.expert{i}.w2"), &e.w2));
                out.push((format!("layer{l}.expert{i}.b2"), &e.b2));
                if let Some(adapters) = &layer.adapters {
                    out.push((format!("layer{l}.expert{i}.adapter_scale"), &adapters[i].scale));
                    out.push((format!("layer{l}.expert{i}.adapter_bias"), &adapters[i].bias));
                }
            }
        }
        out.push(("output_head".to_string(), &self.output_head));
        out
    }

    /// Mutable view of the parameters in the same canonical order.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor2> {
        let mut out: Vec<&mut Tensor2> = Vec::new();
        out.push(&mut self.input_proj);
        for layer in self.layers.iter_mut() {
            out.push(&mut layer.router);
            let adapters = layer.adapters.as_mut();
            match adapters {
                Some(ads) => {
                    for (e, a) in layer.experts.iter_mut().zip(ads.iter_mut()) {
                        out.push(&mut e.w1);
                        out.push(&mut e.b1);
                        out.push(&mut e.w2);
                        out.push(&mut e.b2);
                        out.push(&mut a.scale);
                        out.push(&mut a.bias);
                    }
                }
                None => {
                    for e in layer.experts.iter_mut() {
                        out.push(&mut e.w1);
                        out.push(&mut e.b1);
                        out.push(&mut e.w2);
                        out.push(&mut e.b2);
                    }
                }
            }
        }
        out.push(&mut self.output_head);
        out
    }

    /// Zero gradient tensors matching the parameter registry.
    pub fn zero_grads(&self) -> Vec<Tensor2> {
        self.param_entries()
            .iter()
            .map(|(_, p)| Tensor2::zeros(p.rows(), p.cols()))
            .collect()
    }

    /// Layout of the canonical registry, for indexing gradients by role.
    pub fn layout(&self) -> ParamLayout {
        ParamLayout {
            num_layers: self.config.num_layers,
            num_experts: self.config.num_experts,
            with_adapters: self.has_adapters(),
        }
    }

    /// Byte-level equality of all parameters, masks, and config.
    pub fn bit_eq(&self, other: &MoeModel) -> bool {
        if self.config != other.config || self.active_mask() != other.active_mask() {
            return false;
        }
        let a = self.param_entries();
        let b = other.param_entries();
        a.len() == b.len()
            && a.iter()
                .zip(&b)
                .all(|((na, ta), (nb, tb))| na == nb && ta.bit_eq(tb))
    }
}

/// Index arithmetic over the canonical parameter order.
#[derive(Debug, Clone, Copy)]
pub struct ParamLayout {
    num_layers: usize,
    num_experts: usize,
    with_adapters: bool,
}

impl ParamLayout {
    fn per_expert(&self) -> usize {
        if self.with_adapters {
            6
        } else {
            4
        }
    }

    fn layer_stride(&self) -> usize {
        1 + self.num_experts * self.per_expert()
    }

    pub fn input_proj(&self) -> usize {
        0
    }

    pub fn router(&self, layer: usize) -> usize {
        1 + layer * self.layer_stride()
    }

    /// Indices of (w1, b1, w2, b2) for one expert.
    pub fn expert(&self, layer: usize, expert: usize) -> [usize; 4] {
        let base = self.router(layer) + 1 + expert * self.per_expert();
        [base, base + 1, base + 2, base + 3]
    }

    /// Indices of (scale, bias) for one adapter; only valid with adapters.
    pub fn adapter(&self, layer: usize, expert: usize) -> [usize; 2] {
        debug_assert!(self.with_adapters);
        let base = self.router(layer) + 1 + expert * self.per_expert();
        [base + 4, base + 5]
    }

    pub fn output_head(&self) -> usize {
        1 + self.num_layers * self.layer_stride()
    }

    pub fn total(&self) -> usize {
        self.output_head() + 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_is_deterministic() {
        let cfg = ModelConfig::default();
        let a = build_model(&cfg, &mut Rng::new(9)).unwrap();
        let b = build_model(&cfg, &mut Rng::new(9)).unwrap();
        assert!(a.bit_eq(&b));
        let c = build_model(&cfg, &mut Rng::new(10)).unwrap();
        assert!(!a.bit_eq(&c));
    }

    #[test]
    fn all_experts_start_active() {
        let cfg = ModelConfig::default();
        let m = build_model(&cfg, &mut Rng::new(0)).unwrap();
        let total_active: usize = m.layers.iter().map(|l| l.active_count()).sum();
        assert_eq!(total_active, 16);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let cfg = ModelConfig {
            top_k: 0,
            ..Default::default()
        };
        assert!(build_model(&cfg, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn layout_matches_registry() {
        let cfg = ModelConfig {
            num_layers: 3,
            num_experts: 5,
            ..Default::default()
        };
        let mut m = build_model(&cfg, &mut Rng::new(2)).unwrap();
        let entries = m.param_entries();
        let layout = m.layout();
        assert_eq!(entries.len(), layout.total());
        assert_eq!(entries[layout.input_proj()].0, "input_proj");
        assert_eq!(entries[layout.router(2)].0, "layer2.router");
        let [w1, _, _, b2] = layout.expert(1, 4);
        assert_eq!(entries[w1].0, "layer1.expert4.w1");
        assert_eq!(entries[b2].0, "layer1.expert4.b2");
        assert_eq!(entries[layout.output_head()].0, "output_head");

        m.ensure_adapters();
        let entries = m.param_entries();
        let layout = m.layout();
        assert_eq!(entries.len(), layout.total());
        let [scale, bias] = layout.adapter(0, 1);
        assert_eq!(entries[scale].0, "layer0.expert1.adapter_scale");
        assert_eq!(entries[bias].0, "layer0.expert1.adapter_bias");
        assert_eq!(entries[layout.output_head()].0, "output_head");
    }

    #[test]
    fn params_mut_aligns_with_entries() {
        let cfg = ModelConfig::default();
        let mut m = build_model(&cfg, &mut Rng::new(3)).unwrap();
        m.ensure_adapters();
        let shapes: Vec<(usize, usize)> = m.param_entries().iter().map(|(_, t)| t.shape()).collect();
        let mut_shapes: Vec<(usize, usize)> = m.params_mut().iter().map(|t| t.shape()).collect();
        assert_eq!(shapes, mut_shapes);
    }
}
