use serde::{Deserialize, Serialize};

use super::{Gradients, NetworkSpec, NetworkState};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainableScope {
    /// Only the final parameterized layer (the classifier).
    LastLayerOnly,
    AllLayers,
}

impl TrainableScope {
    /// Indices of the layers whose parameters this scope updates.
    pub fn layers(self, spec: &NetworkSpec) -> Vec<usize> {
        match self {
            TrainableScope::LastLayerOnly => spec.last_param_layer().into_iter().collect(),
            TrainableScope::AllLayers => (0..spec.layers.len()).filter(|&i| spec.layers[i].has_params()).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub momentum: f64,
    pub scope: TrainableScope,
}

impl OptimizerConfig {
    /// Classifier-only warm-up: lr 1.0, weight decay 5e-6.
    pub fn phase1() -> Self {
        OptimizerConfig { learning_rate: 1.0, weight_decay: 5e-6, momentum: 0.9, scope: TrainableScope::LastLayerOnly }
    }

    /// Whole-network fine-tuning: lr 0.001, weight decay 5e-4.
    pub fn phase2() -> Self {
        OptimizerConfig { learning_rate: 0.001, weight_decay: 5e-4, momentum: 0.9, scope: TrainableScope::AllLayers }
    }

    /// Triplet training uses the fine-tuning settings.
    pub fn retrieval() -> Self {
        OptimizerConfig::phase2()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config(format!("weight decay {} must be non-negative", self.weight_decay)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config(format!("momentum {} must lie in [0, 1)", self.momentum)));
        }
        Ok(())
    }
}

/// One momentum-SGD update over the layers in scope:
/// `v ← μ·v + (g + λ·w)`, `w ← w − η·v`.
/// Layers outside the scope are left bit-for-bit untouched.
pub fn sgd_momentum_step(
    spec: &NetworkSpec,
    state: &mut NetworkState,
    grads: &Gradients,
    cfg: &OptimizerConfig,
) -> Result<()> {
    cfg.validate()?;
    let layers = cfg.scope.layers(spec);
    for &i in &layers {
        let g = grads
            .layers
            .get(i)
            .and_then(Option::as_ref)
            .ok_or_else(|| Error::config(format!("missing gradient for trainable layer {i}")))?;
        let p = state.params[i].as_ref().ok_or_else(|| Error::Consistency(format!("layer {i} has no parameters")))?;
        if g.weight.shape() != p.weight.shape() || g.bias.shape() != p.bias.shape() {
            return Err(Error::dim(format!("gradient shape mismatch at layer {i}")));
        }
        if !g.is_finite() {
            return Err(Error::numeric(format!("{i} ({})", spec.layers[i].name()), "non-finite gradient"));
        }
    }
    for i in layers {
        let g = grads.layers[i].as_ref().expect("checked");
        let p = state.params[i].as_mut().expect("checked");
        let v = state.velocity[i].as_mut().expect("velocity mirrors params");
        update(p.weight.data_mut(), v.weight.data_mut(), g.weight.data(), cfg);
        update(p.bias.data_mut(), v.bias.data_mut(), g.bias.data(), cfg);
    }
    state.step += 1;
    Ok(())
}

fn update(w: &mut [f64], v: &mut [f64], g: &[f64], cfg: &OptimizerConfig) {
    for ((wi, vi), gi) in w.iter_mut().zip(v.iter_mut()).zip(g) {
        *vi = cfg.momentum * *vi + (gi + cfg.weight_decay * *wi);
        *wi -= cfg.learning_rate * *vi;
    }
}
