//! Trainable feature extractor and classifier.
//!
//! A [`NetworkSpec`] describes the layer stack, a [`NetworkState`] holds the
//! one set of learnable parameters (plus momentum buffers and the frozen
//! sketch tables). Forward and backward passes run per sample, in parallel
//! across the batch; per-sample gradients are always summed in sample order
//! so results do not depend on the worker count.

mod io;
mod layers;
mod optim;
mod spec;
mod train;

use std::ops::Range;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::cbp::{cbp_backward_traced, cbp_embed_traced, CbpTrace, FeatureMap};
use crate::error::{Error, Result};
use crate::sketch::{make_sketch_params, TensorSketchParams};
use crate::tensor::Tensor;

use layers::ConvGeom;

pub use io::{load_weights, read_weights, save_weights, write_weights, WEIGHTS_VERSION};
pub use optim::{sgd_momentum_step, OptimizerConfig, TrainableScope};
pub use spec::{LayerSpec, NetworkSpec};
pub use train::{
    accuracy_topk, predict_scores, predict_topk, softmax, softmax_xent, topk_indices, train_classifier_two_phase,
    EpochMetrics, LabeledImages, Schedule,
};

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LayerParams {
    fn zeros_like(&self) -> LayerParams {
        LayerParams {
            weight: Tensor::zeros(self.weight.shape().to_vec()).expect("valid shape"),
            bias: Tensor::zeros(self.bias.shape().to_vec()).expect("valid shape"),
        }
    }

    fn add_assign(&mut self, other: &LayerParams) {
        for (a, b) in self.weight.data_mut().iter_mut().zip(other.weight.data()) {
            *a += b;
        }
        for (a, b) in self.bias.data_mut().iter_mut().zip(other.bias.data()) {
            *a += b;
        }
    }

    fn scale(&mut self, alpha: f64) {
        self.weight.data_mut().iter_mut().for_each(|v| *v *= alpha);
        self.bias.data_mut().iter_mut().for_each(|v| *v *= alpha);
    }

    fn is_finite(&self) -> bool {
        self.weight.is_finite() && self.bias.is_finite()
    }
}

/// Expected parameter shapes `(weight, bias)` for a layer, if it has any.
pub fn param_shapes(layer: &LayerSpec) -> Option<(Vec<usize>, Vec<usize>)> {
    match *layer {
        LayerSpec::Conv2d { in_ch, out_ch, kernel, .. } => Some((vec![out_ch, kernel, kernel, in_ch], vec![out_ch])),
        LayerSpec::FullyConnected { inputs, outputs } => Some((vec![outputs, inputs], vec![outputs])),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NetworkState {
    /// One entry per layer; `None` for layers without parameters.
    pub params: Vec<Option<LayerParams>>,
    pub velocity: Vec<Option<LayerParams>>,
    pub sketch: Option<TensorSketchParams>,
    pub step: u64,
}

impl NetworkState {
    /// He-initialized weights (`N(0, 2/fan_in)`), zero biases, and sketch
    /// tables drawn from the pooling layer's own seed. Layer `i` draws from
    /// ChaCha20 stream `i` of `seed`.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let shapes = spec.shapes()?;
        let mut params = Vec::with_capacity(spec.layers.len());
        let mut sketch = None;
        for (i, layer) in spec.layers.iter().enumerate() {
            if let LayerSpec::Cbp { d, seed: sketch_seed } = *layer {
                sketch = Some(make_sketch_params(shapes[i][2], d, sketch_seed)?);
            }
            params.push(param_shapes(layer).map(|(ws, bs)| {
                let fan_in: usize = ws[1..].iter().product();
                let std = (2.0 / fan_in as f64).sqrt();
                let mut rng = ChaCha20Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                let n: usize = ws.iter().product();
                let data = (0..n)
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        z * std
                    })
                    .collect();
                LayerParams {
                    weight: Tensor::new(ws, data).expect("valid shape"),
                    bias: Tensor::zeros(bs).expect("valid shape"),
                }
            }));
        }
        Ok(NetworkState::from_parts(params, sketch))
    }

    pub fn from_parts(params: Vec<Option<LayerParams>>, sketch: Option<TensorSketchParams>) -> Self {
        let velocity = params.iter().map(|p| p.as_ref().map(LayerParams::zeros_like)).collect();
        NetworkState { params, velocity, sketch, step: 0 }
    }

    /// Checks that parameters and sketch tables fit `spec`.
    pub fn check_against(&self, spec: &NetworkSpec) -> Result<()> {
        let shapes = spec.shapes()?;
        if self.params.len() != spec.layers.len() {
            return Err(Error::Consistency(format!(
                "state has {} layers, spec has {}",
                self.params.len(),
                spec.layers.len()
            )));
        }
        for (i, (layer, p)) in spec.layers.iter().zip(&self.params).enumerate() {
            match (param_shapes(layer), p) {
                (None, None) => {}
                (Some((ws, bs)), Some(p)) if p.weight.shape() == ws && p.bias.shape() == bs => {}
                _ => {
                    return Err(Error::Consistency(format!(
                        "parameters of layer {i} ({}) do not match the spec",
                        layer.name()
                    )))
                }
            }
            if let LayerSpec::Cbp { d, seed } = *layer {
                let ok = self
                    .sketch
                    .as_ref()
                    .is_some_and(|s| s.output_dim() == d && s.input_dim() == shapes[i][2] && s.seed() == seed);
                if !ok {
                    return Err(Error::Consistency(format!("sketch tables do not match pooling layer {i}")));
                }
            }
        }
        Ok(())
    }

    fn sketch_for(&self, layer: usize) -> Result<&TensorSketchParams> {
        self.sketch.as_ref().ok_or_else(|| Error::Consistency(format!("layer {layer} needs sketch tables")))
    }
}

/// Per-layer parameter gradients; `None` where a layer has no parameters or
/// is outside the trainable scope.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Option<LayerParams>>,
}

impl Gradients {
    pub fn zeros_like(state: &NetworkState) -> Self {
        Gradients { layers: state.params.iter().map(|p| p.as_ref().map(LayerParams::zeros_like)).collect() }
    }

    /// `self += other`, layer by layer. Missing layers on either side are
    /// taken as zero.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            match (a.as_mut(), b) {
                (Some(a), Some(b)) => a.add_assign(b),
                (None, Some(b)) => *a = Some(b.clone()),
                _ => {}
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for l in self.layers.iter_mut().flatten() {
            l.scale(alpha);
        }
    }
}

#[derive(Clone, Debug)]
enum Aux {
    None,
    Pool(Vec<u32>),
    Cbp(CbpTrace),
}

#[derive(Clone, Debug)]
struct SampleTrace {
    /// `values[j]` is the input of layer `range.start + j`; the last entry is
    /// the output of the range.
    values: Vec<Vec<f64>>,
    aux: Vec<Aux>,
}

/// Activations recorded by [`forward`], consumed by [`backward`].
#[derive(Clone, Debug)]
pub struct ForwardPass {
    range: Range<usize>,
    step: u64,
    shapes: Vec<Vec<usize>>,
    samples: Vec<SampleTrace>,
}

impl ForwardPass {
    pub fn range(&self) -> Range<usize> {
        self.range.clone()
    }

    pub fn batch_size(&self) -> usize {
        self.samples.len()
    }

    /// Batched activations entering layer `layer` (or leaving the range when
    /// `layer == range.end`), shaped `[N, per-sample shape...]`.
    pub fn activation(&self, layer: usize) -> Result<Tensor> {
        if layer < self.range.start || layer > self.range.end {
            return Err(Error::config(format!("layer {layer} outside recorded range {:?}", self.range)));
        }
        let j = layer - self.range.start;
        let mut shape = vec![self.samples.len()];
        shape.extend_from_slice(&self.shapes[layer]);
        let data = self.samples.iter().flat_map(|s| s.values[j].iter().copied()).collect();
        Tensor::new(shape, data)
    }

    /// Output of the last layer in the range.
    pub fn output(&self) -> Tensor {
        self.activation(self.range.end).expect("end is in range")
    }

    pub fn sample_output(&self, i: usize) -> &[f64] {
        self.samples[i].values.last().expect("non-empty")
    }
}

fn split_batch(batch: &Tensor, sample_shape: &[usize]) -> Result<Vec<Vec<f64>>> {
    let shape = batch.shape();
    if shape.len() != sample_shape.len() + 1 || &shape[1..] != sample_shape {
        return Err(Error::dim(format!("batch shape {shape:?} does not match per-sample shape {sample_shape:?}")));
    }
    let per: usize = sample_shape.iter().product();
    Ok(batch.data().chunks(per).map(<[f64]>::to_vec).collect())
}

/// Stacks per-sample tensors into one `[N, ...]` batch.
pub fn stack(samples: &[&Tensor]) -> Result<Tensor> {
    let first = samples.first().ok_or_else(|| Error::config("cannot stack an empty batch"))?;
    let mut shape = vec![samples.len()];
    shape.extend_from_slice(first.shape());
    let mut data = Vec::with_capacity(samples.len() * first.len());
    for s in samples {
        if s.shape() != first.shape() {
            return Err(Error::dim(format!("cannot stack shapes {:?} and {:?}", first.shape(), s.shape())));
        }
        data.extend_from_slice(s.data());
    }
    Tensor::new(shape, data)
}

/// Runs the whole stack, up to the logits for classifiers.
pub fn forward(spec: &NetworkSpec, state: &NetworkState, batch: &Tensor) -> Result<ForwardPass> {
    forward_range(spec, state, batch, 0..spec.logits_end())
}

/// Runs layers `range` on a batch whose samples have the shape entering
/// `range.start`.
pub fn forward_range(
    spec: &NetworkSpec,
    state: &NetworkState,
    batch: &Tensor,
    range: Range<usize>,
) -> Result<ForwardPass> {
    let shapes = spec.shapes()?;
    if range.start > range.end || range.end > spec.layers.len() {
        return Err(Error::config(format!("invalid layer range {range:?}")));
    }
    let inputs = split_batch(batch, &shapes[range.start])?;
    let samples = inputs
        .into_par_iter()
        .map(|x| forward_sample(spec, state, &shapes, range.clone(), x))
        .collect::<Result<Vec<_>>>()?;
    Ok(ForwardPass { range, step: state.step, shapes, samples })
}

fn params_of(state: &NetworkState, i: usize) -> Result<&LayerParams> {
    state
        .params
        .get(i)
        .and_then(Option::as_ref)
        .ok_or_else(|| Error::Consistency(format!("layer {i} has no parameters in state")))
}

fn forward_sample(
    spec: &NetworkSpec,
    state: &NetworkState,
    shapes: &[Vec<usize>],
    range: Range<usize>,
    input: Vec<f64>,
) -> Result<SampleTrace> {
    let mut values = vec![input];
    let mut aux = Vec::with_capacity(range.len());
    for i in range {
        let x = values.last().expect("non-empty");
        let shape = &shapes[i];
        let (y, a) = match spec.layers[i] {
            LayerSpec::Conv2d { out_ch, kernel, stride, pad, .. } => {
                let p = params_of(state, i)?;
                let g = ConvGeom { h: shape[0], w: shape[1], c: shape[2], out_ch, kernel, stride, pad };
                (layers::conv_forward(&g, x, p.weight.data(), p.bias.data()), Aux::None)
            }
            LayerSpec::Relu => (layers::relu_forward(x), Aux::None),
            LayerSpec::MaxPool { window, stride } => {
                let (y, arg) = layers::maxpool_forward(x, shape, window, stride);
                (y, Aux::Pool(arg))
            }
            LayerSpec::Cbp { .. } => {
                let fmap = FeatureMap::from_vec(shape[0], shape[1], shape[2], x.clone())?;
                let trace = cbp_embed_traced(&fmap, state.sketch_for(i)?)?;
                (trace.normalized.clone(), Aux::Cbp(trace))
            }
            LayerSpec::FullyConnected { .. } => {
                let p = params_of(state, i)?;
                (layers::fc_forward(x, p.weight.data(), p.bias.data()), Aux::None)
            }
            LayerSpec::SoftmaxXent => (x.clone(), Aux::None),
        };
        if let Some(bad) = y.iter().find(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("{i} ({})", spec.layers[i].name()), format!("activation {bad}")));
        }
        values.push(y);
        aux.push(a);
    }
    Ok(SampleTrace { values, aux })
}

/// Gradients of `Σ_n ⟨loss_grad[n], output[n]⟩` for every parameterized
/// layer in the pass's range that `scope` allows.
pub fn backward(
    spec: &NetworkSpec,
    state: &NetworkState,
    pass: &ForwardPass,
    loss_grad: &Tensor,
    scope: TrainableScope,
) -> Result<Gradients> {
    Ok(backward_with_input_grad(spec, state, pass, loss_grad, scope, false)?.0)
}

/// Like [`backward`], optionally also returning the gradient with respect to
/// each sample's input of the range.
pub fn backward_with_input_grad(
    spec: &NetworkSpec,
    state: &NetworkState,
    pass: &ForwardPass,
    loss_grad: &Tensor,
    scope: TrainableScope,
    want_input_grad: bool,
) -> Result<(Gradients, Option<Vec<Vec<f64>>>)> {
    if pass.step != state.step {
        return Err(Error::Consistency(format!(
            "activations recorded at step {} but state is at step {}",
            pass.step, state.step
        )));
    }
    if pass.shapes != spec.shapes()? || state.params.len() != spec.layers.len() {
        return Err(Error::Consistency("activations were recorded for a different network".into()));
    }
    let out_shape = &pass.shapes[pass.range.end];
    let douts = split_batch(loss_grad, out_shape)?;
    if douts.len() != pass.samples.len() {
        return Err(Error::Consistency(format!(
            "loss gradient has {} samples, activations have {}",
            douts.len(),
            pass.samples.len()
        )));
    }
    let trainable = scope.layers(spec);
    // Backprop stops at the lowest layer that still needs a gradient.
    let lowest = if want_input_grad {
        pass.range.start
    } else {
        trainable.iter().copied().filter(|i| pass.range.contains(i)).min().unwrap_or(pass.range.end)
    };
    let per_sample = pass
        .samples
        .par_iter()
        .zip(douts.into_par_iter())
        .map(|(trace, dout)| backward_sample(spec, state, pass, trace, dout, &trainable, lowest, want_input_grad))
        .collect::<Result<Vec<_>>>()?;
    let mut total = Gradients { layers: vec![None; spec.layers.len()] };
    let mut input_grads = want_input_grad.then(Vec::new);
    for (g, din) in per_sample {
        total.accumulate(&g);
        if let (Some(all), Some(d)) = (input_grads.as_mut(), din) {
            all.push(d);
        }
    }
    for &i in &trainable {
        if pass.range.contains(&i) && total.layers[i].is_none() {
            total.layers[i] = state.params[i].as_ref().map(LayerParams::zeros_like);
        }
    }
    Ok((total, input_grads))
}

#[allow(clippy::too_many_arguments)]
fn backward_sample(
    spec: &NetworkSpec,
    state: &NetworkState,
    pass: &ForwardPass,
    trace: &SampleTrace,
    dout: Vec<f64>,
    trainable: &[usize],
    lowest: usize,
    want_input_grad: bool,
) -> Result<(Gradients, Option<Vec<f64>>)> {
    let mut grads = Gradients { layers: vec![None; spec.layers.len()] };
    let mut g = dout;
    let start = pass.range.start;
    for i in (lowest..pass.range.end).rev() {
        let j = i - start;
        let x = &trace.values[j];
        let shape = &pass.shapes[i];
        let need_input = i > lowest || want_input_grad;
        let wants_params = trainable.contains(&i);
        g = match spec.layers[i] {
            LayerSpec::Conv2d { out_ch, kernel, stride, pad, .. } => {
                let p = params_of(state, i)?;
                let geom = ConvGeom { h: shape[0], w: shape[1], c: shape[2], out_ch, kernel, stride, pad };
                let cg = layers::conv_backward(&geom, x, p.weight.data(), &g, need_input);
                if wants_params {
                    grads.layers[i] = Some(LayerParams {
                        weight: Tensor::new(p.weight.shape().to_vec(), cg.weight)?,
                        bias: Tensor::new(p.bias.shape().to_vec(), cg.bias)?,
                    });
                }
                cg.input.unwrap_or_default()
            }
            LayerSpec::FullyConnected { .. } => {
                let p = params_of(state, i)?;
                let fg = layers::fc_backward(x, p.weight.data(), &g, need_input);
                if wants_params {
                    grads.layers[i] = Some(LayerParams {
                        weight: Tensor::new(p.weight.shape().to_vec(), fg.weight)?,
                        bias: Tensor::new(p.bias.shape().to_vec(), fg.bias)?,
                    });
                }
                fg.input.unwrap_or_default()
            }
            LayerSpec::Relu => layers::relu_backward(x, &g),
            LayerSpec::MaxPool { .. } => match &trace.aux[j] {
                Aux::Pool(arg) => layers::maxpool_backward(arg, &g, x.len()),
                _ => return Err(Error::Consistency(format!("missing pooling indices for layer {i}"))),
            },
            LayerSpec::Cbp { .. } => match &trace.aux[j] {
                Aux::Cbp(ct) => {
                    let fmap = FeatureMap::from_vec(shape[0], shape[1], shape[2], x.clone())?;
                    cbp_backward_traced(&fmap, state.sketch_for(i)?, ct, &g)?.into_values().into_data()
                }
                _ => return Err(Error::Consistency(format!("missing pooling trace for layer {i}"))),
            },
            LayerSpec::SoftmaxXent => g,
        };
    }
    let input_grad = (want_input_grad && lowest == start).then_some(g);
    Ok((grads, input_grad))
}

#[cfg(test)]
mod tests;
