use std::cmp::Ordering;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    backward, forward, forward_range, sgd_momentum_step, stack, NetworkSpec, NetworkState, OptimizerConfig,
    TrainableScope,
};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Preprocessed images with class labels.
#[derive(Clone, Debug, Default)]
pub struct LabeledImages {
    pub images: Vec<Tensor>,
    pub labels: Vec<usize>,
}

impl LabeledImages {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub phase1_epochs: usize,
    pub phase2_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule { phase1_epochs: 5, phase2_epochs: 20, batch_size: 16, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub phase: u8,
    pub epoch: usize,
    /// Mean training loss over the epoch's samples.
    pub loss: f64,
    /// Accuracy of the predictions made during the epoch.
    pub train_accuracy: f64,
    pub val_accuracy: Option<f64>,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Mean cross-entropy over a `[N, K]` logit batch and its gradient
/// `(softmax − onehot) / N`.
pub fn softmax_xent(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(Error::dim(format!("logits {shape:?} do not match {} labels", labels.len())));
    }
    let (n, k) = (shape[0], shape[1]);
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(n * k);
    for (row, &label) in logits.data().chunks(k).zip(labels) {
        if label >= k {
            return Err(Error::data(format!("label {label} out of range for {k} classes")));
        }
        let p = softmax(row);
        loss -= p[label].max(f64::MIN_POSITIVE).ln();
        grad.extend(p.iter().enumerate().map(|(j, &pj)| {
            let y = if j == label { 1.0 } else { 0.0 };
            (pj - y) / n as f64
        }));
    }
    Ok((loss / n as f64, Tensor::new(vec![n, k], grad)?))
}

/// Indices of the `k` largest scores, highest first; equal scores are
/// ordered by ascending index.
pub fn topk_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| match scores[b].total_cmp(&scores[a]) {
        Ordering::Equal => a.cmp(&b),
        o => o,
    });
    idx.truncate(k);
    idx
}

/// Logits for every image, evaluated in chunks of `batch_size`.
pub fn predict_scores(
    spec: &NetworkSpec,
    state: &NetworkState,
    images: &[Tensor],
    batch_size: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch_size.max(1)) {
        let refs: Vec<&Tensor> = chunk.iter().collect();
        let pass = forward(spec, state, &stack(&refs)?)?;
        out.extend((0..chunk.len()).map(|i| pass.sample_output(i).to_vec()));
    }
    Ok(out)
}

pub fn predict_topk(spec: &NetworkSpec, state: &NetworkState, image: &Tensor, k: usize) -> Result<Vec<usize>> {
    let classes = spec.num_classes().ok_or_else(|| Error::config("network has no classifier head"))?;
    if k == 0 || k > classes {
        return Err(Error::config(format!("k = {k} outside 1..={classes}")));
    }
    let scores = predict_scores(spec, state, std::slice::from_ref(image), 1)?;
    Ok(topk_indices(&scores[0], k))
}

/// Fraction of rows whose label is among the top `k` scores.
pub fn accuracy_topk(scores: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    let hits = scores.iter().zip(labels).filter(|(s, &l)| topk_indices(s, k).contains(&l)).count();
    hits as f64 / scores.len() as f64
}

fn check_dataset(spec: &NetworkSpec, data: &LabeledImages, what: &str) -> Result<usize> {
    let classes = spec.num_classes().ok_or_else(|| Error::config("network has no classifier head"))?;
    if data.images.len() != data.labels.len() {
        return Err(Error::config(format!("{what}: images and labels differ in length")));
    }
    if let Some(bad) = data.labels.iter().find(|&&l| l >= classes) {
        return Err(Error::data(format!("{what}: label {bad} outside [0, {classes})")));
    }
    Ok(classes)
}

/// Runs layers `range` over all samples, in batches, returning per-sample
/// outputs.
fn run_range(
    spec: &NetworkSpec,
    state: &NetworkState,
    inputs: &[Tensor],
    range: std::ops::Range<usize>,
    batch_size: usize,
) -> Result<Vec<Tensor>> {
    let shapes = spec.shapes()?;
    let out_shape = shapes[range.end].clone();
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(batch_size.max(1)) {
        let refs: Vec<&Tensor> = chunk.iter().collect();
        let pass = forward_range(spec, state, &stack(&refs)?, range.clone())?;
        for i in 0..chunk.len() {
            out.push(Tensor::new(out_shape.clone(), pass.sample_output(i).to_vec())?);
        }
    }
    Ok(out)
}

struct EpochStats {
    loss_sum: f64,
    correct: usize,
    seen: usize,
}

/// One epoch of minibatch training of layers `range` over `inputs`.
#[allow(clippy::too_many_arguments)]
fn train_epoch(
    spec: &NetworkSpec,
    state: &mut NetworkState,
    inputs: &[Tensor],
    labels: &[usize],
    range: std::ops::Range<usize>,
    cfg: &OptimizerConfig,
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EpochStats> {
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    order.shuffle(rng);
    let mut stats = EpochStats { loss_sum: 0.0, correct: 0, seen: 0 };
    for batch in order.chunks(batch_size) {
        let refs: Vec<&Tensor> = batch.iter().map(|&i| &inputs[i]).collect();
        let batch_labels: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
        let pass = forward_range(spec, state, &stack(&refs)?, range.clone())?;
        let logits = pass.output();
        let (loss, grad) = softmax_xent(&logits, &batch_labels)?;
        if !loss.is_finite() {
            return Err(Error::numeric("softmax_xent", format!("loss {loss}")));
        }
        stats.loss_sum += loss * batch.len() as f64;
        stats.seen += batch.len();
        stats.correct +=
            (0..batch.len()).filter(|&i| topk_indices(pass.sample_output(i), 1)[0] == batch_labels[i]).count();
        let grads = backward(spec, state, &pass, &grad, cfg.scope)?;
        sgd_momentum_step(spec, state, &grads, cfg)?;
    }
    Ok(stats)
}

/// Two-phase classifier training: first only the final fully connected
/// layer (features below it are computed once and reused, since they cannot
/// change), then the whole network.
pub fn train_classifier_two_phase(
    spec: &NetworkSpec,
    state: &mut NetworkState,
    train: &LabeledImages,
    val: Option<&LabeledImages>,
    phase1: &OptimizerConfig,
    phase2: &OptimizerConfig,
    schedule: &Schedule,
) -> Result<Vec<EpochMetrics>> {
    state.check_against(spec)?;
    check_dataset(spec, train, "training set")?;
    if let Some(v) = val {
        check_dataset(spec, v, "validation set")?;
    }
    if train.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    if schedule.batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    phase1.validate()?;
    phase2.validate()?;
    let bs = schedule.batch_size;
    let logits_end = spec.logits_end();
    let mut log = Vec::new();

    if schedule.phase1_epochs > 0 {
        let head = match phase1.scope {
            TrainableScope::LastLayerOnly => spec.last_param_layer().unwrap_or(0),
            TrainableScope::AllLayers => 0,
        };
        let feats = run_range(spec, state, &train.images, 0..head, bs)?;
        let val_feats = match val {
            Some(v) => Some(run_range(spec, state, &v.images, 0..head, bs)?),
            None => None,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
        rng.set_stream(1);
        for epoch in 1..=schedule.phase1_epochs {
            let s = train_epoch(spec, state, &feats, &train.labels, head..logits_end, phase1, bs, &mut rng)?;
            let val_accuracy = match (&val_feats, val) {
                (Some(vf), Some(v)) => {
                    let scores: Vec<Vec<f64>> =
                        run_range(spec, state, vf, head..logits_end, bs)?.into_iter().map(Tensor::into_data).collect();
                    Some(accuracy_topk(&scores, &v.labels, 1))
                }
                _ => None,
            };
            log.push(EpochMetrics {
                phase: 1,
                epoch,
                loss: s.loss_sum / s.seen as f64,
                train_accuracy: s.correct as f64 / s.seen as f64,
                val_accuracy,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    rng.set_stream(2);
    for epoch in 1..=schedule.phase2_epochs {
        let s = train_epoch(spec, state, &train.images, &train.labels, 0..logits_end, phase2, bs, &mut rng)?;
        let val_accuracy = match val {
            Some(v) => Some(accuracy_topk(&predict_scores(spec, state, &v.images, bs)?, &v.labels, 1)),
            None => None,
        };
        log.push(EpochMetrics {
            phase: 2,
            epoch,
            loss: s.loss_sum / s.seen as f64,
            train_accuracy: s.correct as f64 / s.seen as f64,
            val_accuracy,
        });
    }
    Ok(log)
}
