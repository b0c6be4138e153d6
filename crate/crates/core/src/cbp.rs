//! Compact bilinear pooling: a Tensor Sketch of every spatial descriptor,
//! sum-pooled over the image, then signed square root and L2 normalization.
//!
//! Pooling is order-independent by construction. Descriptors are sorted
//! into a canonical order before their sketches are summed with a pairwise
//! reduction whose shape depends only on how many descriptors there are,
//! so permuting spatial positions gives bit-identical output.

use std::cmp::Ordering;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sketch::{accumulate_location_grad, sketch_spectrum, upstream_spectrum, TensorSketchParams};
use crate::tensor::{dot_unchecked, ifft_in_place, l2_norm, Tensor};

/// Multiple of `log2(d)·ε·Σ‖x‖₁²` under which pooled entries count as zero.
const ROUNDOFF_ULPS: f64 = 16.0;

/// Below this magnitude the signed square root uses the slope at `SQRT_EPS`.
pub const SQRT_EPS: f64 = 1e-8;
/// Norm floor for L2 normalization; the zero vector maps to itself.
pub const NORM_EPS: f64 = 1e-12;

/// An `H × W × C` grid of local descriptors.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    values: Tensor,
}

impl FeatureMap {
    pub fn new(values: Tensor) -> Result<Self> {
        if values.rank() != 3 {
            return Err(Error::dim(format!("feature map must be [H, W, C], got shape {:?}", values.shape())));
        }
        Ok(FeatureMap { values })
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        FeatureMap::new(Tensor::new(vec![height, width, channels], data)?)
    }

    pub fn height(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn into_values(self) -> Tensor {
        self.values
    }

    /// Descriptor at row-major location index `loc`.
    pub fn descriptor(&self, loc: usize) -> &[f64] {
        let c = self.channels();
        &self.values.data()[loc * c..(loc + 1) * c]
    }

    pub fn locations(&self) -> usize {
        self.height() * self.width()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    RawPooled,
    SignedSqrt,
    L2Normalized,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PooledEmbedding {
    pub stage: Stage,
    pub values: Vec<f64>,
}

fn check_channels(f: &FeatureMap, p: &TensorSketchParams) -> Result<()> {
    if f.channels() != p.input_dim() {
        return Err(Error::dim(format!("feature map has {} channels, sketch expects {}", f.channels(), p.input_dim())));
    }
    Ok(())
}

fn lexicographic(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            other => return other,
        }
    }
    Ordering::Equal
}

/// Non-zero descriptor locations in canonical (value-sorted) order.
fn canonical_locations(f: &FeatureMap) -> Vec<usize> {
    let mut locs: Vec<usize> = (0..f.locations()).filter(|&l| f.descriptor(l).iter().any(|&v| v != 0.0)).collect();
    locs.sort_by(|&a, &b| lexicographic(f.descriptor(a), f.descriptor(b)));
    locs
}

/// Pairwise summation whose association pattern depends only on the number
/// of pushed items.
struct PairwiseSum {
    stack: Vec<(u32, Vec<Complex64>)>,
}

impl PairwiseSum {
    fn new() -> Self {
        PairwiseSum { stack: Vec::new() }
    }

    fn push(&mut self, mut item: Vec<Complex64>) {
        let mut level = 0;
        while let Some((top_level, _)) = self.stack.last() {
            if *top_level != level {
                break;
            }
            let (_, left) = self.stack.pop().expect("non-empty");
            for (l, r) in item.iter_mut().zip(left) {
                *l = r + *l;
            }
            level += 1;
        }
        self.stack.push((level, item));
    }

    fn finish(mut self, len: usize) -> Vec<Complex64> {
        let Some((_, mut acc)) = self.stack.pop() else {
            return vec![Complex64::new(0.0, 0.0); len];
        };
        while let Some((_, left)) = self.stack.pop() {
            for (a, l) in acc.iter_mut().zip(left) {
                *a = l + *a;
            }
        }
        acc
    }
}

/// Sum over all locations of the Tensor Sketch of each descriptor.
pub fn cbp_forward(f: &FeatureMap, p: &TensorSketchParams) -> Result<PooledEmbedding> {
    check_channels(f, p)?;
    let mut sum = PairwiseSum::new();
    let mut mass = 0.0;
    for loc in canonical_locations(f) {
        let x = f.descriptor(loc);
        let l1: f64 = x.iter().map(|v| v.abs()).sum();
        mass += l1 * l1;
        sum.push(sketch_spectrum(x, p));
    }
    let d = p.output_dim();
    let mut pooled = sum.finish(d);
    ifft_in_place(&mut pooled);
    // Every entry is bounded by `mass`. Entries within the transform's
    // round-off of zero are exactly zero in exact arithmetic (empty or
    // cancelling buckets, dead channels) and are flushed so the square root
    // does not amplify the noise.
    let floor = ROUNDOFF_ULPS * (d as f64).log2().max(1.0) * f64::EPSILON * mass;
    Ok(PooledEmbedding {
        stage: Stage::RawPooled,
        values: pooled.into_iter().map(|c| if c.re.abs() <= floor { 0.0 } else { c.re }).collect(),
    })
}

pub fn signed_sqrt(v: &[f64]) -> Vec<f64> {
    v.iter().map(|&x| x.signum() * x.abs().sqrt()).map(|x| if x == 0.0 { 0.0 } else { x }).collect()
}

/// Backward of [`signed_sqrt`] at input `v`, with the slope clamped for
/// `|v| < SQRT_EPS`.
pub fn signed_sqrt_backward(v: &[f64], upstream: &[f64]) -> Vec<f64> {
    v.iter().zip(upstream).map(|(&x, &g)| g / (2.0 * x.abs().max(SQRT_EPS).sqrt())).collect()
}

pub fn l2_normalize(v: &[f64]) -> Vec<f64> {
    let n = l2_norm(v).max(NORM_EPS);
    v.iter().map(|x| x / n).collect()
}

/// Backward of [`l2_normalize`] at input `v`.
pub fn l2_normalize_backward(v: &[f64], upstream: &[f64]) -> Vec<f64> {
    let n = l2_norm(v);
    if n <= NORM_EPS {
        return upstream.iter().map(|g| g / NORM_EPS).collect();
    }
    let y: Vec<f64> = v.iter().map(|x| x / n).collect();
    let proj = dot_unchecked(&y, upstream);
    upstream.iter().zip(&y).map(|(g, yi)| (g - yi * proj) / n).collect()
}

/// Intermediate values of the full pooling chain, kept for backward.
#[derive(Clone, Debug)]
pub struct CbpTrace {
    pub raw: Vec<f64>,
    pub rooted: Vec<f64>,
    pub normalized: Vec<f64>,
}

/// Pooling followed by signed square root and L2 normalization.
pub fn cbp_embed_traced(f: &FeatureMap, p: &TensorSketchParams) -> Result<CbpTrace> {
    let raw = cbp_forward(f, p)?.values;
    let rooted = signed_sqrt(&raw);
    let normalized = l2_normalize(&rooted);
    Ok(CbpTrace { raw, rooted, normalized })
}

pub fn cbp_embed(f: &FeatureMap, p: &TensorSketchParams) -> Result<PooledEmbedding> {
    Ok(PooledEmbedding { stage: Stage::L2Normalized, values: cbp_embed_traced(f, p)?.normalized })
}

/// Gradient of the full chain (`cbp_embed`) with respect to the feature map.
pub fn cbp_backward(f: &FeatureMap, p: &TensorSketchParams, upstream: &[f64]) -> Result<FeatureMap> {
    let trace = cbp_embed_traced(f, p)?;
    cbp_backward_traced(f, p, &trace, upstream)
}

pub fn cbp_backward_traced(
    f: &FeatureMap,
    p: &TensorSketchParams,
    trace: &CbpTrace,
    upstream: &[f64],
) -> Result<FeatureMap> {
    check_channels(f, p)?;
    if upstream.len() != p.output_dim() {
        return Err(Error::dim(format!(
            "upstream gradient has length {}, expected {}",
            upstream.len(),
            p.output_dim()
        )));
    }
    let g_rooted = l2_normalize_backward(&trace.rooted, upstream);
    let g_raw = signed_sqrt_backward(&trace.raw, &g_rooted);
    pooled_backward(f, p, &g_raw)
}

/// Gradient of the raw sum-pooled sketch given `∂L/∂raw`.
pub fn pooled_backward(f: &FeatureMap, p: &TensorSketchParams, g_raw: &[f64]) -> Result<FeatureMap> {
    check_channels(f, p)?;
    let c = f.channels();
    let mut grad = vec![0.0; f.values().len()];
    if g_raw.iter().any(|&g| g != 0.0) {
        let g_hat = upstream_spectrum(g_raw);
        for loc in 0..f.locations() {
            let x = f.descriptor(loc);
            // The sketch is quadratic, so its Jacobian vanishes at zero.
            if x.iter().all(|&v| v == 0.0) {
                continue;
            }
            accumulate_location_grad(x, p, &g_hat, &mut grad[loc * c..(loc + 1) * c]);
        }
    }
    FeatureMap::from_vec(f.height(), f.width(), c, grad)
}
