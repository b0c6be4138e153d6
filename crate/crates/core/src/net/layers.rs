//! Per-sample layer kernels on flat row-major buffers.
//!
//! Spatial activations are `[H, W, C]`; conv weights are `[out, k, k, in]`
//! so that one output channel's filter is a contiguous row matching an
//! im2col patch.

use crate::tensor::{axpy, dot_unchecked};

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeom {
    pub fn out_h(&self) -> usize {
        (self.h + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn out_w(&self) -> usize {
        (self.w + 2 * self.pad - self.kernel) / self.stride + 1
    }

    pub fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.c
    }

    /// Calls `f(patch_row, ky, kx, input_offset)` for every in-bounds tap.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize, usize)) {
        let (oh, ow) = (self.out_h(), self.out_w());
        for oy in 0..oh {
            for ox in 0..ow {
                let row = oy * ow + ox;
                for ky in 0..self.kernel {
                    let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                    if iy < 0 || iy >= self.h as isize {
                        continue;
                    }
                    for kx in 0..self.kernel {
                        let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                        if ix < 0 || ix >= self.w as isize {
                            continue;
                        }
                        f(row, ky, kx, (iy as usize * self.w + ix as usize) * self.c);
                    }
                }
            }
        }
    }

    fn im2col(&self, input: &[f64]) -> Vec<f64> {
        let k = self.patch_len();
        let c = self.c;
        let mut cols = vec![0.0; self.out_h() * self.out_w() * k];
        self.for_each_tap(|row, ky, kx, off| {
            let dst = row * k + (ky * self.kernel + kx) * c;
            cols[dst..dst + c].copy_from_slice(&input[off..off + c]);
        });
        cols
    }

    fn col2im(&self, cols: &[f64]) -> Vec<f64> {
        let k = self.patch_len();
        let c = self.c;
        let mut out = vec![0.0; self.h * self.w * c];
        self.for_each_tap(|row, ky, kx, off| {
            let src = row * k + (ky * self.kernel + kx) * c;
            for (o, v) in out[off..off + c].iter_mut().zip(&cols[src..src + c]) {
                *o += v;
            }
        });
        out
    }
}

pub(crate) fn conv_forward(g: &ConvGeom, input: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let k = g.patch_len();
    let cols = g.im2col(input);
    let rows = g.out_h() * g.out_w();
    let mut out = Vec::with_capacity(rows * g.out_ch);
    for r in 0..rows {
        let patch = &cols[r * k..(r + 1) * k];
        for o in 0..g.out_ch {
            out.push(dot_unchecked(patch, &weight[o * k..(o + 1) * k]) + bias[o]);
        }
    }
    out
}

pub(crate) struct ConvGrads {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub input: Option<Vec<f64>>,
}

pub(crate) fn conv_backward(
    g: &ConvGeom,
    input: &[f64],
    weight: &[f64],
    dout: &[f64],
    need_input_grad: bool,
) -> ConvGrads {
    let k = g.patch_len();
    let cols = g.im2col(input);
    let rows = g.out_h() * g.out_w();
    let mut dw = vec![0.0; g.out_ch * k];
    let mut db = vec![0.0; g.out_ch];
    let mut dcols = if need_input_grad { vec![0.0; rows * k] } else { Vec::new() };
    for r in 0..rows {
        let patch = &cols[r * k..(r + 1) * k];
        for o in 0..g.out_ch {
            let go = dout[r * g.out_ch + o];
            if go == 0.0 {
                continue;
            }
            db[o] += go;
            axpy(go, patch, &mut dw[o * k..(o + 1) * k]);
            if need_input_grad {
                axpy(go, &weight[o * k..(o + 1) * k], &mut dcols[r * k..(r + 1) * k]);
            }
        }
    }
    ConvGrads { weight: dw, bias: db, input: need_input_grad.then(|| g.col2im(&dcols)) }
}

pub(crate) fn relu_forward(input: &[f64]) -> Vec<f64> {
    input.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

pub(crate) fn relu_backward(input: &[f64], dout: &[f64]) -> Vec<f64> {
    input.iter().zip(dout).map(|(&x, &g)| if x > 0.0 { g } else { 0.0 }).collect()
}

/// Returns the pooled map and, per output, the flat input index that won.
/// Ties go to the first maximum in scan order.
pub(crate) fn maxpool_forward(input: &[f64], shape: &[usize], window: usize, stride: usize) -> (Vec<f64>, Vec<u32>) {
    let (h, w, c) = (shape[0], shape[1], shape[2]);
    let oh = (h - window) / stride + 1;
    let ow = (w - window) / stride + 1;
    let mut out = Vec::with_capacity(oh * ow * c);
    let mut arg = Vec::with_capacity(oh * ow * c);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best = f64::NEG_INFINITY;
                let mut best_idx = 0usize;
                for ky in 0..window {
                    for kx in 0..window {
                        let idx = ((oy * stride + ky) * w + ox * stride + kx) * c + ch;
                        if input[idx] > best || (ky == 0 && kx == 0) {
                            best = input[idx];
                            best_idx = idx;
                        }
                    }
                }
                out.push(best);
                arg.push(best_idx as u32);
            }
        }
    }
    (out, arg)
}

pub(crate) fn maxpool_backward(argmax: &[u32], dout: &[f64], input_len: usize) -> Vec<f64> {
    let mut din = vec![0.0; input_len];
    for (&i, &g) in argmax.iter().zip(dout) {
        din[i as usize] += g;
    }
    din
}

pub(crate) fn fc_forward(input: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
    let n = input.len();
    bias.iter().enumerate().map(|(o, b)| dot_unchecked(input, &weight[o * n..(o + 1) * n]) + b).collect()
}

pub(crate) fn fc_backward(input: &[f64], weight: &[f64], dout: &[f64], need_input_grad: bool) -> ConvGrads {
    let n = input.len();
    let mut dw = vec![0.0; dout.len() * n];
    let mut din = if need_input_grad { vec![0.0; n] } else { Vec::new() };
    for (o, &go) in dout.iter().enumerate() {
        if go == 0.0 {
            continue;
        }
        axpy(go, input, &mut dw[o * n..(o + 1) * n]);
        if need_input_grad {
            axpy(go, &weight[o * n..(o + 1) * n], &mut din);
        }
    }
    ConvGrads { weight: dw, bias: dout.to_vec(), input: need_input_grad.then_some(din) }
}
