use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One entry of a layer stack. Activations are per-sample `[H, W, C]` grids
/// until the pooling layer, flat vectors after it.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    Relu,
    MaxPool {
        window: usize,
        stride: usize,
    },
    /// Compact bilinear pooling including signed square root and L2
    /// normalization.
    Cbp {
        d: usize,
        seed: u64,
    },
    FullyConnected {
        inputs: usize,
        outputs: usize,
    },
    /// Marks the stack as a classifier; the preceding output is the logits.
    SoftmaxXent,
}

impl LayerSpec {
    pub fn has_params(&self) -> bool {
        matches!(self, LayerSpec::Conv2d { .. } | LayerSpec::FullyConnected { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::Cbp { .. } => "cbp",
            LayerSpec::FullyConnected { .. } => "fully_connected",
            LayerSpec::SoftmaxXent => "softmax_xent",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Per-sample input shape `[H, W, C]`.
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

fn conv(in_ch: usize, out_ch: usize) -> LayerSpec {
    LayerSpec::Conv2d { in_ch, out_ch, kernel: 3, stride: 1, pad: 1 }
}

const POOL2: LayerSpec = LayerSpec::MaxPool { window: 2, stride: 2 };

impl NetworkSpec {
    /// The desk-scale extractor: three 3×3 conv/relu stages with 2×2 max
    /// pooling between them, then compact bilinear pooling.
    pub fn desk_extractor(input_size: usize, widths: [usize; 3], d: usize, sketch_seed: u64) -> Self {
        let [w1, w2, w3] = widths;
        NetworkSpec {
            input: [input_size, input_size, 3],
            layers: vec![
                conv(3, w1),
                LayerSpec::Relu,
                POOL2,
                conv(w1, w2),
                LayerSpec::Relu,
                POOL2,
                conv(w2, w3),
                LayerSpec::Relu,
                LayerSpec::Cbp { d, seed: sketch_seed },
            ],
        }
    }

    /// VGG16 up to the last conv/relu, then compact bilinear pooling.
    pub fn vgg16_extractor(input_size: usize, d: usize, sketch_seed: u64) -> Self {
        let blocks: [(usize, usize); 5] = [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)];
        let mut layers = Vec::new();
        let mut ch = 3;
        for (bi, &(width, reps)) in blocks.iter().enumerate() {
            for _ in 0..reps {
                layers.push(conv(ch, width));
                layers.push(LayerSpec::Relu);
                ch = width;
            }
            if bi + 1 < blocks.len() {
                layers.push(POOL2);
            }
        }
        layers.push(LayerSpec::Cbp { d, seed: sketch_seed });
        NetworkSpec { input: [input_size, input_size, 3], layers }
    }

    /// Appends a fully connected softmax classifier head.
    pub fn with_classifier(mut self, num_classes: usize) -> Result<Self> {
        let shapes = self.shapes()?;
        let inputs = shapes.last().expect("input shape").iter().product();
        self.layers.push(LayerSpec::FullyConnected { inputs, outputs: num_classes });
        self.layers.push(LayerSpec::SoftmaxXent);
        self.shapes()?;
        Ok(self)
    }

    /// Per-sample shapes: `shapes[0]` is the input, `shapes[i + 1]` the
    /// output of layer `i`. Fails if the stack is inconsistent.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input.contains(&0) {
            return Err(Error::config(format!("input shape {:?} has a zero extent", self.input)));
        }
        let mut shapes = vec![self.input.to_vec()];
        let mut seen_cbp = false;
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            let cur = shapes.last().expect("non-empty");
            let bad = |msg: String| Error::config(format!("layer {i} ({}): {msg}", layer.name()));
            let next = match *layer {
                LayerSpec::Conv2d { in_ch, out_ch, kernel, stride, pad } => {
                    if cur.len() != 3 {
                        return Err(bad(format!("needs a spatial input, got {cur:?}")));
                    }
                    if seen_cbp {
                        return Err(bad("convolution after the pooling layer".into()));
                    }
                    if cur[2] != in_ch {
                        return Err(bad(format!("in_ch {in_ch} but input has {} channels", cur[2])));
                    }
                    if kernel == 0 || stride == 0 || out_ch == 0 {
                        return Err(bad("kernel, stride and out_ch must be positive".into()));
                    }
                    let (h, w) = (cur[0] + 2 * pad, cur[1] + 2 * pad);
                    if h < kernel || w < kernel {
                        return Err(bad(format!("kernel {kernel} larger than padded input {h}×{w}")));
                    }
                    vec![(h - kernel) / stride + 1, (w - kernel) / stride + 1, out_ch]
                }
                LayerSpec::Relu => {
                    if seen_cbp {
                        return Err(bad("relu after the pooling layer".into()));
                    }
                    cur.clone()
                }
                LayerSpec::MaxPool { window, stride } => {
                    if cur.len() != 3 {
                        return Err(bad(format!("needs a spatial input, got {cur:?}")));
                    }
                    if window == 0 || stride == 0 || cur[0] < window || cur[1] < window {
                        return Err(bad(format!("window {window} does not fit input {cur:?}")));
                    }
                    vec![(cur[0] - window) / stride + 1, (cur[1] - window) / stride + 1, cur[2]]
                }
                LayerSpec::Cbp { d, .. } => {
                    if seen_cbp {
                        return Err(bad("more than one pooling layer".into()));
                    }
                    if i == 0 || self.layers[i - 1] != LayerSpec::Relu {
                        return Err(bad("must directly follow a relu".into()));
                    }
                    if cur.len() != 3 {
                        return Err(bad(format!("needs a spatial input, got {cur:?}")));
                    }
                    if d == 0 {
                        return Err(bad("output dimension must be positive".into()));
                    }
                    seen_cbp = true;
                    vec![d]
                }
                LayerSpec::FullyConnected { inputs, outputs } => {
                    let flat: usize = cur.iter().product();
                    if flat != inputs {
                        return Err(bad(format!("expects {inputs} inputs, got {flat}")));
                    }
                    if outputs == 0 {
                        return Err(bad("outputs must be positive".into()));
                    }
                    vec![outputs]
                }
                LayerSpec::SoftmaxXent => {
                    if i + 1 != n {
                        return Err(bad("must be the last layer".into()));
                    }
                    if cur.len() != 1 {
                        return Err(bad(format!("needs flat logits, got {cur:?}")));
                    }
                    cur.clone()
                }
            };
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn validate(&self) -> Result<()> {
        self.shapes().map(|_| ())
    }

    pub fn cbp_index(&self) -> Option<usize> {
        self.layers.iter().position(|l| matches!(l, LayerSpec::Cbp { .. }))
    }

    pub fn is_classifier(&self) -> bool {
        matches!(self.layers.last(), Some(LayerSpec::SoftmaxXent))
    }

    pub fn num_classes(&self) -> Option<usize> {
        if !self.is_classifier() {
            return None;
        }
        self.layers.iter().rev().find_map(|l| match l {
            LayerSpec::FullyConnected { outputs, .. } => Some(*outputs),
            _ => None,
        })
    }

    /// Index of the last layer that owns parameters.
    pub fn last_param_layer(&self) -> Option<usize> {
        self.layers.iter().rposition(LayerSpec::has_params)
    }

    /// Number of layers producing the embedding (everything through the
    /// pooling layer), or all layers when there is no pooling layer.
    pub fn embedding_end(&self) -> usize {
        self.cbp_index().map_or(self.layers.len(), |i| i + 1)
    }

    /// Number of layers producing the logits (everything except the loss
    /// marker).
    pub fn logits_end(&self) -> usize {
        if self.is_classifier() {
            self.layers.len() - 1
        } else {
            self.layers.len()
        }
    }
}
