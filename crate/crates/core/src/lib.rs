//! Compact bilinear pooling embeddings for fine-grained image classification
//! and retrieval.
//!
//! The crate covers the whole pipeline at CPU scale:
//!
//! - [`tensor`]: dense `f64` tensors, DFT and circular convolution.
//! - [`sketch`]: Count Sketch / Tensor Sketch projections and kernel oracles.
//! - [`cbp`]: the compact bilinear pooling layer with its backward pass.
//! - [`net`]: a small trainable conv net with a softmax head and momentum SGD.
//! - [`triplet`]: triplet hinge loss, triplet sampling and retrieval training.
//! - [`retrieval`]: embedding galleries, exact k-NN and top-k evaluation.
//! - [`data`]: manifests, image decoding, preprocessing, synthetic datasets.

mod binio;
pub mod cbp;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod net;
pub mod retrieval;
pub mod sketch;
pub mod tensor;
pub mod triplet;

pub use error::{Error, Result};
pub use tensor::Tensor;
