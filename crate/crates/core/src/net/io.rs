//! `CBPW` weights files.
//!
//! Layout: magic `CBPW`, `u32` version, `u32` length + UTF-8 JSON of the
//! [`NetworkSpec`], `u32` count of sketch blocks (0 or 1) followed by the
//! blocks, `u32` tensor count, then weight and bias of every parameterized
//! layer in declaration order as `CBPT` tensors.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{param_shapes, LayerParams, NetworkSpec, NetworkState};
use crate::binio;
use crate::error::{Error, Result};
use crate::sketch::TensorSketchParams;
use crate::tensor::Tensor;

const WEIGHTS_MAGIC: &[u8; 4] = b"CBPW";
pub const WEIGHTS_VERSION: u32 = 1;

pub fn write_weights<W: Write>(w: &mut W, spec: &NetworkSpec, state: &NetworkState) -> Result<()> {
    state.check_against(spec)?;
    w.write_all(WEIGHTS_MAGIC)?;
    binio::write_u32(w, WEIGHTS_VERSION)?;
    let json = serde_json::to_string(spec).map_err(|e| Error::format(e.to_string()))?;
    binio::write_str(w, &json)?;
    match &state.sketch {
        Some(s) if spec.cbp_index().is_some() => {
            binio::write_u32(w, 1)?;
            s.write_to(w)?;
        }
        _ => binio::write_u32(w, 0)?,
    }
    let tensors: Vec<&Tensor> = state.params.iter().flatten().flat_map(|p| [&p.weight, &p.bias]).collect();
    binio::write_u32(w, tensors.len() as u32)?;
    for t in tensors {
        t.write_to(w)?;
    }
    Ok(())
}

pub fn read_weights<R: Read>(r: &mut R) -> Result<(NetworkSpec, NetworkState)> {
    binio::expect_magic(r, WEIGHTS_MAGIC)?;
    let version = binio::read_u32(r, "weights version")?;
    if version != WEIGHTS_VERSION {
        return Err(Error::format(format!("unsupported weights version {version}")));
    }
    let json = binio::read_str(r, "network spec")?;
    let spec: NetworkSpec = serde_json::from_str(&json).map_err(|e| Error::format(format!("network spec: {e}")))?;
    let shapes = spec.shapes()?;
    let sketch_blocks = binio::read_u32(r, "sketch block count")?;
    let sketch = match (sketch_blocks, spec.cbp_index()) {
        (0, None) => None,
        (1, Some(i)) => {
            let s = TensorSketchParams::read_from(r)?;
            if let crate::net::LayerSpec::Cbp { d, seed } = spec.layers[i] {
                if s.output_dim() != d || s.seed() != seed || s.input_dim() != shapes[i][2] {
                    return Err(Error::format("sketch block does not match the pooling layer"));
                }
            }
            Some(s)
        }
        (n, _) => return Err(Error::format(format!("unexpected sketch block count {n}"))),
    };
    let count = binio::read_u32(r, "tensor count")? as usize;
    let expected = spec.layers.iter().filter(|l| l.has_params()).count() * 2;
    if count != expected {
        return Err(Error::format(format!("spec needs {expected} tensors, file has {count}")));
    }
    let mut params = Vec::with_capacity(spec.layers.len());
    for (i, layer) in spec.layers.iter().enumerate() {
        params.push(match param_shapes(layer) {
            None => None,
            Some((ws, bs)) => {
                let weight = Tensor::read_from(r)?;
                let bias = Tensor::read_from(r)?;
                if weight.shape() != ws || bias.shape() != bs {
                    return Err(Error::format(format!(
                        "layer {i} tensors {:?}/{:?} do not match spec {ws:?}/{bs:?}",
                        weight.shape(),
                        bias.shape()
                    )));
                }
                Some(LayerParams { weight, bias })
            }
        });
    }
    let state = NetworkState::from_parts(params, sketch);
    state.check_against(&spec)?;
    Ok((spec, state))
}

pub fn save_weights(path: &Path, spec: &NetworkSpec, state: &NetworkState) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_weights(&mut w, spec, state)?;
    w.flush()?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<(NetworkSpec, NetworkState)> {
    let file = File::open(path).map_err(|e| Error::data(format!("cannot open weights {}: {e}", path.display())))?;
    read_weights(&mut BufReader::new(file))
}
