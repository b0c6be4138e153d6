use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use ::image::codecs::pnm::{PnmDecoder, PnmEncoder, PnmSubtype, SampleEncoding};
use ::image::{DynamicImage, ExtendedColorType, ImageEncoder};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Conventional ImageNet RGB means (0–255 scale).
pub const IMAGENET_MEANS: [f64; 3] = [123.68, 116.779, 103.939];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub resize_to: usize,
    pub crop_to: usize,
    pub channel_means: [f64; 3],
}

impl Default for PreprocessConfig {
    /// Desk scale: resize 64, crop 56.
    fn default() -> Self {
        PreprocessConfig { resize_to: 64, crop_to: 56, channel_means: IMAGENET_MEANS }
    }
}

impl PreprocessConfig {
    /// Full scale: resize 512, crop 448.
    pub fn full_scale() -> Self {
        PreprocessConfig { resize_to: 512, crop_to: 448, channel_means: IMAGENET_MEANS }
    }

    pub fn validate(&self) -> Result<()> {
        if self.crop_to == 0 || self.resize_to == 0 {
            return Err(Error::config("resize and crop sizes must be positive"));
        }
        if self.crop_to > self.resize_to {
            return Err(Error::config(format!("crop {} exceeds resize {}", self.crop_to, self.resize_to)));
        }
        if self.channel_means.iter().any(|m| !m.is_finite()) {
            return Err(Error::config("channel means must be finite"));
        }
        Ok(())
    }
}

fn rgb_dims(img: &Tensor) -> Result<(usize, usize)> {
    match *img.shape() {
        [h, w, 3] if h > 0 && w > 0 => Ok((h, w)),
        ref s => Err(Error::data(format!("expected an [H, W, 3] image, got shape {s:?}"))),
    }
}

/// Bilinear resampling with pixel centers at half-integer positions and
/// edge clamping.
pub fn bilinear_resize(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let (h, w) = rgb_dims(img)?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::config("resize target must be positive"));
    }
    let src = img.data();
    let taps = |out: usize, inp: usize| -> Vec<(usize, usize, f64)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let pos = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(inp - 1);
                (lo, hi, pos - lo as f64)
            })
            .collect()
    };
    let ys = taps(out_h, h);
    let xs = taps(out_w, w);
    let mut out = Vec::with_capacity(out_h * out_w * 3);
    for &(y0, y1, fy) in &ys {
        for &(x0, x1, fx) in &xs {
            for c in 0..3 {
                let at = |y: usize, x: usize| src[(y * w + x) * 3 + c];
                let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
                let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Tensor::new(vec![out_h, out_w, 3], out)
}

/// Central `size × size` window; odd margins leave the extra pixel at the
/// bottom/right.
pub fn center_crop(img: &Tensor, size: usize) -> Result<Tensor> {
    let (h, w) = rgb_dims(img)?;
    if size == 0 || size > h || size > w {
        return Err(Error::config(format!("cannot crop {size}×{size} from {h}×{w}")));
    }
    let (top, left) = ((h - size) / 2, (w - size) / 2);
    let mut out = Vec::with_capacity(size * size * 3);
    for y in top..top + size {
        let row = (y * w + left) * 3;
        out.extend_from_slice(&img.data()[row..row + size * 3]);
    }
    Tensor::new(vec![size, size, 3], out)
}

/// Resize to `resize_to²`, center crop to `crop_to²`, subtract the channel
/// means.
pub fn preprocess(img: &Tensor, cfg: &PreprocessConfig) -> Result<Tensor> {
    cfg.validate()?;
    rgb_dims(img)?;
    let resized = if img.shape()[..2] == [cfg.resize_to, cfg.resize_to] {
        img.clone()
    } else {
        bilinear_resize(img, cfg.resize_to, cfg.resize_to)?
    };
    let mut out = center_crop(&resized, cfg.crop_to)?;
    for px in out.data_mut().chunks_mut(3) {
        for (v, m) in px.iter_mut().zip(cfg.channel_means) {
            *v -= m;
        }
    }
    Ok(out)
}

/// Per-channel mean over all pixels of all images.
pub fn channel_means(images: &[Tensor]) -> Result<[f64; 3]> {
    let mut sum = [0.0; 3];
    let mut count = 0usize;
    for img in images {
        rgb_dims(img)?;
        for px in img.data().chunks(3) {
            for c in 0..3 {
                sum[c] += px[c];
            }
        }
        count += img.len() / 3;
    }
    if count == 0 {
        return Err(Error::data("no pixels to average"));
    }
    Ok(sum.map(|s| s / count as f64))
}

/// Decodes a binary PPM (P6) into an `[H, W, 3]` tensor on the 0–255 scale.
pub fn read_ppm<R: BufRead>(r: R) -> Result<Tensor> {
    let decoder = PnmDecoder::new(r).map_err(|e| Error::data(format!("bad PPM: {e}")))?;
    let img = DynamicImage::from_decoder(decoder).map_err(|e| Error::data(format!("bad PPM: {e}")))?;
    if img.color().channel_count() != 3 {
        return Err(Error::data(format!("expected a 3-channel image, got {} channel(s)", img.color().channel_count())));
    }
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    let data = rgb.into_raw().into_iter().map(f64::from).collect();
    Tensor::new(vec![h as usize, w as usize, 3], data)
}

/// Encodes an `[H, W, 3]` tensor as binary PPM, rounding and clamping
/// values to 0–255.
pub fn write_ppm<W: Write>(w: W, img: &Tensor) -> Result<()> {
    let (h, wd) = rgb_dims(img)?;
    let bytes: Vec<u8> = img.data().iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect();
    PnmEncoder::new(w)
        .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
        .write_image(&bytes, wd as u32, h as u32, ExtendedColorType::Rgb8)
        .map_err(|e| Error::data(format!("PPM encode failed: {e}")))
}

/// Loads a `.ppm`/`.pnm` file or a `.cbpt` tensor holding an `[H, W, 3]`
/// image.
pub fn load_image(path: &Path) -> Result<Tensor> {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).unwrap_or_default();
    let open = || File::open(path).map_err(|e| Error::data(format!("cannot open image {}: {e}", path.display())));
    match ext.as_str() {
        "ppm" | "pnm" => read_ppm(BufReader::new(open()?)).map_err(|e| Error::data(format!("{}: {e}", path.display()))),
        "cbpt" => {
            let t = Tensor::read_from(&mut BufReader::new(open()?))?;
            rgb_dims(&t)?;
            Ok(t)
        }
        _ => Err(Error::data(format!("{}: unsupported image format (convert to binary PPM or CBPT)", path.display()))),
    }
}

pub fn save_image(path: &Path, img: &Tensor) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_ppm(&mut w, img)?;
    w.flush()?;
    Ok(())
}
