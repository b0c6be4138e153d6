//! Procedural datasets standing in for real photographs.
//!
//! Every class or item owns an [`ItemStyle`]: a patterned square "garment"
//! made of two colored sinusoidal gratings over a base color. Views of the
//! same style differ by a random similarity transform; consumer views add
//! clutter, a brightness shift, a color cast and an occluder.

use std::f64::consts::PI;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{channel_means, save_image, save_manifest, Domain, Manifest, ManifestEntry, Split, DEFAULT_NUM_CATEGORIES};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SynthKind {
    /// `count` classes, `views` images each; the last fifth of each class
    /// is held out as `test`.
    Classification,
    /// `count` items with `views` shop views each: the last view is a
    /// `query`, the one before it `gallery`, the rest `train`.
    InShop,
    /// `count` items with `views` shop and `consumer_views` consumer views:
    /// view 0 of each domain is `train`, later shop views are `gallery` and
    /// later consumer views `query`.
    CrossDomain,
}

impl FromStr for SynthKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "classification" => Ok(SynthKind::Classification),
            "inshop" | "in_shop" => Ok(SynthKind::InShop),
            "cross_domain" | "cross-domain" => Ok(SynthKind::CrossDomain),
            _ => Err(format!("unknown dataset kind {s:?} (classification, inshop, cross_domain)")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthParams {
    /// Number of classes or items.
    pub count: usize,
    /// Images per class, or shop views per item.
    pub views: usize,
    /// Consumer views per item (cross-domain only).
    pub consumer_views: usize,
    pub image_size: usize,
    /// Standard deviation of additive pixel noise (0–255 scale).
    pub noise: f64,
    /// Largest rotation of a view, in degrees.
    pub max_rotation_deg: f64,
    /// Strength in [0, 1] of background clutter in non-consumer views.
    pub clutter: f64,
    /// Half-width of the item square; the image spans [-1, 1].
    pub item_half_size: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            count: 10,
            views: 4,
            consumer_views: 2,
            image_size: 64,
            noise: 6.0,
            max_rotation_deg: 15.0,
            clutter: 0.0,
            item_half_size: 0.62,
        }
    }
}

impl SynthParams {
    pub fn validate(&self, kind: SynthKind) -> Result<()> {
        if self.count == 0 {
            return Err(Error::config("synthetic dataset needs at least one class or item"));
        }
        if self.image_size < 8 {
            return Err(Error::config(format!("image size {} is below 8", self.image_size)));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::config("noise must be a non-negative number"));
        }
        if !(0.0..=1.0).contains(&self.clutter) {
            return Err(Error::config("clutter must lie in [0, 1]"));
        }
        if !(self.item_half_size > 0.0 && self.item_half_size <= 1.0) {
            return Err(Error::config("item half size must lie in (0, 1]"));
        }
        if !(self.max_rotation_deg >= 0.0 && self.max_rotation_deg.is_finite()) {
            return Err(Error::config("rotation must be a non-negative number"));
        }
        let min_views = match kind {
            SynthKind::Classification => 2,
            SynthKind::InShop => 3,
            SynthKind::CrossDomain => 2,
        };
        if self.views < min_views {
            return Err(Error::config(format!("{kind:?} needs at least {min_views} views, got {}", self.views)));
        }
        if kind == SynthKind::CrossDomain && self.consumer_views < 2 {
            return Err(Error::config("cross-domain data needs at least 2 consumer views"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grating {
    pub angle: f64,
    /// Cycles per unit length of the item frame.
    pub frequency: f64,
    pub phase: f64,
    /// Signed color amplitude per channel.
    pub color: [f64; 3],
}

/// Appearance of one class or item.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ItemStyle {
    pub base: [f64; 3],
    pub gratings: [Grating; 2],
    /// Half-width of the item square in the item frame.
    pub half_size: f64,
}

fn random_color(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> [f64; 3] {
    [rng.gen_range(lo..hi), rng.gen_range(lo..hi), rng.gen_range(lo..hi)]
}

fn random_grating(rng: &mut ChaCha8Rng, angle: f64) -> Grating {
    Grating {
        angle,
        frequency: rng.gen_range(2.0..5.0),
        phase: rng.gen_range(0.0..2.0 * PI),
        color: random_color(rng, -60.0, 60.0),
    }
}

impl ItemStyle {
    /// A random style. For classification, `slot`/`slots` spread the first
    /// grating's orientation evenly so classes stay separable.
    fn draw(rng: &mut ChaCha8Rng, slot: Option<(usize, usize)>, half_size: f64) -> ItemStyle {
        let angle = match slot {
            Some((i, n)) => PI * i as f64 / n as f64,
            None => rng.gen_range(0.0..PI),
        };
        let g0 = random_grating(rng, angle);
        let second = rng.gen_range(0.0..PI);
        let g1 = random_grating(rng, second);
        ItemStyle { base: random_color(rng, 70.0, 185.0), gratings: [g0, g1], half_size }
    }

    /// Color of the item at item-frame point `(a, b)`, or `None` outside it.
    fn color_at(&self, a: f64, b: f64) -> Option<[f64; 3]> {
        if a.abs() > self.half_size || b.abs() > self.half_size {
            return None;
        }
        let mut c = self.base;
        for g in &self.gratings {
            let t = (2.0 * PI * g.frequency * (a * g.angle.cos() + b * g.angle.sin()) + g.phase).sin();
            for (v, gc) in c.iter_mut().zip(g.color) {
                *v += gc * t;
            }
        }
        Some(c)
    }
}

/// Which rendering pipeline a view goes through.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewKind {
    /// Canonical pose on the studio background, no noise.
    Clean,
    /// Random pose, studio background (optionally cluttered), pixel noise.
    Shop,
    /// Random pose plus clutter, brightness shift, color cast and occluder.
    Consumer,
}

const STUDIO: [f64; 3] = [226.0, 226.0, 226.0];

struct Blob {
    cx: f64,
    cy: f64,
    r: f64,
    color: [f64; 3],
}

fn draw_blobs(rng: &mut ChaCha8Rng, n: usize) -> Vec<Blob> {
    (0..n)
        .map(|_| Blob {
            cx: rng.gen_range(-1.0..1.0),
            cy: rng.gen_range(-1.0..1.0),
            r: rng.gen_range(0.12..0.4),
            color: random_color(rng, 0.0, 255.0),
        })
        .collect()
}

/// Renders one view of `style` at `size × size`, values on the 0–255 scale.
pub fn render_view(style: &ItemStyle, kind: ViewKind, params: &SynthParams, rng: &mut ChaCha8Rng) -> Tensor {
    let size = params.image_size;
    let (rot, scale, tx, ty) = match kind {
        ViewKind::Clean => (0.0, 1.0, 0.0, 0.0),
        _ => {
            let max_rot = params.max_rotation_deg.to_radians();
            (
                if max_rot > 0.0 { rng.gen_range(-max_rot..=max_rot) } else { 0.0 },
                rng.gen_range(0.9..1.1),
                rng.gen_range(-0.12..0.12),
                rng.gen_range(-0.12..0.12),
            )
        }
    };
    let clutter = match kind {
        ViewKind::Clean => 0.0,
        ViewKind::Shop => params.clutter,
        ViewKind::Consumer => 1.0,
    };
    let (background, blobs) = if clutter > 0.0 {
        let bg = random_color(rng, 0.0, 255.0);
        let mix = |c: f64, s: f64| s + clutter * (c - s);
        let bg = [mix(bg[0], STUDIO[0]), mix(bg[1], STUDIO[1]), mix(bg[2], STUDIO[2])];
        let n = (8.0 * clutter).round() as usize;
        let mut blobs = draw_blobs(rng, n);
        for b in &mut blobs {
            b.color = [mix(b.color[0], bg[0]), mix(b.color[1], bg[1]), mix(b.color[2], bg[2])];
        }
        (bg, blobs)
    } else {
        (STUDIO, Vec::new())
    };
    let (gain, shift, occluder) = if kind == ViewKind::Consumer {
        let gain = [rng.gen_range(0.75..1.25), rng.gen_range(0.75..1.25), rng.gen_range(0.75..1.25)];
        let shift = rng.gen_range(-40.0..40.0);
        // An axis-aligned occluder hanging off one random edge of the item.
        let w = rng.gen_range(0.25..0.5);
        let h = rng.gen_range(0.25..0.5);
        let (x0, y0) = match rng.gen_range(0..4) {
            0 => (-1.0, rng.gen_range(-0.6..0.2)),
            1 => (1.0 - w, rng.gen_range(-0.6..0.2)),
            2 => (rng.gen_range(-0.6..0.2), -1.0),
            _ => (rng.gen_range(-0.6..0.2), 1.0 - h),
        };
        let color = random_color(rng, 0.0, 255.0);
        ([gain[0], gain[1], gain[2]], shift, Some((x0, y0, w, h, color)))
    } else {
        ([1.0; 3], 0.0, None)
    };
    let noise_sd = if kind == ViewKind::Clean {
        0.0
    } else if kind == ViewKind::Consumer {
        params.noise * 2.0
    } else {
        params.noise
    };
    let normal = Normal::new(0.0, noise_sd.max(f64::MIN_POSITIVE)).expect("valid sd");

    let (sin_r, cos_r) = rot.sin_cos();
    let mut data = Vec::with_capacity(size * size * 3);
    for py in 0..size {
        let v = (py as f64 + 0.5) / size as f64 * 2.0 - 1.0;
        for px in 0..size {
            let u = (px as f64 + 0.5) / size as f64 * 2.0 - 1.0;
            // Inverse pose: image point to item frame.
            let (du, dv) = (u - tx, v - ty);
            let a = (cos_r * du + sin_r * dv) / scale;
            let b = (-sin_r * du + cos_r * dv) / scale;
            let mut c = match style.color_at(a, b) {
                Some(c) => c,
                None => blobs
                    .iter()
                    .rev()
                    .find(|bl| (u - bl.cx).powi(2) + (v - bl.cy).powi(2) <= bl.r * bl.r)
                    .map_or(background, |bl| bl.color),
            };
            if let Some((x0, y0, w, h, color)) = occluder {
                if u >= x0 && u <= x0 + w && v >= y0 && v <= y0 + h {
                    c = color;
                }
            }
            for ch in 0..3 {
                let mut val = c[ch] * gain[ch] + shift;
                if noise_sd > 0.0 {
                    val += normal.sample(rng);
                }
                data.push(val.round().clamp(0.0, 255.0));
            }
        }
    }
    Tensor::new(vec![size, size, 3], data).expect("consistent shape")
}

/// Style RNG for class/item `index`.
fn style_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((1 << 40) | index as u64);
    rng
}

/// View RNG for image `view` of `index` in `domain`.
fn view_rng(seed: u64, index: usize, domain: Domain, view: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((index as u64) << 20) | ((domain.code() as u64) << 16) | view as u64);
    rng
}

/// The style of class/item `index` in a dataset generated with `seed`.
pub fn item_style(kind: SynthKind, params: &SynthParams, seed: u64, index: usize) -> ItemStyle {
    let slot = (kind == SynthKind::Classification).then_some((index, params.count));
    ItemStyle::draw(&mut style_rng(seed, index), slot, params.item_half_size)
}

struct Planned {
    entry: ManifestEntry,
    index: usize,
    kind: ViewKind,
    view: usize,
}

fn plan(kind: SynthKind, p: &SynthParams) -> Vec<Planned> {
    let mut out = Vec::new();
    let digits = p.count.saturating_sub(1).to_string().len().max(3);
    let entry = |image_id: String, category: usize, item_id: String, domain: Domain, split: Split| ManifestEntry {
        path: format!("images/{image_id}.ppm"),
        image_id,
        category,
        item_id,
        domain,
        split,
    };
    for index in 0..p.count {
        match kind {
            SynthKind::Classification => {
                let held_out = (p.views / 5).max(1);
                let item = format!("class{index:0digits$}");
                for view in 0..p.views {
                    let split = if view >= p.views - held_out { Split::Test } else { Split::Train };
                    out.push(Planned {
                        entry: entry(format!("{item}_{view:03}"), index, item.clone(), Domain::Shop, split),
                        index,
                        kind: ViewKind::Shop,
                        view,
                    });
                }
            }
            SynthKind::InShop => {
                let item = format!("item{index:0digits$}");
                for view in 0..p.views {
                    let split = match p.views - view {
                        1 => Split::Query,
                        2 => Split::Gallery,
                        _ => Split::Train,
                    };
                    out.push(Planned {
                        entry: entry(
                            format!("{item}_v{view}"),
                            index % DEFAULT_NUM_CATEGORIES,
                            item.clone(),
                            Domain::Shop,
                            split,
                        ),
                        index,
                        kind: ViewKind::Shop,
                        view,
                    });
                }
            }
            SynthKind::CrossDomain => {
                let item = format!("item{index:0digits$}");
                for (domain, views, view_kind, held) in [
                    (Domain::Shop, p.views, ViewKind::Shop, Split::Gallery),
                    (Domain::Consumer, p.consumer_views, ViewKind::Consumer, Split::Query),
                ] {
                    for view in 0..views {
                        let split = if view == 0 { Split::Train } else { held };
                        out.push(Planned {
                            entry: entry(
                                format!("{item}_{domain}{view}"),
                                index % DEFAULT_NUM_CATEGORIES,
                                item.clone(),
                                domain,
                                split,
                            ),
                            index,
                            kind: view_kind,
                            view,
                        });
                    }
                }
            }
        }
    }
    out
}

/// Renders a dataset in memory: manifest rows paired with their images.
pub fn synthesize(kind: SynthKind, params: &SynthParams, seed: u64) -> Result<Vec<(ManifestEntry, Tensor)>> {
    params.validate(kind)?;
    let styles: Vec<ItemStyle> = (0..params.count).map(|i| item_style(kind, params, seed, i)).collect();
    Ok(plan(kind, params)
        .into_par_iter()
        .map(|pl| {
            let mut rng = view_rng(seed, pl.index, pl.entry.domain, pl.view);
            let img = render_view(&styles[pl.index], pl.kind, params, &mut rng);
            (pl.entry, img)
        })
        .collect())
}

/// Name of the description file written next to a generated manifest.
pub const SYNTH_INFO_FILE: &str = "synth.json";

/// How a generated dataset was made, plus its measured per-channel means.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthInfo {
    pub kind: SynthKind,
    pub params: SynthParams,
    pub seed: u64,
    pub channel_means: [f64; 3],
}

/// Reads `synth.json` from `dir`, if there is one.
pub fn read_synth_info(dir: &Path) -> Result<Option<SynthInfo>> {
    let path = dir.join(SYNTH_INFO_FILE);
    if !path.is_file() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path)?;
    serde_json::from_str(&text).map(Some).map_err(|e| Error::format(format!("{}: {e}", path.display())))
}

/// Writes `images/*.ppm`, `manifest.csv` and `synth.json` under `out_dir`.
pub fn generate_synthetic_dataset(
    kind: SynthKind,
    params: &SynthParams,
    seed: u64,
    out_dir: &Path,
) -> Result<Manifest> {
    let rendered = synthesize(kind, params, seed)?;
    std::fs::create_dir_all(out_dir.join("images"))?;
    rendered.par_iter().try_for_each(|(e, img)| save_image(&out_dir.join(&e.path), img))?;
    let images: Vec<Tensor> = rendered.iter().map(|(_, t)| t.clone()).collect();
    let info = SynthInfo { kind, params: *params, seed, channel_means: channel_means(&images)? };
    let json = serde_json::to_string_pretty(&info).map_err(|e| Error::format(e.to_string()))?;
    std::fs::write(out_dir.join(SYNTH_INFO_FILE), json + "\n")?;
    let entries: Vec<ManifestEntry> = rendered.into_iter().map(|(e, _)| e).collect();
    save_manifest(&out_dir.join("manifest.csv"), &entries)?;
    Manifest::new(entries, params.count.max(DEFAULT_NUM_CATEGORIES))
}
