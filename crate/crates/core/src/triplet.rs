//! Triplet hinge loss, triplet sampling and shared-weight retrieval training.
//!
//! A triplet `⟨q, p, n⟩` pairs a query with a positive of the same item and
//! a negative of a different item. The loss is
//! `max(0, g + D(p, q) − D(q, n))` with `D` the squared Euclidean distance.
//! All three branches run through the one [`NetworkState`], so their
//! gradients land in a single parameter set.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Domain, Manifest};
use crate::error::{ensure_same_len, Error, Result};
use crate::net::{backward, forward_range, sgd_momentum_step, stack, NetworkSpec, NetworkState, OptimizerConfig};
use crate::tensor::Tensor;

/// A manifest row referenced by image id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRef {
    pub image_id: String,
    pub row: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub q: SampleRef,
    pub p: SampleRef,
    pub n: SampleRef,
}

impl Triplet {
    /// Resolves ids against `manifest` and checks the item constraints.
    pub fn from_ids(manifest: &Manifest, q: &str, p: &str, n: &str) -> Result<Triplet> {
        let lookup = |id: &str| {
            manifest
                .row(id)
                .map(|row| SampleRef { image_id: id.to_string(), row })
                .ok_or_else(|| Error::data(format!("image {id:?} is not in the manifest")))
        };
        let t = Triplet { q: lookup(q)?, p: lookup(p)?, n: lookup(n)? };
        t.validate(manifest)?;
        Ok(t)
    }

    /// `item(q) == item(p)`, `item(q) != item(n)`, and every reference
    /// points at the row holding its id.
    pub fn validate(&self, manifest: &Manifest) -> Result<()> {
        let entry = |r: &SampleRef| {
            manifest.entries().get(r.row).filter(|e| e.image_id == r.image_id).ok_or_else(|| {
                Error::data(format!("triplet reference {:?} (row {}) does not match the manifest", r.image_id, r.row))
            })
        };
        let (q, p, n) = (entry(&self.q)?, entry(&self.p)?, entry(&self.n)?);
        if q.item_id != p.item_id {
            return Err(Error::data(format!(
                "triplet ({}, {}, {}): positive has item {:?}, query has {:?}",
                q.image_id, p.image_id, n.image_id, p.item_id, q.item_id
            )));
        }
        if q.item_id == n.item_id {
            return Err(Error::data(format!(
                "triplet ({}, {}, {}): negative shares item {:?} with the query",
                q.image_id, p.image_id, n.image_id, q.item_id
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripletLossConfig {
    /// Margin `g`.
    pub margin: f64,
}

impl Default for TripletLossConfig {
    fn default() -> Self {
        TripletLossConfig { margin: 1.0 }
    }
}

impl TripletLossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::config(format!("margin {} must be non-negative", self.margin)));
        }
        Ok(())
    }
}

pub fn squared_euclidean(a: &[f64], b: &[f64]) -> Result<f64> {
    ensure_same_len("squared distance", a.len(), b.len())?;
    Ok(a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum())
}

/// Hinge argument `g + D(p, q) − D(q, n)`.
fn hinge(q: &[f64], p: &[f64], n: &[f64], cfg: &TripletLossConfig) -> Result<f64> {
    ensure_same_len("triplet (q, p)", q.len(), p.len())?;
    ensure_same_len("triplet (q, n)", q.len(), n.len())?;
    Ok(cfg.margin + squared_euclidean(p, q)? - squared_euclidean(q, n)?)
}

pub fn triplet_loss(q: &[f64], p: &[f64], n: &[f64], cfg: &TripletLossConfig) -> Result<f64> {
    Ok(hinge(q, p, n, cfg)?.max(0.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TripletGrad {
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    pub n: Vec<f64>,
}

/// Gradients of [`triplet_loss`]. At or below the hinge (loss 0) all three
/// are zero. Otherwise `∂L/∂q = 2(n − p)`, `∂L/∂p = 2(p − q)`,
/// `∂L/∂n = 2(q − n)`.
pub fn triplet_loss_grad(q: &[f64], p: &[f64], n: &[f64], cfg: &TripletLossConfig) -> Result<TripletGrad> {
    let d = q.len();
    if hinge(q, p, n, cfg)? <= 0.0 {
        return Ok(TripletGrad { q: vec![0.0; d], p: vec![0.0; d], n: vec![0.0; d] });
    }
    let pair = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| 2.0 * (x - y)).collect::<Vec<_>>();
    Ok(TripletGrad { q: pair(n, p), p: pair(p, q), n: pair(q, n) })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingStrategy {
    /// Negative item uniform over all other items.
    UniformRandomNegative,
    /// Negative item uniform over other items of the query's category.
    SameCategoryNegative,
    /// Consumer query; shop positive and shop negative.
    CrossDomain,
}

impl SamplingStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            SamplingStrategy::UniformRandomNegative => "uniform_random_negative",
            SamplingStrategy::SameCategoryNegative => "same_category_negative",
            SamplingStrategy::CrossDomain => "cross_domain",
        }
    }
}

impl fmt::Display for SamplingStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SamplingStrategy {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        [SamplingStrategy::UniformRandomNegative, SamplingStrategy::SameCategoryNegative, SamplingStrategy::CrossDomain]
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown sampling strategy {s:?}"))
    }
}

/// For each eligible query row, the rows it may take its positive from.
struct Pools {
    /// `(query row, positive candidates)`.
    queries: Vec<(usize, Vec<usize>)>,
    /// Negative candidate rows per item, for items that may serve as
    /// negatives.
    negatives: BTreeMap<String, Vec<usize>>,
}

fn build_pools(manifest: &Manifest, strategy: SamplingStrategy) -> Result<Pools> {
    let by_item = manifest.rows_by_item();
    let entries = manifest.entries();
    if by_item.len() < 2 {
        return Err(Error::data(format!("triplets need at least two distinct items, manifest has {}", by_item.len())));
    }
    let mut queries = Vec::new();
    let mut negatives = BTreeMap::new();
    let mut offending = Vec::new();
    for (item, rows) in &by_item {
        let (q_rows, p_rows): (Vec<usize>, Vec<usize>) = match strategy {
            SamplingStrategy::CrossDomain => (
                rows.iter().copied().filter(|&r| entries[r].domain == Domain::Consumer).collect(),
                rows.iter().copied().filter(|&r| entries[r].domain == Domain::Shop).collect(),
            ),
            _ => (rows.clone(), rows.clone()),
        };
        if !p_rows.is_empty() {
            negatives.insert(item.to_string(), p_rows.clone());
        }
        let mut any = false;
        for &q in &q_rows {
            let pos: Vec<usize> = p_rows.iter().copied().filter(|&p| p != q).collect();
            if !pos.is_empty() {
                queries.push((q, pos));
                any = true;
            }
        }
        if !any {
            offending.push(item.to_string());
        }
    }
    if queries.is_empty() {
        let what = match strategy {
            SamplingStrategy::CrossDomain => "a consumer image and a shop image",
            _ => "two images",
        };
        return Err(Error::data(format!(
            "no item has {what} to form a positive pair; offending items: {}",
            offending.join(", ")
        )));
    }
    Ok(Pools { queries, negatives })
}

/// Draws `count` triplets. Deterministic for a given manifest, strategy and
/// seed.
pub fn sample_triplets(
    manifest: &Manifest,
    count: usize,
    strategy: SamplingStrategy,
    seed: u64,
) -> Result<Vec<Triplet>> {
    let pools = build_pools(manifest, strategy)?;
    let entries = manifest.entries();
    let items: Vec<&String> = pools.negatives.keys().collect();
    // Negative items available to each query item.
    let mut neg_items: BTreeMap<&str, Vec<&String>> = BTreeMap::new();
    let mut queries = Vec::with_capacity(pools.queries.len());
    let mut unserved = Vec::new();
    for (q, pos) in &pools.queries {
        let e = &entries[*q];
        let cands = neg_items.entry(e.item_id.as_str()).or_insert_with(|| {
            items
                .iter()
                .copied()
                .filter(|it| **it != e.item_id)
                .filter(|it| {
                    strategy != SamplingStrategy::SameCategoryNegative
                        || entries[pools.negatives[*it][0]].category == e.category
                })
                .collect()
        });
        if cands.is_empty() {
            unserved.push(e.item_id.clone());
        } else {
            queries.push((*q, pos));
        }
    }
    if queries.is_empty() {
        unserved.dedup();
        return Err(Error::data(format!(
            "no negative item is available for any query; offending items: {}",
            unserved.join(", ")
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let reference = |row: usize| SampleRef { image_id: entries[row].image_id.clone(), row };
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let (q, pos) = queries[rng.gen_range(0..queries.len())];
        let p = pos[rng.gen_range(0..pos.len())];
        let cands = &neg_items[entries[q].item_id.as_str()];
        let neg_item = cands[rng.gen_range(0..cands.len())];
        let neg_rows = &pools.negatives[neg_item];
        let n = neg_rows[rng.gen_range(0..neg_rows.len())];
        out.push(Triplet { q: reference(q), p: reference(p), n: reference(n) });
    }
    Ok(out)
}

/// Reads `q<TAB>p<TAB>n` lines; blank lines and `#` comments are skipped.
pub fn read_triplets<R: BufRead>(r: R, manifest: &Manifest) -> Result<Vec<Triplet>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let ids: Vec<&str> = body.split('\t').map(str::trim).collect();
        if ids.len() != 3 {
            return Err(Error::data(format!(
                "triplet file line {}: expected 3 tab-separated ids, found {}",
                i + 1,
                ids.len()
            )));
        }
        let t = Triplet::from_ids(manifest, ids[0], ids[1], ids[2])
            .map_err(|e| Error::data(format!("triplet file line {}: {e}", i + 1)))?;
        out.push(t);
    }
    Ok(out)
}

pub fn write_triplets<W: Write>(mut w: W, triplets: &[Triplet]) -> Result<()> {
    writeln!(w, "# query\tpositive\tnegative")?;
    for t in triplets {
        writeln!(w, "{}\t{}\t{}", t.q.image_id, t.p.image_id, t.n.image_id)?;
    }
    Ok(())
}

pub fn load_triplets(path: &Path, manifest: &Manifest) -> Result<Vec<Triplet>> {
    let f = std::fs::File::open(path)
        .map_err(|e| Error::data(format!("cannot open triplet file {}: {e}", path.display())))?;
    read_triplets(std::io::BufReader::new(f), manifest)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalTrainConfig {
    pub loss: TripletLossConfig,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for RetrievalTrainConfig {
    fn default() -> Self {
        RetrievalTrainConfig {
            loss: TripletLossConfig::default(),
            optimizer: OptimizerConfig::retrieval(),
            epochs: 10,
            batch_size: 16,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TripletEpoch {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Fraction of triplets with a positive loss.
    pub active_fraction: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TripletTrainLog {
    /// Mean loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
    pub epochs: Vec<TripletEpoch>,
}

/// Trains the embedding (the layers up to and including the pooling layer)
/// on `triplets`. `images[r]` is the preprocessed image of manifest row `r`.
/// Each batch runs all three branches through `state`, sums their
/// gradients (triplet losses are averaged over the batch) and takes one
/// optimizer step, even when every triplet in the batch is inactive.
pub fn train_retrieval(
    spec: &NetworkSpec,
    state: &mut NetworkState,
    manifest: &Manifest,
    images: &[Tensor],
    triplets: &[Triplet],
    cfg: &RetrievalTrainConfig,
) -> Result<TripletTrainLog> {
    state.check_against(spec)?;
    cfg.loss.validate()?;
    cfg.optimizer.validate()?;
    if spec.cbp_index().is_none() {
        return Err(Error::config("retrieval training needs a pooling layer"));
    }
    if triplets.is_empty() {
        return Err(Error::config("no triplets to train on"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    ensure_same_len("images per manifest row", images.len(), manifest.len())?;
    for t in triplets {
        t.validate(manifest)?;
    }
    let end = spec.embedding_end();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(3);
    let mut order: Vec<usize> = (0..triplets.len()).collect();
    let mut log = TripletTrainLog::default();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut active) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let refs: Vec<&Tensor> = batch
                .iter()
                .flat_map(|&i| {
                    let t = &triplets[i];
                    [&images[t.q.row], &images[t.p.row], &images[t.n.row]]
                })
                .collect();
            let pass = forward_range(spec, state, &stack(&refs)?, 0..end)?;
            let d = pass.sample_output(0).len();
            let scale = 1.0 / batch.len() as f64;
            let mut grad = Vec::with_capacity(refs.len() * d);
            let mut batch_loss = 0.0;
            for j in 0..batch.len() {
                let (q, p, n) =
                    (pass.sample_output(3 * j), pass.sample_output(3 * j + 1), pass.sample_output(3 * j + 2));
                let l = triplet_loss(q, p, n, &cfg.loss)?;
                batch_loss += l;
                if l > 0.0 {
                    active += 1;
                }
                let g = triplet_loss_grad(q, p, n, &cfg.loss)?;
                for part in [g.q, g.p, g.n] {
                    grad.extend(part.into_iter().map(|v| v * scale));
                }
            }
            let grads = backward(spec, state, &pass, &Tensor::new(vec![refs.len(), d], grad)?, cfg.optimizer.scope)?;
            sgd_momentum_step(spec, state, &grads, &cfg.optimizer)?;
            loss_sum += batch_loss;
            log.step_losses.push(batch_loss * scale);
        }
        log.epochs.push(TripletEpoch {
            epoch,
            mean_loss: loss_sum / triplets.len() as f64,
            active_fraction: active as f64 / triplets.len() as f64,
        });
    }
    Ok(log)
}
