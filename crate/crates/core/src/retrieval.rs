//! Embedding galleries, exact k-NN search and top-k retrieval accuracy.
//!
//! A query counts as a hit when any of its `k` nearest gallery records has
//! the query's item id. Queries whose item is absent from the gallery are
//! counted as misses and listed in the report.

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::data::{Domain, Manifest, Split};
use crate::error::{Error, Result};
use crate::net::{forward_range, stack, NetworkSpec, NetworkState};
use crate::tensor::{l2_norm, Tensor};

/// Tolerance on `‖v‖₂ = 1` for stored embeddings.
pub const UNIT_NORM_TOL: f64 = 1e-9;

/// Top-k cut-off used when none is given.
pub const DEFAULT_K: usize = 20;

const STORE_MAGIC: &[u8; 4] = b"CBPE";
pub const STORE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingRecord {
    pub image_id: String,
    pub item_id: String,
    pub domain: Domain,
    pub split: Split,
    pub vector: Vec<f64>,
}

/// An immutable, searchable set of embeddings of one dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct Gallery {
    dim: usize,
    records: Vec<EmbeddingRecord>,
}

impl Gallery {
    /// Requires a shared dimension, unique image ids and unit-norm vectors.
    /// An all-zero vector is also accepted: it is what normalization yields
    /// when every pooled feature is zero (a dead network).
    pub fn new(records: Vec<EmbeddingRecord>) -> Result<Gallery> {
        let dim = records.first().map_or(0, |r| r.vector.len());
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            if r.vector.len() != dim {
                return Err(Error::dim(format!(
                    "record {:?} has dimension {}, gallery has {dim}",
                    r.image_id,
                    r.vector.len()
                )));
            }
            let norm = l2_norm(&r.vector);
            if (norm - 1.0).abs() > UNIT_NORM_TOL && norm != 0.0 {
                return Err(Error::data(format!("record {:?} has norm {norm}, expected 1 or 0", r.image_id)));
            }
            if !seen.insert(r.image_id.as_str()) {
                return Err(Error::data(format!("duplicate image id {:?} in gallery", r.image_id)));
            }
        }
        Ok(Gallery { dim, records })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<EmbeddingRecord> {
        self.records
    }

    fn has_item(&self, item: &str) -> bool {
        self.records.iter().any(|r| r.item_id == item)
    }
}

/// L2-normalized embeddings of preprocessed images, computed in batches.
pub fn embed_images(
    spec: &NetworkSpec,
    state: &NetworkState,
    images: &[Tensor],
    batch_size: usize,
) -> Result<Vec<Vec<f64>>> {
    if spec.cbp_index().is_none() {
        return Err(Error::config("network has no pooling layer to embed with"));
    }
    let end = spec.embedding_end();
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch_size.max(1)) {
        let refs: Vec<&Tensor> = chunk.iter().collect();
        let pass = forward_range(spec, state, &stack(&refs)?, 0..end)?;
        out.extend((0..chunk.len()).map(|i| pass.sample_output(i).to_vec()));
    }
    Ok(out)
}

pub fn embed_image(spec: &NetworkSpec, state: &NetworkState, image: &Tensor) -> Result<Vec<f64>> {
    Ok(embed_images(spec, state, std::slice::from_ref(image), 1)?.remove(0))
}

/// Embeds every manifest row; `images[r]` belongs to row `r`.
pub fn embed_manifest(
    spec: &NetworkSpec,
    state: &NetworkState,
    manifest: &Manifest,
    images: &[Tensor],
    batch_size: usize,
) -> Result<Vec<EmbeddingRecord>> {
    crate::error::ensure_same_len("images per manifest row", images.len(), manifest.len())?;
    let vectors = embed_images(spec, state, images, batch_size)?;
    Ok(manifest
        .entries()
        .iter()
        .zip(vectors)
        .map(|(e, vector)| EmbeddingRecord {
            image_id: e.image_id.clone(),
            item_id: e.item_id.clone(),
            domain: e.domain,
            split: e.split,
            vector,
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    /// Position in the gallery.
    pub index: usize,
    pub image_id: String,
    pub item_id: String,
    /// Squared Euclidean distance to the query.
    pub distance: f64,
}

/// The `k` gallery records closest to `query` by squared Euclidean
/// distance, nearest first; equal distances keep gallery order.
pub fn knn_query(gallery: &Gallery, query: &[f64], k: usize) -> Result<Vec<Neighbor>> {
    if gallery.is_empty() {
        return Err(Error::config("cannot query an empty gallery"));
    }
    if k == 0 || k > gallery.len() {
        return Err(Error::config(format!("k = {k} outside 1..={}", gallery.len())));
    }
    if query.len() != gallery.dim {
        return Err(Error::dim(format!("query has dimension {}, gallery has {}", query.len(), gallery.dim)));
    }
    let mut scored: Vec<(f64, usize)> = gallery
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| (r.vector.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum(), i))
        .collect();
    let by_rank = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < scored.len() {
        scored.select_nth_unstable_by(k - 1, by_rank);
        scored.truncate(k);
    }
    scored.sort_unstable_by(by_rank);
    Ok(scored
        .into_iter()
        .map(|(distance, index)| {
            let r = &gallery.records[index];
            Neighbor { index, image_id: r.image_id.clone(), item_id: r.item_id.clone(), distance }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub image_id: String,
    pub item_id: String,
    pub hit: bool,
    /// False when no gallery record has the query's item.
    pub item_in_gallery: bool,
    pub top_ids: Vec<String>,
    pub top_distances: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub k: usize,
    pub accuracy: f64,
    pub hits: usize,
    pub queries: usize,
    /// Query ids whose item has no gallery record (counted as misses).
    pub absent_items: Vec<String>,
    pub outcomes: Vec<QueryOutcome>,
}

/// Top-`k` accuracy of `queries` against `gallery`, with per-query detail
/// in query order.
pub fn topk_retrieval_accuracy(queries: &[EmbeddingRecord], gallery: &Gallery, k: usize) -> Result<RetrievalReport> {
    let outcomes = queries
        .par_iter()
        .map(|q| {
            let nn = knn_query(gallery, &q.vector, k)?;
            Ok(QueryOutcome {
                image_id: q.image_id.clone(),
                item_id: q.item_id.clone(),
                hit: nn.iter().any(|n| n.item_id == q.item_id),
                item_in_gallery: gallery.has_item(&q.item_id),
                top_ids: nn.iter().map(|n| n.image_id.clone()).collect(),
                top_distances: nn.iter().map(|n| n.distance).collect(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let hits = outcomes.iter().filter(|o| o.hit).count();
    Ok(RetrievalReport {
        k,
        accuracy: if outcomes.is_empty() { 0.0 } else { hits as f64 / outcomes.len() as f64 },
        hits,
        queries: outcomes.len(),
        absent_items: outcomes.iter().filter(|o| !o.item_in_gallery).map(|o| o.image_id.clone()).collect(),
        outcomes,
    })
}

/// Consumer-domain rows of `manifest` queried against its shop-domain rows.
/// `images[r]` is the preprocessed image of row `r`. Callers choose which
/// splits take part by filtering the manifest first.
pub fn cross_domain_eval(
    manifest: &Manifest,
    images: &[Tensor],
    spec: &NetworkSpec,
    state: &NetworkState,
    k: usize,
) -> Result<RetrievalReport> {
    for d in Domain::ALL {
        if !manifest.entries().iter().any(|e| e.domain == d) {
            return Err(Error::data(format!("cross-domain evaluation needs {d} images")));
        }
    }
    let records = embed_manifest(spec, state, manifest, images, 16)?;
    let (queries, shop): (Vec<_>, Vec<_>) = records.into_iter().partition(|r| r.domain == Domain::Consumer);
    topk_retrieval_accuracy(&queries, &Gallery::new(shop)?, k)
}

/// Writes a `CBPE` store: magic, `u32` version, `u32` d, `u64` count, then
/// per record length-prefixed image id and item id, `u8` domain, `u8`
/// split and `d` little-endian `f64`s.
pub fn write_store<W: Write>(w: &mut W, records: &[EmbeddingRecord]) -> Result<()> {
    let dim = records.first().map_or(0, |r| r.vector.len());
    w.write_all(STORE_MAGIC)?;
    binio::write_u32(w, STORE_VERSION)?;
    binio::write_u32(w, u32::try_from(dim).map_err(|_| Error::format("dimension too large"))?)?;
    binio::write_u64(w, records.len() as u64)?;
    for r in records {
        if r.vector.len() != dim {
            return Err(Error::dim(format!(
                "record {:?} has dimension {}, store has {dim}",
                r.image_id,
                r.vector.len()
            )));
        }
        binio::write_str(w, &r.image_id)?;
        binio::write_str(w, &r.item_id)?;
        binio::write_u8(w, r.domain.code())?;
        binio::write_u8(w, r.split.code())?;
        binio::write_f64s(w, &r.vector)?;
    }
    Ok(())
}

pub fn read_store<R: Read>(r: &mut R) -> Result<Vec<EmbeddingRecord>> {
    binio::expect_magic(r, STORE_MAGIC)?;
    let version = binio::read_u32(r, "store version")?;
    if version != STORE_VERSION {
        return Err(Error::format(format!("unsupported embedding store version {version}")));
    }
    let dim = binio::read_u32(r, "store dimension")? as usize;
    let count = binio::read_u64(r, "record count")?;
    let mut out = Vec::new();
    for i in 0..count {
        let image_id = binio::read_str(r, "image id")?;
        let item_id = binio::read_str(r, "item id")?;
        let domain = binio::read_u8(r, "domain")?;
        let split = binio::read_u8(r, "split")?;
        let rec = EmbeddingRecord {
            image_id,
            item_id,
            domain: Domain::from_code(domain)
                .ok_or_else(|| Error::format(format!("record {i}: bad domain code {domain}")))?,
            split: Split::from_code(split)
                .ok_or_else(|| Error::format(format!("record {i}: bad split code {split}")))?,
            vector: binio::read_f64s(r, dim, "embedding")?,
        };
        out.push(rec);
    }
    Ok(out)
}

pub fn save_store(path: &Path, records: &[EmbeddingRecord]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_store(&mut w, records)?;
    w.flush()?;
    Ok(())
}

pub fn load_store(path: &Path) -> Result<Vec<EmbeddingRecord>> {
    let f = std::fs::File::open(path)
        .map_err(|e| Error::data(format!("cannot open embedding store {}: {e}", path.display())))?;
    read_store(&mut std::io::BufReader::new(f))
}

/// One JSON object per query.
pub fn write_report_jsonl<W: Write>(mut w: W, report: &RetrievalReport) -> Result<()> {
    for o in &report.outcomes {
        let line = serde_json::to_string(o).map_err(|e| Error::format(e.to_string()))?;
        writeln!(w, "{line}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests;
