use std::collections::BTreeSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use cbp_core::data::{
    data_root, generate_synthetic_dataset, load_image, load_manifest, load_preprocessed, preprocess, read_synth_info,
    resolve_path, Domain, Manifest, PreprocessConfig, Split, SynthParams, IMAGENET_MEANS,
};
use cbp_core::net::{
    accuracy_topk, load_weights, predict_scores, save_weights, train_classifier_two_phase, LabeledImages, NetworkSpec,
    NetworkState, OptimizerConfig, Schedule,
};
use cbp_core::retrieval::{
    embed_image, embed_manifest, knn_query, load_store, save_store, topk_retrieval_accuracy, write_report_jsonl,
    EmbeddingRecord, Gallery,
};
use cbp_core::triplet::{
    load_triplets, sample_triplets, train_retrieval, write_triplets, RetrievalTrainConfig, Triplet, TripletLossConfig,
};
use cbp_core::{Error, Result};
use serde::Serialize;

use crate::args::*;
use crate::html;

pub const WEIGHTS_FILE: &str = "weights.cbpw";
pub const PREPROCESS_FILE: &str = "preprocess.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const TRIPLETS_FILE: &str = "triplets.tsv";
pub const STORE_FILE: &str = "embeddings.cbpe";

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn data_err(msg: impl Into<String>) -> Error {
    Error::Data(msg.into())
}

fn json_err(e: serde_json::Error) -> Error {
    Error::Format(e.to_string())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(json_err)?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in rows {
        writeln!(w, "{}", serde_json::to_string(r).map_err(json_err)?)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_split(s: &str) -> Result<Split> {
    s.trim().parse().map_err(config_err)
}

fn parse_splits(s: &str) -> Result<Vec<Split>> {
    s.split(',').map(parse_split).collect()
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',').map(|p| p.trim().parse().map_err(|_| config_err(format!("{what}: cannot parse {p:?}")))).collect()
}

/// Resolves `--means`: `auto` uses the measured means of a generated dataset
/// sitting next to the manifest, otherwise the ImageNet means.
fn resolve_prep(p: &PrepArgs, manifest: &Path) -> Result<PreprocessConfig> {
    let channel_means = match p.means.trim() {
        "auto" => {
            let dir = manifest.parent().unwrap_or(Path::new("."));
            read_synth_info(dir)?.map_or(IMAGENET_MEANS, |info| info.channel_means)
        }
        "imagenet" => IMAGENET_MEANS,
        other => {
            let v: Vec<f64> = parse_list(other, "--means")?;
            <[f64; 3]>::try_from(v).map_err(|_| config_err("--means needs three values"))?
        }
    };
    let cfg = PreprocessConfig { resize_to: p.resize, crop_to: p.crop, channel_means };
    cfg.validate()?;
    Ok(cfg)
}

fn build_spec(m: &ModelArgs, input: usize, seed: u64) -> Result<NetworkSpec> {
    let spec = match m.arch {
        ArchArg::Desk => {
            let w: Vec<usize> = parse_list(&m.widths, "--widths")?;
            let w = <[usize; 3]>::try_from(w).map_err(|_| config_err("--widths needs three values"))?;
            if w.contains(&0) {
                return Err(config_err("--widths must be positive"));
            }
            NetworkSpec::desk_extractor(input, w, m.sketch_dim, seed)
        }
        ArchArg::Vgg16 => NetworkSpec::vgg16_extractor(input, m.sketch_dim, seed),
    };
    spec.validate()?;
    Ok(spec)
}

/// Loads weights and the preprocessing recorded next to them.
fn load_model(weights: &Path) -> Result<(NetworkSpec, NetworkState, PreprocessConfig)> {
    let (spec, state) = load_weights(weights)?;
    let prep_path = weights.parent().unwrap_or(Path::new(".")).join(PREPROCESS_FILE);
    let text =
        fs::read_to_string(&prep_path).map_err(|e| data_err(format!("cannot read {}: {e}", prep_path.display())))?;
    let prep: PreprocessConfig =
        serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", prep_path.display())))?;
    prep.validate()?;
    Ok((spec, state, prep))
}

fn save_model(dir: &Path, spec: &NetworkSpec, state: &NetworkState, prep: &PreprocessConfig) -> Result<()> {
    save_weights(&dir.join(WEIGHTS_FILE), spec, state)?;
    write_json(&dir.join(PREPROCESS_FILE), prep)
}

struct Loaded {
    manifest: Manifest,
    root: PathBuf,
}

fn load_data(d: &DataArgs) -> Result<Loaded> {
    Ok(Loaded {
        manifest: load_manifest(&d.manifest, d.num_categories)?,
        root: data_root(d.data_root.as_deref(), &d.manifest),
    })
}

fn labeled(m: &Manifest, root: &Path, prep: &PreprocessConfig) -> Result<LabeledImages> {
    Ok(LabeledImages {
        images: load_preprocessed(m.entries(), root, prep)?,
        labels: m.entries().iter().map(|e| e.category).collect(),
    })
}

pub fn gen_synth(a: &GenSynthArgs, seed: u64) -> Result<()> {
    let params = SynthParams {
        count: a.count,
        views: a.views,
        consumer_views: a.consumer_views,
        image_size: a.image_size,
        noise: a.noise,
        max_rotation_deg: a.max_rotation,
        clutter: a.clutter,
        item_half_size: a.item_half_size,
    };
    let m = generate_synthetic_dataset(a.kind.into(), &params, seed, &a.out)?;
    println!("wrote {} images and manifest.csv to {}", m.len(), a.out.display());
    Ok(())
}

pub fn train_cls(a: &TrainClsArgs, seed: u64) -> Result<()> {
    let d = load_data(&a.data)?;
    let prep = resolve_prep(&a.prep, &a.data.manifest)?;
    let train_m = d.manifest.with_split(parse_split(&a.train_split)?);
    if train_m.is_empty() {
        return Err(data_err(format!("manifest has no {:?} entries", a.train_split)));
    }
    let val_m = d.manifest.with_split(parse_split(&a.val_split)?);
    let classes = match a.num_classes {
        Some(c) => c,
        None => train_m.entries().iter().map(|e| e.category).max().unwrap_or(0) + 1,
    };
    let spec = build_spec(&a.model, prep.crop_to, seed)?.with_classifier(classes)?;
    let mut state = NetworkState::init(&spec, seed)?;
    let train = labeled(&train_m, &d.root, &prep)?;
    let val = if val_m.is_empty() { None } else { Some(labeled(&val_m, &d.root, &prep)?) };
    let phase1 = OptimizerConfig {
        learning_rate: a.phase1_lr,
        weight_decay: a.phase1_wd,
        momentum: a.momentum,
        ..OptimizerConfig::phase1()
    };
    let phase2 = OptimizerConfig {
        learning_rate: a.phase2_lr,
        weight_decay: a.phase2_wd,
        momentum: a.momentum,
        ..OptimizerConfig::phase2()
    };
    let schedule =
        Schedule { phase1_epochs: a.phase1_epochs, phase2_epochs: a.phase2_epochs, batch_size: a.batch_size, seed };
    let log = train_classifier_two_phase(&spec, &mut state, &train, val.as_ref(), &phase1, &phase2, &schedule)?;
    fs::create_dir_all(&a.out)?;
    save_model(&a.out, &spec, &state, &prep)?;
    write_jsonl(&a.out.join(METRICS_FILE), &log)?;
    println!("phase epoch     loss  train_acc  val_acc");
    for m in &log {
        let val = m.val_accuracy.map_or("-".to_string(), |v| format!("{v:.4}"));
        println!("{:>5} {:>5} {:>8.5} {:>10.4} {:>8}", m.phase, m.epoch, m.loss, m.train_accuracy, val);
    }
    if let Some(last) = log.last() {
        println!("final loss {:.17e}", last.loss);
    }
    Ok(())
}

pub fn make_triplets(a: &MakeTripletsArgs, seed: u64) -> Result<()> {
    let d = load_data(&a.data)?;
    let splits = parse_splits(&a.splits)?;
    let pool = d.manifest.filter(|e| splits.contains(&e.split));
    let triplets = sample_triplets(&pool, a.count, a.strategy.into(), seed)?;
    fs::create_dir_all(&a.out)?;
    let mut w = BufWriter::new(File::create(a.out.join(TRIPLETS_FILE))?);
    write_triplets(&mut w, &triplets)?;
    w.flush()?;
    println!("wrote {} triplets from {} images", triplets.len(), pool.len());
    Ok(())
}

pub fn train_ret(a: &TrainRetArgs, seed: u64) -> Result<()> {
    let d = load_data(&a.data)?;
    let all = load_triplets(&a.triplets, &d.manifest)?;
    // Only the referenced images are loaded.
    let used: BTreeSet<&str> =
        all.iter().flat_map(|t| [t.q.image_id.as_str(), t.p.image_id.as_str(), t.n.image_id.as_str()]).collect();
    let sub = d.manifest.filter(|e| used.contains(e.image_id.as_str()));
    let triplets = all
        .iter()
        .map(|t| Triplet::from_ids(&sub, &t.q.image_id, &t.p.image_id, &t.n.image_id))
        .collect::<Result<Vec<_>>>()?;
    let (spec, mut state, prep) = match &a.init {
        Some(w) => load_model(w)?,
        None => {
            let prep = resolve_prep(&a.prep, &a.data.manifest)?;
            let spec = build_spec(&a.model, prep.crop_to, seed)?;
            let state = NetworkState::init(&spec, seed)?;
            (spec, state, prep)
        }
    };
    let images = load_preprocessed(sub.entries(), &d.root, &prep)?;
    let cfg = RetrievalTrainConfig {
        loss: TripletLossConfig { margin: a.margin },
        optimizer: OptimizerConfig {
            learning_rate: a.lr,
            weight_decay: a.wd,
            momentum: a.momentum,
            ..OptimizerConfig::retrieval()
        },
        epochs: a.epochs,
        batch_size: a.batch_size,
        seed,
    };
    let log = train_retrieval(&spec, &mut state, &sub, &images, &triplets, &cfg)?;
    fs::create_dir_all(&a.out)?;
    save_model(&a.out, &spec, &state, &prep)?;
    write_jsonl(&a.out.join(METRICS_FILE), &log.epochs)?;
    println!("epoch  mean_loss  active");
    for e in &log.epochs {
        println!("{:>5} {:>10.5} {:>7.3}", e.epoch, e.mean_loss, e.active_fraction);
    }
    Ok(())
}

pub fn embed(a: &EmbedArgs) -> Result<()> {
    let d = load_data(&a.data)?;
    let (spec, state, prep) = load_model(&a.weights)?;
    let m = match &a.splits {
        Some(s) => {
            let splits = parse_splits(s)?;
            d.manifest.filter(|e| splits.contains(&e.split))
        }
        None => d.manifest,
    };
    if m.is_empty() {
        return Err(data_err("no manifest entries to embed"));
    }
    let images = load_preprocessed(m.entries(), &d.root, &prep)?;
    let records = embed_manifest(&spec, &state, &m, &images, a.batch_size)?;
    fs::create_dir_all(&a.out)?;
    save_store(&a.out.join(STORE_FILE), &records)?;
    println!("embedded {} images (dimension {})", records.len(), records[0].vector.len());
    Ok(())
}

pub fn query(a: &QueryArgs) -> Result<()> {
    let (spec, state, prep) = load_model(&a.weights)?;
    let gallery = Gallery::new(load_store(&a.store)?)?;
    let image = load_image(&a.image)?;
    let v = embed_image(&spec, &state, &preprocess(&image, &prep)?)?;
    if v.len() != gallery.dim() {
        return Err(data_err(format!(
            "weights produce {}-dimensional embeddings but the store holds {}-dimensional ones",
            v.len(),
            gallery.dim()
        )));
    }
    let hits = knn_query(&gallery, &v, a.k)?;
    println!("rank  image_id  item_id  distance");
    for (r, n) in hits.iter().enumerate() {
        println!("{:>4}  {}  {}  {:.6}", r + 1, n.image_id, n.item_id, n.distance);
    }
    if let Some(out) = &a.out {
        fs::create_dir_all(out)?;
        write_jsonl(&out.join("neighbors.jsonl"), &hits)?;
    }
    if let Some(page) = &a.gallery_out {
        let manifest =
            a.manifest.as_ref().ok_or_else(|| config_err("--gallery-out needs --manifest to locate gallery images"))?;
        let m = load_manifest(manifest, usize::MAX)?;
        let root = data_root(a.data_root.as_deref(), manifest);
        let mut items = Vec::with_capacity(hits.len());
        for n in &hits {
            let e =
                m.get(&n.image_id).ok_or_else(|| data_err(format!("image {:?} is not in the manifest", n.image_id)))?;
            items.push((n.clone(), load_image(&resolve_path(&root, &e.path))?));
        }
        html::write_gallery(page, &a.image, &image, &items)?;
        println!("wrote {}", page.display());
    }
    Ok(())
}

#[derive(Serialize)]
struct ClsReport {
    split: String,
    images: usize,
    top1: f64,
    top3: f64,
    top5: f64,
}

pub fn eval_cls(a: &EvalClsArgs) -> Result<()> {
    let d = load_data(&a.data)?;
    let (spec, state, prep) = load_model(&a.weights)?;
    if !spec.is_classifier() {
        return Err(config_err("weights have no classifier head"));
    }
    let m = d.manifest.with_split(parse_split(&a.split)?);
    if m.is_empty() {
        return Err(data_err(format!("manifest has no {:?} entries", a.split)));
    }
    let data = labeled(&m, &d.root, &prep)?;
    let scores = predict_scores(&spec, &state, &data.images, a.batch_size)?;
    let report = ClsReport {
        split: a.split.clone(),
        images: m.len(),
        top1: accuracy_topk(&scores, &data.labels, 1),
        top3: accuracy_topk(&scores, &data.labels, 3),
        top5: accuracy_topk(&scores, &data.labels, 5),
    };
    println!("split {}  images {}", report.split, report.images);
    println!("top-1 accuracy {:.4}", report.top1);
    println!("top-3 accuracy {:.4}", report.top3);
    println!("top-5 accuracy {:.4}", report.top5);
    if let Some(out) = &a.out {
        fs::create_dir_all(out)?;
        write_json(&out.join("eval_cls.json"), &report)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct RetSummary {
    protocol: ProtocolArg,
    k: usize,
    accuracy: f64,
    hits: usize,
    queries: usize,
    gallery: usize,
    absent_items: usize,
}

pub fn eval_ret(a: &EvalRetArgs) -> Result<()> {
    let records = load_store(&a.store)?;
    let want = |r: &EmbeddingRecord, split: Split, domain: Domain| {
        r.split == split && (a.protocol == ProtocolArg::Inshop || r.domain == domain)
    };
    let queries: Vec<EmbeddingRecord> =
        records.iter().filter(|r| want(r, Split::Query, Domain::Consumer)).cloned().collect();
    let gallery: Vec<EmbeddingRecord> = records.into_iter().filter(|r| want(r, Split::Gallery, Domain::Shop)).collect();
    if queries.is_empty() || gallery.is_empty() {
        return Err(data_err(format!(
            "store has {} query and {} gallery records for this protocol",
            queries.len(),
            gallery.len()
        )));
    }
    let gallery = Gallery::new(gallery)?;
    let report = topk_retrieval_accuracy(&queries, &gallery, a.k)?;
    let summary = RetSummary {
        protocol: a.protocol,
        k: a.k,
        accuracy: report.accuracy,
        hits: report.hits,
        queries: report.queries,
        gallery: gallery.len(),
        absent_items: report.absent_items.len(),
    };
    println!(
        "top-{} accuracy {:.4} ({} of {} queries, gallery {})",
        a.k, summary.accuracy, summary.hits, summary.queries, summary.gallery
    );
    if summary.absent_items > 0 {
        println!("{} queries have no gallery image of their item", summary.absent_items);
    }
    if let Some(out) = &a.out {
        fs::create_dir_all(out)?;
        write_json(&out.join("eval_ret.json"), &summary)?;
        let mut w = BufWriter::new(File::create(out.join("audit.jsonl"))?);
        write_report_jsonl(&mut w, &report)?;
        w.flush()?;
    }
    Ok(())
}
