use std::path::PathBuf;

use cbp_core::data::SynthKind;
use cbp_core::triplet::SamplingStrategy;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Debug, Parser)]
#[command(name = "cbp", version, about = "Compact bilinear pooling embeddings: training, retrieval and evaluation")]
#[command(args_override_self = true)]
pub struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads (default: available cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// JSON file of flag values; flags given on the command line win.
    /// A `run_config.json` written by an earlier run is accepted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a procedural dataset (PPM images plus manifest.csv).
    GenSynth(GenSynthArgs),
    /// Two-phase classifier training.
    TrainCls(TrainClsArgs),
    /// Sample triplets from a manifest.
    MakeTriplets(MakeTripletsArgs),
    /// Triplet-loss training of the embedding network.
    TrainRet(TrainRetArgs),
    /// Embed manifest images into a CBPE store.
    Embed(EmbedArgs),
    /// Rank a store's records by distance to one image.
    Query(QueryArgs),
    /// Top-1/3/5 classification accuracy.
    EvalCls(EvalClsArgs),
    /// Top-k retrieval accuracy over a store.
    EvalRet(EvalRetArgs),
    /// Kernel approximation error of the Tensor Sketch against sketch size.
    SketchBench(SketchBenchArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenSynth(_) => "gen-synth",
            Command::TrainCls(_) => "train-cls",
            Command::MakeTriplets(_) => "make-triplets",
            Command::TrainRet(_) => "train-ret",
            Command::Embed(_) => "embed",
            Command::Query(_) => "query",
            Command::EvalCls(_) => "eval-cls",
            Command::EvalRet(_) => "eval-ret",
            Command::SketchBench(_) => "sketch-bench",
        }
    }

    /// The command's flags as a JSON object keyed by long flag name.
    pub fn flags(&self) -> serde_json::Value {
        let v = match self {
            Command::GenSynth(a) => serde_json::to_value(a),
            Command::TrainCls(a) => serde_json::to_value(a),
            Command::MakeTriplets(a) => serde_json::to_value(a),
            Command::TrainRet(a) => serde_json::to_value(a),
            Command::Embed(a) => serde_json::to_value(a),
            Command::Query(a) => serde_json::to_value(a),
            Command::EvalCls(a) => serde_json::to_value(a),
            Command::EvalRet(a) => serde_json::to_value(a),
            Command::SketchBench(a) => serde_json::to_value(a),
        };
        v.expect("flags serialize")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KindArg {
    Classification,
    Inshop,
    CrossDomain,
}

impl From<KindArg> for SynthKind {
    fn from(k: KindArg) -> SynthKind {
        match k {
            KindArg::Classification => SynthKind::Classification,
            KindArg::Inshop => SynthKind::InShop,
            KindArg::CrossDomain => SynthKind::CrossDomain,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyArg {
    UniformRandomNegative,
    SameCategoryNegative,
    CrossDomain,
}

impl From<StrategyArg> for SamplingStrategy {
    fn from(s: StrategyArg) -> SamplingStrategy {
        match s {
            StrategyArg::UniformRandomNegative => SamplingStrategy::UniformRandomNegative,
            StrategyArg::SameCategoryNegative => SamplingStrategy::SameCategoryNegative,
            StrategyArg::CrossDomain => SamplingStrategy::CrossDomain,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchArg {
    /// Three conv/relu stages (widths from `--widths`), then compact bilinear pooling.
    Desk,
    /// VGG16 up to conv5_3, then compact bilinear pooling.
    Vgg16,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProtocolArg {
    /// Query-split records against gallery-split records.
    Inshop,
    /// As `inshop`, but queries must be consumer images and the gallery shop images.
    CrossDomain,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct GenSynthArgs {
    #[arg(long, value_enum)]
    pub kind: KindArg,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Classes or items.
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    /// Images per class, or shop views per item.
    #[arg(long, default_value_t = 4)]
    pub views: usize,
    #[arg(long, default_value_t = 2)]
    pub consumer_views: usize,
    #[arg(long, default_value_t = 64)]
    pub image_size: usize,
    /// Pixel noise standard deviation on the 0-255 scale.
    #[arg(long, default_value_t = 6.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 15.0)]
    pub max_rotation: f64,
    /// Background clutter of shop views, in [0, 1].
    #[arg(long, default_value_t = 0.0)]
    pub clutter: f64,
    /// Half-width of the item square; the image spans [-1, 1].
    #[arg(long, default_value_t = 0.62)]
    pub item_half_size: f64,
}

/// Where images come from and how they are preprocessed.
#[derive(Clone, Debug, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct DataArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory image paths are relative to (default: $CBP_DATA_ROOT, then the manifest's directory).
    #[arg(long)]
    pub data_root: Option<PathBuf>,
    #[arg(long, default_value_t = 50)]
    pub num_categories: usize,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct PrepArgs {
    #[arg(long, default_value_t = 64)]
    pub resize: usize,
    #[arg(long, default_value_t = 56)]
    pub crop: usize,
    /// `auto` (a generated dataset's measured means, else ImageNet means),
    /// `imagenet`, or three comma-separated numbers.
    #[arg(long, default_value = "auto")]
    pub means: String,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ModelArgs {
    #[arg(long, value_enum, default_value_t = ArchArg::Desk)]
    pub arch: ArchArg,
    /// Conv widths of the desk extractor.
    #[arg(long, default_value = "32,64,128")]
    pub widths: String,
    /// Compact bilinear output dimension.
    #[arg(long, default_value_t = 8192)]
    pub sketch_dim: usize,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainClsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub prep: PrepArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Classifier outputs (default: largest training label + 1).
    #[arg(long)]
    pub num_classes: Option<usize>,
    #[arg(long, default_value = "train")]
    pub train_split: String,
    /// Split scored after every epoch; skipped when it has no entries.
    #[arg(long, default_value = "test")]
    pub val_split: String,
    #[arg(long, default_value_t = 1.0)]
    pub phase1_lr: f64,
    #[arg(long, default_value_t = 5e-6)]
    pub phase1_wd: f64,
    #[arg(long, default_value_t = 5)]
    pub phase1_epochs: usize,
    #[arg(long, default_value_t = 0.001)]
    pub phase2_lr: f64,
    #[arg(long, default_value_t = 5e-4)]
    pub phase2_wd: f64,
    #[arg(long, default_value_t = 20)]
    pub phase2_epochs: usize,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct MakeTripletsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    #[arg(long, value_enum, default_value_t = StrategyArg::UniformRandomNegative)]
    pub strategy: StrategyArg,
    /// Comma-separated splits to draw from.
    #[arg(long, default_value = "train")]
    pub splits: String,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct TrainRetArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub prep: PrepArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    /// Triplet file from `make-triplets`.
    #[arg(long)]
    pub triplets: PathBuf,
    /// Start from these weights instead of a fresh network; their
    /// preprocessing is reused.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 5e-4)]
    pub wd: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 1.0)]
    pub margin: f64,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct EmbedArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub weights: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated splits to embed (default: all).
    #[arg(long)]
    pub splits: Option<String>,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct QueryArgs {
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long)]
    pub store: PathBuf,
    /// Query image (PPM or CBPT).
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Output directory for `neighbors.jsonl`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write a static HTML page of the ranked gallery images here.
    #[arg(long)]
    pub gallery_out: Option<PathBuf>,
    /// Manifest of the store's images, used to find them for `--gallery-out`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub data_root: Option<PathBuf>,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct EvalClsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub weights: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: String,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    /// Output directory for `eval_cls.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct EvalRetArgs {
    #[arg(long)]
    pub store: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub k: usize,
    #[arg(long, value_enum, default_value_t = ProtocolArg::Inshop)]
    pub protocol: ProtocolArg,
    /// Output directory for `eval_ret.json` and the per-query `audit.jsonl`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, Args, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct SketchBenchArgs {
    /// Comma-separated sketch dimensions.
    #[arg(long, default_value = "64,256,1024")]
    pub dims: String,
    #[arg(long, default_value_t = 128)]
    pub input_dim: usize,
    #[arg(long, default_value_t = 100)]
    pub pairs: usize,
    /// Independent sketch draws per dimension.
    #[arg(long, default_value_t = 20)]
    pub draws: usize,
    /// Output directory for `sketch_bench.jsonl`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
