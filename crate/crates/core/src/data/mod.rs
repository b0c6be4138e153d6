//! Dataset manifests, image files, preprocessing and synthetic datasets.

mod image;
mod synth;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use self::image::{
    bilinear_resize, center_crop, channel_means, load_image, preprocess, read_ppm, save_image, write_ppm,
    PreprocessConfig, IMAGENET_MEANS,
};
pub use synth::{
    generate_synthetic_dataset, item_style, read_synth_info, render_view, synthesize, Grating, ItemStyle, SynthInfo,
    SynthKind, SynthParams, ViewKind, SYNTH_INFO_FILE,
};

/// Environment variable naming the directory that manifest paths are
/// relative to.
pub const DATA_ROOT_ENV: &str = "CBP_DATA_ROOT";

/// Category count assumed when none is configured.
pub const DEFAULT_NUM_CATEGORIES: usize = 50;

pub const MANIFEST_HEADER: [&str; 6] = ["image_id", "path", "category", "item_id", "domain", "split"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Shop,
    Consumer,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
    Gallery,
    Query,
}

impl Domain {
    pub const ALL: [Domain; 2] = [Domain::Shop, Domain::Consumer];

    pub fn as_str(self) -> &'static str {
        match self {
            Domain::Shop => "shop",
            Domain::Consumer => "consumer",
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Domain> {
        Domain::ALL.get(code as usize).copied()
    }
}

impl Split {
    pub const ALL: [Split; 5] = [Split::Train, Split::Val, Split::Test, Split::Gallery, Split::Query];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
            Split::Gallery => "gallery",
            Split::Query => "query",
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Split> {
        Split::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Domain {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Domain::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| format!("unknown domain {s:?} (expected shop or consumer)"))
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Split::ALL
            .into_iter()
            .find(|d| d.as_str() == s)
            .ok_or_else(|| format!("unknown split {s:?} (expected train, val, test, gallery or query)"))
    }
}

/// One row of a dataset manifest.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub image_id: String,
    /// Relative to the data root unless absolute.
    pub path: String,
    pub category: usize,
    pub item_id: String,
    pub domain: Domain,
    pub split: Split,
}

/// Validated manifest rows with an image-id index.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    entries: Vec<ManifestEntry>,
    by_id: HashMap<String, usize>,
}

impl Manifest {
    /// Checks id uniqueness and category range. Errors cite 1-based row
    /// numbers counting from the first entry.
    pub fn new(entries: Vec<ManifestEntry>, num_categories: usize) -> Result<Self> {
        Manifest::with_line_offset(entries, num_categories, 1)
    }

    fn with_line_offset(entries: Vec<ManifestEntry>, num_categories: usize, first_line: usize) -> Result<Self> {
        let mut by_id = HashMap::with_capacity(entries.len());
        for (row, e) in entries.iter().enumerate() {
            let line = row + first_line;
            if e.category >= num_categories {
                return Err(Error::data(format!("line {line}: category {} outside [0, {num_categories})", e.category)));
            }
            if let Some(first) = by_id.insert(e.image_id.clone(), row) {
                return Err(Error::data(format!(
                    "line {line}: duplicate image_id {:?} (first seen on line {})",
                    e.image_id,
                    first + first_line
                )));
            }
        }
        Ok(Manifest { entries, by_id })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Row index of `image_id`.
    pub fn row(&self, image_id: &str) -> Option<usize> {
        self.by_id.get(image_id).copied()
    }

    pub fn get(&self, image_id: &str) -> Option<&ManifestEntry> {
        self.row(image_id).map(|r| &self.entries[r])
    }

    /// Rows grouped by item id, in first-appearance order of the rows.
    pub fn rows_by_item(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut out: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, e) in self.entries.iter().enumerate() {
            out.entry(e.item_id.as_str()).or_default().push(i);
        }
        out
    }

    /// The entries satisfying `keep`, as a new manifest.
    pub fn filter(&self, keep: impl Fn(&ManifestEntry) -> bool) -> Manifest {
        let entries: Vec<ManifestEntry> = self.entries.iter().filter(|e| keep(e)).cloned().collect();
        let by_id = entries.iter().enumerate().map(|(i, e)| (e.image_id.clone(), i)).collect();
        Manifest { entries, by_id }
    }

    pub fn with_split(&self, split: Split) -> Manifest {
        self.filter(|e| e.split == split)
    }

    pub fn num_categories_used(&self) -> usize {
        self.entries.iter().map(|e| e.category + 1).max().unwrap_or(0)
    }

    /// Paths (resolved against `root`) that do not exist.
    pub fn missing_files(&self, root: &Path) -> Vec<String> {
        self.entries
            .iter()
            .map(|e| resolve_path(root, &e.path))
            .filter(|p| !p.is_file())
            .map(|p| p.display().to_string())
            .collect()
    }
}

fn field(rec: &csv::StringRecord, line: usize, col: usize) -> Result<&str> {
    rec.get(col)
        .ok_or_else(|| Error::data(format!("line {line}, column {}: missing field {}", col + 1, MANIFEST_HEADER[col])))
}

fn parse_field<T: FromStr>(rec: &csv::StringRecord, line: usize, col: usize) -> Result<T>
where
    T::Err: fmt::Display,
{
    let raw = field(rec, line, col)?;
    raw.parse().map_err(|e| {
        Error::data(format!("line {line}, column {} ({}): cannot parse {raw:?}: {e}", col + 1, MANIFEST_HEADER[col]))
    })
}

/// Parses manifest CSV. An empty input is an empty manifest.
pub fn read_manifest<R: Read>(r: R, num_categories: usize) -> Result<Manifest> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_reader(r);
    let mut entries = Vec::new();
    let mut first_data_line = 2;
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::data(format!("manifest parse error: {e}")))?;
        let line = rec.position().map_or(i + 1, |p| p.line() as usize);
        if i == 0 {
            let header: Vec<&str> = rec.iter().collect();
            if header != MANIFEST_HEADER {
                return Err(Error::data(format!(
                    "line {line}: expected header {:?}, found {header:?}",
                    MANIFEST_HEADER.join(",")
                )));
            }
            first_data_line = line + 1;
            continue;
        }
        if rec.len() != MANIFEST_HEADER.len() {
            return Err(Error::data(format!(
                "line {line}: expected {} fields, found {}",
                MANIFEST_HEADER.len(),
                rec.len()
            )));
        }
        let image_id = field(&rec, line, 0)?.to_string();
        if image_id.is_empty() {
            return Err(Error::data(format!("line {line}, column 1: empty image_id")));
        }
        entries.push(ManifestEntry {
            image_id,
            path: field(&rec, line, 1)?.to_string(),
            category: parse_field(&rec, line, 2)?,
            item_id: field(&rec, line, 3)?.to_string(),
            domain: parse_field(&rec, line, 4)?,
            split: parse_field(&rec, line, 5)?,
        });
    }
    Manifest::with_line_offset(entries, num_categories, first_data_line)
}

pub fn load_manifest(path: &Path, num_categories: usize) -> Result<Manifest> {
    let file =
        std::fs::File::open(path).map_err(|e| Error::data(format!("cannot open manifest {}: {e}", path.display())))?;
    read_manifest(std::io::BufReader::new(file), num_categories)
}

pub fn write_manifest<W: Write>(w: W, entries: &[ManifestEntry]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::data(format!("manifest write error: {e}"));
    writer.write_record(MANIFEST_HEADER).map_err(csv_err)?;
    for e in entries {
        writer
            .write_record([
                e.image_id.as_str(),
                e.path.as_str(),
                &e.category.to_string(),
                e.item_id.as_str(),
                e.domain.as_str(),
                e.split.as_str(),
            ])
            .map_err(csv_err)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn save_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    write_manifest(std::fs::File::create(path)?, entries)
}

/// Data root: an explicit choice, else `CBP_DATA_ROOT`, else the directory
/// holding the manifest.
pub fn data_root(explicit: Option<&Path>, manifest_path: &Path) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    if let Some(env) = std::env::var_os(DATA_ROOT_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(env);
    }
    manifest_path.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn resolve_path(root: &Path, path: &str) -> PathBuf {
    let p = Path::new(path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        root.join(p)
    }
}

/// Loads and preprocesses the image of every entry, in entry order.
pub fn load_preprocessed(entries: &[ManifestEntry], root: &Path, cfg: &PreprocessConfig) -> Result<Vec<Tensor>> {
    cfg.validate()?;
    entries.par_iter().map(|e| preprocess(&load_image(&resolve_path(root, &e.path))?, cfg)).collect()
}
