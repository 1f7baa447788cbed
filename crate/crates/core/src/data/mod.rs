//! Dataset layout, splits, batch assembly and the synthetic glyph dataset.
//!
//! A dataset root holds one directory per class, named `0`–`9` and `A`–`Z`,
//! each containing that class's images.

pub mod glyphs;

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::imaging::{load_image, run_pipeline, save_pgm, ImageError, PipelineConfig};
use crate::nn::Tensor;
use glyphs::{render_glyph, Jitter};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("dataset root not found: {0}")]
    MissingRoot(PathBuf),
    #[error("unknown class directory {name:?} in {root}")]
    UnknownClass { root: PathBuf, name: String },
    #[error("class {0:?} has no images")]
    EmptyClass(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("failed to load {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: ImageError,
    },
    #[error("invalid label map: {0}")]
    Labels(String),
    #[error("validation ratio must lie strictly between 0 and 1, got {0}")]
    Ratio(f64),
    #[error("class {name:?} has {count} samples, too few to split")]
    ClassTooSmall { name: String, count: usize },
    #[error("invalid argument: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Ordered class names; a name's position is the classifier output index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    names: Vec<String>,
}

impl LabelMap {
    /// The 36 character classes: digits then capital letters.
    pub fn isl() -> Self {
        let names = ('0'..='9').chain('A'..='Z').map(String::from).collect();
        Self { names }
    }

    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.len() < 2 {
            return Err(DataError::Labels(format!(
                "need at least two classes, got {}",
                names.len()
            )));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if n.is_empty() || !seen.insert(n.as_str()) {
                return Err(DataError::Labels(format!(
                    "class name {n:?} is empty or repeated"
                )));
            }
        }
        Ok(Self { names })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn name(&self, index: usize) -> Option<&str> {
        self.names.get(index).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Entry {
    pub path: PathBuf,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub labels: LabelMap,
    pub entries: Vec<Entry>,
    pub class_counts: Vec<usize>,
}

const IMAGE_EXTENSIONS: [&str; 6] = ["pgm", "ppm", "pnm", "png", "jpg", "jpeg"];

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

/// Indexes `<root>/<class>/<image>`; entries come back sorted by path.
pub fn scan_dataset(root: impl AsRef<Path>) -> Result<DatasetIndex> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(DataError::MissingRoot(root.to_path_buf()));
    }
    let labels = LabelMap::isl();
    let mut entries = Vec::new();
    for dir in fs::read_dir(root).map_err(io_err(root))? {
        let dir = dir.map_err(io_err(root))?;
        let path = dir.path();
        if !path.is_dir() {
            continue;
        }
        let name = dir.file_name().to_string_lossy().into_owned();
        let label = labels
            .index_of(&name)
            .ok_or_else(|| DataError::UnknownClass {
                root: root.to_path_buf(),
                name: name.clone(),
            })?;
        for file in fs::read_dir(&path).map_err(io_err(&path))? {
            let file = file.map_err(io_err(&path))?.path();
            if file.is_file() && is_image(&file) {
                entries.push(Entry { path: file, label });
            }
        }
    }
    entries.sort();
    let mut class_counts = vec![0; labels.len()];
    for e in &entries {
        class_counts[e.label] += 1;
    }
    if let Some(empty) = class_counts.iter().position(|&c| c == 0) {
        return Err(DataError::EmptyClass(labels.names()[empty].clone()));
    }
    Ok(DatasetIndex {
        root: root.to_path_buf(),
        labels,
        entries,
        class_counts,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<Entry>,
    pub val: Vec<Entry>,
    pub seed: u64,
    pub ratio: OrderedRatio,
}

/// Validation ratio stored by its bit pattern so `Split` stays `Eq`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OrderedRatio(u64);

impl OrderedRatio {
    pub fn get(self) -> f64 {
        f64::from_bits(self.0)
    }
}

pub const DEFAULT_VAL_RATIO: f64 = 0.2;

/// Per-class seeded shuffle; the last `ceil(ratio · n)` of each class go to validation.
pub fn stratified_split(index: &DatasetIndex, ratio: f64, seed: u64) -> Result<Split> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DataError::Ratio(ratio));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (label, name) in index.labels.names().iter().enumerate() {
        let mut members: Vec<&Entry> = index.entries.iter().filter(|e| e.label == label).collect();
        let n = members.len();
        if n == 0 {
            continue;
        }
        // guard against ratio·n landing a hair above an integer
        let n_val = ((ratio * n as f64) - 1e-9).ceil().max(1.0) as usize;
        if n < 2 || n_val >= n {
            return Err(DataError::ClassTooSmall {
                name: name.clone(),
                count: n,
            });
        }
        members.shuffle(&mut rng);
        let (t, v) = members.split_at(n - n_val);
        train.extend(t.iter().map(|&e| e.clone()));
        val.extend(v.iter().map(|&e| e.clone()));
    }
    train.sort();
    val.sort();
    Ok(Split {
        train,
        val,
        seed,
        ratio: OrderedRatio(ratio.to_bits()),
    })
}

/// Loads one image and runs it through the pipeline, scaled into [0, 1].
pub fn preprocess_entry(path: &Path, pipeline: &PipelineConfig) -> Result<Vec<f32>> {
    let wrap = |source| DataError::Image {
        path: path.to_path_buf(),
        source,
    };
    let img = load_image(path).map_err(wrap)?;
    let out = run_pipeline(&img, pipeline).map_err(wrap)?;
    Ok(out.pixels().iter().map(|&p| p as f32 / 255.0).collect())
}

/// Builds a `B×1×S×S` input batch (S = model input size) in entry order.
pub fn make_batch(
    entries: &[Entry],
    pipeline: &PipelineConfig,
) -> Result<(Tensor<f32>, Vec<usize>)> {
    let size = pipeline.model_input_size;
    let mut data = Vec::with_capacity(entries.len() * size * size);
    for e in entries {
        data.extend(preprocess_entry(&e.path, pipeline)?);
    }
    let labels = entries.iter().map(|e| e.label).collect();
    let tensor = Tensor::from_vec(&[entries.len(), 1, size, size], data)
        .expect("pipeline output is size×size");
    Ok((tensor, labels))
}

/// Canvas size of generated glyph images.
pub const GLYPH_CANVAS: usize = 226;

/// Draws the placement jitter: rotation ±15°, scale 0.8–1.2, shift ±10 px.
pub fn sample_jitter<R: Rng + ?Sized>(rng: &mut R) -> Jitter {
    Jitter {
        rotation_deg: rng.random_range(-15.0..=15.0),
        scale: rng.random_range(0.8..=1.2),
        dx: rng.random_range(-10.0..=10.0),
        dy: rng.random_range(-10.0..=10.0),
    }
}

/// Writes `count_per_class` jittered glyph images per class as PGM files
/// under `out/<class>/`, then indexes the result.
pub fn generate_synthetic_glyphs(
    count_per_class: usize,
    seed: u64,
    out: impl AsRef<Path>,
) -> Result<DatasetIndex> {
    let out = out.as_ref();
    if count_per_class < 2 {
        return Err(DataError::Invalid(format!(
            "need at least 2 images per class, got {count_per_class}"
        )));
    }
    let labels = LabelMap::isl();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for name in labels.names() {
        let dir = out.join(name);
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let ch = name.chars().next().expect("class names are non-empty");
        for i in 0..count_per_class {
            let jitter = sample_jitter(&mut rng);
            let img = render_glyph(ch, GLYPH_CANVAS, jitter).expect("every class has a glyph");
            let path = dir.join(format!("{name}_{i:04}.pgm"));
            save_pgm(&img, &path).map_err(|source| DataError::Image {
                path: path.clone(),
                source,
            })?;
        }
    }
    scan_dataset(out)
}
