//! Class-labeled image directories, working-resolution resizing and seeded
//! stratified splits.
//!
//! Expected layout: `root/<ClassName>/<file>.{png,jpg,jpeg}`, one directory
//! per dementia level. Class indices are fixed by [`CLASS_NAMES`], so a
//! missing directory never shifts the labels of the others.

mod image;
mod manifest;
mod split;

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::exec;

pub use self::image::{decode_to_grayscale, luma, resize_area, Image};
pub use self::manifest::{Manifest, ManifestEntry, MANIFEST_VERSION};
pub use self::split::{part_sizes, stratified_split, stratified_split_labels, SplitPartition, SplitRatios};

pub const NUM_CLASSES: usize = 4;

/// Alphabetical, so label indices are identical on every machine.
pub const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "MildDemented",
    "ModerateDemented",
    "NonDemented",
    "VeryMildDemented",
];

/// Native resolution of the source archive.
pub const NATIVE_SIZE: usize = 128;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("dataset root {0} does not exist or is not a directory")]
    Path(PathBuf),
    #[error("cannot decode {}: {reason}", path.as_deref().map(|p| p.display().to_string()).unwrap_or_else(|| "<memory>".into()))]
    Decode {
        path: Option<PathBuf>,
        reason: String,
    },
    #[error("no images found under {0}")]
    Empty(PathBuf),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("cannot stratify class {class}: {reason}")]
    Stratify { class: String, reason: String },
    #[error("directory {0:?} is not one of the known class names")]
    UnknownClass(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest: {0}")]
    Manifest(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub label: usize,
    /// Path relative to the dataset root, `/`-separated.
    pub path: String,
    pub original_width: usize,
    pub original_height: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub class_names: Vec<String>,
    /// Samples whose on-disk size was not 128x128.
    pub off_size_count: usize,
}

impl Dataset {
    /// In-memory dataset; paths are synthesized from the sample index.
    pub fn from_images(items: Vec<(Image, usize)>) -> Result<Self, DatasetError> {
        let mut samples = Vec::with_capacity(items.len());
        for (i, (image, label)) in items.into_iter().enumerate() {
            if label >= NUM_CLASSES {
                return Err(DatasetError::Argument(format!(
                    "label {label} out of range for {NUM_CLASSES} classes"
                )));
            }
            samples.push(Sample {
                path: format!("{}/mem_{i:06}", CLASS_NAMES[label]),
                original_width: image.width(),
                original_height: image.height(),
                sha256: content_hash(image.pixels()),
                image,
                label,
            });
        }
        if samples.is_empty() {
            return Err(DatasetError::Empty(PathBuf::from("<memory>")));
        }
        let off_size_count = samples
            .iter()
            .filter(|s| s.original_width != NATIVE_SIZE || s.original_height != NATIVE_SIZE)
            .count();
        Ok(Self {
            samples,
            class_names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
            off_size_count,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn class_counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0; NUM_CLASSES];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// Class indices that have at least one sample.
    pub fn present_classes(&self) -> Vec<usize> {
        let counts = self.class_counts();
        (0..NUM_CLASSES).filter(|&c| counts[c] > 0).collect()
    }

    /// Copy with every image area-resized to `width` x `height`.
    pub fn resized(&self, width: usize, height: usize) -> Result<Self, DatasetError> {
        let images = exec::try_map_range(self.samples.len(), |i| {
            resize_area(&self.samples[i].image, width, height)
        })?;
        let samples = self
            .samples
            .iter()
            .zip(images)
            .map(|(s, image)| Sample {
                image,
                ..s.clone()
            })
            .collect();
        Ok(Self {
            samples,
            class_names: self.class_names.clone(),
            off_size_count: self.off_size_count,
        })
    }
}

pub fn content_hash(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

/// Enumerate `(relative path, label)` pairs in the deterministic order
/// (class index, then file name bytes).
pub fn list_images(root: &Path) -> Result<Vec<(String, usize)>, DatasetError> {
    if !root.is_dir() {
        return Err(DatasetError::Path(root.to_path_buf()));
    }
    let mut class_dirs = Vec::new();
    for entry in std::fs::read_dir(root).map_err(io_err(root))? {
        let entry = entry.map_err(io_err(root))?;
        let path = entry.path();
        if !path.is_dir() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with('.') {
            continue;
        }
        let label = CLASS_NAMES
            .iter()
            .position(|c| *c == name)
            .ok_or_else(|| DatasetError::UnknownClass(name.clone()))?;
        class_dirs.push((label, name, path));
    }
    class_dirs.sort_by_key(|(label, _, _)| *label);

    let mut out = Vec::new();
    for (label, name, dir) in class_dirs {
        let mut files = Vec::new();
        for entry in std::fs::read_dir(&dir).map_err(io_err(&dir))? {
            let entry = entry.map_err(io_err(&dir))?;
            let path = entry.path();
            if path.is_file() && is_image_file(&path) {
                files.push(entry.file_name());
            }
        }
        files.sort_by(|a, b| a.as_encoded_bytes().cmp(b.as_encoded_bytes()));
        out.extend(
            files
                .into_iter()
                .map(|f| (format!("{name}/{}", f.to_string_lossy()), label)),
        );
    }
    Ok(out)
}

/// Read and decode one file relative to `root`.
pub fn read_sample(root: &Path, rel: &str, label: usize) -> Result<Sample, DatasetError> {
    let full = root.join(rel);
    let bytes = std::fs::read(&full).map_err(io_err(&full))?;
    let image = decode_to_grayscale(&bytes).map_err(|e| match e {
        DatasetError::Decode { reason, .. } => DatasetError::Decode {
            path: Some(full.clone()),
            reason,
        },
        other => other,
    })?;
    Ok(Sample {
        original_width: image.width(),
        original_height: image.height(),
        sha256: content_hash(&bytes),
        image,
        label,
        path: rel.to_string(),
    })
}

/// Load every image under `root` at its native resolution.
///
/// Files are decoded in parallel; the sample order is (class name, file
/// name) regardless of directory-listing order.
pub fn load_dataset(root: &Path) -> Result<Dataset, DatasetError> {
    let listing = list_images(root)?;
    if listing.is_empty() {
        return Err(DatasetError::Empty(root.to_path_buf()));
    }
    let samples = exec::try_map_range(listing.len(), |i| {
        let (rel, label) = &listing[i];
        read_sample(root, rel, *label)
    })?;
    let off_size_count = samples
        .iter()
        .filter(|s| s.original_width != NATIVE_SIZE || s.original_height != NATIVE_SIZE)
        .count();
    Ok(Dataset {
        samples,
        class_names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        off_size_count,
    })
}
