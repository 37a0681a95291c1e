//! JSON listing of an ingested dataset: one entry per sample with its
//! relative path, class index, original dimensions and content hash.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_sample, Dataset, DatasetError, Sample};
use crate::exec;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub class_index: usize,
    pub width: usize,
    pub height: usize,
    pub sha256: String,
    /// Feature image written by `segment`, relative to the manifest.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degenerate: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub root: PathBuf,
    pub class_names: Vec<String>,
    pub off_size_count: usize,
    pub samples: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn from_dataset(ds: &Dataset, root: &Path) -> Self {
        Self {
            format_version: MANIFEST_VERSION,
            root: root.to_path_buf(),
            class_names: ds.class_names.clone(),
            off_size_count: ds.off_size_count,
            samples: ds
                .samples
                .iter()
                .map(|s| ManifestEntry {
                    path: s.path.clone(),
                    class_index: s.label,
                    width: s.original_width,
                    height: s.original_height,
                    sha256: s.sha256.clone(),
                    feature_path: None,
                    degenerate: None,
                })
                .collect(),
        }
    }

    pub fn read(path: &Path) -> Result<Self, DatasetError> {
        let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let m: Manifest = serde_json::from_str(&text)
            .map_err(|e| DatasetError::Manifest(format!("{}: {e}", path.display())))?;
        if m.format_version != MANIFEST_VERSION {
            return Err(DatasetError::Manifest(format!(
                "{}: format version {} (supported: {MANIFEST_VERSION})",
                path.display(),
                m.format_version
            )));
        }
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<(), DatasetError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Re-read the source images, checking each content hash.
    pub fn load(&self) -> Result<Dataset, DatasetError> {
        if self.samples.is_empty() {
            return Err(DatasetError::Empty(self.root.clone()));
        }
        let samples: Vec<Sample> = exec::try_map_range(self.samples.len(), |i| {
            let e = &self.samples[i];
            let s = read_sample(&self.root, &e.path, e.class_index)?;
            if s.sha256 != e.sha256 {
                return Err(DatasetError::Manifest(format!(
                    "content hash mismatch for {}",
                    e.path
                )));
            }
            Ok(s)
        })?;
        Ok(Dataset {
            samples,
            class_names: self.class_names.clone(),
            off_size_count: self.off_size_count,
        })
    }
}
