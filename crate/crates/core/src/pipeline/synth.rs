//! Four-class geometric mini-dataset in the on-disk layout the pipeline
//! ingests. Each class pairs one motif with its own brightness, so every
//! model should separate it; positions, sizes and noise vary per image.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Phase, PipelineError};
use crate::dataset::{Image, CLASS_NAMES, NUM_CLASSES};
use crate::rng::{Domain, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub per_class: usize,
    pub size: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            per_class: 20,
            size: 128,
            seed: 0,
        }
    }
}

const BRIGHTNESS: [f64; NUM_CLASSES] = [110.0, 150.0, 190.0, 230.0];

/// Draw image `index` of `class`.
pub fn synth_image(class: usize, index: usize, spec: &SynthSpec) -> Image {
    let mut rng = SeededRng::new(spec.seed, Domain::Synth, (class * 1_000_003 + index) as u64);
    let s = spec.size as f64;
    let jitter = |rng: &mut SeededRng| (rng.uniform() - 0.5) * 0.05 * s;
    let (cx, cy) = (s / 2.0 + jitter(&mut rng), s / 2.0 + jitter(&mut rng));
    let scale = 0.94 + 0.12 * rng.uniform();
    let level = BRIGHTNESS[class] + (rng.uniform() - 0.5) * 16.0;
    let inside = |x: f64, y: f64| -> bool {
        let (dx, dy) = ((x - cx) / scale, (y - cy) / scale);
        let r = s / 128.0;
        match class {
            // filled disc
            0 => dx * dx + dy * dy <= (34.0 * r).powi(2),
            // thick square ring
            1 => {
                let m = dx.abs().max(dy.abs());
                (18.0 * r..=42.0 * r).contains(&m)
            }
            // two horizontal bars
            2 => dx.abs() <= 40.0 * r && (dy.abs() - 24.0 * r).abs() <= 12.0 * r,
            // plus sign
            _ => (dx.abs() <= 12.0 * r && dy.abs() <= 42.0 * r) || (dy.abs() <= 12.0 * r && dx.abs() <= 42.0 * r),
        }
    };
    let mut pixels = Vec::with_capacity(spec.size * spec.size);
    for y in 0..spec.size {
        for x in 0..spec.size {
            // black background, as in skull-stripped MRI slices
            let v = if inside(x as f64 + 0.5, y as f64 + 0.5) {
                level + (rng.uniform() - 0.5) * 24.0
            } else {
                0.0
            };
            pixels.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    Image::new(spec.size, spec.size, pixels).expect("size is nonzero")
}

/// Write `per_class` PNGs into `dir/<ClassName>/` for every class.
pub fn synthesize_dataset(dir: &Path, spec: &SynthSpec) -> Result<Vec<PathBuf>, PipelineError> {
    if spec.per_class == 0 || spec.size < 8 {
        return Err(PipelineError::Config(
            "synthetic dataset needs per_class >= 1 and size >= 8".into(),
        ));
    }
    let mut written = Vec::new();
    for (class, name) in CLASS_NAMES.iter().enumerate() {
        let class_dir = dir.join(name);
        std::fs::create_dir_all(&class_dir).map_err(|e| PipelineError::io(Phase::Synthesize, &class_dir, e))?;
        let images = crate::exec::map_range(spec.per_class, |k| synth_image(class, k, spec).encode_png());
        for (k, png) in images.into_iter().enumerate() {
            let path = class_dir.join(format!("synth_{k:03}.png"));
            std::fs::write(&path, png).map_err(|e| PipelineError::io(Phase::Synthesize, &path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}
