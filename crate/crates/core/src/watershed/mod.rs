//! Marker-based watershed segmentation and the feature image derived from it.
//!
//! The chain run by [`watershed_features`]:
//!
//! 1. Otsu threshold (brain = bright = foreground)
//! 2. opening with a 3x3 square, 2 iterations
//! 3. sure background: complement of the opening dilated 3 times
//! 4. exact Euclidean distance transform of the opening
//! 5. sure foreground: distance > 0.7 * max distance
//! 6. 8-connected components of the sure foreground as object markers
//! 7. priority flood on intensity; boundary pixels burned in as 255
//!
//! Every knob lives in [`WatershedParams`].

mod distance;
mod flood;
mod markers;
mod morphology;
mod threshold;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Image;

pub use distance::distance_transform;
pub use flood::{watershed_flood, watershed_flood_traced, FloodPop, BOUNDARY};
pub use markers::{extract_markers, Markers, BACKGROUND, FIRST_OBJECT, UNKNOWN};
pub use morphology::{morphology, Element, MorphOp};
pub use threshold::{otsu_level, otsu_threshold};

#[derive(Debug, Error)]
pub enum WatershedError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("dimension mismatch: expected {expected:?}, found {found:?}")]
    Dimensions {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("marker map has no labeled pixel")]
    NoMarkers,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Connectivity {
    Four,
    #[default]
    Eight,
}

const N4: [(isize, isize); 4] = [(0, -1), (-1, 0), (1, 0), (0, 1)];
const N8: [(isize, isize); 8] = [
    (-1, -1),
    (0, -1),
    (1, -1),
    (-1, 0),
    (1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
];

impl Connectivity {
    /// In-bounds neighbor indices of `(x, y)` in a `w` x `h` grid.
    pub fn neighbors(self, x: usize, y: usize, w: usize, h: usize) -> impl Iterator<Item = usize> {
        let offsets: &'static [(isize, isize)] = match self {
            Connectivity::Four => &N4,
            Connectivity::Eight => &N8,
        };
        offsets.iter().filter_map(move |&(dx, dy)| {
            let (nx, ny) = (x as isize + dx, y as isize + dy);
            (nx >= 0 && ny >= 0 && (nx as usize) < w && (ny as usize) < h)
                .then(|| ny as usize * w + nx as usize)
        })
    }
}

macro_rules! grid {
    ($(#[$doc:meta])* $name:ident, $field:ident, $t:ty) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name {
            width: usize,
            height: usize,
            $field: Vec<$t>,
        }

        impl $name {
            pub fn new(width: usize, height: usize, $field: Vec<$t>) -> Self {
                assert_eq!($field.len(), width * height, "grid size mismatch");
                Self { width, height, $field }
            }

            pub fn width(&self) -> usize {
                self.width
            }

            pub fn height(&self) -> usize {
                self.height
            }

            pub fn $field(&self) -> &[$t] {
                &self.$field
            }

            pub fn get(&self, x: usize, y: usize) -> $t {
                self.$field[y * self.width + x]
            }

            pub fn set(&mut self, x: usize, y: usize, v: $t) {
                self.$field[y * self.width + x] = v;
            }
        }
    };
}

grid!(
    /// Row-major foreground flags.
    BinaryMask, bits, bool
);
grid!(
    /// Per-pixel distance to the nearest background pixel.
    DistanceMap, values, f64
);
grid!(
    /// 0 = unknown, 1 = sure background, >= 2 = object markers.
    MarkerMap, labels, i32
);
grid!(
    /// -1 = watershed boundary, >= 1 = basin label.
    LabelMap, labels, i32
);

impl BinaryMask {
    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Self {
        Self::new(width, height, bits)
    }

    pub fn filled(width: usize, height: usize, v: bool) -> Self {
        Self::new(width, height, vec![v; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let bits = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        Self::new(width, height, bits)
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn not(&self) -> Self {
        Self::new(self.width, self.height, self.bits.iter().map(|b| !b).collect())
    }

    pub fn to_image(&self) -> Image {
        Image::new(
            self.width,
            self.height,
            self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect(),
        )
        .expect("mask dims are positive")
    }
}

impl DistanceMap {
    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Linear rescale of `[0, max]` to `[0, 255]`.
    pub fn to_image(&self) -> Image {
        let max = self.max();
        let px = self
            .values
            .iter()
            .map(|&v| if max > 0.0 { (v / max * 255.0).round() as u8 } else { 0 })
            .collect();
        Image::new(self.width, self.height, px).expect("map dims are positive")
    }
}

impl MarkerMap {
    /// Unknown black, background dark gray, objects spread over 128..=255.
    pub fn to_image(&self) -> Image {
        let max = self.labels.iter().copied().max().unwrap_or(0);
        let px = self
            .labels
            .iter()
            .map(|&l| match l {
                UNKNOWN => 0,
                BACKGROUND => 64,
                _ if max <= FIRST_OBJECT => 255,
                l => (128 + (l - FIRST_OBJECT) * 127 / (max - FIRST_OBJECT)) as u8,
            })
            .collect();
        Image::new(self.width, self.height, px).expect("map dims are positive")
    }
}

impl LabelMap {
    pub fn boundary_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == BOUNDARY).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WatershedParams {
    pub open_iterations: usize,
    pub dilate_iterations: usize,
    /// Sure-foreground cut as a fraction of the maximum distance.
    pub fg_ratio: f64,
    pub element: Element,
    /// Connectivity of marker components.
    pub marker_connectivity: Connectivity,
    /// Connectivity of the flood.
    pub flood_connectivity: Connectivity,
    /// Treat dark pixels as foreground instead.
    pub invert: bool,
}

impl Default for WatershedParams {
    fn default() -> Self {
        Self {
            open_iterations: 2,
            dilate_iterations: 3,
            fg_ratio: 0.7,
            element: Element::SQUARE3,
            marker_connectivity: Connectivity::Eight,
            flood_connectivity: Connectivity::Four,
            invert: false,
        }
    }
}

/// Every intermediate of one segmentation, for auditing.
#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub level: u8,
    pub mask: BinaryMask,
    pub opened: BinaryMask,
    pub sure_bg: BinaryMask,
    pub distance: DistanceMap,
    pub sure_fg: BinaryMask,
    pub markers: Markers,
    /// `None` on the degenerate path.
    pub labels: Option<LabelMap>,
    pub feature: Image,
}

impl Segmentation {
    /// No object marker survived, so the feature image is the raw input.
    pub fn degenerate(&self) -> bool {
        self.labels.is_none()
    }

    /// Write each step as a PGM named `<stem>_<step>.pgm` into `dir`.
    pub fn dump(&self, dir: &Path, stem: &str) -> Result<(), WatershedError> {
        let io = |path: &Path| {
            let path = path.to_path_buf();
            move |e: crate::dataset::DatasetError| match e {
                crate::dataset::DatasetError::Io { source, .. } => WatershedError::Io { path, source },
                other => WatershedError::Argument(other.to_string()),
            }
        };
        let mut steps: Vec<(&str, Image)> = vec![
            ("1_mask", self.mask.to_image()),
            ("2_opened", self.opened.to_image()),
            ("3_sure_bg", self.sure_bg.to_image()),
            ("4_distance", self.distance.to_image()),
            ("5_sure_fg", self.sure_fg.to_image()),
            ("6_markers", self.markers.map.to_image()),
        ];
        steps.push(("7_feature", self.feature.clone()));
        for (name, img) in steps {
            let path = dir.join(format!("{stem}_{name}.pgm"));
            img.write_pgm(&path).map_err(io(&path))?;
        }
        Ok(())
    }
}

/// Run the full chain and keep every intermediate.
pub fn segment(img: &Image, params: &WatershedParams) -> Result<Segmentation, WatershedError> {
    if !(0.0..1.0).contains(&params.fg_ratio) {
        return Err(WatershedError::Argument(format!(
            "fg_ratio must be in [0, 1), got {}",
            params.fg_ratio
        )));
    }
    let (level, mask) = otsu_threshold(img, params.invert);
    let opened = morphology(&mask, MorphOp::Open, params.element, params.open_iterations)?;
    let sure_bg = morphology(&opened, MorphOp::Dilate, params.element, params.dilate_iterations)?.not();
    let distance = distance_transform(&opened);
    let cut = params.fg_ratio * distance.max();
    let sure_fg = BinaryMask::from_bits(
        img.width(),
        img.height(),
        distance.values().iter().map(|&d| d > cut).collect(),
    );
    let markers = extract_markers(&sure_fg, &sure_bg, params.marker_connectivity)?;
    let labels = if markers.object_count == 0 {
        None
    } else {
        Some(watershed_flood(img, &markers.map, params.flood_connectivity)?)
    };
    let feature = match &labels {
        None => img.clone(),
        Some(l) => {
            let mut out = img.clone();
            for (p, &lab) in out.pixels_mut().iter_mut().zip(l.labels()) {
                if lab == BOUNDARY {
                    *p = 255;
                }
            }
            out
        }
    };
    Ok(Segmentation {
        level,
        mask,
        opened,
        sure_bg,
        distance,
        sure_fg,
        markers,
        labels,
        feature,
    })
}

/// Feature image for one sample plus whether the degenerate fallback fired.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureImage {
    pub image: Image,
    pub degenerate: bool,
}

/// The classifier input: the grayscale image with watershed boundaries set
/// to 255, or the unmodified image when segmentation finds no object.
pub fn watershed_features(img: &Image, params: &WatershedParams) -> Result<FeatureImage, WatershedError> {
    let seg = segment(img, params)?;
    Ok(FeatureImage {
        degenerate: seg.degenerate(),
        image: seg.feature,
    })
}

/// [`watershed_features`] over a batch, in parallel, order preserved.
pub fn watershed_features_batch(
    images: &[Image],
    params: &WatershedParams,
) -> Result<Vec<FeatureImage>, WatershedError> {
    crate::exec::try_map_range(images.len(), |i| watershed_features(&images[i], params))
}
