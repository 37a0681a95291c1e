use serde::{Deserialize, Serialize};

use super::{BinaryMask, WatershedError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MorphOp {
    Erode,
    Dilate,
    /// Erode `iterations` times, then dilate `iterations` times.
    Open,
}

/// Full square structuring element of odd side length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Element {
    pub size: usize,
}

impl Element {
    pub const SQUARE3: Element = Element { size: 3 };

    fn radius(&self) -> usize {
        self.size / 2
    }
}

impl Default for Element {
    fn default() -> Self {
        Self::SQUARE3
    }
}

/// Binary erosion/dilation/opening. Pixels outside the image count as
/// false for both erosion and dilation, so erosion always clears the border.
pub fn morphology(
    mask: &BinaryMask,
    op: MorphOp,
    element: Element,
    iterations: usize,
) -> Result<BinaryMask, WatershedError> {
    if iterations == 0 {
        return Err(WatershedError::Argument("iterations must be >= 1".into()));
    }
    if element.size == 0 || element.size.is_multiple_of(2) {
        return Err(WatershedError::Argument(format!(
            "structuring element size must be odd, got {}",
            element.size
        )));
    }
    let mut out = mask.clone();
    match op {
        MorphOp::Erode => {
            for _ in 0..iterations {
                out = step(&out, element, true);
            }
        }
        MorphOp::Dilate => {
            for _ in 0..iterations {
                out = step(&out, element, false);
            }
        }
        MorphOp::Open => {
            for _ in 0..iterations {
                out = step(&out, element, true);
            }
            for _ in 0..iterations {
                out = step(&out, element, false);
            }
        }
    }
    Ok(out)
}

fn step(mask: &BinaryMask, element: Element, erode: bool) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let r = element.radius() as isize;
    let bits = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| {
            let mut all = true;
            let mut any = false;
            for dy in -r..=r {
                for dx in -r..=r {
                    let (nx, ny) = (x as isize + dx, y as isize + dy);
                    let v = nx >= 0
                        && ny >= 0
                        && (nx as usize) < w
                        && (ny as usize) < h
                        && mask.get(nx as usize, ny as usize);
                    all &= v;
                    any |= v;
                }
            }
            if erode {
                all
            } else {
                any
            }
        })
        .collect();
    BinaryMask::from_bits(w, h, bits)
}
