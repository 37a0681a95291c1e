use std::collections::VecDeque;

use super::{BinaryMask, Connectivity, MarkerMap, WatershedError};

/// Marker labels: `UNKNOWN` for the region the flood decides, `BACKGROUND`
/// for sure background, objects from `FIRST_OBJECT` upwards.
pub const UNKNOWN: i32 = 0;
pub const BACKGROUND: i32 = 1;
pub const FIRST_OBJECT: i32 = 2;

#[derive(Debug, Clone, PartialEq)]
pub struct Markers {
    pub map: MarkerMap,
    pub object_count: usize,
    /// Pixels flagged as both sure foreground and sure background.
    pub overlap: usize,
}

/// Label connected components of `sure_fg` as 2, 3, ... in row-major order
/// of each component's first pixel; `sure_bg` pixels not in `sure_fg` get 1.
pub fn extract_markers(
    sure_fg: &BinaryMask,
    sure_bg: &BinaryMask,
    connectivity: Connectivity,
) -> Result<Markers, WatershedError> {
    let (w, h) = (sure_fg.width(), sure_fg.height());
    if (sure_bg.width(), sure_bg.height()) != (w, h) {
        return Err(WatershedError::Dimensions {
            expected: (w, h),
            found: (sure_bg.width(), sure_bg.height()),
        });
    }
    let mut labels = vec![UNKNOWN; w * h];
    let mut overlap = 0;
    for i in 0..w * h {
        if sure_bg.bits()[i] {
            if sure_fg.bits()[i] {
                overlap += 1;
            } else {
                labels[i] = BACKGROUND;
            }
        }
    }

    let mut next = FIRST_OBJECT;
    let mut seen = vec![false; w * h];
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if !sure_fg.bits()[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            labels[p] = next;
            for n in connectivity.neighbors(p % w, p / w, w, h) {
                if sure_fg.bits()[n] && !seen[n] {
                    seen[n] = true;
                    queue.push_back(n);
                }
            }
        }
        next += 1;
    }
    Ok(Markers {
        map: MarkerMap::new(w, h, labels),
        object_count: (next - FIRST_OBJECT) as usize,
        overlap,
    })
}
