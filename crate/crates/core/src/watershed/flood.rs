use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::{Connectivity, LabelMap, MarkerMap, WatershedError, UNKNOWN};
use crate::dataset::Image;

pub const BOUNDARY: i32 = -1;

/// One priority-queue pop, recorded for invariant checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FloodPop {
    pub index: usize,
    pub intensity: u8,
    pub seq: u64,
    /// Sequence counter value when the pop happened; entries with a smaller
    /// `seq` were already queued at that moment.
    pub seq_at_pop: u64,
    pub label: i32,
}

/// Marker-controlled priority flood (Meyer).
///
/// All unlabeled neighbors of marker pixels are queued with key
/// `(intensity, insertion sequence)`. A popped pixel whose labeled
/// neighbors carry one label joins that basin and queues its own unlabeled
/// neighbors; two or more distinct labels make it a boundary pixel (-1),
/// which does not propagate. Pixels never reached (sealed off by boundary
/// pixels) are boundary as well, so every pixel ends up labeled.
pub fn watershed_flood(
    img: &Image,
    markers: &MarkerMap,
    connectivity: Connectivity,
) -> Result<LabelMap, WatershedError> {
    flood(img, markers, connectivity, None)
}

/// [`watershed_flood`] plus the ordered list of queue pops.
pub fn watershed_flood_traced(
    img: &Image,
    markers: &MarkerMap,
    connectivity: Connectivity,
) -> Result<(LabelMap, Vec<FloodPop>), WatershedError> {
    let mut trace = Vec::new();
    let labels = flood(img, markers, connectivity, Some(&mut trace))?;
    Ok((labels, trace))
}

struct Queue {
    heap: BinaryHeap<Reverse<(u8, u64, usize)>>,
    queued: Vec<bool>,
    seq: u64,
}

impl Queue {
    fn push(&mut self, intensity: u8, p: usize) {
        self.queued[p] = true;
        self.heap.push(Reverse((intensity, self.seq, p)));
        self.seq += 1;
    }
}

fn flood(
    img: &Image,
    markers: &MarkerMap,
    connectivity: Connectivity,
    mut trace: Option<&mut Vec<FloodPop>>,
) -> Result<LabelMap, WatershedError> {
    let (w, h) = (img.width(), img.height());
    if (markers.width(), markers.height()) != (w, h) {
        return Err(WatershedError::Dimensions {
            expected: (w, h),
            found: (markers.width(), markers.height()),
        });
    }
    if markers.labels().iter().all(|&l| l == UNKNOWN) {
        return Err(WatershedError::NoMarkers);
    }
    let px = img.pixels();
    let mut labels = markers.labels().to_vec();
    let mut q = Queue {
        heap: BinaryHeap::new(),
        queued: vec![false; w * h],
        seq: 0,
    };

    for p in 0..w * h {
        if labels[p] == UNKNOWN {
            continue;
        }
        for n in connectivity.neighbors(p % w, p / w, w, h) {
            if labels[n] == UNKNOWN && !q.queued[n] {
                q.push(px[n], n);
            }
        }
    }

    let mut neighbor_labels = Vec::with_capacity(8);
    while let Some(Reverse((intensity, s, p))) = q.heap.pop() {
        neighbor_labels.clear();
        for n in connectivity.neighbors(p % w, p / w, w, h) {
            let l = labels[n];
            if l != UNKNOWN && l != BOUNDARY && !neighbor_labels.contains(&l) {
                neighbor_labels.push(l);
            }
        }
        let assigned = match neighbor_labels.as_slice() {
            [only] => *only,
            _ => BOUNDARY,
        };
        labels[p] = assigned;
        if let Some(t) = trace.as_deref_mut() {
            t.push(FloodPop {
                index: p,
                intensity,
                seq: s,
                seq_at_pop: q.seq,
                label: assigned,
            });
        }
        if assigned != BOUNDARY {
            for n in connectivity.neighbors(p % w, p / w, w, h) {
                if labels[n] == UNKNOWN && !q.queued[n] {
                    q.push(px[n], n);
                }
            }
        }
    }

    for l in labels.iter_mut() {
        if *l == UNKNOWN {
            *l = BOUNDARY;
        }
    }
    Ok(LabelMap::new(w, h, labels))
}
