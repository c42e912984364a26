//! Axis-aligned 3D boxes in millimeter world coordinates.
//!
//! Boxes are stored as a min corner and a max corner. Any input ordering of
//! the six coordinates is normalized by [`Box3::from_corners`], so every
//! `Box3` value satisfies `min[k] <= max[k]` on each axis.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default overlap threshold of the greedy NMS ingest filter.
pub const DEFAULT_NMS_THRESHOLD: f64 = 0.22;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 6]", into = "[f64; 6]")]
pub struct Box3 {
    min: [f64; 3],
    max: [f64; 3],
}

impl Box3 {
    /// Builds a box from explicit min and max corners, rejecting inverted or
    /// non-finite coordinates.
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Result<Self> {
        for k in 0..3 {
            if !min[k].is_finite() || !max[k].is_finite() {
                return Err(Error::InvalidBox(format!(
                    "non-finite coordinate on axis {k}"
                )));
            }
            if min[k] > max[k] {
                return Err(Error::InvalidBox(format!(
                    "min {} exceeds max {} on axis {k}",
                    min[k], max[k]
                )));
            }
        }
        Ok(Self { min, max })
    }

    /// Builds a box from two opposite corners in any order.
    pub fn from_corners(a: [f64; 3], b: [f64; 3]) -> Result<Self> {
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidBox("non-finite coordinate".into()));
        }
        let mut min = [0.0; 3];
        let mut max = [0.0; 3];
        for k in 0..3 {
            min[k] = a[k].min(b[k]);
            max[k] = a[k].max(b[k]);
        }
        Self::new(min, max)
    }

    /// Parses the flat `[x1, y1, z1, x2, y2, z2]` layout used by record files.
    pub fn from_flat(c: [f64; 6]) -> Result<Self> {
        Self::from_corners([c[0], c[1], c[2]], [c[3], c[4], c[5]])
    }

    /// Axis-aligned cube of edge `size` centered at `center`.
    pub fn cube(center: [f64; 3], size: f64) -> Result<Self> {
        let h = size / 2.0;
        Self::new(
            [center[0] - h, center[1] - h, center[2] - h],
            [center[0] + h, center[1] + h, center[2] + h],
        )
    }

    pub fn min(&self) -> [f64; 3] {
        self.min
    }

    pub fn max(&self) -> [f64; 3] {
        self.max
    }

    pub fn to_flat(&self) -> [f64; 6] {
        [
            self.min[0], self.min[1], self.min[2], self.max[0], self.max[1], self.max[2],
        ]
    }

    pub fn center(&self) -> [f64; 3] {
        [
            0.5 * (self.min[0] + self.max[0]),
            0.5 * (self.min[1] + self.max[1]),
            0.5 * (self.min[2] + self.max[2]),
        ]
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.max[axis] - self.min[axis]
    }

    pub fn volume(&self) -> f64 {
        self.extent(0) * self.extent(1) * self.extent(2)
    }

    pub fn is_degenerate(&self) -> bool {
        self.volume() == 0.0
    }

    pub fn translate(&self, offset: [f64; 3]) -> Self {
        Self {
            min: std::array::from_fn(|k| self.min[k] + offset[k]),
            max: std::array::from_fn(|k| self.max[k] + offset[k]),
        }
    }

    /// Volume of the overlap region, zero when the boxes only touch or are apart.
    pub fn intersection_volume(&self, other: &Box3) -> f64 {
        let mut v = 1.0;
        for k in 0..3 {
            let lo = self.min[k].max(other.min[k]);
            let hi = self.max[k].min(other.max[k]);
            if hi <= lo {
                return 0.0;
            }
            v *= hi - lo;
        }
        v
    }

    /// Total order on boxes: lexicographic on the min corner, then the max corner.
    pub fn lex_cmp(&self, other: &Box3) -> Ordering {
        self.min
            .iter()
            .chain(self.max.iter())
            .zip(other.min.iter().chain(other.max.iter()))
            .map(|(a, b)| a.total_cmp(b))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    }
}

impl TryFrom<[f64; 6]> for Box3 {
    type Error = Error;

    fn try_from(c: [f64; 6]) -> Result<Self> {
        Self::from_flat(c)
    }
}

impl From<Box3> for [f64; 6] {
    fn from(b: Box3) -> Self {
        b.to_flat()
    }
}

pub fn volume(b: &Box3) -> f64 {
    b.volume()
}

/// Intersection over union. Zero whenever either operand has zero volume.
pub fn iou(a: &Box3, b: &Box3) -> f64 {
    let va = a.volume();
    let vb = b.volume();
    if va == 0.0 || vb == 0.0 {
        return 0.0;
    }
    let inter = a.intersection_volume(b);
    if inter == 0.0 {
        return 0.0;
    }
    let union = va + vb - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// A scored box hypothesis emitted by a detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CandidateBox {
    #[serde(rename = "box")]
    pub bbox: Box3,
    pub confidence: f64,
}

impl CandidateBox {
    pub fn new(bbox: Box3, confidence: f64) -> Self {
        Self { bbox, confidence }
    }
}

/// Detector ranking order: higher confidence first, ties by box order.
pub(crate) fn rank_cmp(a: &CandidateBox, b: &CandidateBox) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then_with(|| a.bbox.lex_cmp(&b.bbox))
}

/// Greedy hard non-maximum suppression.
///
/// Repeatedly keeps the highest-confidence remaining box and discards every
/// remaining box whose IoU with it exceeds `iou_threshold`. The output is
/// sorted by descending confidence.
pub fn nms_filter(boxes: &[CandidateBox], iou_threshold: f64) -> Vec<CandidateBox> {
    let mut order: Vec<CandidateBox> = boxes.to_vec();
    order.sort_by(rank_cmp);

    let mut suppressed = vec![false; order.len()];
    let mut kept = Vec::new();
    for i in 0..order.len() {
        if suppressed[i] {
            continue;
        }
        let keep = order[i];
        kept.push(keep);
        for (j, flag) in suppressed.iter_mut().enumerate().skip(i + 1) {
            if !*flag && iou(&keep.bbox, &order[j].bbox) > iou_threshold {
                *flag = true;
            }
        }
    }
    kept
}
