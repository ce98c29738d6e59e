use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Axis-aligned box in integer pixel coordinates: top-left corner plus extent.
///
/// Serialized as `[x, y, w, h]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "[u32; 4]", try_from = "[u32; 4]")]
pub struct BoundingBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BoundingBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Result<Self> {
        if w == 0 || h == 0 {
            return Err(CoreError::InvalidBox {
                x: x as i64,
                y: y as i64,
                w: w as i64,
                h: h as i64,
                reason: "extent must be positive".into(),
            });
        }
        Ok(Self { x, y, w, h })
    }

    /// Box spanning the inclusive pixel range `[x0, x1] x [y0, y1]`.
    pub fn from_inclusive(x0: u32, y0: u32, x1: u32, y1: u32) -> Self {
        debug_assert!(x1 >= x0 && y1 >= y0);
        Self {
            x: x0,
            y: y0,
            w: x1 - x0 + 1,
            h: y1 - y0 + 1,
        }
    }

    pub fn area(&self) -> u64 {
        self.w as u64 * self.h as u64
    }

    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn contains_point(&self, px: u32, py: u32) -> bool {
        px >= self.x && px < self.right() && py >= self.y && py < self.bottom()
    }

    pub fn fits_within(&self, width: u32, height: u32) -> bool {
        self.right() <= width && self.bottom() <= height
    }

    /// Intersection with the `width x height` frame, `None` if empty.
    pub fn clip_to(&self, width: u32, height: u32) -> Option<Self> {
        let x1 = self.right().min(width);
        let y1 = self.bottom().min(height);
        (x1 > self.x && y1 > self.y).then(|| Self {
            x: self.x,
            y: self.y,
            w: x1 - self.x,
            h: y1 - self.y,
        })
    }

    pub fn intersection_area(&self, other: &Self) -> u64 {
        let x0 = self.x.max(other.x);
        let y0 = self.y.max(other.y);
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        if x1 <= x0 || y1 <= y0 {
            0
        } else {
            (x1 - x0) as u64 * (y1 - y0) as u64
        }
    }

    /// Centre pixel (rounded down).
    pub fn center(&self) -> (u32, u32) {
        (self.x + (self.w - 1) / 2, self.y + (self.h - 1) / 2)
    }

    /// Smallest box containing both.
    pub fn union_hull(&self, other: &Self) -> Self {
        let x0 = self.x.min(other.x);
        let y0 = self.y.min(other.y);
        Self {
            x: x0,
            y: y0,
            w: self.right().max(other.right()) - x0,
            h: self.bottom().max(other.bottom()) - y0,
        }
    }

    /// Mirror across the vertical axis of a frame of the given width.
    pub fn flip_horizontal(&self, frame_width: u32) -> Self {
        Self {
            x: frame_width - self.right(),
            ..*self
        }
    }
}

impl From<BoundingBox> for [u32; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl TryFrom<[u32; 4]> for BoundingBox {
    type Error = CoreError;

    fn try_from(v: [u32; 4]) -> Result<Self> {
        Self::new(v[0], v[1], v[2], v[3])
    }
}

/// Intersection over union, in `[0, 1]`.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let inter = a.intersection_area(b);
    if inter == 0 {
        return 0.0;
    }
    if a == b {
        return 1.0;
    }
    let union = a.area() + b.area() - inter;
    inter as f64 / union as f64
}

/// Indices of the boxes kept by greedy non-maximum suppression, in keep order.
///
/// Candidates are visited by descending score, then descending area, then
/// input order. A box survives iff its IoU with every already-kept box is
/// strictly below `iou_threshold`.
pub fn nms_indices(boxes: &[(BoundingBox, f32)], iou_threshold: f64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&i, &j| {
        boxes[j]
            .1
            .total_cmp(&boxes[i].1)
            .then(boxes[j].0.area().cmp(&boxes[i].0.area()))
            .then(i.cmp(&j))
    });
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&k| iou(&boxes[k].0, &boxes[i].0) < iou_threshold) {
            kept.push(i);
        }
    }
    kept
}

pub fn nms(boxes: &[(BoundingBox, f32)], iou_threshold: f64) -> Vec<(BoundingBox, f32)> {
    nms_indices(boxes, iou_threshold)
        .into_iter()
        .map(|i| boxes[i])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn b(x: u32, y: u32, w: u32, h: u32) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    #[test]
    fn iou_examples() {
        assert_eq!(iou(&b(0, 0, 10, 10), &b(0, 0, 10, 10)), 1.0);
        assert_eq!(iou(&b(0, 0, 10, 10), &b(20, 20, 5, 5)), 0.0);
        // intersection 50, union 150
        assert!((iou(&b(0, 0, 10, 10), &b(5, 0, 10, 10)) - 1.0 / 3.0).abs() < 1e-12);
        // touching edges do not overlap
        assert_eq!(iou(&b(0, 0, 10, 10), &b(10, 0, 10, 10)), 0.0);
    }

    #[test]
    fn zero_extent_is_rejected() {
        assert!(BoundingBox::new(1, 1, 0, 3).is_err());
        assert!(BoundingBox::try_from([1, 1, 3, 0]).is_err());
    }

    #[test]
    fn nms_examples() {
        assert!(nms(&[], 0.3).is_empty());
        let same = [(b(0, 0, 10, 10), 0.9), (b(0, 0, 10, 10), 0.8)];
        assert_eq!(nms(&same, 0.3), vec![(b(0, 0, 10, 10), 0.9)]);
        let three = [(b(0, 0, 10, 10), 0.9), (b(5, 0, 10, 10), 0.8), (b(30, 30, 10, 10), 0.7)];
        assert_eq!(nms(&three, 0.3), vec![three[0], three[2]]);
    }

    #[test]
    fn nms_breaks_score_ties_by_area_then_order() {
        let boxes = [(b(0, 0, 4, 4), 0.5), (b(0, 0, 5, 5), 0.5), (b(40, 40, 5, 5), 0.5)];
        assert_eq!(nms_indices(&boxes, 0.3), vec![1, 2]);
    }

    #[test]
    fn clip_and_flip() {
        assert_eq!(b(8, 8, 10, 10).clip_to(12, 20), Some(b(8, 8, 4, 10)));
        assert_eq!(b(12, 0, 3, 3).clip_to(12, 20), None);
        assert_eq!(b(1, 2, 3, 4).flip_horizontal(10), b(6, 2, 3, 4));
    }
}
