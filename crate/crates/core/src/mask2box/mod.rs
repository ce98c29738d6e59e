//! Saliency mask to bounding box conversion.

mod contour;

pub use contour::{binarize, trace_contours, BinaryMask, BorderKind, Contour};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::geometry::{nms, BoundingBox};
use crate::mask::SaliencyMask;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionConfig {
    /// Binarization threshold for single-object localization.
    pub wsol_threshold: f32,
    /// Binarization threshold for phrase grounding.
    pub wsg_threshold: f32,
    pub nms_iou: f64,
    /// Boxes scoring below this fraction of the best score are dropped.
    pub energy_keep_ratio: f32,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            wsol_threshold: 0.1,
            wsg_threshold: 0.5,
            nms_iou: 0.3,
            energy_keep_ratio: 0.5,
        }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<()> {
        let open = |v: f64| v > 0.0 && v < 1.0;
        if !open(self.wsol_threshold as f64) || !open(self.wsg_threshold as f64) {
            return Err(CoreError::InvalidConfig("extract thresholds must lie in (0, 1)".into()));
        }
        if !open(self.nms_iou) {
            return Err(CoreError::InvalidConfig("extract.nms_iou must lie in (0, 1)".into()));
        }
        if !(self.energy_keep_ratio > 0.0 && self.energy_keep_ratio <= 1.0) {
            return Err(CoreError::InvalidConfig(
                "extract.energy_keep_ratio must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// Box of the outer contour with the largest enclosed area, if any pixel
/// reaches `threshold`. Ties keep the first contour in raster order.
pub fn largest_contour_box(mask: &SaliencyMask, threshold: f32) -> Option<BoundingBox> {
    let contours = trace_contours(&binarize(mask, threshold));
    let mut best: Option<&Contour> = None;
    for c in contours.iter().filter(|c| c.kind == BorderKind::Outer) {
        if best.is_none_or(|b| c.area() > b.area()) {
            best = Some(c);
        }
    }
    best.map(Contour::bounding_box)
}

/// Single-object box; falls back to the full frame when nothing survives the
/// threshold.
pub fn extract_wsol_box(mask: &SaliencyMask, cfg: &ExtractionConfig) -> BoundingBox {
    largest_contour_box(mask, cfg.wsol_threshold).unwrap_or_else(|| {
        BoundingBox::new(0, 0, mask.width() as u32, mask.height() as u32).expect("mask extent is positive")
    })
}

/// Scored boxes for phrase grounding: one candidate per outer contour, scored
/// by the mean raw mask value inside the box, then NMS and a relative score
/// filter. Output is ordered by descending score.
pub fn extract_wsg_boxes(mask: &SaliencyMask, cfg: &ExtractionConfig) -> Vec<(BoundingBox, f32)> {
    let candidates: Vec<(BoundingBox, f32)> = trace_contours(&binarize(mask, cfg.wsg_threshold))
        .iter()
        .filter(|c| c.kind == BorderKind::Outer)
        .map(|c| {
            let b = c.bounding_box();
            (b, mask.mean_in(&b))
        })
        .collect();
    let kept = nms(&candidates, cfg.nms_iou);
    let Some(best) = kept.first().map(|k| k.1) else {
        return kept;
    };
    let floor = cfg.energy_keep_ratio * best;
    kept.into_iter().filter(|(_, s)| *s >= floor).collect()
}
