//! Inference modes and the evaluation harness.

mod eval;
pub mod records;

use serde::{Deserialize, Serialize};
use wwbl_core::mask2box::largest_contour_box;
use wwbl_core::{
    cluster_captions, extract_wsg_boxes, extract_wsol_box, selective_search, BoundingBox, ClusterConfig, Detection,
    DetectionSet, ExtractionConfig, ImageTensor, Phrase, ProposalConfig, SaliencyMask,
};

use crate::backend::VisionLanguageBackend;
use crate::error::{ModelError, Result};
use crate::net::{GroundingNet, Variant};
pub use eval::{evaluate, EvalReport, EvalTask, QueryRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WwblMode {
    /// Proposals, captions, clustering, one grounding pass per cluster.
    SelectiveSearch,
    /// Caption, ground, crop, re-caption, erase; repeat.
    Iterative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WwblConfig {
    pub mode: WwblMode,
    pub max_iterations: usize,
    pub accept_similarity: f64,
    pub extraction: ExtractionConfig,
    pub proposals: ProposalConfig,
    pub cluster: ClusterConfig,
}

impl Default for WwblConfig {
    fn default() -> Self {
        Self {
            mode: WwblMode::SelectiveSearch,
            max_iterations: 5,
            accept_similarity: 0.6,
            extraction: ExtractionConfig::default(),
            proposals: ProposalConfig::default(),
            cluster: ClusterConfig::default(),
        }
    }
}

impl WwblConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.accept_similarity > 0.0 && self.accept_similarity < 1.0) {
            return Err(ModelError::Config(
                "pipeline.accept_similarity must lie in (0, 1)".into(),
            ));
        }
        if self.max_iterations == 0 {
            return Err(ModelError::Config("pipeline.max_iterations must be at least 1".into()));
        }
        self.extraction.validate()?;
        self.proposals.validate()?;
        self.cluster.validate()?;
        Ok(())
    }
}

/// Detections for one image, with the mask each detection was read from
/// when one exists (`masks[k]` belongs to `detections.detections[k]`).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Prediction {
    pub detections: DetectionSet,
    pub masks: Vec<Option<SaliencyMask>>,
    /// Pointing location `(x, y)` per detection: the mask argmax, or a point
    /// read back from a record.
    pub points: Vec<Option<(u32, u32)>>,
}

impl Prediction {
    pub fn new(image_id: impl Into<String>) -> Self {
        Self {
            detections: DetectionSet {
                image_id: image_id.into(),
                detections: Vec::new(),
            },
            masks: Vec::new(),
            points: Vec::new(),
        }
    }

    pub fn image_id(&self) -> &str {
        &self.detections.image_id
    }

    pub fn len(&self) -> usize {
        self.detections.detections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.detections.detections.is_empty()
    }

    pub fn push(&mut self, det: Detection, mask: Option<SaliencyMask>) {
        let point = mask.as_ref().map(|m| {
            let (y, x) = m.argmax();
            (x as u32, y as u32)
        });
        self.detections.detections.push(det);
        self.masks.push(mask);
        self.points.push(point);
    }

    /// Push a detection with a known pointing location but no mask.
    pub fn push_point(&mut self, det: Detection, point: Option<(u32, u32)>) {
        self.detections.detections.push(det);
        self.masks.push(None);
        self.points.push(point);
    }

    pub fn point(&self, k: usize) -> Option<(u32, u32)> {
        self.points.get(k).copied().flatten()
    }

    pub fn mask(&self, k: usize) -> Option<&SaliencyMask> {
        self.masks.get(k).and_then(Option::as_ref)
    }
}

fn require_variant(net: &GroundingNet, v: Variant) -> Result<()> {
    if net.config().variant != v {
        return Err(ModelError::Config(format!(
            "this mode needs a {v:?} network, found {:?}",
            net.config().variant
        )));
    }
    Ok(())
}

/// Class-agnostic localization: the mask and its single box.
pub fn infer_wsol(
    img: &ImageTensor,
    net: &GroundingNet,
    cfg: &ExtractionConfig,
) -> Result<(SaliencyMask, BoundingBox)> {
    require_variant(net, Variant::Wsol)?;
    let mask = net.predict(img, None)?;
    let bbox = extract_wsol_box(&mask, cfg);
    Ok((mask, bbox))
}

/// Phrase grounding: the mask for `phrase` and its scored boxes, best first.
pub fn infer_wsg<B: VisionLanguageBackend + ?Sized>(
    img: &ImageTensor,
    phrase: &str,
    net: &GroundingNet,
    backend: &B,
    cfg: &ExtractionConfig,
) -> Result<(SaliencyMask, Vec<(BoundingBox, f32)>)> {
    require_variant(net, Variant::Multimodal)?;
    let t = Phrase::new(phrase)?;
    let mask = net.predict(img, Some(&backend.encode_text(&t)?))?;
    let boxes = extract_wsg_boxes(&mask, cfg);
    Ok((mask, boxes))
}

/// Wrap a grounding result as a prediction tagged with `phrase`.
pub fn wsg_prediction(
    image_id: &str,
    phrase: &Phrase,
    mask: SaliencyMask,
    boxes: &[(BoundingBox, f32)],
) -> Result<Prediction> {
    let mut p = Prediction::new(image_id);
    for &(b, s) in boxes {
        p.push(
            Detection::new(b, phrase.clone(), s.clamp(0.0, 1.0))?,
            Some(mask.clone()),
        );
    }
    Ok(p)
}

/// Detect and describe every object: caption selective-search crops,
/// cluster the captions, and ground each cluster's representative.
pub fn infer_wwbl_ss<B: VisionLanguageBackend + ?Sized>(
    image_id: &str,
    img: &ImageTensor,
    net: &GroundingNet,
    backend: &B,
    cfg: &WwblConfig,
) -> Result<Prediction> {
    require_variant(net, Variant::Multimodal)?;
    cfg.validate()?;
    let proposals = selective_search(img, &cfg.proposals)?;
    let captions = proposals
        .iter()
        .map(|p| backend.caption(&p.crop))
        .collect::<Result<Vec<_>>>()?;
    let embeddings = captions
        .iter()
        .map(|c| backend.encode_text(c))
        .collect::<Result<Vec<_>>>()?;
    let clusters = cluster_captions(&captions, &embeddings, &cfg.cluster)?;
    let mut out = Prediction::new(image_id);
    for c in clusters {
        let mask = net.predict(img, Some(&c.embedding))?;
        for (b, s) in extract_wsg_boxes(&mask, &cfg.extraction) {
            out.push(
                Detection::new(b, c.representative.clone(), s.clamp(0.0, 1.0))?,
                Some(mask.clone()),
            );
        }
    }
    Ok(out)
}

/// Iterative variant: ground the current caption, accept the largest region
/// while its own caption stays close to the first one, then erase it and
/// re-caption what is left.
pub fn infer_wwbl_iter<B: VisionLanguageBackend + ?Sized>(
    image_id: &str,
    img: &ImageTensor,
    net: &GroundingNet,
    backend: &B,
    cfg: &WwblConfig,
) -> Result<Prediction> {
    require_variant(net, Variant::Multimodal)?;
    cfg.validate()?;
    let first = backend.caption(img)?;
    let mut caption = first.clone();
    let mut working = img.clone();
    let mut out = Prediction::new(image_id);
    for _ in 0..cfg.max_iterations {
        // grounding and cropping see the image with earlier finds erased
        let mask = net.predict(&working, Some(&backend.encode_text(&caption)?))?;
        let Some(b) = largest_contour_box(&mask, cfg.extraction.wsg_threshold) else {
            break;
        };
        let patch_caption = backend.caption(&working.crop(&b)?)?;
        if backend.text_similarity(&patch_caption, &first)? < cfg.accept_similarity {
            break;
        }
        let score = mask.mean_in(&b).clamp(0.0, 1.0);
        out.push(Detection::new(b, patch_caption, score)?, Some(mask));
        working.zero_region(&b);
        caption = backend.caption(&working)?;
    }
    Ok(out)
}

/// Run the configured WWbL mode.
pub fn infer_wwbl<B: VisionLanguageBackend + ?Sized>(
    image_id: &str,
    img: &ImageTensor,
    net: &GroundingNet,
    backend: &B,
    cfg: &WwblConfig,
) -> Result<Prediction> {
    match cfg.mode {
        WwblMode::SelectiveSearch => infer_wwbl_ss(image_id, img, net, backend, cfg),
        WwblMode::Iterative => infer_wwbl_iter(image_id, img, net, backend, cfg),
    }
}
