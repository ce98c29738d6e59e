use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use wwbl_core::{iou, BoundingBox, GroundingAnnotation, TextEmbedding};

use super::Prediction;
use crate::backend::VisionLanguageBackend;
use crate::error::{ModelError, Result};

pub const BOX_IOU: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalTask {
    /// One box per image against any ground-truth box.
    Wsol,
    /// Predictions are tagged with the query phrase.
    Wsg,
    /// Free-form predictions matched to queries by caption similarity.
    Wwbl,
}

/// Outcome for one ground-truth query (one phrase, possibly several boxes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryRecord {
    pub image_id: String,
    pub phrase: String,
    /// Index of the detection used, if any.
    pub matched: Option<usize>,
    pub pointing_hit: Option<bool>,
    pub box_hit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: EvalTask,
    pub total: usize,
    /// Not reported for WSOL.
    pub pointing_accuracy: Option<f64>,
    pub box_accuracy: f64,
    pub records: Vec<QueryRecord>,
}

fn box_hit(pred: &BoundingBox, gts: &[BoundingBox]) -> bool {
    gts.iter().any(|g| iou(pred, g) >= BOX_IOU)
}

fn point_hit(pred: &Prediction, k: usize, gts: &[BoundingBox]) -> bool {
    // no mask or stored point: use the box centre
    let (x, y) = pred
        .point(k)
        .unwrap_or_else(|| pred.detections.detections[k].bbox.center());
    gts.iter().any(|g| g.contains_point(x, y))
}

/// Index of the largest value, first on ties.
fn argmax(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if best.is_none_or(|b| *s > scores[b]) {
            best = Some(i);
        }
    }
    best
}

/// Pointing and box accuracy over every ground-truth query. Images without
/// a prediction count as misses.
pub fn evaluate<B: VisionLanguageBackend + ?Sized>(
    preds: &[Prediction],
    gt: &[GroundingAnnotation],
    backend: &B,
    task: EvalTask,
) -> Result<EvalReport> {
    let by_id: HashMap<&str, &Prediction> = preds.iter().map(|p| (p.image_id(), p)).collect();
    let mut text_cache: HashMap<String, TextEmbedding> = HashMap::new();
    let mut embed = |p: &wwbl_core::Phrase| -> Result<TextEmbedding> {
        if let Some(e) = text_cache.get(p.as_str()) {
            return Ok(e.clone());
        }
        let e = backend.encode_text(p)?;
        text_cache.insert(p.as_str().to_string(), e.clone());
        Ok(e)
    };
    let mut records = Vec::new();
    for ann in gt {
        let pred = by_id.get(ann.image_id.as_str()).copied();
        if task == EvalTask::Wsol {
            let gts: Vec<BoundingBox> = ann.regions.iter().map(|r| r.bbox).collect();
            if gts.is_empty() {
                continue;
            }
            let matched = pred.filter(|p| !p.is_empty()).map(|_| 0);
            let hit = matched.is_some_and(|k| box_hit(&pred.unwrap().detections.detections[k].bbox, &gts));
            records.push(QueryRecord {
                image_id: ann.image_id.clone(),
                phrase: String::new(),
                matched,
                pointing_hit: None,
                box_hit: hit,
            });
            continue;
        }
        for (phrase, gts) in ann.queries() {
            let matched = match (pred, task) {
                (None, _) => None,
                (Some(p), EvalTask::Wsg) => p.detections.detections.iter().position(|d| &d.phrase == phrase),
                (Some(p), _) => {
                    let q = embed(phrase)?;
                    let scores = p
                        .detections
                        .detections
                        .iter()
                        .map(|d| Ok(embed(&d.phrase)?.cosine(&q)))
                        .collect::<Result<Vec<f64>>>()?;
                    argmax(&scores)
                }
            };
            let (pointing, boxed) = match (pred, matched) {
                (Some(p), Some(k)) => (point_hit(p, k, &gts), box_hit(&p.detections.detections[k].bbox, &gts)),
                _ => (false, false),
            };
            records.push(QueryRecord {
                image_id: ann.image_id.clone(),
                phrase: phrase.as_str().to_string(),
                matched,
                pointing_hit: Some(pointing),
                box_hit: boxed,
            });
        }
    }
    let total = records.len();
    if total == 0 {
        return Err(ModelError::EmptyEvaluation);
    }
    let frac = |n: usize| n as f64 / total as f64;
    let pointing_accuracy =
        (task != EvalTask::Wsol).then(|| frac(records.iter().filter(|r| r.pointing_hit == Some(true)).count()));
    let box_accuracy = frac(records.iter().filter(|r| r.box_hit).count());
    Ok(EvalReport {
        task,
        total,
        pointing_accuracy,
        box_accuracy,
        records,
    })
}
