//! Line-delimited JSON records for predictions and annotations.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use wwbl_core::{Detection, GroundingAnnotation, GroundingRegion, Phrase};

use super::Prediction;
use crate::error::{ModelError, Result};

/// `{"image_id": .., "detections": [{"phrase", "box": [x,y,w,h], "score"}], "points": [[x,y]|null]?, "masks": [..]?}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub image_id: String,
    pub detections: Vec<Detection>,
    /// Pointing locations `[x, y]`, parallel to `detections`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<Option<[u32; 2]>>>,
    /// Mask image paths, parallel to `detections`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub masks: Option<Vec<Option<String>>>,
}

impl PredictionRecord {
    pub fn from_prediction(p: &Prediction, masks: Option<Vec<Option<String>>>) -> Self {
        Self {
            image_id: p.detections.image_id.clone(),
            detections: p.detections.detections.clone(),
            points: Some(p.points.iter().map(|q| q.map(|(x, y)| [x, y])).collect()),
            masks,
        }
    }

    pub fn to_prediction(&self) -> Result<Prediction> {
        let n = self.detections.len();
        let points = self.points.clone().unwrap_or_else(|| vec![None; n]);
        if points.len() != n {
            return Err(ModelError::Record {
                line: 0,
                message: format!("{}: {} points for {n} detections", self.image_id, points.len()),
            });
        }
        let mut p = Prediction::new(self.image_id.clone());
        for (d, q) in self.detections.iter().zip(points) {
            p.push_point(d.clone(), q.map(|[x, y]| (x, y)));
        }
        Ok(p)
    }
}

/// `{"image": <path>, "captions": [..]?, "regions": [{"phrase", "box": [x,y,w,h]}]}`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnnotationRecord {
    pub image: String,
    /// Image-level captions for training. When absent the region phrases
    /// stand in.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub captions: Vec<Phrase>,
    pub regions: Vec<GroundingRegion>,
}

/// Identifier shared by an image's annotation and predictions: the file stem.
pub fn image_id_for(path: &str) -> String {
    Path::new(path)
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.to_string())
}

impl AnnotationRecord {
    pub fn training_captions(&self) -> Vec<Phrase> {
        if !self.captions.is_empty() {
            return self.captions.clone();
        }
        let mut out: Vec<Phrase> = Vec::new();
        for r in &self.regions {
            if !out.contains(&r.phrase) {
                out.push(r.phrase.clone());
            }
        }
        out
    }

    pub fn to_annotation(&self) -> GroundingAnnotation {
        GroundingAnnotation {
            image_id: image_id_for(&self.image),
            regions: self.regions.clone(),
        }
    }
}

/// Parse one record per non-blank line; errors name the 1-based line.
pub fn parse_jsonl<T: DeserializeOwned>(text: &str) -> Result<Vec<T>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| ModelError::Record {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn to_jsonl<T: Serialize>(records: &[T]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        let line = serde_json::to_string(r).map_err(|e| ModelError::Record {
            line: 0,
            message: e.to_string(),
        })?;
        out.push_str(&line);
        out.push('\n');
    }
    Ok(out)
}
