use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::geometry::BoundingBox;
use crate::text::Phrase;

/// A box tagged with the phrase that describes it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub phrase: Phrase,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub score: f32,
}

impl Detection {
    pub fn new(bbox: BoundingBox, phrase: Phrase, score: f32) -> Result<Self> {
        if !(0.0..=1.0).contains(&score) {
            return Err(CoreError::InvalidConfig(format!(
                "detection score {score} outside [0, 1]"
            )));
        }
        Ok(Self { phrase, bbox, score })
    }
}

/// All detections for one image. Serialized as one prediction record.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet {
    pub image_id: String,
    pub detections: Vec<Detection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingRegion {
    pub phrase: Phrase,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
}

/// Ground truth for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundingAnnotation {
    pub image_id: String,
    pub regions: Vec<GroundingRegion>,
}

impl GroundingAnnotation {
    /// Regions grouped by phrase text, in first-appearance order.
    pub fn queries(&self) -> Vec<(&Phrase, Vec<BoundingBox>)> {
        let mut out: Vec<(&Phrase, Vec<BoundingBox>)> = Vec::new();
        for r in &self.regions {
            match out.iter_mut().find(|(p, _)| *p == &r.phrase) {
                Some((_, boxes)) => boxes.push(r.bbox),
                None => out.push((&r.phrase, vec![r.bbox])),
            }
        }
        out
    }

    /// Check every box lies inside a `width x height` frame.
    pub fn validate_frame(&self, width: u32, height: u32) -> Result<()> {
        for r in &self.regions {
            if !r.bbox.fits_within(width, height) {
                let b = r.bbox;
                return Err(CoreError::InvalidBox {
                    x: b.x as i64,
                    y: b.y as i64,
                    w: b.w as i64,
                    h: b.h as i64,
                    reason: format!("outside a {width}x{height} image {}", self.image_id),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn queries_merge_repeated_phrases() {
        let p = |s: &str| Phrase::new(s).unwrap();
        let b = |x| BoundingBox::new(x, 0, 2, 2).unwrap();
        let ann = GroundingAnnotation {
            image_id: "a".into(),
            regions: vec![
                GroundingRegion {
                    phrase: p("dog"),
                    bbox: b(0),
                },
                GroundingRegion {
                    phrase: p("cat"),
                    bbox: b(3),
                },
                GroundingRegion {
                    phrase: p("dog"),
                    bbox: b(6),
                },
            ],
        };
        let q = ann.queries();
        assert_eq!(q.len(), 2);
        assert_eq!(q[0].1, vec![b(0), b(6)]);
        assert!(ann.validate_frame(8, 2).is_ok());
        assert!(ann.validate_frame(7, 2).is_err());
    }

    #[test]
    fn score_range_is_enforced() {
        let b = BoundingBox::new(0, 0, 1, 1).unwrap();
        assert!(Detection::new(b, Phrase::new("x").unwrap(), 1.5).is_err());
    }
}
