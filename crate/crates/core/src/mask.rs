use crate::error::{CoreError, Result};
use crate::geometry::BoundingBox;
use crate::image::resize_plane;

macro_rules! unit_map {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq)]
        pub struct $name {
            height: usize,
            width: usize,
            values: Vec<f32>,
        }

        impl $name {
            /// Row-major values; every value must lie in `[0, 1]`.
            pub fn new(height: usize, width: usize, values: Vec<f32>) -> Result<Self> {
                if height == 0 || width == 0 {
                    return Err(CoreError::InvalidMask(format!(
                        "extent must be positive, got {height}x{width}"
                    )));
                }
                if values.len() != height * width {
                    return Err(CoreError::InvalidMask(format!(
                        "expected {} values, got {}",
                        height * width,
                        values.len()
                    )));
                }
                if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                    return Err(CoreError::InvalidMask(format!("value {v} outside [0, 1]")));
                }
                Ok(Self { height, width, values })
            }

            pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
                Self::new(height, width, vec![value; height * width])
            }

            pub fn from_fn(
                height: usize,
                width: usize,
                mut f: impl FnMut(usize, usize) -> f32,
            ) -> Result<Self> {
                let mut values = Vec::with_capacity(height * width);
                for y in 0..height {
                    for x in 0..width {
                        values.push(f(y, x));
                    }
                }
                Self::new(height, width, values)
            }

            pub fn height(&self) -> usize {
                self.height
            }

            pub fn width(&self) -> usize {
                self.width
            }

            pub fn values(&self) -> &[f32] {
                &self.values
            }

            pub fn into_values(self) -> Vec<f32> {
                self.values
            }

            pub fn get(&self, y: usize, x: usize) -> f32 {
                self.values[y * self.width + x]
            }

            pub fn resize_bilinear(&self, new_h: usize, new_w: usize) -> Result<Self> {
                let mut values = resize_plane(&self.values, self.height, self.width, new_h, new_w);
                for v in &mut values {
                    *v = v.clamp(0.0, 1.0);
                }
                Self::new(new_h, new_w, values)
            }

            pub fn flip_horizontal(&self) -> Self {
                let mut values = self.values.clone();
                for row in values.chunks_mut(self.width) {
                    row.reverse();
                }
                Self { height: self.height, width: self.width, values }
            }

            /// Sub-window; the box is clipped to the frame.
            pub fn crop(&self, bbox: &BoundingBox) -> Result<Self> {
                let b = bbox
                    .clip_to(self.width as u32, self.height as u32)
                    .ok_or_else(|| CoreError::InvalidMask(format!("crop {bbox:?} outside frame")))?;
                Self::from_fn(b.h as usize, b.w as usize, |y, x| {
                    self.get(b.y as usize + y, b.x as usize + x)
                })
            }

            /// Row-major position `(y, x)` of the first maximum.
            pub fn argmax(&self) -> (usize, usize) {
                let mut best = 0;
                for (i, v) in self.values.iter().enumerate() {
                    if *v > self.values[best] {
                        best = i;
                    }
                }
                (best / self.width, best % self.width)
            }

            pub fn mean(&self) -> f32 {
                (self.values.iter().map(|v| *v as f64).sum::<f64>() / self.values.len() as f64)
                    as f32
            }

            /// Mean value over the pixels of `bbox` (clipped to the frame).
            pub fn mean_in(&self, bbox: &BoundingBox) -> f32 {
                match bbox.clip_to(self.width as u32, self.height as u32) {
                    None => 0.0,
                    Some(b) => {
                        let mut sum = 0.0f64;
                        for y in b.y..b.bottom() {
                            for x in b.x..b.right() {
                                sum += self.get(y as usize, x as usize) as f64;
                            }
                        }
                        (sum / b.area() as f64) as f32
                    }
                }
            }
        }
    };
}

unit_map!(
    /// Per-pixel foreground probability produced by the grounding network.
    SaliencyMask
);

unit_map!(
    /// Relevancy heat-map of the frozen image-text matcher for an image and phrase.
    RelevancyMap
);

impl From<RelevancyMap> for SaliencyMask {
    fn from(m: RelevancyMap) -> Self {
        Self {
            height: m.height,
            width: m.width,
            values: m.values,
        }
    }
}

/// Pointing game: does the (row-major first) maximum of `mask` fall inside `gt`?
pub fn pointing_hit(mask: &SaliencyMask, gt: &BoundingBox) -> bool {
    let (y, x) = mask.argmax();
    gt.contains_point(x as u32, y as u32)
}

/// Pointing game against several boxes annotated with the same phrase; a hit
/// on any of them counts.
pub fn pointing_hit_any(mask: &SaliencyMask, gts: &[BoundingBox]) -> bool {
    let (y, x) = mask.argmax();
    gts.iter().any(|g| g.contains_point(x as u32, y as u32))
}
