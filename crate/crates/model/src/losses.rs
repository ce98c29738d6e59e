//! Weak-supervision objective: foreground and background matching terms, the
//! relevancy-map term and the mask-size regularizer.

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};
use wwbl_core::{ImageTensor, Phrase, RelevancyMap, SaliencyMask};

use crate::backend::{match_scores, text_tensor, VisionLanguageBackend};
use crate::error::{mismatch, ModelError, Result};
use crate::tensor::{image_to_tensor, mask_to_tensor, relevancy_to_tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 4.0,
            lambda4: 1.0,
        }
    }
}

impl LossWeights {
    pub const ZERO: LossWeights = LossWeights {
        lambda1: 0.0,
        lambda2: 0.0,
        lambda3: 0.0,
        lambda4: 0.0,
    };

    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda1, self.lambda2, self.lambda3, self.lambda4];
        if all.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return Err(ModelError::Config(
                "loss weights must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.lambda1, self.lambda2, self.lambda3, self.lambda4]
    }
}

/// Values of the four terms and their weighted sum.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub fore: f64,
    pub back: f64,
    pub rmap: f64,
    pub reg: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn from_terms(terms: [f64; 4], w: &LossWeights) -> Self {
        let total = terms.iter().zip(w.as_array()).map(|(t, l)| t * l).sum();
        Self {
            fore: terms[0],
            back: terms[1],
            rmap: terms[2],
            reg: terms[3],
            total,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.fore, self.back, self.rmap, self.reg, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Per-sample loss terms, each `(N,)`.
pub struct LossTerms {
    pub fore: Tensor,
    pub back: Tensor,
    pub rmap: Tensor,
    pub reg: Tensor,
}

impl LossTerms {
    /// Weighted per-sample total `(N,)`.
    pub fn total(&self, w: &LossWeights) -> Result<Tensor> {
        let t = (self.fore.affine(w.lambda1, 0.0)? + self.back.affine(w.lambda2, 0.0)?)?;
        let t = (t + self.rmap.affine(w.lambda3, 0.0)?)?;
        Ok((t + self.reg.affine(w.lambda4, 0.0)?)?)
    }

    /// Batch means of the four terms.
    pub fn means(&self) -> Result<[f64; 4]> {
        let m = |t: &Tensor| -> Result<f64> { Ok(t.mean_all()?.to_dtype(DType::F64)?.to_scalar::<f64>()?) };
        Ok([m(&self.fore)?, m(&self.back)?, m(&self.rmap)?, m(&self.reg)?])
    }
}

fn per_sample_mean(x: &Tensor) -> Result<Tensor> {
    Ok(x.flatten_from(1)?.mean(1)?)
}

/// All four terms for a batch. `images` is `(N, 3, H, W)`, `masks` and
/// `relevancy` are `(N, 1, H, W)`, `texts` is `(N, D)`.
pub fn loss_terms<B: VisionLanguageBackend + ?Sized>(
    backend: &B,
    images: &Tensor,
    masks: &Tensor,
    texts: &Tensor,
    relevancy: &Tensor,
) -> Result<LossTerms> {
    let (n, _, h, w) = images.dims4()?;
    if masks.dims() != [n, 1, h, w] {
        return Err(mismatch(
            format!("mask ({n}, 1, {h}, {w})"),
            format!("{:?}", masks.dims()),
        ));
    }
    if relevancy.dims() != masks.dims() {
        return Err(mismatch(
            format!("relevancy {:?}", masks.dims()),
            format!("{:?}", relevancy.dims()),
        ));
    }
    let fore_img = images.broadcast_mul(masks)?;
    let back_img = images.broadcast_mul(&masks.affine(-1.0, 1.0)?)?;
    let fore = match_scores(backend, &fore_img, texts)?.neg()?;
    let back = match_scores(backend, &back_img, texts)?;
    let rmap = per_sample_mean(&(masks - relevancy)?.sqr()?)?;
    let reg = per_sample_mean(&masks.abs()?)?;
    Ok(LossTerms { fore, back, rmap, reg })
}

fn check_extent(img: &ImageTensor, mask: &SaliencyMask) -> Result<()> {
    if (img.height(), img.width()) != (mask.height(), mask.width()) {
        return Err(mismatch(
            format!("mask {}x{}", img.height(), img.width()),
            format!("{}x{}", mask.height(), mask.width()),
        ));
    }
    Ok(())
}

fn scalar_score<B: VisionLanguageBackend + ?Sized>(
    backend: &B,
    img: &ImageTensor,
    mask: &SaliencyMask,
    t: &Phrase,
    complement: bool,
) -> Result<f64> {
    check_extent(img, mask)?;
    let dev = Device::Cpu;
    let x = image_to_tensor(img, DType::F64, &dev)?;
    let m = mask_to_tensor(mask, DType::F64, &dev)?;
    let m = if complement { m.affine(-1.0, 1.0)? } else { m };
    let z = text_tensor(&[backend.encode_text(t)?], DType::F64, &dev)?;
    let s = match_scores(backend, &x.broadcast_mul(&m)?, &z)?;
    Ok(s.to_vec1::<f64>()?[0])
}

/// `-match_score(mask ⊙ I, t)`.
pub fn loss_fore<B: VisionLanguageBackend + ?Sized>(
    img: &ImageTensor,
    mask: &SaliencyMask,
    t: &Phrase,
    backend: &B,
) -> Result<f64> {
    Ok(-scalar_score(backend, img, mask, t, false)?)
}

/// `match_score((1 - mask) ⊙ I, t)`.
pub fn loss_back<B: VisionLanguageBackend + ?Sized>(
    img: &ImageTensor,
    mask: &SaliencyMask,
    t: &Phrase,
    backend: &B,
) -> Result<f64> {
    scalar_score(backend, img, mask, t, true)
}

/// Mean squared difference between the mask and the relevancy map.
pub fn loss_rmap(mask: &SaliencyMask, h: &RelevancyMap) -> Result<f64> {
    if (mask.height(), mask.width()) != (h.height(), h.width()) {
        return Err(mismatch(
            format!("relevancy {}x{}", mask.height(), mask.width()),
            format!("{}x{}", h.height(), h.width()),
        ));
    }
    let n = mask.values().len() as f64;
    Ok(mask
        .values()
        .iter()
        .zip(h.values())
        .map(|(m, r)| (*m as f64 - *r as f64).powi(2))
        .sum::<f64>()
        / n)
}

/// Mean mask value.
pub fn loss_reg(mask: &SaliencyMask) -> f64 {
    let n = mask.values().len() as f64;
    mask.values().iter().map(|v| v.abs() as f64).sum::<f64>() / n
}

pub fn loss_total<B: VisionLanguageBackend + ?Sized>(
    img: &ImageTensor,
    mask: &SaliencyMask,
    t: &Phrase,
    h: &RelevancyMap,
    w: &LossWeights,
    backend: &B,
) -> Result<LossBreakdown> {
    w.validate()?;
    let terms = [
        loss_fore(img, mask, t, backend)?,
        loss_back(img, mask, t, backend)?,
        loss_rmap(mask, h)?,
        loss_reg(mask),
    ];
    Ok(LossBreakdown::from_terms(terms, w))
}

/// Tensor form of [`loss_total`] for a single image with a mask tensor that
/// may carry gradients. Returns a scalar.
pub fn loss_total_tensor<B: VisionLanguageBackend + ?Sized>(
    backend: &B,
    img: &ImageTensor,
    mask: &Tensor,
    t: &Phrase,
    h: &RelevancyMap,
    w: &LossWeights,
) -> Result<Tensor> {
    let (dtype, dev) = (mask.dtype(), mask.device());
    let x = image_to_tensor(img, dtype, dev)?;
    let z = text_tensor(&[backend.encode_text(t)?], dtype, dev)?;
    let r = relevancy_to_tensor(h, dtype, dev)?;
    let terms = loss_terms(backend, &x, mask, &z, &r)?;
    Ok(terms.total(w)?.sum_all()?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::mock::{MockBackend, MockOptions, MockWorldSpec};
    use wwbl_core::BoundingBox;

    fn backend() -> MockBackend {
        MockBackend::new(MockWorldSpec::default(), MockOptions::default()).unwrap()
    }

    fn red_blob() -> (ImageTensor, BoundingBox) {
        let b = BoundingBox::new(8, 8, 16, 16).unwrap();
        let img = ImageTensor::from_fn(48, 48, |y, x| {
            if b.contains_point(x as u32, y as u32) {
                [0.9, 0.1, 0.1]
            } else {
                [0.0, 0.0, 0.0]
            }
        })
        .unwrap();
        (img, b)
    }

    #[test]
    fn weighted_sum_arithmetic() {
        let b = LossBreakdown::from_terms([0.5, 0.2, 0.1, 0.3], &LossWeights::default());
        assert!((b.total - 1.4).abs() < 1e-12);
        assert_eq!(
            LossBreakdown::from_terms([0.5, 0.2, 0.1, 0.3], &LossWeights::ZERO).total,
            0.0
        );
        assert_eq!(LossWeights::default().as_array(), [1.0, 1.0, 4.0, 1.0]);
    }

    #[test]
    fn rmap_and_reg_examples() {
        let ones = SaliencyMask::filled(4, 4, 1.0).unwrap();
        let half = SaliencyMask::filled(4, 4, 0.5).unwrap();
        let zero_h = RelevancyMap::filled(4, 4, 0.0).unwrap();
        assert_eq!(loss_rmap(&ones, &zero_h).unwrap(), 1.0);
        assert_eq!(loss_rmap(&half, &zero_h).unwrap(), 0.25);
        let same = RelevancyMap::filled(4, 4, 0.5).unwrap();
        assert_eq!(loss_rmap(&half, &same).unwrap(), 0.0);
        assert_eq!(loss_reg(&SaliencyMask::filled(3, 3, 0.0).unwrap()), 0.0);
        assert_eq!(loss_reg(&ones), 1.0);
        let split = SaliencyMask::from_fn(4, 4, |_, x| if x < 2 { 1.0 } else { 0.0 }).unwrap();
        assert_eq!(loss_reg(&split), 0.5);
        assert!(loss_rmap(&ones, &RelevancyMap::filled(2, 2, 0.0).unwrap()).is_err());
    }

    #[test]
    fn identity_mask_reduces_to_plain_score() {
        let be = backend();
        let (img, _) = red_blob();
        let t = Phrase::new("red square").unwrap();
        let ones = SaliencyMask::filled(48, 48, 1.0).unwrap();
        let fore = loss_fore(&img, &ones, &t, &be).unwrap();
        assert!((fore + be.match_score(&img, &t).unwrap()).abs() < 1e-5);
        let back = loss_back(&img, &ones, &t, &be).unwrap();
        let black = ImageTensor::zeros(48, 48).unwrap();
        assert!((back - be.match_score(&black, &t).unwrap()).abs() < 1e-5);
    }

    #[test]
    fn blob_mask_beats_background_mask() {
        let be = backend();
        let (img, b) = red_blob();
        let t = Phrase::new("red square").unwrap();
        let on_blob = SaliencyMask::from_fn(
            48,
            48,
            |y, x| {
                if b.contains_point(x as u32, y as u32) {
                    1.0
                } else {
                    0.0
                }
            },
        )
        .unwrap();
        let on_bg = SaliencyMask::from_fn(
            48,
            48,
            |y, x| {
                if b.contains_point(x as u32, y as u32) {
                    0.0
                } else {
                    1.0
                }
            },
        )
        .unwrap();
        assert!(loss_fore(&img, &on_blob, &t, &be).unwrap() < loss_fore(&img, &on_bg, &t, &be).unwrap());
        assert!(loss_back(&img, &on_blob, &t, &be).unwrap() < loss_back(&img, &on_bg, &t, &be).unwrap());
    }

    #[test]
    fn mismatched_mask_is_rejected() {
        let be = backend();
        let (img, _) = red_blob();
        let m = SaliencyMask::filled(10, 10, 0.5).unwrap();
        assert!(loss_fore(&img, &m, &Phrase::new("red").unwrap(), &be).is_err());
    }
}
