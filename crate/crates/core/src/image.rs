use crate::error::{CoreError, Result};
use crate::geometry::BoundingBox;

/// Source taps for one output coordinate of a bilinear resize: the two input
/// indices and the weight of the second one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilinearTap {
    pub lo: usize,
    pub hi: usize,
    pub frac: f32,
}

/// Half-pixel-centre bilinear sampling positions (no antialiasing, edge clamped).
///
/// Shared by every resize in the workspace so the tensor path and the plain
/// array path agree sample for sample.
pub fn bilinear_taps(src: usize, dst: usize) -> Vec<BilinearTap> {
    assert!(src > 0 && dst > 0, "resize extents must be positive");
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|d| {
            let real = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let lo = (real.floor() as usize).min(src - 1);
            let hi = if lo + 1 < src { lo + 1 } else { lo };
            BilinearTap {
                lo,
                hi,
                frac: (real - lo as f64) as f32,
            }
        })
        .collect()
}

/// Resize a single row-major plane.
pub fn resize_plane(src: &[f32], h: usize, w: usize, new_h: usize, new_w: usize) -> Vec<f32> {
    debug_assert_eq!(src.len(), h * w);
    if h == new_h && w == new_w {
        return src.to_vec();
    }
    let ty = bilinear_taps(h, new_h);
    let tx = bilinear_taps(w, new_w);
    let mut out = Vec::with_capacity(new_h * new_w);
    for y in &ty {
        let r0 = &src[y.lo * w..(y.lo + 1) * w];
        let r1 = &src[y.hi * w..(y.hi + 1) * w];
        for x in &tx {
            let top = r0[x.lo] * (1.0 - x.frac) + r0[x.hi] * x.frac;
            let bot = r1[x.lo] * (1.0 - x.frac) + r1[x.hi] * x.frac;
            out.push(top * (1.0 - y.frac) + bot * y.frac);
        }
    }
    out
}

/// A 3-channel image with values in `[0, 1]`, stored channel-major (CHW).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl ImageTensor {
    pub const CHANNELS: usize = 3;

    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(CoreError::InvalidImage(format!(
                "extent must be positive, got {height}x{width}"
            )));
        }
        if data.len() != Self::CHANNELS * height * width {
            return Err(CoreError::InvalidImage(format!(
                "expected {} values for a {height}x{width} image, got {}",
                Self::CHANNELS * height * width,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(CoreError::InvalidImage(format!("channel value {v} outside [0, 1]")));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Result<Self> {
        Self::new(height, width, vec![0.0; Self::CHANNELS * height * width])
    }

    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Result<Self> {
        Self::from_fn(height, width, |_, _| rgb)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Result<Self> {
        let plane = height * width;
        let mut data = vec![0.0; Self::CHANNELS * plane];
        for y in 0..height {
            for x in 0..width {
                let px = f(y, x);
                for (c, v) in px.iter().enumerate() {
                    data[c * plane + y * width + x] = *v;
                }
            }
        }
        Self::new(height, width, data)
    }

    /// Build from interleaved 8-bit RGB bytes.
    pub fn from_rgb8(height: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != 3 * height * width {
            return Err(CoreError::InvalidImage(format!(
                "expected {} rgb bytes, got {}",
                3 * height * width,
                bytes.len()
            )));
        }
        Self::from_fn(height, width, |y, x| {
            let i = 3 * (y * width + x);
            [
                bytes[i] as f32 / 255.0,
                bytes[i + 1] as f32 / 255.0,
                bytes[i + 2] as f32 / 255.0,
            ]
        })
    }

    /// Interleaved 8-bit RGB bytes, rounding to nearest.
    pub fn to_rgb8(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(3 * self.height * self.width);
        for y in 0..self.height {
            for x in 0..self.width {
                for v in self.pixel(y, x) {
                    out.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
                }
            }
        }
        out
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Channel-major values.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn plane(&self, channel: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[channel * n..(channel + 1) * n]
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        let n = self.height * self.width;
        let i = y * self.width + x;
        [self.data[i], self.data[n + i], self.data[2 * n + i]]
    }

    pub fn set_pixel(&mut self, y: usize, x: usize, rgb: [f32; 3]) {
        let n = self.height * self.width;
        let i = y * self.width + x;
        for (c, v) in rgb.iter().enumerate() {
            self.data[c * n + i] = v.clamp(0.0, 1.0);
        }
    }

    /// The full-frame box of this image.
    pub fn frame(&self) -> BoundingBox {
        BoundingBox::new(0, 0, self.width as u32, self.height as u32).expect("image extent is positive")
    }

    /// Pixels inside `bbox`; the box is clipped to the frame first.
    pub fn crop(&self, bbox: &BoundingBox) -> Result<Self> {
        let b = bbox
            .clip_to(self.width as u32, self.height as u32)
            .ok_or_else(|| CoreError::InvalidBox {
                x: bbox.x as i64,
                y: bbox.y as i64,
                w: bbox.w as i64,
                h: bbox.h as i64,
                reason: format!("outside a {}x{} frame", self.width, self.height),
            })?;
        let (x0, y0) = (b.x as usize, b.y as usize);
        Self::from_fn(b.h as usize, b.w as usize, |y, x| self.pixel(y0 + y, x0 + x))
    }

    /// Set every pixel inside `bbox` (clipped) to zero.
    pub fn zero_region(&mut self, bbox: &BoundingBox) {
        if let Some(b) = bbox.clip_to(self.width as u32, self.height as u32) {
            for y in b.y as usize..(b.y + b.h) as usize {
                for x in b.x as usize..(b.x + b.w) as usize {
                    self.set_pixel(y, x, [0.0; 3]);
                }
            }
        }
    }

    pub fn resize_bilinear(&self, new_h: usize, new_w: usize) -> Result<Self> {
        if new_h == 0 || new_w == 0 {
            return Err(CoreError::InvalidImage(format!(
                "resize target must be positive, got {new_h}x{new_w}"
            )));
        }
        let mut data = Vec::with_capacity(3 * new_h * new_w);
        for c in 0..Self::CHANNELS {
            data.extend(resize_plane(self.plane(c), self.height, self.width, new_h, new_w));
        }
        // Interpolation of values in [0, 1] stays in [0, 1] up to rounding.
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Self::new(new_h, new_w, data)
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut data = self.data.clone();
        for row in data.chunks_mut(self.width) {
            row.reverse();
        }
        Self {
            height: self.height,
            width: self.width,
            data,
        }
    }

    /// Number of pixels with any non-zero channel.
    pub fn nonzero_pixels(&self) -> usize {
        (0..self.height)
            .flat_map(|y| (0..self.width).map(move |x| (y, x)))
            .filter(|&(y, x)| self.pixel(y, x).iter().any(|v| *v != 0.0))
            .count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_values() {
        assert!(ImageTensor::new(1, 1, vec![0.0, 0.5, 1.5]).is_err());
        assert!(ImageTensor::new(0, 1, vec![]).is_err());
        assert!(ImageTensor::new(1, 1, vec![0.0, 0.5, 1.0]).is_ok());
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = ImageTensor::filled(5, 7, [0.2, 0.4, 0.6]).unwrap();
        assert_eq!(img.resize_bilinear(5, 7).unwrap(), img);
        let big = img.resize_bilinear(13, 3).unwrap();
        for (y, x) in [(0, 0), (6, 1), (12, 2)] {
            let px = big.pixel(y, x);
            assert!((px[0] - 0.2).abs() < 1e-6 && (px[2] - 0.6).abs() < 1e-6);
        }
    }

    #[test]
    fn downsample_by_two_averages_blocks() {
        let vals: Vec<f32> = (0..16).map(|v| v as f32 / 16.0).collect();
        let out = resize_plane(&vals, 4, 4, 2, 2);
        let expect = (vals[0] + vals[1] + vals[4] + vals[5]) / 4.0;
        assert!((out[0] - expect).abs() < 1e-6);
    }

    #[test]
    fn crop_and_zero_region() {
        let mut img = ImageTensor::from_fn(4, 4, |y, x| [(y * 4 + x) as f32 / 16.0, 0.0, 0.0]).unwrap();
        let b = BoundingBox::new(1, 2, 2, 2).unwrap();
        let c = img.crop(&b).unwrap();
        assert_eq!((c.height(), c.width()), (2, 2));
        assert_eq!(c.pixel(0, 0)[0], img.pixel(2, 1)[0]);
        let before = img.nonzero_pixels();
        img.zero_region(&b);
        assert_eq!(img.nonzero_pixels(), before - 4);
    }

    #[test]
    fn flip_is_an_involution() {
        let img = ImageTensor::from_fn(3, 5, |y, x| [x as f32 / 5.0, y as f32 / 3.0, 0.5]).unwrap();
        assert_eq!(img.flip_horizontal().flip_horizontal(), img);
        assert_eq!(img.flip_horizontal().pixel(0, 0), img.pixel(0, 4));
    }

    #[test]
    fn rgb8_round_trip() {
        let bytes: Vec<u8> = (0..2 * 3 * 3).map(|v| (v * 13) as u8).collect();
        let img = ImageTensor::from_rgb8(2, 3, &bytes).unwrap();
        assert_eq!(img.to_rgb8(), bytes);
    }
}
