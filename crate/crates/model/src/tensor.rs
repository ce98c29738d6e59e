//! Conversions between core arrays and tensors, plus a differentiable
//! bilinear resize.

use candle_core::{DType, Device, Tensor};
use wwbl_core::image::bilinear_taps;
use wwbl_core::{ImageTensor, RelevancyMap, SaliencyMask};

use crate::error::{mismatch, Result};

/// `(dst, src)` interpolation matrix with the same sampling grid as
/// [`wwbl_core::image::resize_plane`].
pub fn resize_matrix(src: usize, dst: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    let mut m = vec![0f64; dst * src];
    for (d, tap) in bilinear_taps(src, dst).iter().enumerate() {
        m[d * src + tap.lo] += 1.0 - tap.frac as f64;
        m[d * src + tap.hi] += tap.frac as f64;
    }
    Ok(Tensor::from_vec(m, (dst, src), device)?.to_dtype(dtype)?)
}

/// Resize the two trailing axes of a rank-4 tensor. Written as two matrix
/// products so gradients flow through it.
pub fn resize_bilinear(x: &Tensor, h: usize, w: usize) -> Result<Tensor> {
    let (_, _, sh, sw) = x.dims4()?;
    if (sh, sw) == (h, w) {
        return Ok(x.clone());
    }
    let ry = resize_matrix(sh, h, x.dtype(), x.device())?;
    let rxt = resize_matrix(sw, w, x.dtype(), x.device())?.t()?;
    Ok(ry.broadcast_matmul(x)?.broadcast_matmul(&rxt)?)
}

/// `(1, 3, H, W)` tensor.
pub fn image_to_tensor(img: &ImageTensor, dtype: DType, device: &Device) -> Result<Tensor> {
    let t = Tensor::from_slice(img.data(), (1, 3, img.height(), img.width()), device)?;
    Ok(t.to_dtype(dtype)?)
}

/// `(N, 3, H, W)` tensor; all images must share one extent.
pub fn images_to_batch(imgs: &[&ImageTensor], dtype: DType, device: &Device) -> Result<Tensor> {
    let first = imgs.first().ok_or_else(|| mismatch("at least one image", 0))?;
    let (h, w) = (first.height(), first.width());
    let mut data = Vec::with_capacity(imgs.len() * 3 * h * w);
    for img in imgs {
        if (img.height(), img.width()) != (h, w) {
            return Err(mismatch(
                format!("{h}x{w}"),
                format!("{}x{}", img.height(), img.width()),
            ));
        }
        data.extend_from_slice(img.data());
    }
    Ok(Tensor::from_vec(data, (imgs.len(), 3, h, w), device)?.to_dtype(dtype)?)
}

pub fn tensor_to_image(t: &Tensor) -> Result<ImageTensor> {
    let t = t.squeeze(0)?;
    let (c, h, w) = t.dims3()?;
    if c != 3 {
        return Err(mismatch("3 channels", c));
    }
    let data: Vec<f32> = t
        .to_dtype(DType::F32)?
        .flatten_all()?
        .to_vec1::<f32>()?
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    Ok(ImageTensor::new(h, w, data)?)
}

/// `(H, W)` or `(1, H, W)` or `(1, 1, H, W)` tensor to a mask. Values are
/// clamped to absorb rounding just outside `[0, 1]`.
pub fn tensor_to_mask(t: &Tensor) -> Result<SaliencyMask> {
    let dims = t.dims();
    let (h, w) = (dims[dims.len() - 2], dims[dims.len() - 1]);
    if t.elem_count() != h * w {
        return Err(mismatch("a single-channel map", format!("{dims:?}")));
    }
    let v: Vec<f32> = t
        .to_dtype(DType::F32)?
        .flatten_all()?
        .to_vec1::<f32>()?
        .into_iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    Ok(SaliencyMask::new(h, w, v)?)
}

/// `(1, 1, H, W)` tensor.
pub fn map_to_tensor(values: &[f32], h: usize, w: usize, dtype: DType, device: &Device) -> Result<Tensor> {
    Ok(Tensor::from_slice(values, (1, 1, h, w), device)?.to_dtype(dtype)?)
}

pub fn mask_to_tensor(m: &SaliencyMask, dtype: DType, device: &Device) -> Result<Tensor> {
    map_to_tensor(m.values(), m.height(), m.width(), dtype, device)
}

pub fn relevancy_to_tensor(m: &RelevancyMap, dtype: DType, device: &Device) -> Result<Tensor> {
    map_to_tensor(m.values(), m.height(), m.width(), dtype, device)
}

/// Row-wise L2 normalization of an `(N, D)` tensor.
pub fn l2_normalize_rows(x: &Tensor) -> Result<Tensor> {
    let norm = x.sqr()?.sum_keepdim(1)?.sqrt()?.affine(1.0, 1e-12)?;
    Ok(x.broadcast_div(&norm)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_resize_matches_plane_resize() {
        let img = ImageTensor::from_fn(7, 5, |y, x| {
            [y as f32 / 7.0, x as f32 / 5.0, ((x * y) % 3) as f32 / 3.0]
        })
        .unwrap();
        let t = image_to_tensor(&img, DType::F32, &Device::Cpu).unwrap();
        let out = tensor_to_image(&resize_bilinear(&t, 11, 3).unwrap()).unwrap();
        let want = img.resize_bilinear(11, 3).unwrap();
        for (a, b) in out.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn interpolation_rows_sum_to_one() {
        let m = resize_matrix(13, 4, DType::F64, &Device::Cpu).unwrap();
        for row in m.to_vec2::<f64>().unwrap() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
