//! PNG reading and writing, and box overlays with a bitmap font.

use std::path::Path;

use font8x8::legacy::BASIC_LEGACY;
use image::{GrayImage, RgbImage};
use wwbl_core::{BoundingBox, Detection, ImageTensor, SaliencyMask};

use crate::error::{CliError, CliResult};

pub fn load_image(path: &Path) -> CliResult<ImageTensor> {
    let img = image::open(path).map_err(|e| CliError::io(path, e))?.to_rgb8();
    let (w, h) = img.dimensions();
    Ok(ImageTensor::from_rgb8(h as usize, w as usize, img.as_raw())?)
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    match path.parent().filter(|p| !p.as_os_str().is_empty()) {
        Some(p) => std::fs::create_dir_all(p).map_err(|e| CliError::io(p, e)),
        None => Ok(()),
    }
}

pub fn save_image(img: &ImageTensor, path: &Path) -> CliResult<()> {
    let buf =
        RgbImage::from_raw(img.width() as u32, img.height() as u32, img.to_rgb8()).expect("buffer matches extent");
    ensure_parent(path)?;
    buf.save(path).map_err(|e| CliError::io(path, e))
}

/// Grayscale PNG with each value stored as `round(255·m)`.
pub fn save_mask(mask: &SaliencyMask, path: &Path) -> CliResult<()> {
    let bytes = mask
        .values()
        .iter()
        .map(|v| (255.0 * v.clamp(0.0, 1.0)).round() as u8)
        .collect();
    let buf = GrayImage::from_raw(mask.width() as u32, mask.height() as u32, bytes).expect("buffer matches extent");
    ensure_parent(path)?;
    buf.save(path).map_err(|e| CliError::io(path, e))
}

const PALETTE: [[f32; 3]; 6] = [
    [1.0, 0.2, 0.2],
    [0.2, 1.0, 0.2],
    [0.3, 0.5, 1.0],
    [1.0, 1.0, 0.2],
    [1.0, 0.3, 1.0],
    [0.2, 1.0, 1.0],
];

fn put(img: &mut ImageTensor, x: i64, y: i64, rgb: [f32; 3]) {
    if x >= 0 && y >= 0 && (x as usize) < img.width() && (y as usize) < img.height() {
        img.set_pixel(y as usize, x as usize, rgb);
    }
}

fn draw_rect(img: &mut ImageTensor, b: &BoundingBox, rgb: [f32; 3]) {
    let (x0, y0) = (b.x as i64, b.y as i64);
    let (x1, y1) = (x0 + b.w as i64 - 1, y0 + b.h as i64 - 1);
    for x in x0..=x1 {
        put(img, x, y0, rgb);
        put(img, x, y1, rgb);
    }
    for y in y0..=y1 {
        put(img, x0, y, rgb);
        put(img, x1, y, rgb);
    }
}

/// 8×8 glyphs on a dark backing strip; non-ASCII characters become `?`.
fn draw_text(img: &mut ImageTensor, x: i64, y: i64, text: &str, rgb: [f32; 3]) {
    for (i, ch) in text.chars().enumerate() {
        let code = if ch.is_ascii() { ch as usize } else { '?' as usize };
        let glyph = BASIC_LEGACY[code];
        let gx = x + 8 * i as i64;
        for (row, bits) in glyph.iter().enumerate() {
            for col in 0..8 {
                let on = bits & (1 << col) != 0;
                let c = if on { rgb } else { [0.0, 0.0, 0.0] };
                put(img, gx + col, y + row as i64, c);
            }
        }
    }
}

/// Boxes with `phrase score` drawn above each (inside when there is no room).
pub fn overlay(img: &ImageTensor, detections: &[Detection]) -> ImageTensor {
    let mut out = img.clone();
    for (k, d) in detections.iter().enumerate() {
        let rgb = PALETTE[k % PALETTE.len()];
        draw_rect(&mut out, &d.bbox, rgb);
        let label = format!("{} {:.2}", d.phrase, d.score);
        let y = if d.bbox.y >= 9 {
            d.bbox.y as i64 - 9
        } else {
            d.bbox.y as i64 + 1
        };
        draw_text(&mut out, d.bbox.x as i64, y, &label, rgb);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use wwbl_core::Phrase;

    #[test]
    fn mask_png_quantizes() {
        let dir = tempfile::tempdir().unwrap();
        let m = SaliencyMask::new(1, 3, vec![0.0, 0.5, 1.0]).unwrap();
        let p = dir.path().join("m.png");
        save_mask(&m, &p).unwrap();
        let back = image::open(&p).unwrap().to_luma8();
        assert_eq!(back.as_raw(), &vec![0, 128, 255]);
    }

    #[test]
    fn image_png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageTensor::from_rgb8(2, 2, &[0, 10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 255]).unwrap();
        let p = dir.path().join("a/b.png");
        save_image(&img, &p).unwrap();
        assert_eq!(load_image(&p).unwrap(), img);
    }

    #[test]
    fn overlay_draws_box_outline_only() {
        let img = ImageTensor::zeros(40, 40).unwrap();
        let d = Detection::new(BoundingBox::new(5, 20, 10, 10).unwrap(), Phrase::new("x").unwrap(), 0.5).unwrap();
        let out = overlay(&img, &[d]);
        assert_eq!(out.pixel(20, 5), PALETTE[0]);
        assert_eq!(out.pixel(29, 14), PALETTE[0]);
        assert_eq!(out.pixel(25, 10), [0.0, 0.0, 0.0]);
        // some label pixels above the box are lit
        let lit = (11..19)
            .flat_map(|y| (5..29).map(move |x| (y, x)))
            .filter(|&(y, x)| out.pixel(y, x) != [0.0; 3])
            .count();
        assert!(lit > 10);
    }
}
