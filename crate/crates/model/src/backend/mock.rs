//! Deterministic "color-blob world" backend.
//!
//! Vocabulary words (colors, shapes, and `background`) own seeded orthonormal
//! directions. Any other token hashes to a seeded direction orthogonal to the
//! vocabulary and enters the text bag with a small weight. Images embed by
//! soft Gaussian membership of each pixel to each vocabulary color, pooled
//! over the frame and squashed, so the whole image path is smooth.

use std::collections::{BTreeSet, VecDeque};

use candle_core::{DType, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use wwbl_core::{BoundingBox, ImageTensor, Phrase, RelevancyMap, TextEmbedding};

use super::{BackendDescriptor, BackendKind, VisionLanguageBackend};
use crate::error::{ModelError, Result};
use crate::tensor::{l2_normalize_rows, resize_bilinear};

pub const BACKGROUND_WORD: &str = "background";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Square,
    Circle,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Square, ShapeKind::Circle, ShapeKind::Triangle];

    pub fn word(self) -> &'static str {
        match self {
            ShapeKind::Square => "square",
            ShapeKind::Circle => "circle",
            ShapeKind::Triangle => "triangle",
        }
    }

    /// Classify a blob by the fraction of its bounding box it fills.
    pub fn from_fill(fill: f64) -> Self {
        if fill > 0.9 {
            ShapeKind::Square
        } else if fill >= 0.65 {
            ShapeKind::Circle
        } else {
            ShapeKind::Triangle
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ColorWord {
    pub word: String,
    pub rgb: [f32; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MockWorldSpec {
    pub colors: Vec<ColorWord>,
    pub shapes: Vec<ShapeKind>,
    pub seed: u64,
}

impl Default for MockWorldSpec {
    fn default() -> Self {
        let c = |w: &str, rgb: [f32; 3]| ColorWord { word: w.into(), rgb };
        Self {
            colors: vec![
                c("red", [0.9, 0.1, 0.1]),
                c("green", [0.1, 0.8, 0.1]),
                c("blue", [0.1, 0.2, 0.9]),
                c("yellow", [0.9, 0.9, 0.1]),
                c("magenta", [0.9, 0.1, 0.9]),
                c("cyan", [0.1, 0.8, 0.9]),
            ],
            shapes: ShapeKind::ALL.to_vec(),
            seed: 0,
        }
    }
}

impl MockWorldSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ModelError::Config(format!("mock vocabulary: {m}")));
        if self.colors.is_empty() || self.shapes.is_empty() {
            return bad("colors and shapes must be non-empty");
        }
        let mut words = BTreeSet::new();
        for (i, c) in self.colors.iter().enumerate() {
            if !c.rgb.iter().all(|v| (0.0..=1.0).contains(v)) {
                return bad(&format!("{} has components outside [0, 1]", c.word));
            }
            if c.word.is_empty() || c.word.chars().any(|ch| !ch.is_ascii_lowercase()) || c.word == BACKGROUND_WORD {
                return bad(&format!("invalid color word {:?}", c.word));
            }
            if !words.insert(c.word.as_str()) {
                return bad(&format!("duplicate color word {}", c.word));
            }
            if self.colors[..i].iter().any(|o| o.rgb == c.rgb) {
                return bad(&format!("{} repeats another color's rgb", c.word));
            }
        }
        if self.shapes.iter().collect::<BTreeSet<_>>().len() != self.shapes.len() {
            return bad("duplicate shape");
        }
        Ok(())
    }
}

/// Geometry and color of a connected patch of one vocabulary color.
#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub color: usize,
    pub bbox: BoundingBox,
    pub pixels: usize,
    pub shape: ShapeKind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MockOptions {
    pub embed_dim: usize,
    pub match_resolution: usize,
}

impl Default for MockOptions {
    fn default() -> Self {
        Self {
            embed_dim: 32,
            match_resolution: 32,
        }
    }
}

// Image-embedding shape parameters.
const COLOR_SIGMA: f64 = 0.15;
const SATURATION: f64 = 0.02;
const BACKGROUND_WEIGHT: f64 = 0.3;
const FILLER_WEIGHT: f32 = 0.25;
// Blob detection.
const COLOR_MATCH_RADIUS: f32 = 0.25;
const MIN_BLOB_PIXELS: usize = 4;

#[derive(Debug, Clone)]
pub struct MockBackend {
    spec: MockWorldSpec,
    opts: MockOptions,
    color_dirs: Vec<Vec<f32>>,
    shape_dirs: Vec<Vec<f32>>,
    background_dir: Vec<f32>,
}

impl MockBackend {
    pub fn new(spec: MockWorldSpec, opts: MockOptions) -> Result<Self> {
        spec.validate()?;
        let needed = spec.colors.len() + spec.shapes.len() + 1;
        if opts.embed_dim < 8 || opts.embed_dim <= needed {
            return Err(ModelError::Config(format!(
                "mock embed_dim must be at least 8 and exceed the vocabulary size {needed}"
            )));
        }
        if opts.match_resolution < 32 {
            return Err(ModelError::Config("match_resolution must be at least 32".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let basis = orthonormal(&mut rng, needed, opts.embed_dim);
        let nc = spec.colors.len();
        Ok(Self {
            color_dirs: basis[..nc].to_vec(),
            shape_dirs: basis[nc..nc + spec.shapes.len()].to_vec(),
            background_dir: basis[needed - 1].clone(),
            spec,
            opts,
        })
    }

    pub fn spec(&self) -> &MockWorldSpec {
        &self.spec
    }

    pub fn color_word(&self, idx: usize) -> &str {
        &self.spec.colors[idx].word
    }

    fn token_direction(&self, token: &str) -> (Vec<f32>, f32) {
        if let Some(i) = self.spec.colors.iter().position(|c| c.word == token) {
            return (self.color_dirs[i].clone(), 1.0);
        }
        if let Some(i) = self.spec.shapes.iter().position(|s| s.word() == token) {
            return (self.shape_dirs[i].clone(), 1.0);
        }
        if token == BACKGROUND_WORD {
            return (self.background_dir.clone(), 1.0);
        }
        let mut h = Sha256::new();
        h.update(self.spec.seed.to_le_bytes());
        h.update(token.as_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        let mut rng = ChaCha8Rng::from_seed(seed);
        let mut v: Vec<f32> = (0..self.opts.embed_dim)
            .map(|_| rng.random_range(-1.0f32..1.0))
            .collect();
        for b in self
            .color_dirs
            .iter()
            .chain(&self.shape_dirs)
            .chain(std::iter::once(&self.background_dir))
        {
            let d = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        (normalize(v), FILLER_WEIGHT)
    }

    /// Connected regions of pixels within a small radius of a vocabulary
    /// color, largest first (ties: raster order of first pixel).
    pub fn detect_blobs(&self, img: &ImageTensor) -> Vec<Blob> {
        let (h, w) = (img.height(), img.width());
        let labels: Vec<Option<usize>> = (0..h * w)
            .map(|i| {
                let p = img.pixel(i / w, i % w);
                self.spec
                    .colors
                    .iter()
                    .enumerate()
                    .map(|(k, c)| {
                        let d2: f32 = (0..3).map(|ch| (p[ch] - c.rgb[ch]).powi(2)).sum();
                        (k, d2)
                    })
                    .filter(|(_, d2)| *d2 <= COLOR_MATCH_RADIUS * COLOR_MATCH_RADIUS)
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .map(|(k, _)| k)
            })
            .collect();
        let mut seen = vec![false; h * w];
        let mut blobs = Vec::new();
        for start in 0..h * w {
            let Some(color) = labels[start] else { continue };
            if seen[start] {
                continue;
            }
            seen[start] = true;
            let mut queue = VecDeque::from([start]);
            let (mut x0, mut y0, mut x1, mut y1) = (w, h, 0, 0);
            let mut count = 0;
            while let Some(i) = queue.pop_front() {
                count += 1;
                let (y, x) = (i / w, i % w);
                (x0, y0, x1, y1) = (x0.min(x), y0.min(y), x1.max(x), y1.max(y));
                for ny in y.saturating_sub(1)..=(y + 1).min(h - 1) {
                    for nx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                        let j = ny * w + nx;
                        if !seen[j] && labels[j] == Some(color) {
                            seen[j] = true;
                            queue.push_back(j);
                        }
                    }
                }
            }
            if count < MIN_BLOB_PIXELS {
                continue;
            }
            let bbox = BoundingBox::from_inclusive(x0 as u32, y0 as u32, x1 as u32, y1 as u32);
            blobs.push(Blob {
                color,
                bbox,
                pixels: count,
                shape: ShapeKind::from_fill(count as f64 / bbox.area() as f64),
            });
        }
        // stable: equal sizes keep raster order
        blobs.sort_by_key(|b| std::cmp::Reverse(b.pixels));
        blobs
    }

    fn mentioned(&self, t: &Phrase) -> (Vec<usize>, Vec<ShapeKind>) {
        let tokens: Vec<String> = t.tokens().collect();
        let colors = (0..self.spec.colors.len())
            .filter(|&i| tokens.iter().any(|tk| *tk == self.spec.colors[i].word))
            .collect();
        let shapes = self
            .spec
            .shapes
            .iter()
            .copied()
            .filter(|s| tokens.iter().any(|tk| tk == s.word()))
            .collect();
        (colors, shapes)
    }
}

impl VisionLanguageBackend for MockBackend {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            kind: BackendKind::Mock,
            embed_dim: self.opts.embed_dim,
            match_resolution: self.opts.match_resolution,
        }
    }

    fn fingerprint(&self) -> String {
        let vocab = serde_json::to_string(&self.spec).unwrap_or_default();
        let mut h = Sha256::new();
        h.update(vocab.as_bytes());
        let digest = h.finalize();
        format!(
            "mock-{}-{}-{:x}",
            self.opts.embed_dim,
            self.opts.match_resolution,
            u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
        )
    }

    fn encode_text(&self, t: &Phrase) -> Result<TextEmbedding> {
        let mut acc = vec![0f32; self.opts.embed_dim];
        for tok in t.tokens() {
            let (dir, weight) = self.token_direction(&tok);
            acc.iter_mut().zip(&dir).for_each(|(a, d)| *a += weight * d);
        }
        if acc.iter().all(|v| *v == 0.0) {
            // punctuation-only phrase: fall back to the background direction
            acc.clone_from(&self.background_dir);
        }
        Ok(TextEmbedding::normalized(acc)?)
    }

    fn embed_images(&self, images: &Tensor) -> Result<Tensor> {
        let (n, c, _, _) = images.dims4()?;
        if c != 3 {
            return Err(crate::error::mismatch("3 channels", c));
        }
        let (dtype, dev) = (images.dtype(), images.device());
        let r = self.opts.match_resolution;
        let x = resize_bilinear(images, r, r)?.reshape((n, 1, 3, r * r))?;
        let k = self.spec.colors.len();
        let centres: Vec<f32> = self.spec.colors.iter().flat_map(|c| c.rgb).collect();
        let centres = Tensor::from_vec(centres, (1, k, 3, 1), dev)?.to_dtype(dtype)?;
        let d2 = x.broadcast_sub(&centres)?.sqr()?.sum(2)?;
        let member = d2.affine(-1.0 / (2.0 * COLOR_SIGMA * COLOR_SIGMA), 0.0)?.exp()?;
        let frac = member.mean(2)?;
        let g = frac.affine(-1.0 / SATURATION, 0.0)?.exp()?.affine(-1.0, 1.0)?;
        let dirs: Vec<f32> = self.color_dirs.iter().flatten().copied().collect();
        let dirs = Tensor::from_vec(dirs, (k, self.opts.embed_dim), dev)?.to_dtype(dtype)?;
        let bg = Tensor::from_slice(&self.background_dir, (1, self.opts.embed_dim), dev)?
            .to_dtype(dtype)?
            .affine(BACKGROUND_WEIGHT, 0.0)?;
        let e = g.matmul(&dirs)?.broadcast_add(&bg)?;
        l2_normalize_rows(&e)
    }

    fn relevancy(&self, img: &ImageTensor, t: &Phrase) -> Result<RelevancyMap> {
        let r = self.opts.match_resolution;
        let (colors, shapes) = self.mentioned(t);
        if colors.is_empty() && shapes.is_empty() {
            return Ok(RelevancyMap::filled(r, r, 0.0)?);
        }
        let (sy, sx) = (r as f32 / img.height() as f32, r as f32 / img.width() as f32);
        let bumps: Vec<(f32, f32, f32)> = self
            .detect_blobs(img)
            .into_iter()
            .filter(|b| colors.is_empty() || colors.contains(&b.color))
            .filter(|b| shapes.is_empty() || shapes.contains(&b.shape))
            .map(|b| {
                let cx = (b.bbox.x as f32 + b.bbox.w as f32 / 2.0) * sx;
                let cy = (b.bbox.y as f32 + b.bbox.h as f32 / 2.0) * sy;
                let size = (b.bbox.w as f32 * sx).max(b.bbox.h as f32 * sy);
                (cx, cy, (size / 8.0).max(0.5))
            })
            .collect();
        let map = RelevancyMap::from_fn(r, r, |y, x| {
            let (px, py) = (x as f32 + 0.5, y as f32 + 0.5);
            bumps
                .iter()
                .map(|(cx, cy, s)| (-((px - cx).powi(2) + (py - cy).powi(2)) / (2.0 * s * s)).exp())
                .fold(0.0, f32::max)
        })?;
        // unit peak, as for max-normalized attribution maps
        let peak = map.values().iter().cloned().fold(0.0, f32::max);
        if peak <= 0.0 {
            return Ok(map);
        }
        Ok(RelevancyMap::new(
            r,
            r,
            map.into_values().into_iter().map(|v| v / peak).collect(),
        )?)
    }

    fn caption(&self, img: &ImageTensor) -> Result<Phrase> {
        let text = match self.detect_blobs(img).first() {
            Some(b) => format!("image of a {} {}", self.color_word(b.color), b.shape.word()),
            None => format!("image of a {BACKGROUND_WORD}"),
        };
        Ok(Phrase::new(text)?)
    }
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: Vec<f32>) -> Vec<f32> {
    let n = dot(&v, &v).sqrt();
    v.into_iter().map(|x| x / n).collect()
}

fn orthonormal(rng: &mut impl Rng, count: usize, dim: usize) -> Vec<Vec<f32>> {
    let mut out: Vec<Vec<f32>> = Vec::with_capacity(count);
    while out.len() < count {
        let mut v: Vec<f32> = (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        for b in &out {
            let d = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= d * y);
        }
        if dot(&v, &v) > 1e-3 {
            out.push(normalize(v));
        }
    }
    out
}

/// Convenience for tests and tools: score in f64 through the tensor path.
pub fn embed_single(backend: &MockBackend, img: &ImageTensor, dtype: DType) -> Result<Vec<f64>> {
    let x = crate::tensor::image_to_tensor(img, dtype, &candle_core::Device::Cpu)?;
    Ok(backend
        .embed_images(&x)?
        .to_dtype(DType::F64)?
        .flatten_all()?
        .to_vec1::<f64>()?)
}
