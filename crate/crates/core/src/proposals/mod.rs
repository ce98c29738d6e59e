//! Selective-search region proposals: over-segmentation followed by greedy
//! hierarchical grouping of adjacent regions.

mod segment;

pub use segment::{gaussian_smooth, oversegment, LabelMap};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::geometry::BoundingBox;
use crate::image::ImageTensor;

const COLOR_BINS: usize = 25;
const ORIENTATIONS: usize = 8;
const TEXTURE_BINS: usize = 10;
const COLOR_LEN: usize = 3 * COLOR_BINS;
const TEXTURE_LEN: usize = 3 * ORIENTATIONS * TEXTURE_BINS;
// Directional derivatives (central differences on [0,1] data) rarely exceed this.
const TEXTURE_RANGE: f32 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimilarityWeights {
    pub color: f32,
    pub texture: f32,
    pub size: f32,
    pub fill: f32,
}

impl Default for SimilarityWeights {
    fn default() -> Self {
        Self {
            color: 1.0,
            texture: 1.0,
            size: 1.0,
            fill: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProposalConfig {
    pub initial_segmentation_scale: f32,
    /// Minimum component size in pixels after absorption.
    pub min_component_size: usize,
    pub smoothing_sigma: f32,
    pub similarity_weights: SimilarityWeights,
    pub max_proposals: usize,
    pub min_box_side: u32,
}

impl Default for ProposalConfig {
    fn default() -> Self {
        Self {
            initial_segmentation_scale: 100.0,
            min_component_size: 50,
            smoothing_sigma: 0.8,
            similarity_weights: SimilarityWeights::default(),
            max_proposals: 100,
            min_box_side: 20,
        }
    }
}

impl ProposalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_proposals < 1 {
            return Err(CoreError::InvalidConfig(
                "proposals.max_proposals must be at least 1".into(),
            ));
        }
        if self.min_box_side < 1 {
            return Err(CoreError::InvalidConfig(
                "proposals.min_box_side must be at least 1".into(),
            ));
        }
        let w = self.similarity_weights;
        if [w.color, w.texture, w.size, w.fill].iter().any(|v| *v < 0.0) || w.color + w.texture + w.size + w.fill <= 0.0
        {
            return Err(CoreError::InvalidConfig(
                "proposals.similarity_weights must be non-negative and not all zero".into(),
            ));
        }
        if self.initial_segmentation_scale <= 0.0 {
            return Err(CoreError::InvalidConfig(
                "proposals.initial_segmentation_scale must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegionProposal {
    pub bbox: BoundingBox,
    pub crop: ImageTensor,
}

#[derive(Debug, Clone)]
struct Region {
    size: usize,
    bbox: BoundingBox,
    color: Vec<f32>,
    texture: Vec<f32>,
}

/// One grouping step: regions `a < b` merged into the new region `into`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Merge {
    pub a: usize,
    pub b: usize,
    pub into: usize,
}

/// Full grouping history. Region ids `0..initial_count` are the segments;
/// each merge creates the next id.
#[derive(Debug, Clone)]
pub struct Hierarchy {
    pub initial_count: usize,
    pub merges: Vec<Merge>,
    /// Bounding box of every region, indexed by id.
    pub boxes: Vec<BoundingBox>,
}

fn rgb_to_hsv([r, g, b]: [f32; 3]) -> [f32; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let hue = if delta <= 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let sat = if max <= 0.0 { 0.0 } else { delta / max };
    [hue.clamp(0.0, 1.0), sat, max]
}

fn bin(v: f32, range: f32, bins: usize) -> usize {
    ((v / range * bins as f32) as usize).min(bins - 1)
}

fn normalize(h: &mut [f32]) {
    let s: f32 = h.iter().sum();
    if s > 0.0 {
        h.iter_mut().for_each(|v| *v /= s);
    }
}

fn intersection(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x.min(*y)).sum()
}

fn initial_regions(img: &ImageTensor, labels: &LabelMap) -> Vec<Region> {
    let (h, w) = (img.height(), img.width());
    let n = labels.count;
    let mut color = vec![vec![0.0f32; COLOR_LEN]; n];
    let mut texture = vec![vec![0.0f32; TEXTURE_LEN]; n];
    let mut extent = vec![(u32::MAX, u32::MAX, 0u32, 0u32); n];
    let mut size = vec![0usize; n];

    let cos_sin: Vec<(f32, f32)> = (0..ORIENTATIONS)
        .map(|k| {
            let t = k as f32 * std::f32::consts::TAU / ORIENTATIONS as f32;
            (t.cos(), t.sin())
        })
        .collect();

    for y in 0..h {
        for x in 0..w {
            let l = labels.get(y, x) as usize;
            size[l] += 1;
            let e = &mut extent[l];
            *e = (
                e.0.min(x as u32),
                e.1.min(y as u32),
                e.2.max(x as u32),
                e.3.max(y as u32),
            );

            let hsv = rgb_to_hsv(img.pixel(y, x));
            for (c, v) in hsv.iter().enumerate() {
                color[l][c * COLOR_BINS + bin(*v, 1.0, COLOR_BINS)] += 1.0;
            }
            let (xl, xr) = (x.saturating_sub(1), (x + 1).min(w - 1));
            let (yu, yd) = (y.saturating_sub(1), (y + 1).min(h - 1));
            for c in 0..ImageTensor::CHANNELS {
                let p = img.plane(c);
                let gx = (p[y * w + xr] - p[y * w + xl]) / 2.0;
                let gy = (p[yd * w + x] - p[yu * w + x]) / 2.0;
                for (k, (co, si)) in cos_sin.iter().enumerate() {
                    let r = (gx * co + gy * si).max(0.0);
                    let idx = (c * ORIENTATIONS + k) * TEXTURE_BINS + bin(r, TEXTURE_RANGE, TEXTURE_BINS);
                    texture[l][idx] += 1.0;
                }
            }
        }
    }
    (0..n)
        .map(|l| {
            normalize(&mut color[l]);
            normalize(&mut texture[l]);
            let e = extent[l];
            Region {
                size: size[l],
                bbox: BoundingBox::from_inclusive(e.0, e.1, e.2, e.3),
                color: std::mem::take(&mut color[l]),
                texture: std::mem::take(&mut texture[l]),
            }
        })
        .collect()
}

fn adjacency(labels: &LabelMap) -> BTreeSet<(usize, usize)> {
    let mut pairs = BTreeSet::new();
    let (h, w) = (labels.height, labels.width);
    for y in 0..h {
        for x in 0..w {
            let a = labels.get(y, x) as usize;
            let mut link = |b: u32| {
                let b = b as usize;
                if a != b {
                    pairs.insert((a.min(b), a.max(b)));
                }
            };
            if x + 1 < w {
                link(labels.get(y, x + 1));
            }
            if y + 1 < h {
                link(labels.get(y + 1, x));
            }
        }
    }
    pairs
}

fn similarity(a: &Region, b: &Region, image_size: f32, wt: &SimilarityWeights) -> f32 {
    let hull = a.bbox.union_hull(&b.bbox).area() as f32;
    let joint = (a.size + b.size) as f32;
    wt.color * intersection(&a.color, &b.color)
        + wt.texture * intersection(&a.texture, &b.texture)
        + wt.size * (1.0 - joint / image_size)
        + wt.fill * (1.0 - (hull - joint) / image_size)
}

fn merge_regions(a: &Region, b: &Region) -> Region {
    let (sa, sb) = (a.size as f32, b.size as f32);
    let mix =
        |u: &[f32], v: &[f32]| -> Vec<f32> { u.iter().zip(v).map(|(x, y)| (x * sa + y * sb) / (sa + sb)).collect() };
    Region {
        size: a.size + b.size,
        bbox: a.bbox.union_hull(&b.bbox),
        color: mix(&a.color, &b.color),
        texture: mix(&a.texture, &b.texture),
    }
}

/// Over-segment and greedily merge the most similar adjacent pair until one
/// region remains. Similarity ties go to the lowest `(a, b)` id pair.
pub fn hierarchy(img: &ImageTensor, cfg: &ProposalConfig) -> Hierarchy {
    let labels = oversegment(
        img,
        cfg.initial_segmentation_scale,
        cfg.min_component_size,
        cfg.smoothing_sigma,
    );
    let image_size = (img.height() * img.width()) as f32;
    let wt = cfg.similarity_weights;
    let mut regions: Vec<Option<Region>> = initial_regions(img, &labels).into_iter().map(Some).collect();
    let initial_count = regions.len();
    let mut boxes: Vec<BoundingBox> = regions.iter().flatten().map(|r| r.bbox).collect();

    let mut sims: BTreeMap<(usize, usize), f32> = adjacency(&labels)
        .into_iter()
        .map(|(a, b)| {
            let s = similarity(
                regions[a].as_ref().unwrap(),
                regions[b].as_ref().unwrap(),
                image_size,
                &wt,
            );
            ((a, b), s)
        })
        .collect();

    let mut merges = Vec::new();
    while !sims.is_empty() {
        // BTreeMap iterates pairs in ascending order, so strict `>` keeps the
        // lowest pair among equal similarities.
        let (&(a, b), _) = sims
            .iter()
            .fold(None::<(&(usize, usize), &f32)>, |best, cur| match best {
                Some(bst) if *cur.1 <= *bst.1 => Some(bst),
                _ => Some(cur),
            })
            .expect("non-empty");
        let ra = regions[a].take().expect("live region");
        let rb = regions[b].take().expect("live region");
        let t = regions.len();
        let merged = merge_regions(&ra, &rb);
        boxes.push(merged.bbox);
        regions.push(Some(merged));

        let mut neighbours = BTreeSet::new();
        sims.retain(|&(i, j), _| {
            let touches = i == a || i == b || j == a || j == b;
            if touches {
                for k in [i, j] {
                    if k != a && k != b {
                        neighbours.insert(k);
                    }
                }
            }
            !touches
        });
        for n in neighbours {
            let s = similarity(
                regions[n].as_ref().unwrap(),
                regions[t].as_ref().unwrap(),
                image_size,
                &wt,
            );
            sims.insert((n.min(t), n.max(t)), s);
        }
        merges.push(Merge { a, b, into: t });
    }
    Hierarchy {
        initial_count,
        merges,
        boxes,
    }
}

/// Candidate boxes with their crops, in region creation order: segments
/// first, then merged regions. Identical boxes and boxes with a side shorter
/// than `min_box_side` are dropped before truncating to `max_proposals`.
pub fn selective_search(img: &ImageTensor, cfg: &ProposalConfig) -> Result<Vec<RegionProposal>> {
    cfg.validate()?;
    let hier = hierarchy(img, cfg);
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for b in hier.boxes {
        if out.len() >= cfg.max_proposals {
            break;
        }
        let small = b.w < cfg.min_box_side.min(img.width() as u32) || b.h < cfg.min_box_side.min(img.height() as u32);
        if small || !seen.insert((b.x, b.y, b.w, b.h)) {
            continue;
        }
        out.push(RegionProposal {
            bbox: b,
            crop: img.crop(&b)?,
        });
    }
    Ok(out)
}
