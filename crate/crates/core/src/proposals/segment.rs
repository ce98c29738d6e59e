//! Greedy graph-based over-segmentation on a pixel grid.
//!
//! Edges join 8-neighbours and are weighted by RGB distance (0..255 scale).
//! Two components merge when the joining edge is no heavier than either
//! component's internal variation plus `scale / size`.

use crate::image::ImageTensor;

/// Per-pixel region labels, `0..count`, numbered in raster order of first
/// appearance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub labels: Vec<u32>,
    pub count: usize,
}

impl LabelMap {
    pub fn get(&self, y: usize, x: usize) -> u32 {
        self.labels[y * self.width + x]
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.count];
        for l in &self.labels {
            s[*l as usize] += 1;
        }
        s
    }
}

struct DisjointSets {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl DisjointSets {
    fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (big, small) = if self.size[a] >= self.size[b] { (a, b) } else { (b, a) };
        self.parent[small] = big;
        self.size[big] += self.size[small];
    }
}

/// Separable Gaussian blur per channel; `sigma <= 0` returns the input.
pub fn gaussian_smooth(img: &ImageTensor, sigma: f32) -> ImageTensor {
    if sigma <= 0.0 {
        return img.clone();
    }
    let radius = (sigma * 4.0).ceil() as isize;
    let mut kernel: Vec<f32> = (-radius..=radius)
        .map(|i| (-(i * i) as f32 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f32 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);

    let (h, w) = (img.height(), img.width());
    let clampi = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut data = Vec::with_capacity(img.data().len());
    for c in 0..ImageTensor::CHANNELS {
        let plane = img.plane(c);
        let mut tmp = vec![0.0f32; h * w];
        for y in 0..h {
            for x in 0..w {
                tmp[y * w + x] = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, kv)| kv * plane[y * w + clampi(x as isize + k as isize - radius, w)])
                    .sum();
            }
        }
        for y in 0..h {
            for x in 0..w {
                let v: f32 = kernel
                    .iter()
                    .enumerate()
                    .map(|(k, kv)| kv * tmp[clampi(y as isize + k as isize - radius, h) * w + x])
                    .sum();
                data.push(v.clamp(0.0, 1.0));
            }
        }
    }
    ImageTensor::new(h, w, data).expect("blur preserves extent and range")
}

pub fn oversegment(img: &ImageTensor, scale: f32, min_component_size: usize, sigma: f32) -> LabelMap {
    let smooth = gaussian_smooth(img, sigma);
    let (h, w) = (img.height(), img.width());
    let dist = |a: usize, b: usize| -> f32 {
        let mut s = 0.0f32;
        for c in 0..ImageTensor::CHANNELS {
            let p = smooth.plane(c);
            let d = (p[a] - p[b]) * 255.0;
            s += d * d;
        }
        s.sqrt()
    };

    let mut edges: Vec<(f32, usize, usize)> = Vec::with_capacity(4 * h * w);
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            if x + 1 < w {
                edges.push((dist(i, i + 1), i, i + 1));
            }
            if y + 1 < h {
                edges.push((dist(i, i + w), i, i + w));
                if x + 1 < w {
                    edges.push((dist(i, i + w + 1), i, i + w + 1));
                }
                if x > 0 {
                    edges.push((dist(i, i + w - 1), i, i + w - 1));
                }
            }
        }
    }
    // Stable sort keeps construction order among equal weights.
    edges.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut sets = DisjointSets::new(h * w);
    let mut threshold = vec![scale; h * w];
    for &(wt, a, b) in &edges {
        let (ra, rb) = (sets.find(a), sets.find(b));
        if ra != rb && wt <= threshold[ra] && wt <= threshold[rb] {
            sets.union(ra, rb);
            let r = sets.find(ra);
            threshold[r] = wt + scale / sets.size[r] as f32;
        }
    }
    for &(_, a, b) in &edges {
        let (ra, rb) = (sets.find(a), sets.find(b));
        if ra != rb && (sets.size[ra] < min_component_size || sets.size[rb] < min_component_size) {
            sets.union(ra, rb);
        }
    }

    let mut remap = vec![u32::MAX; h * w];
    let mut count = 0u32;
    let mut labels = Vec::with_capacity(h * w);
    for i in 0..h * w {
        let r = sets.find(i);
        if remap[r] == u32::MAX {
            remap[r] = count;
            count += 1;
        }
        labels.push(remap[r]);
    }
    LabelMap {
        height: h,
        width: w,
        labels,
        count: count as usize,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_image_is_one_segment() {
        let img = ImageTensor::filled(20, 30, [0.3, 0.6, 0.2]).unwrap();
        let m = oversegment(&img, 100.0, 10, 0.8);
        assert_eq!(m.count, 1);
    }

    #[test]
    fn two_half_planes_give_two_segments() {
        let img = ImageTensor::from_fn(24, 40, |_, x| if x < 20 { [0.9, 0.1, 0.1] } else { [0.1, 0.1, 0.9] }).unwrap();
        let m = oversegment(&img, 100.0, 10, 0.0);
        assert_eq!(m.count, 2);
        assert_ne!(m.get(0, 0), m.get(0, 39));
        // every pixel labelled exactly once, labels dense
        assert_eq!(m.sizes().iter().sum::<usize>(), 24 * 40);
        assert!(m.sizes().iter().all(|s| *s > 0));
    }

    #[test]
    fn small_components_are_absorbed() {
        let img = ImageTensor::from_fn(30, 30, |y, x| {
            if (y, x) == (10, 10) {
                [1.0, 1.0, 1.0]
            } else {
                [0.0, 0.0, 0.0]
            }
        })
        .unwrap();
        let m = oversegment(&img, 1.0, 5, 0.0);
        assert!(m.sizes().iter().all(|s| *s >= 5));
    }

    #[test]
    fn blur_preserves_constant() {
        let img = ImageTensor::filled(6, 6, [0.5, 0.5, 0.5]).unwrap();
        let b = gaussian_smooth(&img, 1.0);
        assert!(b.data().iter().all(|v| (v - 0.5).abs() < 1e-5));
    }
}
