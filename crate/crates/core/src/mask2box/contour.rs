//! Topological border following over 8-connected foreground.
//!
//! Raster-scans a zero-padded label image, starting an outer border at any
//! `1` pixel whose left neighbour is background and a hole border at any
//! foreground pixel whose right neighbour is background, then follows the
//! border while writing `NBD` / `-NBD` labels so that every border is traced
//! exactly once.

use crate::geometry::BoundingBox;
use crate::mask::SaliencyMask;

/// Foreground/background image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), height * width, "bit count must match extent");
        Self { height, width, bits }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(y, x));
            }
        }
        Self::new(height, width, bits)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

/// Foreground iff `value >= threshold`.
pub fn binarize(mask: &SaliencyMask, threshold: f32) -> BinaryMask {
    BinaryMask::new(
        mask.height(),
        mask.width(),
        mask.values().iter().map(|v| *v >= threshold).collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BorderKind {
    Outer,
    Hole,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Contour {
    /// Closed chain of boundary pixels as `(x, y)`; consecutive points are
    /// 8-neighbours and the last point is adjacent to the first.
    pub points: Vec<(u32, u32)>,
    pub kind: BorderKind,
    /// Index of the enclosing border in the returned list, if any.
    pub parent: Option<usize>,
}

impl Contour {
    pub fn bounding_box(&self) -> BoundingBox {
        let (mut x0, mut y0) = (u32::MAX, u32::MAX);
        let (mut x1, mut y1) = (0, 0);
        for &(x, y) in &self.points {
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
        }
        BoundingBox::from_inclusive(x0, y0, x1, y1)
    }

    /// Polygon area enclosed by the chain (shoelace over pixel centres).
    pub fn area(&self) -> f64 {
        let n = self.points.len();
        if n < 3 {
            return 0.0;
        }
        let mut twice = 0i64;
        for i in 0..n {
            let (xa, ya) = self.points[i];
            let (xb, yb) = self.points[(i + 1) % n];
            twice += xa as i64 * yb as i64 - xb as i64 * ya as i64;
        }
        twice.unsigned_abs() as f64 / 2.0
    }
}

// Clockwise neighbour order with y pointing down: E, SE, S, SW, W, NW, N, NE.
const DIRS: [(isize, isize); 8] = [(0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1)];

fn dir_index(from: (usize, usize), to: (usize, usize)) -> usize {
    let d = (to.0 as isize - from.0 as isize, to.1 as isize - from.1 as isize);
    DIRS.iter()
        .position(|x| *x == d)
        .expect("border following only visits 8-neighbours")
}

fn step(p: (usize, usize), dir: usize) -> (usize, usize) {
    (
        (p.0 as isize + DIRS[dir].0) as usize,
        (p.1 as isize + DIRS[dir].1) as usize,
    )
}

/// Trace all outer and hole borders in raster order of their starting pixel.
pub fn trace_contours(mask: &BinaryMask) -> Vec<Contour> {
    let (h, w) = (mask.height() + 2, mask.width() + 2);
    // Labels: 0 background, 1 unvisited foreground, +-NBD visited border.
    let mut f = vec![0i32; h * w];
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(y, x) {
                f[(y + 1) * w + x + 1] = 1;
            }
        }
    }
    let at = |f: &[i32], p: (usize, usize)| f[p.0 * w + p.1];

    let mut contours: Vec<Contour> = Vec::new();
    // Border number -> (contour index, kind). NBD 1 is the frame.
    let mut borders: Vec<Option<(usize, BorderKind)>> = vec![None, None];
    let mut nbd: i32 = 1;

    for i in 1..h - 1 {
        let mut lnbd: i32 = 1;
        for j in 1..w - 1 {
            let fij = at(&f, (i, j));
            if fij == 0 {
                continue;
            }
            let start = if fij == 1 && at(&f, (i, j - 1)) == 0 {
                Some((BorderKind::Outer, (i, j - 1)))
            } else if fij >= 1 && at(&f, (i, j + 1)) == 0 {
                if fij > 1 {
                    lnbd = fij;
                }
                Some((BorderKind::Hole, (i, j + 1)))
            } else {
                None
            };

            if let Some((kind, from)) = start {
                nbd += 1;
                let parent_border = borders.get(lnbd as usize).copied().flatten();
                let parent = match (kind, parent_border) {
                    (_, None) => None,
                    (k, Some((idx, pk))) => {
                        if k == pk {
                            contours[idx].parent
                        } else {
                            Some(idx)
                        }
                    }
                };
                let points = follow(&mut f, w, (i, j), from, nbd);
                borders.push(Some((contours.len(), kind)));
                contours.push(Contour { points, kind, parent });
            }

            let fij = at(&f, (i, j));
            if fij != 1 {
                lnbd = fij.abs();
            }
        }
    }
    contours
}

fn follow(f: &mut [i32], w: usize, start: (usize, usize), from: (usize, usize), nbd: i32) -> Vec<(u32, u32)> {
    let to_xy = |p: (usize, usize)| ((p.1 - 1) as u32, (p.0 - 1) as u32);
    let idx = |p: (usize, usize)| p.0 * w + p.1;

    // Clockwise search for the first non-zero neighbour, beginning at `from`.
    let d0 = dir_index(start, from);
    let first = (0..8).map(|k| (d0 + k) % 8).find(|&d| f[idx(step(start, d))] != 0);
    let Some(d1) = first else {
        f[idx(start)] = -nbd;
        return vec![to_xy(start)];
    };
    let p1 = step(start, d1);

    let mut points = Vec::new();
    let mut prev = p1;
    let mut cur = start;
    loop {
        points.push(to_xy(cur));
        // Counter-clockwise search starting just after `prev`.
        let dp = dir_index(cur, prev);
        let mut east_zero_examined = false;
        let mut next = cur;
        for k in 1..=8 {
            let d = (dp + 8 - k) % 8;
            let q = step(cur, d);
            if f[idx(q)] != 0 {
                next = q;
                break;
            }
            if d == 0 {
                east_zero_examined = true;
            }
        }
        if east_zero_examined {
            f[idx(cur)] = -nbd;
        } else if f[idx(cur)] == 1 {
            f[idx(cur)] = nbd;
        }
        if next == start && cur == p1 {
            break;
        }
        prev = cur;
        cur = next;
    }
    points
}

#[cfg(test)]
mod tests {
    use super::*;

    fn from_rows(rows: &[&str]) -> BinaryMask {
        BinaryMask::from_fn(rows.len(), rows[0].len(), |y, x| rows[y].as_bytes()[x] == b'#')
    }

    #[test]
    fn binarize_uses_ge() {
        let m = SaliencyMask::filled(2, 2, 0.1).unwrap();
        assert_eq!(binarize(&m, 0.1).count(), 4);
        let m = SaliencyMask::filled(2, 2, 0.05).unwrap();
        assert_eq!(binarize(&m, 0.1).count(), 0);
        let checker = SaliencyMask::from_fn(4, 4, |y, x| if (x + y) % 2 == 0 { 0.9 } else { 0.0 }).unwrap();
        let b = binarize(&checker, 0.5);
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(b.get(y, x), (x + y) % 2 == 0);
            }
        }
    }

    #[test]
    fn filled_square() {
        let m = BinaryMask::from_fn(8, 8, |y, x| (2..5).contains(&y) && (2..5).contains(&x));
        let cs = trace_contours(&m);
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].kind, BorderKind::Outer);
        assert_eq!(cs[0].bounding_box(), BoundingBox::new(2, 2, 3, 3).unwrap());
        assert_eq!(cs[0].points.len(), 8);
        assert_eq!(cs[0].area(), 4.0);
    }

    #[test]
    fn empty_and_single_pixel() {
        assert!(trace_contours(&BinaryMask::from_fn(4, 4, |_, _| false)).is_empty());
        let cs = trace_contours(&BinaryMask::from_fn(3, 3, |y, x| (y, x) == (1, 1)));
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].points, vec![(1, 1)]);
    }

    #[test]
    fn ring_has_outer_and_hole() {
        let m = from_rows(&[
            ".....", //
            ".###.", //
            ".#.#.", //
            ".###.", //
            ".....",
        ]);
        let cs = trace_contours(&m);
        assert_eq!(cs.len(), 2);
        assert_eq!(cs[0].kind, BorderKind::Outer);
        assert_eq!(cs[1].kind, BorderKind::Hole);
        assert_eq!(cs[1].parent, Some(0));
        assert_eq!(cs[0].parent, None);
    }

    #[test]
    fn diagonal_pixels_are_one_component() {
        let m = from_rows(&[
            "#...", //
            ".#..", //
            "..#.", //
            "...#",
        ]);
        let cs = trace_contours(&m);
        assert_eq!(cs.len(), 1);
        assert_eq!(cs[0].bounding_box(), BoundingBox::new(0, 0, 4, 4).unwrap());
    }

    #[test]
    fn chain_is_closed_and_eight_connected() {
        let m = from_rows(&[
            "..##....", //
            ".####.#.", //
            "##..###.", //
            ".#####..", //
            "...#....",
        ]);
        for c in trace_contours(&m) {
            let n = c.points.len();
            for i in 0..n {
                let (a, b) = (c.points[i], c.points[(i + 1) % n]);
                let dx = (a.0 as i64 - b.0 as i64).abs();
                let dy = (a.1 as i64 - b.1 as i64).abs();
                assert!(dx <= 1 && dy <= 1, "{a:?} -> {b:?}");
            }
        }
    }
}
