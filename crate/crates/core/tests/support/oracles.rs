//! Slow, direct reference implementations used to check the library.
#![allow(dead_code)]

use std::collections::VecDeque;

use rand::Rng;
use wwbl_core::{BoundingBox, SaliencyMask, TextEmbedding};

/// 8-connected components by BFS; returns one inclusive-extent box per
/// component, sorted.
pub fn flood_fill_boxes(h: usize, w: usize, on: &[bool]) -> Vec<BoundingBox> {
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    for start in 0..h * w {
        if !on[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        while let Some(i) = queue.pop_front() {
            let (y, x) = (i / w, i % w);
            x0 = x0.min(x);
            y0 = y0.min(y);
            x1 = x1.max(x);
            y1 = y1.max(y);
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                    if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if on[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        out.push(BoundingBox::new(x0 as u32, y0 as u32, (x1 - x0 + 1) as u32, (y1 - y0 + 1) as u32).unwrap());
    }
    out.sort_by_key(|b| (b.y, b.x, b.w, b.h));
    out
}

/// Intersection-over-union from corner coordinates.
pub fn ref_iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let (ax1, ay1) = (a.x as f64 + a.w as f64, a.y as f64 + a.h as f64);
    let (bx1, by1) = (b.x as f64 + b.w as f64, b.y as f64 + b.h as f64);
    let iw = (ax1.min(bx1) - (a.x as f64).max(b.x as f64)).max(0.0);
    let ih = (ay1.min(by1) - (a.y as f64).max(b.y as f64)).max(0.0);
    let inter = iw * ih;
    let union = a.w as f64 * a.h as f64 + b.w as f64 * b.h as f64 - inter;
    inter / union
}

/// Quadratic greedy NMS: repeatedly take the best remaining box (score, then
/// area, then index) and discard everything overlapping it at or above the
/// threshold.
pub fn ref_nms(boxes: &[(BoundingBox, f32)], thr: f64) -> Vec<usize> {
    let mut alive: Vec<bool> = vec![true; boxes.len()];
    let mut kept = Vec::new();
    loop {
        let mut best: Option<usize> = None;
        for i in 0..boxes.len() {
            if !alive[i] {
                continue;
            }
            best = match best {
                None => Some(i),
                Some(j) => {
                    let (bi, bj) = (&boxes[i], &boxes[j]);
                    let better = bi.1 > bj.1 || (bi.1 == bj.1 && bi.0.area() > bj.0.area());
                    Some(if better { i } else { j })
                }
            };
        }
        let Some(b) = best else { break };
        kept.push(b);
        alive[b] = false;
        for i in 0..boxes.len() {
            if alive[i] && ref_iou(&boxes[b].0, &boxes[i].0) >= thr {
                alive[i] = false;
            }
        }
    }
    kept
}

pub fn random_boxes(rng: &mut impl Rng, n: usize, frame: u32) -> Vec<(BoundingBox, f32)> {
    (0..n)
        .map(|_| {
            let w = rng.random_range(1..=frame / 2);
            let h = rng.random_range(1..=frame / 2);
            let x = rng.random_range(0..frame - w);
            let y = rng.random_range(0..frame - h);
            // coarse scores so ties actually occur
            let s = rng.random_range(0..20) as f32 / 19.0;
            (BoundingBox::new(x, y, w, h).unwrap(), s)
        })
        .collect()
}

/// Direct restatement of the clustering rules: every caption proposes its
/// threshold neighbourhood; proposals are taken largest first (lower seed
/// breaks ties), shed already-claimed members and survive if still large
/// enough. Returns (seed, representative, members).
pub fn ref_cluster(embs: &[TextEmbedding], thr: f64, min_size: usize) -> Vec<(usize, usize, Vec<usize>)> {
    let n = embs.len();
    let cos = |i: usize, j: usize| -> f64 {
        let mut s = 0.0f64;
        for (a, b) in embs[i].as_slice().iter().zip(embs[j].as_slice()) {
            s += *a as f64 * *b as f64;
        }
        s.clamp(-1.0, 1.0)
    };
    let hood: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| i == j || cos(i, j) >= thr).collect())
        .collect();
    let mut visited = vec![false; n];
    let mut claimed = vec![false; n];
    let mut out = Vec::new();
    loop {
        let mut pick: Option<usize> = None;
        for i in 0..n {
            if visited[i] || hood[i].len() < min_size {
                continue;
            }
            if pick.is_none_or(|p| hood[i].len() > hood[p].len()) {
                pick = Some(i);
            }
        }
        let Some(seed) = pick else { break };
        visited[seed] = true;
        let members: Vec<usize> = hood[seed].iter().copied().filter(|&m| !claimed[m]).collect();
        if members.is_empty() || members.len() < min_size {
            continue;
        }
        members.iter().for_each(|&m| claimed[m] = true);
        let mut rep = members[0];
        let mut best = f64::NEG_INFINITY;
        for &m in &members {
            let total: f64 = members.iter().map(|&o| cos(m, o)).sum();
            if total > best {
                best = total;
                rep = m;
            }
        }
        out.push((seed, rep, members));
    }
    out
}

/// Unit embeddings scattered around a few random centres so that some pairs
/// land above a 0.85 cosine and others below.
pub fn random_embedding_set(rng: &mut impl Rng, n: usize, dim: usize) -> Vec<TextEmbedding> {
    let centres: Vec<Vec<f32>> = (0..rng.random_range(1..=6))
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect())
        .collect();
    (0..n)
        .map(|_| {
            let c = &centres[rng.random_range(0..centres.len())];
            let spread = rng.random_range(0.0f32..0.6);
            let norm = c.iter().map(|v| v * v).sum::<f32>().sqrt();
            let v: Vec<f32> = c
                .iter()
                .map(|v| v / norm + spread * rng.random_range(-1.0f32..1.0) / (dim as f32).sqrt())
                .collect();
            TextEmbedding::normalized(v).unwrap()
        })
        .collect()
}

/// Exhaustive pointing check: scan for the first strict maximum in raster
/// order and test it against the box.
pub fn ref_pointing(mask: &SaliencyMask, gt: &BoundingBox) -> bool {
    let mut best = (0usize, 0usize);
    let mut best_v = f32::NEG_INFINITY;
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(y, x) > best_v {
                best_v = mask.get(y, x);
                best = (y, x);
            }
        }
    }
    let (y, x) = (best.0 as u32, best.1 as u32);
    x >= gt.x && x < gt.x + gt.w && y >= gt.y && y < gt.y + gt.h
}

/// Random binary mask: a blend of sparse noise and filled rectangles/rings.
pub fn random_binary_mask(rng: &mut impl Rng, max_side: usize) -> (usize, usize, Vec<bool>) {
    let h = rng.random_range(1..=max_side);
    let w = rng.random_range(1..=max_side);
    let density = rng.random_range(0.05f64..0.6);
    let mut on: Vec<bool> = (0..h * w).map(|_| rng.random_bool(density)).collect();
    for _ in 0..rng.random_range(0..4) {
        let (x0, y0) = (rng.random_range(0..w), rng.random_range(0..h));
        let (x1, y1) = (rng.random_range(x0..w), rng.random_range(y0..h));
        let ring = rng.random_bool(0.5);
        for y in y0..=y1 {
            for x in x0..=x1 {
                let edge = y == y0 || y == y1 || x == x0 || x == x1;
                on[y * w + x] = !ring || edge;
            }
        }
    }
    (h, w, on)
}
