//! Central-difference check of the loss gradient with respect to the mask.
#![allow(dead_code)]

use candle_core::{DType, Device, Tensor, Var};
use rand::Rng;
use wwbl_core::{BoundingBox, ImageTensor, Phrase, RelevancyMap};
use wwbl_model::backend::mock::MockBackend;
use wwbl_model::losses::loss_total_tensor;
use wwbl_model::{LossWeights, VisionLanguageBackend};

pub const SIDE: usize = 16;

pub struct GradCase {
    pub image: ImageTensor,
    pub phrase: Phrase,
    pub relevancy: RelevancyMap,
    pub mask: Vec<f64>,
}

/// A noisy 16x16 scene with one or two vocabulary-colored rectangles, a
/// phrase naming one of them and a mask strictly inside (0, 1).
pub fn random_case(rng: &mut impl Rng, backend: &MockBackend) -> GradCase {
    let spec = backend.spec();
    let mut image = ImageTensor::from_fn(SIDE, SIDE, |_, _| {
        let v = rng.random_range(0.05f32..0.3);
        [v, v + rng.random_range(-0.03f32..0.03), v]
    })
    .unwrap();
    let mut named = None;
    for _ in 0..rng.random_range(1..=2) {
        let c = rng.random_range(0..spec.colors.len());
        let (w, h) = (rng.random_range(4..9u32), rng.random_range(4..9u32));
        let b = BoundingBox::new(rng.random_range(0..=16 - w), rng.random_range(0..=16 - h), w, h).unwrap();
        for y in b.y..b.bottom() {
            for x in b.x..b.right() {
                image.set_pixel(y as usize, x as usize, spec.colors[c].rgb);
            }
        }
        named.get_or_insert(c);
    }
    let shape = spec.shapes[rng.random_range(0..spec.shapes.len())];
    let phrase = Phrase::new(format!("a {} {}", spec.colors[named.unwrap()].word, shape.word())).unwrap();
    let relevancy = backend
        .relevancy(&image, &phrase)
        .unwrap()
        .resize_bilinear(SIDE, SIDE)
        .unwrap();
    let mask = (0..SIDE * SIDE).map(|_| rng.random_range(0.05..0.95)).collect();
    GradCase {
        image,
        phrase,
        relevancy,
        mask,
    }
}

fn loss_at(backend: &MockBackend, c: &GradCase, mask: &Tensor, w: &LossWeights) -> Tensor {
    loss_total_tensor(backend, &c.image, mask, &c.phrase, &c.relevancy, w).unwrap()
}

/// Analytic and central-difference gradients, in f64.
pub fn gradients(backend: &MockBackend, c: &GradCase, w: &LossWeights, eps: f64) -> (Vec<f64>, Vec<f64>) {
    let dev = Device::Cpu;
    let shape = (1, 1, SIDE, SIDE);
    let var = Var::from_tensor(&Tensor::from_vec(c.mask.clone(), shape, &dev).unwrap()).unwrap();
    let loss = loss_at(backend, c, var.as_tensor(), w);
    let grads = loss.backward().unwrap();
    let analytic = match grads.get(var.as_tensor()) {
        Some(g) => g.flatten_all().unwrap().to_vec1::<f64>().unwrap(),
        None => vec![0.0; SIDE * SIDE],
    };
    let mut numeric = Vec::with_capacity(SIDE * SIDE);
    let mut m = c.mask.clone();
    for i in 0..m.len() {
        let base = m[i];
        let eval = |v: f64, m: &mut Vec<f64>| {
            m[i] = v;
            let t = Tensor::from_vec(m.clone(), shape, &dev).unwrap();
            loss_at(backend, c, &t, w)
                .to_dtype(DType::F64)
                .unwrap()
                .to_scalar::<f64>()
                .unwrap()
        };
        let hi = eval(base + eps, &mut m);
        let lo = eval(base - eps, &mut m);
        m[i] = base;
        numeric.push((hi - lo) / (2.0 * eps));
    }
    (analytic, numeric)
}

/// `|a - n| / max(|a|, |n|)` over the whole gradient vector.
pub fn relative_error(a: &[f64], n: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(n));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}
