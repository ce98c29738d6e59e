//! Weakly supervised training from (image, caption) pairs.

pub mod cache;
pub mod checkpoint;

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use wwbl_core::{BoundingBox, ImageTensor, Phrase, RelevancyMap, TextEmbedding};

use crate::backend::{text_tensor, VisionLanguageBackend};
use crate::error::{mismatch, ModelError, Result};
use crate::losses::{loss_terms, LossBreakdown, LossWeights};
use crate::net::{GroundingNet, Variant};
use crate::tensor::{images_to_batch, map_to_tensor};
pub use cache::Cache;
pub use checkpoint::{Checkpoint, EpochStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Wsol,
    Wsg,
}

impl Task {
    pub fn variant(self) -> Variant {
        match self {
            Task::Wsol => Variant::Wsol,
            Task::Wsg => Variant::Multimodal,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub task: Task,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub flip_prob: f64,
    /// Square extent before the random crop (wsol).
    pub resize: usize,
    /// Random crop extent (wsol).
    pub crop: usize,
    /// Square training extent (wsg).
    pub wsg_input: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::wsg()
    }
}

impl TrainConfig {
    pub fn wsg() -> Self {
        Self {
            task: Task::Wsg,
            batch_size: 32,
            lr: 0.0003,
            momentum: 0.9,
            weight_decay: 0.0001,
            epochs: 100,
            flip_prob: 0.5,
            resize: 256,
            crop: 224,
            wsg_input: 299,
            seed: 0,
        }
    }

    pub fn wsol() -> Self {
        Self {
            task: Task::Wsol,
            batch_size: 48,
            ..Self::wsg()
        }
    }

    /// Extent of the images the network sees.
    pub fn input_size(&self) -> usize {
        match self.task {
            Task::Wsol => self.crop,
            Task::Wsg => self.wsg_input,
        }
    }

    fn base_size(&self) -> usize {
        match self.task {
            Task::Wsol => self.resize,
            Task::Wsg => self.wsg_input,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ModelError::Config(format!("train: {m}")));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return bad("flip_prob must lie in [0, 1]");
        }
        if !(self.momentum >= 0.0 && self.weight_decay >= 0.0) {
            return bad("momentum and weight_decay must be non-negative");
        }
        if self.task == Task::Wsol && (self.crop == 0 || self.crop > self.resize) {
            return bad("crop must be positive and no larger than resize");
        }
        if self.wsg_input == 0 {
            return bad("wsg_input must be positive");
        }
        Ok(())
    }
}

/// A training example. There is deliberately no place for boxes.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainPair {
    pub image_id: String,
    pub image: ImageTensor,
    pub captions: Vec<Phrase>,
}

#[derive(Debug, Clone, Default)]
pub struct PairDataset {
    pairs: Vec<TrainPair>,
}

impl PairDataset {
    pub fn new(pairs: Vec<TrainPair>) -> Result<Self> {
        if let Some(p) = pairs.iter().find(|p| p.captions.is_empty()) {
            return Err(ModelError::Config(format!("{} has no caption", p.image_id)));
        }
        Ok(Self { pairs })
    }

    pub fn pairs(&self) -> &[TrainPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Random choices of one augmentation, so the image and its relevancy map
/// can receive the same transform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentPlan {
    pub crop: Option<BoundingBox>,
    pub flip: bool,
}

pub fn plan_augment(cfg: &TrainConfig, rng: &mut impl Rng) -> AugmentPlan {
    let crop = match cfg.task {
        Task::Wsol => {
            let slack = (cfg.resize - cfg.crop) as u32;
            let (x, y) = (rng.random_range(0..=slack), rng.random_range(0..=slack));
            Some(BoundingBox::new(x, y, cfg.crop as u32, cfg.crop as u32).expect("positive crop"))
        }
        Task::Wsg => None,
    };
    // always draw, so the stream does not depend on flip_prob
    let flip = rng.random::<f64>() < cfg.flip_prob;
    AugmentPlan { crop, flip }
}

pub fn apply_to_image(img: &ImageTensor, cfg: &TrainConfig, plan: &AugmentPlan) -> Result<ImageTensor> {
    let s = cfg.base_size();
    let mut out = img.resize_bilinear(s, s)?;
    if let Some(c) = plan.crop {
        out = out.crop(&c)?;
    }
    Ok(if plan.flip { out.flip_horizontal() } else { out })
}

/// `map` must already be at the pre-crop base extent.
pub fn apply_to_map(map: &RelevancyMap, plan: &AugmentPlan) -> Result<RelevancyMap> {
    let mut out = map.clone();
    if let Some(c) = plan.crop {
        out = out.crop(&c)?;
    }
    Ok(if plan.flip { out.flip_horizontal() } else { out })
}

/// wsol: resize, random crop, random flip. wsg: resize, random flip.
pub fn augment(img: &ImageTensor, cfg: &TrainConfig, rng: &mut impl Rng) -> Result<ImageTensor> {
    let plan = plan_augment(cfg, rng);
    apply_to_image(img, cfg, &plan)
}

/// One network input with its text and relevancy target, all at the
/// training extent.
#[derive(Debug, Clone)]
pub struct Sample {
    pub image: ImageTensor,
    pub text: TextEmbedding,
    pub relevancy: RelevancyMap,
}

impl Sample {
    /// Resize, augment and attach the (cached) relevancy target.
    pub fn prepare<B: VisionLanguageBackend + ?Sized>(
        img: &ImageTensor,
        caption: &Phrase,
        cfg: &TrainConfig,
        plan: &AugmentPlan,
        backend: &B,
        cache: &Cache,
    ) -> Result<Self> {
        let s = cfg.base_size();
        let base = img.resize_bilinear(s, s)?;
        let relevancy = cache.relevancy(backend, &base, caption, s, s)?;
        Ok(Self {
            image: apply_to_image(img, cfg, plan)?,
            text: cache.text(backend, caption)?,
            relevancy: apply_to_map(&relevancy, plan)?,
        })
    }
}

/// SGD with momentum and decoupled-from-nothing (L2) weight decay, in the
/// conventional form: `d = g + wd·w; b = μ·b + d; w -= lr·b`.
pub struct Sgd {
    lr: f64,
    momentum: f64,
    weight_decay: f64,
    buffers: Vec<Option<Tensor>>,
}

impl Sgd {
    pub fn new(cfg: &TrainConfig) -> Self {
        Self::with(cfg.lr, cfg.momentum, cfg.weight_decay)
    }

    pub fn with(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            momentum,
            weight_decay,
            buffers: Vec::new(),
        }
    }

    pub fn step(&mut self, vars: &[Var], grads: &[Tensor]) -> Result<()> {
        if self.buffers.is_empty() {
            self.buffers = vec![None; vars.len()];
        }
        if self.buffers.len() != vars.len() || grads.len() != vars.len() {
            return Err(mismatch(format!("{} parameters", self.buffers.len()), vars.len()));
        }
        for ((var, g), buf) in vars.iter().zip(grads).zip(self.buffers.iter_mut()) {
            // detached, so buffers do not chain the history of every step
            let w = var.as_tensor().detach();
            let d = (g.detach() + w.affine(self.weight_decay, 0.0)?)?;
            let b = match buf.take() {
                Some(prev) => (prev.affine(self.momentum, 0.0)? + d)?,
                None => d,
            };
            var.set(&(&w - b.affine(self.lr, 0.0)?)?)?;
            *buf = Some(b);
        }
        Ok(())
    }
}

fn check_net<B: VisionLanguageBackend + ?Sized>(net: &GroundingNet, task: Task, backend: &B) -> Result<()> {
    if net.config().variant != task.variant() {
        return Err(ModelError::Config(format!(
            "task {task:?} needs the {:?} network variant, found {:?}",
            task.variant(),
            net.config().variant
        )));
    }
    let dim = backend.descriptor().embed_dim;
    if task == Task::Wsg && net.config().feature_dim != dim {
        return Err(mismatch(format!("feature_dim {dim}"), net.config().feature_dim));
    }
    Ok(())
}

/// Loss on a batch and its gradient for every trainable parameter (zeros
/// where a parameter is not reached).
pub fn batch_gradients<B: VisionLanguageBackend + ?Sized>(
    batch: &[Sample],
    net: &GroundingNet,
    weights: &LossWeights,
    backend: &B,
) -> Result<(LossBreakdown, Vec<Tensor>)> {
    let (dtype, dev) = (net.dtype(), net.device());
    let images: Vec<&ImageTensor> = batch.iter().map(|s| &s.image).collect();
    let x = images_to_batch(&images, dtype, dev)?;
    let texts: Vec<TextEmbedding> = batch.iter().map(|s| s.text.clone()).collect();
    let z = text_tensor(&texts, dtype, dev)?;
    let maps = batch
        .iter()
        .map(|s| {
            let r = &s.relevancy;
            map_to_tensor(r.values(), r.height(), r.width(), dtype, dev)
        })
        .collect::<Result<Vec<_>>>()?;
    let r = Tensor::cat(&maps, 0)?;
    let text_in = (net.config().variant == Variant::Multimodal).then_some(&z);
    let m = net.forward(&x, text_in, true)?;
    let terms = loss_terms(backend, &x, &m, &z, &r)?;
    let loss = terms.total(weights)?.mean_all()?;
    let breakdown = LossBreakdown::from_terms(terms.means()?, weights);
    if !breakdown.is_finite() {
        return Err(ModelError::NonFiniteLoss {
            epoch: 0,
            step: 0,
            detail: format!("{breakdown:?}"),
        });
    }
    let store: GradStore = loss.backward()?;
    let grads = net
        .params()
        .trainable_vars()
        .iter()
        .map(|v| match store.get(v.as_tensor()) {
            Some(g) => Ok(g.clone()),
            None => Ok(v.as_tensor().zeros_like()?),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((breakdown, grads))
}

/// One optimizer step on the batch mean of the weighted loss.
pub fn train_step<B: VisionLanguageBackend + ?Sized>(
    batch: &[Sample],
    net: &GroundingNet,
    weights: &LossWeights,
    backend: &B,
    opt: &mut Sgd,
) -> Result<LossBreakdown> {
    if batch.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let (loss, grads) = batch_gradients(batch, net, weights, backend)?;
    opt.step(&net.params().trainable_vars(), &grads)?;
    Ok(loss)
}

/// Train for `cfg.epochs` epochs. `on_epoch` receives a checkpoint after
/// every epoch; the last one is also returned.
pub fn fit<B: VisionLanguageBackend + ?Sized>(
    dataset: &PairDataset,
    cfg: &TrainConfig,
    weights: &LossWeights,
    net: &GroundingNet,
    backend: &B,
    cache: &Cache,
    mut on_epoch: impl FnMut(&Checkpoint) -> Result<()>,
) -> Result<Checkpoint> {
    cfg.validate()?;
    weights.validate()?;
    check_net(net, cfg.task, backend)?;
    if dataset.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Sgd::new(cfg);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut last = Checkpoint::capture(net, cfg, weights, 0, Vec::new())?;
    let mut step = 0;
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 4];
        let (mut samples, mut steps) = (0, 0);
        for chunk in order.chunks(cfg.batch_size) {
            let batch = chunk
                .iter()
                .map(|&i| {
                    let pair = &dataset.pairs()[i];
                    let caption = &pair.captions[rng.random_range(0..pair.captions.len())];
                    let plan = plan_augment(cfg, &mut rng);
                    Sample::prepare(&pair.image, caption, cfg, &plan, backend, cache)
                })
                .collect::<Result<Vec<_>>>()?;
            step += 1;
            let loss = train_step(&batch, net, weights, backend, &mut opt).map_err(|e| match e {
                ModelError::NonFiniteLoss { detail, .. } => ModelError::NonFiniteLoss { epoch, step, detail },
                other => other,
            })?;
            let n = batch.len() as f64;
            for (s, v) in sums.iter_mut().zip([loss.fore, loss.back, loss.rmap, loss.reg]) {
                *s += v * n;
            }
            samples += batch.len();
            steps += 1;
        }
        let means = sums.map(|s| s / samples as f64);
        history.push(EpochStats {
            epoch,
            steps,
            samples,
            loss: LossBreakdown::from_terms(means, weights),
        });
        last = Checkpoint::capture(net, cfg, weights, epoch, history.clone())?;
        on_epoch(&last)?;
    }
    Ok(last)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn augment_shapes_follow_task() {
        let img = ImageTensor::filled(50, 70, [0.2, 0.4, 0.6]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(augment(&img, &TrainConfig::wsol(), &mut rng).unwrap().height(), 224);
        let out = augment(&img, &TrainConfig::wsg(), &mut rng).unwrap();
        assert_eq!((out.height(), out.width()), (299, 299));
    }

    #[test]
    fn no_flip_is_deterministic_resize() {
        let img = ImageTensor::from_fn(20, 30, |y, x| [y as f32 / 20.0, x as f32 / 30.0, 0.5]).unwrap();
        let cfg = TrainConfig {
            flip_prob: 0.0,
            wsg_input: 40,
            ..TrainConfig::wsg()
        };
        let a = augment(&img, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = augment(&img, &cfg, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, img.resize_bilinear(40, 40).unwrap());
    }

    #[test]
    fn forced_flip_twice_is_identity() {
        let img = ImageTensor::from_fn(20, 30, |y, x| [y as f32 / 20.0, x as f32 / 30.0, 0.5]).unwrap();
        let cfg = TrainConfig {
            flip_prob: 1.0,
            wsg_input: 40,
            ..TrainConfig::wsg()
        };
        let once = augment(&img, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(once.flip_horizontal(), img.resize_bilinear(40, 40).unwrap());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::wsg().validate().is_ok());
        assert!(TrainConfig {
            batch_size: 0,
            ..TrainConfig::wsg()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            lr: 0.0,
            ..TrainConfig::wsg()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            flip_prob: 1.5,
            ..TrainConfig::wsg()
        }
        .validate()
        .is_err());
        let w = TrainConfig::wsol();
        assert_eq!((w.batch_size, w.resize, w.crop), (48, 256, 224));
        assert_eq!((TrainConfig::wsg().batch_size, TrainConfig::wsg().wsg_input), (32, 299));
    }

    #[test]
    fn sgd_matches_hand_computation() {
        let dev = candle_core::Device::Cpu;
        let v = Var::from_tensor(&Tensor::new(&[1.0f64, -2.0], &dev).unwrap()).unwrap();
        let g = Tensor::new(&[0.5f64, 0.5], &dev).unwrap();
        let mut opt = Sgd::with(0.1, 0.9, 0.01);
        opt.step(std::slice::from_ref(&v), std::slice::from_ref(&g)).unwrap();
        // d = g + 0.01 w = [0.51, 0.48]; w = w - 0.1 d
        let w1 = v.as_tensor().to_vec1::<f64>().unwrap();
        assert!((w1[0] - 0.949).abs() < 1e-12 && (w1[1] + 2.048).abs() < 1e-12);
        opt.step(std::slice::from_ref(&v), std::slice::from_ref(&g)).unwrap();
        // b = 0.9 [0.51, 0.48] + g + 0.01 w1
        let b0 = 0.9 * 0.51 + 0.5 + 0.01 * 0.949;
        let w2 = v.as_tensor().to_vec1::<f64>().unwrap();
        assert!((w2[0] - (0.949 - 0.1 * b0)).abs() < 1e-12);
    }
}
