//! The desk-scale synthetic experiment: train the phrase-grounding network
//! on generated scenes with the mock backend, then score every inference
//! mode on held-out scenes.

use std::time::{Duration, Instant};

use candle_core::Device;
use wwbl_core::{ExtractionConfig, GroundingAnnotation};

use crate::backend::mock::{MockBackend, MockOptions, MockWorldSpec};
use crate::backend::VisionLanguageBackend;
use crate::error::Result;
use crate::losses::LossWeights;
use crate::net::{GroundingNet, NetConfig};
use crate::pipeline::{
    evaluate, infer_wsg, infer_wwbl_iter, infer_wwbl_ss, wsg_prediction, EvalReport, EvalTask, WwblConfig,
};
use crate::synthetic::{generate_scenes, scene_pairs, SceneConfig, SyntheticScene};
use crate::trainer::{fit, Cache, Checkpoint, PairDataset, TrainConfig};

#[derive(Debug, Clone)]
pub struct DeskExperiment {
    pub world: MockWorldSpec,
    pub scene: SceneConfig,
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub data_seed: u64,
    pub train: TrainConfig,
    pub weights: LossWeights,
    pub width: usize,
    pub wwbl: WwblConfig,
}

impl Default for DeskExperiment {
    fn default() -> Self {
        Self {
            world: MockWorldSpec::default(),
            scene: SceneConfig::default(),
            train_scenes: 50,
            test_scenes: 20,
            data_seed: 1,
            train: TrainConfig {
                batch_size: 8,
                lr: 0.02,
                epochs: 20,
                wsg_input: 96,
                ..TrainConfig::wsg()
            },
            weights: LossWeights::default(),
            width: 16,
            wwbl: WwblConfig::default(),
        }
    }
}

pub struct DeskOutcome {
    pub net: GroundingNet,
    pub checkpoint: Checkpoint,
    pub train_time: Duration,
}

impl DeskExperiment {
    pub fn backend(&self) -> Result<MockBackend> {
        MockBackend::new(self.world.clone(), MockOptions::default())
    }

    pub fn train_set(&self) -> Result<Vec<SyntheticScene>> {
        generate_scenes(&self.world, &self.scene, self.train_scenes, self.data_seed)
    }

    /// Held-out scenes, drawn from a seed stream disjoint from training.
    pub fn test_set(&self) -> Result<Vec<SyntheticScene>> {
        generate_scenes(&self.world, &self.scene, self.test_scenes, self.data_seed + 1000)
    }

    pub fn net_config(&self, backend: &MockBackend) -> NetConfig {
        NetConfig {
            width: self.width,
            ..NetConfig::desk(backend.descriptor().embed_dim, self.train.wsg_input)
        }
    }

    /// Train with network and sampling seed `seed`.
    pub fn train(&self, seed: u64, mut on_epoch: impl FnMut(&Checkpoint)) -> Result<DeskOutcome> {
        let backend = self.backend()?;
        let cfg = TrainConfig {
            seed,
            ..self.train.clone()
        };
        let net = GroundingNet::new(self.net_config(&backend), seed, &Device::Cpu)?;
        let data = PairDataset::new(scene_pairs(&self.train_set()?))?;
        let start = Instant::now();
        let checkpoint = fit(&data, &cfg, &self.weights, &net, &backend, &Cache::in_memory(), |c| {
            on_epoch(c);
            Ok(())
        })?;
        Ok(DeskOutcome {
            net,
            checkpoint,
            train_time: start.elapsed(),
        })
    }
}

/// Query every held-out object phrase; each query is scored on its own.
pub fn eval_wsg<B: VisionLanguageBackend + ?Sized>(
    scenes: &[SyntheticScene],
    net: &GroundingNet,
    backend: &B,
    cfg: &ExtractionConfig,
) -> Result<EvalReport> {
    let mut preds = Vec::new();
    let mut gt = Vec::new();
    for s in scenes {
        for (phrase, boxes) in s.annotation().queries() {
            let id = format!("{}#{}", s.image_id, phrase.as_str());
            let (mask, found) = infer_wsg(&s.image, phrase.as_str(), net, backend, cfg)?;
            let mut p = wsg_prediction(&id, phrase, mask, &found)?;
            p.detections.image_id = id.clone();
            preds.push(p);
            gt.push(GroundingAnnotation {
                image_id: id,
                regions: boxes
                    .into_iter()
                    .map(|bbox| wwbl_core::GroundingRegion {
                        phrase: phrase.clone(),
                        bbox,
                    })
                    .collect(),
            });
        }
    }
    evaluate(&preds, &gt, backend, EvalTask::Wsg)
}

/// Both WWbL algorithms on the held-out scenes, scored by closest-caption
/// matching. Returns (selective search, iterative).
pub fn eval_wwbl<B: VisionLanguageBackend + ?Sized>(
    scenes: &[SyntheticScene],
    net: &GroundingNet,
    backend: &B,
    cfg: &WwblConfig,
) -> Result<(EvalReport, EvalReport)> {
    let gt: Vec<_> = scenes.iter().map(|s| s.annotation()).collect();
    let ss = scenes
        .iter()
        .map(|s| infer_wwbl_ss(&s.image_id, &s.image, net, backend, cfg))
        .collect::<Result<Vec<_>>>()?;
    let it = scenes
        .iter()
        .map(|s| infer_wwbl_iter(&s.image_id, &s.image, net, backend, cfg))
        .collect::<Result<Vec<_>>>()?;
    Ok((
        evaluate(&ss, &gt, backend, EvalTask::Wwbl)?,
        evaluate(&it, &gt, backend, EvalTask::Wwbl)?,
    ))
}
