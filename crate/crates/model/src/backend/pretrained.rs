//! CLIP ViT-B/32 matcher with input-gradient relevancy, and a BLIP
//! captioner. Weights are read from a directory holding
//! `clip.safetensors`, `clip-tokenizer.json`, `blip.safetensors` and
//! `blip-tokenizer.json`.

use std::path::{Path, PathBuf};
use std::sync::Mutex;

use candle_core::{DType, Device, Module, Tensor, Var, D};
use candle_nn::VarBuilder;
use candle_transformers::models::{blip, clip};
use sha2::{Digest, Sha256};
use tokenizers::Tokenizer;
use wwbl_core::{ImageTensor, Phrase, RelevancyMap, TextEmbedding};

use super::{BackendDescriptor, BackendKind, VisionLanguageBackend};
use crate::error::{ModelError, Result};
use crate::tensor::{image_to_tensor, l2_normalize_rows, resize_bilinear};

pub const PRETRAINED_DIR_ENV: &str = "WWBL_PRETRAINED_DIR";

const CLIP_MEAN: [f32; 3] = [0.481_454_66, 0.457_827_5, 0.408_210_73];
const CLIP_STD: [f32; 3] = [0.268_629_54, 0.261_302_58, 0.275_777_11];
const CLIP_SIZE: usize = 224;
const BLIP_SIZE: usize = 384;
const BLIP_BOS: u32 = 30522;
const BLIP_SEP: u32 = 102;
const MAX_CAPTION_TOKENS: usize = 30;
const RELEVANCY_RES: usize = 56;

const FILES: [&str; 4] = [
    "clip.safetensors",
    "clip-tokenizer.json",
    "blip.safetensors",
    "blip-tokenizer.json",
];

pub struct PretrainedBackend {
    dir: PathBuf,
    device: Device,
    clip: clip::ClipModel,
    clip_tok: Tokenizer,
    blip: Mutex<blip::BlipForConditionalGeneration>,
    blip_tok: Tokenizer,
    embed_dim: usize,
    fingerprint: String,
}

impl PretrainedBackend {
    /// Directory from `WWBL_PRETRAINED_DIR`, if set.
    pub fn env_dir() -> Option<PathBuf> {
        std::env::var_os(PRETRAINED_DIR_ENV)
            .filter(|d| !d.is_empty())
            .map(PathBuf::from)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        for f in FILES {
            if !dir.join(f).is_file() {
                return Err(ModelError::BackendUnavailable(format!(
                    "{} is missing",
                    dir.join(f).display()
                )));
            }
        }
        let device = Device::Cpu;
        let unavailable = |e: candle_core::Error| ModelError::BackendUnavailable(e.to_string());

        let clip_cfg = clip::ClipConfig::vit_base_patch32();
        let vb = unsafe { VarBuilder::from_mmaped_safetensors(&[dir.join(FILES[0])], DType::F32, &device) }
            .map_err(unavailable)?;
        let clip = clip::ClipModel::new(vb, &clip_cfg).map_err(unavailable)?;
        let embed_dim = clip_cfg.text_config.projection_dim;

        let vb = unsafe { VarBuilder::from_mmaped_safetensors(&[dir.join(FILES[2])], DType::F32, &device) }
            .map_err(unavailable)?;
        let blip = blip::BlipForConditionalGeneration::new(&blip::Config::image_captioning_large(), vb)
            .map_err(unavailable)?;

        let tok = |f: &str| {
            Tokenizer::from_file(dir.join(f)).map_err(|e| ModelError::BackendUnavailable(format!("{f}: {e}")))
        };
        let clip_tok = tok(FILES[1])?;
        let blip_tok = tok(FILES[3])?;

        let mut h = Sha256::new();
        for f in FILES {
            let meta = std::fs::metadata(dir.join(f)).map_err(|source| ModelError::Io {
                path: dir.join(f).display().to_string(),
                source,
            })?;
            h.update(f.as_bytes());
            h.update(meta.len().to_le_bytes());
        }
        let fingerprint = format!("clip-vitb32-blip-large-{:x}", h.finalize());

        Ok(Self {
            dir,
            device,
            clip,
            clip_tok,
            blip: Mutex::new(blip),
            blip_tok,
            embed_dim,
            fingerprint,
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn normalize(&self, x: &Tensor, size: usize) -> Result<Tensor> {
        let x = resize_bilinear(&x.to_dtype(DType::F32)?, size, size)?;
        let mean = Tensor::new(&CLIP_MEAN, &self.device)?.reshape((1, 3, 1, 1))?;
        let std = Tensor::new(&CLIP_STD, &self.device)?.reshape((1, 3, 1, 1))?;
        Ok(x.broadcast_sub(&mean)?.broadcast_div(&std)?)
    }

    fn text_features(&self, t: &Phrase) -> Result<Tensor> {
        let enc = self
            .clip_tok
            .encode(t.as_str(), true)
            .map_err(|e| ModelError::BackendUnavailable(e.to_string()))?;
        let ids = Tensor::new(enc.get_ids(), &self.device)?.unsqueeze(0)?;
        Ok(l2_normalize_rows(&self.clip.get_text_features(&ids)?)?)
    }
}

impl VisionLanguageBackend for PretrainedBackend {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor {
            kind: BackendKind::Pretrained,
            embed_dim: self.embed_dim,
            match_resolution: RELEVANCY_RES,
        }
    }

    fn fingerprint(&self) -> String {
        self.fingerprint.clone()
    }

    fn encode_text(&self, t: &Phrase) -> Result<TextEmbedding> {
        let v = self.text_features(t)?.squeeze(0)?.to_vec1::<f32>()?;
        Ok(TextEmbedding::new(v)?)
    }

    fn embed_images(&self, images: &Tensor) -> Result<Tensor> {
        let (_, c, _, _) = images.dims4()?;
        if c != 3 {
            return Err(crate::error::mismatch("3 channels", c));
        }
        let x = self.normalize(images, CLIP_SIZE)?;
        let e = l2_normalize_rows(&self.clip.get_image_features(&x)?)?;
        Ok(e.to_dtype(images.dtype())?)
    }

    /// Input × gradient of the image-text cosine, summed over channels,
    /// rectified and scaled to unit peak.
    fn relevancy(&self, img: &ImageTensor, t: &Phrase) -> Result<RelevancyMap> {
        let x = Var::from_tensor(&image_to_tensor(img, DType::F32, &self.device)?)?;
        let z = self.text_features(t)?;
        let score = (self.embed_images(x.as_tensor())? * z)?.sum_all()?;
        let grads = score.backward()?;
        let g = grads
            .get(x.as_tensor())
            .ok_or_else(|| ModelError::BackendUnavailable("no image gradient".into()))?;
        let r = (x.as_tensor() * g)?.sum_keepdim(1)?.relu()?;
        let r = resize_bilinear(&r, RELEVANCY_RES, RELEVANCY_RES)?;
        let max = r.max_all()?.to_scalar::<f32>()?;
        let r = if max > 0.0 { (r / max as f64)? } else { r };
        let values = r.flatten_all()?.to_vec1::<f32>()?;
        Ok(RelevancyMap::new(RELEVANCY_RES, RELEVANCY_RES, values)?)
    }

    /// Greedy BLIP decoding.
    fn caption(&self, img: &ImageTensor) -> Result<Phrase> {
        let x = self.normalize(&image_to_tensor(img, DType::F32, &self.device)?, BLIP_SIZE)?;
        let mut model = self.blip.lock().expect("blip lock");
        model.reset_kv_cache();
        let feats = model.vision_model().forward(&x)?;
        let mut tokens = vec![BLIP_BOS];
        for i in 0..MAX_CAPTION_TOKENS {
            // with the kv cache only the newest token is fed after the first step
            let ctx = if i == 0 {
                &tokens[..]
            } else {
                &tokens[tokens.len() - 1..]
            };
            let ids = Tensor::new(ctx, &self.device)?.unsqueeze(0)?;
            let logits = model.text_decoder().forward(&ids, &feats)?.squeeze(0)?;
            let last = logits.get(logits.dim(0)? - 1)?;
            let next = last.argmax(D::Minus1)?.to_scalar::<u32>()?;
            if next == BLIP_SEP {
                break;
            }
            tokens.push(next);
        }
        model.reset_kv_cache();
        let text = self
            .blip_tok
            .decode(&tokens[1..], true)
            .map_err(|e| ModelError::BackendUnavailable(e.to_string()))?;
        Ok(Phrase::new(text)?)
    }
}
