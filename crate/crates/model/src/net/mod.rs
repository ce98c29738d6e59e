//! The localization network `g` in its image-only (WSOL) and text-conditioned
//! (multimodal) variants.

pub mod layers;

use std::collections::HashMap;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};
use wwbl_core::{ImageTensor, SaliencyMask, TextEmbedding};

use crate::backend::text_tensor;
use crate::error::{mismatch, ModelError, Result};
use crate::tensor::{image_to_tensor, resize_bilinear, tensor_to_mask};
use layers::{sigmoid, BatchNorm2d, Conv2d, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Wsol,
    Multimodal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    /// Small randomly initialized strided convnet.
    Small,
    /// VGG16 convolutional trunk, optionally loaded from torchvision-named
    /// safetensors weights.
    Vgg16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub variant: Variant,
    pub encoder: EncoderKind,
    /// Channel count of the encoder output; must equal the text embedding
    /// dimension for the multimodal variant.
    pub feature_dim: usize,
    pub input_size: usize,
    pub decoder_blocks: usize,
    /// Base channel width of the small encoder and of the decoder.
    pub width: usize,
    /// Encoder weights (safetensors) for the VGG16 trunk.
    pub encoder_weights: Option<String>,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self::multimodal()
    }
}

impl NetConfig {
    pub fn multimodal() -> Self {
        Self {
            variant: Variant::Multimodal,
            encoder: EncoderKind::Vgg16,
            feature_dim: 512,
            input_size: 299,
            decoder_blocks: 3,
            width: 32,
            encoder_weights: None,
        }
    }

    pub fn wsol() -> Self {
        Self {
            variant: Variant::Wsol,
            input_size: 224,
            decoder_blocks: 5,
            ..Self::multimodal()
        }
    }

    /// Configuration sized for the mock backend on one CPU.
    pub fn desk(embed_dim: usize, input_size: usize) -> Self {
        Self {
            variant: Variant::Multimodal,
            encoder: EncoderKind::Small,
            feature_dim: embed_dim,
            input_size,
            decoder_blocks: 3,
            width: 16,
            encoder_weights: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ModelError::Config(format!("net: {m}")));
        if self.decoder_blocks == 0 {
            return bad("decoder_blocks must be at least 1");
        }
        if self.input_size < 16 || self.feature_dim == 0 || self.width == 0 {
            return bad("input_size must be at least 16 and widths positive");
        }
        if self.variant == Variant::Wsol && self.decoder_blocks > 5 {
            return bad("the wsol U-Net has at most 5 decoder blocks");
        }
        if self.encoder == EncoderKind::Vgg16 {
            if self.feature_dim != 512 {
                return bad("the vgg16 encoder produces 512 channels");
            }
            if self.variant == Variant::Wsol && self.decoder_blocks != 5 {
                return bad("the vgg16 U-Net uses exactly 5 decoder blocks");
            }
        }
        if self.encoder_weights.is_some() && self.encoder != EncoderKind::Vgg16 {
            return bad("encoder_weights only apply to the vgg16 encoder");
        }
        Ok(())
    }
}

/// Per-location cosine between a feature map `(N, C, h, w)` and text rows
/// `(N, C)`: output `(N, 1, h, w)` in `[-1, 1]`.
pub fn condition(features: &Tensor, text: &Tensor) -> Result<Tensor> {
    let (n, c, _, _) = features.dims4()?;
    let (tn, tc) = text.dims2()?;
    if c != tc || (tn != n && tn != 1) {
        return Err(mismatch(format!("text ({n}, {c})"), format!("({tn}, {tc})")));
    }
    let norm = features.sqr()?.sum_keepdim(1)?.sqrt()?.affine(1.0, 1e-8)?;
    let unit = features.broadcast_div(&norm)?;
    let t = text.reshape((tn, c, 1, 1))?;
    Ok(unit.broadcast_mul(&t)?.sum_keepdim(1)?.clamp(-1.0, 1.0)?)
}

struct ConvBnRelu {
    conv: Conv2d,
    bn: BatchNorm2d,
}

impl ConvBnRelu {
    fn new(ps: &mut ParamStore, name: &str, c_in: usize, c_out: usize, stride: usize) -> Result<Self> {
        Ok(Self {
            conv: Conv2d::new(ps, &format!("{name}.conv"), c_in, c_out, 3, stride, 1)?,
            bn: BatchNorm2d::new(ps, &format!("{name}.bn"), c_out)?,
        })
    }

    fn forward(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        Ok(self.bn.forward(&self.conv.forward(x)?, train)?.relu()?)
    }
}

/// Strided convnet: every stage halves the extent (rounding up).
struct SmallEncoder {
    stages: Vec<ConvBnRelu>,
    project: Conv2d,
}

impl SmallEncoder {
    fn new(ps: &mut ParamStore, depth: usize, width: usize, out: usize) -> Result<Self> {
        let mut stages = Vec::with_capacity(depth);
        let mut c = 3;
        for i in 0..depth {
            let next = width << i.min(3);
            stages.push(ConvBnRelu::new(ps, &format!("encoder.{i}"), c, next, 2)?);
            c = next;
        }
        Ok(Self {
            stages,
            project: Conv2d::new(ps, "encoder.project", c, out, 1, 1, 0)?,
        })
    }

    fn channels(&self, width: usize) -> Vec<usize> {
        (0..self.stages.len()).map(|i| width << i.min(3)).collect()
    }

    /// Feature maps at strides 1 (the input), 2, 4, ...; the deepest is
    /// projected to the output width.
    fn features(&self, x: &Tensor, train: bool) -> Result<Vec<Tensor>> {
        let mut out = vec![x.clone()];
        let mut h = x.clone();
        for s in &self.stages {
            h = s.forward(&h, train)?;
            out.push(h.clone());
        }
        let last = out.len() - 1;
        out[last] = self.project.forward(&out[last])?;
        Ok(out)
    }
}

// (channels, convs) per VGG16 block, and torchvision `features.N` indices.
const VGG_BLOCKS: [(usize, usize); 5] = [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)];
const VGG_INDICES: [usize; 13] = [0, 2, 5, 7, 10, 12, 14, 17, 19, 21, 24, 26, 28];
const IMAGENET_MEAN: [f32; 3] = [0.485, 0.456, 0.406];
const IMAGENET_STD: [f32; 3] = [0.229, 0.224, 0.225];

struct Vgg16Encoder {
    blocks: Vec<Vec<Conv2d>>,
}

impl Vgg16Encoder {
    fn new(ps: &mut ParamStore) -> Result<Self> {
        let mut c = 3;
        let mut idx = VGG_INDICES.iter();
        let mut blocks = Vec::new();
        for (ch, n) in VGG_BLOCKS {
            let mut convs = Vec::new();
            for _ in 0..n {
                let i = idx.next().expect("13 convolutions");
                convs.push(Conv2d::new(ps, &format!("features.{i}"), c, ch, 3, 1, 1)?);
                c = ch;
            }
            blocks.push(convs);
        }
        Ok(Self { blocks })
    }

    /// Last activation of each block (strides 1..16), plus the pooled fifth
    /// block (stride 32) when `with_pool5`.
    fn features(&self, x: &Tensor, with_pool5: bool) -> Result<Vec<Tensor>> {
        let dev = x.device();
        let mean = Tensor::from_slice(&IMAGENET_MEAN, (1, 3, 1, 1), dev)?.to_dtype(x.dtype())?;
        let std = Tensor::from_slice(&IMAGENET_STD, (1, 3, 1, 1), dev)?.to_dtype(x.dtype())?;
        let mut h = x.broadcast_sub(&mean)?.broadcast_div(&std)?;
        let mut out = Vec::new();
        for (b, convs) in self.blocks.iter().enumerate() {
            if b > 0 {
                h = pool2_ceil(&h)?;
            }
            for conv in convs {
                h = conv.forward(&h)?.relu()?;
            }
            out.push(h.clone());
        }
        if with_pool5 {
            out.push(pool2_ceil(&h)?);
        }
        Ok(out)
    }
}

/// 2×2 max pooling with ceil rounding. Inputs are post-ReLU, so zero padding
/// never wins a max.
fn pool2_ceil(x: &Tensor) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    let x = if h % 2 == 1 {
        x.pad_with_zeros(2, 0, 1)?
    } else {
        x.clone()
    };
    let x = if w % 2 == 1 { x.pad_with_zeros(3, 0, 1)? } else { x };
    Ok(x.max_pool2d(2)?)
}

enum Encoder {
    Small(SmallEncoder),
    Vgg16(Vgg16Encoder),
}

/// Upsample, two 3×3 convolutions, batch norm before the block's final
/// activation.
struct UpBlock {
    conv1: Conv2d,
    conv2: Conv2d,
    bn: BatchNorm2d,
    last: bool,
}

impl UpBlock {
    fn new(ps: &mut ParamStore, name: &str, c_in: usize, mid: usize, c_out: usize, last: bool) -> Result<Self> {
        Ok(Self {
            conv1: Conv2d::new(ps, &format!("{name}.conv1"), c_in, mid, 3, 1, 1)?,
            conv2: Conv2d::new(ps, &format!("{name}.conv2"), mid, c_out, 3, 1, 1)?,
            bn: BatchNorm2d::new(ps, &format!("{name}.bn"), c_out)?,
            last,
        })
    }

    fn forward(&self, x: &Tensor, size: (usize, usize), skip: Option<&Tensor>, train: bool) -> Result<Tensor> {
        let mut h = resize_bilinear(x, size.0, size.1)?;
        if let Some(s) = skip {
            h = Tensor::cat(&[&h, s], 1)?;
        }
        let h = self.conv1.forward(&h)?.relu()?;
        let h = self.bn.forward(&self.conv2.forward(&h)?, train)?;
        if self.last {
            sigmoid(&h)
        } else {
            Ok(h.relu()?)
        }
    }
}

pub struct GroundingNet {
    config: NetConfig,
    params: ParamStore,
    encoder: Encoder,
    decoder: Vec<UpBlock>,
}

impl GroundingNet {
    pub fn new(config: NetConfig, seed: u64, device: &Device) -> Result<Self> {
        Self::with_dtype(config, seed, DType::F32, device)
    }

    pub fn with_dtype(config: NetConfig, seed: u64, dtype: DType, device: &Device) -> Result<Self> {
        config.validate()?;
        let mut ps = ParamStore::new(seed, dtype, device.clone());
        let wsol = config.variant == Variant::Wsol;
        let depth = if wsol { config.decoder_blocks } else { 4 };

        // Channel count of each encoder output, stride 1 first.
        let (encoder, enc_channels) = match config.encoder {
            EncoderKind::Small => {
                let e = SmallEncoder::new(&mut ps, depth, config.width, config.feature_dim)?;
                let mut ch = vec![3];
                ch.extend(e.channels(config.width));
                *ch.last_mut().expect("non-empty") = config.feature_dim;
                (Encoder::Small(e), ch)
            }
            EncoderKind::Vgg16 => {
                let e = Vgg16Encoder::new(&mut ps)?;
                let mut ch: Vec<usize> = VGG_BLOCKS.iter().map(|b| b.0).collect();
                if wsol {
                    ch.push(512);
                }
                (Encoder::Vgg16(e), ch)
            }
        };

        let blocks = config.decoder_blocks;
        let mut decoder = Vec::with_capacity(blocks);
        let mut c = config.feature_dim;
        for i in 0..blocks {
            let last = i + 1 == blocks;
            let mid = (config.width << (blocks - 1 - i).min(3)).max(8);
            let skip = if wsol {
                enc_channels[enc_channels.len() - 2 - i]
            } else {
                0
            };
            let out = if last { 1 } else { mid };
            decoder.push(UpBlock::new(
                &mut ps,
                &format!("decoder.{i}"),
                c + skip,
                mid,
                out,
                last,
            )?);
            c = out;
        }

        let net = Self {
            config,
            params: ps,
            encoder,
            decoder,
        };
        if let Some(path) = &net.config.encoder_weights {
            net.load_encoder_weights(path)?;
        }
        Ok(net)
    }

    fn load_encoder_weights(&self, path: &str) -> Result<()> {
        let tensors = candle_core::safetensors::load(path, self.params.device())
            .map_err(|e| ModelError::BackendUnavailable(format!("cannot read encoder weights {path}: {e}")))?;
        let wanted: HashMap<String, Tensor> = tensors
            .into_iter()
            .filter(|(k, _)| k.starts_with("features."))
            .collect();
        if wanted.len() != 2 * VGG_INDICES.len() {
            return Err(ModelError::Checkpoint(format!(
                "{path}: expected {} vgg16 feature tensors, found {}",
                2 * VGG_INDICES.len(),
                wanted.len()
            )));
        }
        self.params.load(&wanted, true)
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn dtype(&self) -> DType {
        self.params.dtype()
    }

    pub fn device(&self) -> &Device {
        self.params.device()
    }

    /// Image features `Z_I` at stride 16.
    pub fn encode(&self, x: &Tensor, train: bool) -> Result<Tensor> {
        let feats = match &self.encoder {
            Encoder::Small(e) => e.features(x, train)?,
            Encoder::Vgg16(e) => e.features(x, false)?,
        };
        Ok(feats.last().expect("non-empty").clone())
    }

    /// `(N, 3, H, W)` → `(N, 1, H, W)` mask in `(0, 1)`. `text` is `(N, D)`
    /// (or `(1, D)`, broadcast) and required by the multimodal variant.
    pub fn forward(&self, x: &Tensor, text: Option<&Tensor>, train: bool) -> Result<Tensor> {
        let (_, c, h, w) = x.dims4()?;
        if c != 3 {
            return Err(mismatch("3 input channels", c));
        }
        let y = match self.config.variant {
            Variant::Multimodal => {
                let text = text.ok_or_else(|| mismatch("a text embedding", "none"))?;
                let z = self.encode(x, train)?;
                let zs = condition(&z, text)?;
                let mut h = z.broadcast_mul(&zs)?;
                for block in &self.decoder {
                    let (_, _, bh, bw) = h.dims4()?;
                    h = block.forward(&h, (2 * bh, 2 * bw), None, train)?;
                }
                h
            }
            Variant::Wsol => {
                let feats = match &self.encoder {
                    Encoder::Small(e) => e.features(x, train)?,
                    Encoder::Vgg16(e) => e.features(x, true)?,
                };
                let mut h = feats.last().expect("non-empty").clone();
                for (i, block) in self.decoder.iter().enumerate() {
                    let skip = &feats[feats.len() - 2 - i];
                    let (_, _, sh, sw) = skip.dims4()?;
                    h = block.forward(&h, (sh, sw), Some(skip), train)?;
                }
                h
            }
        };
        resize_bilinear(&y, h, w)
    }

    /// Evaluation-mode mask for one image at its own resolution. The image
    /// is resampled to the configured input size and the mask back.
    pub fn predict(&self, img: &ImageTensor, text: Option<&TextEmbedding>) -> Result<SaliencyMask> {
        let s = self.config.input_size;
        let resized = img.resize_bilinear(s, s)?;
        let x = image_to_tensor(&resized, self.dtype(), self.device())?;
        let t = match (self.config.variant, text) {
            (Variant::Multimodal, Some(e)) => {
                if e.dim() != self.config.feature_dim {
                    return Err(mismatch(format!("embedding dim {}", self.config.feature_dim), e.dim()));
                }
                Some(text_tensor(std::slice::from_ref(e), self.dtype(), self.device())?)
            }
            (Variant::Multimodal, None) => return Err(mismatch("a text embedding", "none")),
            (Variant::Wsol, _) => None,
        };
        let y = self.forward(&x, t.as_ref(), false)?;
        let y = resize_bilinear(&y, img.height(), img.width())?;
        tensor_to_mask(&y)
    }
}
