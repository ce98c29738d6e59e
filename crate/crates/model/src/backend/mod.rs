//! Vision-language backends: the frozen image-text matcher, relevancy
//! provider and captioner that training and inference consume.

pub mod mock;
#[cfg(feature = "pretrained")]
pub mod pretrained;

use candle_core::{DType, Device, Tensor};
use serde::{Deserialize, Serialize};
use wwbl_core::{ImageTensor, Phrase, RelevancyMap, TextEmbedding};

use crate::error::{mismatch, Result};
use crate::tensor::image_to_tensor;

pub use mock::{ColorWord, MockBackend, MockWorldSpec, ShapeKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Pretrained,
    Mock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    pub embed_dim: usize,
    pub match_resolution: usize,
}

pub trait VisionLanguageBackend: Send + Sync {
    fn descriptor(&self) -> BackendDescriptor;

    /// Identifies the backend and its weights; used to key caches.
    fn fingerprint(&self) -> String;

    fn encode_text(&self, t: &Phrase) -> Result<TextEmbedding>;

    /// Unit-norm image embeddings for an `(N, 3, H, W)` batch of any extent.
    /// Differentiable with respect to the pixels.
    fn embed_images(&self, images: &Tensor) -> Result<Tensor>;

    /// Relevancy of `t` over `img`, at the backend's match resolution.
    fn relevancy(&self, img: &ImageTensor, t: &Phrase) -> Result<RelevancyMap>;

    fn caption(&self, img: &ImageTensor) -> Result<Phrase>;

    fn match_score(&self, img: &ImageTensor, t: &Phrase) -> Result<f64> {
        let x = image_to_tensor(img, DType::F32, &Device::Cpu)?;
        let z = text_tensor(&[self.encode_text(t)?], DType::F32, &Device::Cpu)?;
        let s = match_scores(self, &x, &z)?.to_dtype(DType::F64)?.to_vec1::<f64>()?;
        Ok(s[0].clamp(-1.0, 1.0))
    }

    fn text_similarity(&self, a: &Phrase, b: &Phrase) -> Result<f64> {
        Ok(self.encode_text(a)?.cosine(&self.encode_text(b)?))
    }
}

/// Stack embeddings into an `(N, D)` tensor.
pub fn text_tensor(embs: &[TextEmbedding], dtype: DType, device: &Device) -> Result<Tensor> {
    let dim = embs.first().map_or(0, TextEmbedding::dim);
    let mut data = Vec::with_capacity(embs.len() * dim);
    for e in embs {
        if e.dim() != dim {
            return Err(mismatch(format!("embedding dim {dim}"), e.dim()));
        }
        data.extend_from_slice(e.as_slice());
    }
    Ok(Tensor::from_vec(data, (embs.len(), dim), device)?.to_dtype(dtype)?)
}

/// Raw cosine between each image and its paired text row: `(N,)`.
pub fn match_scores<B: VisionLanguageBackend + ?Sized>(backend: &B, images: &Tensor, texts: &Tensor) -> Result<Tensor> {
    let e = backend.embed_images(images)?;
    if e.dims() != texts.dims() {
        return Err(mismatch(format!("{:?}", e.dims()), format!("{:?}", texts.dims())));
    }
    Ok((e * texts)?.sum(1)?)
}
