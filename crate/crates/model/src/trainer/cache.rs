//! Content-addressed cache for relevancy maps and text embeddings. Entries
//! live in memory and, when a directory is configured, on disk as raw
//! little-endian `f32` payloads.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use sha2::{Digest, Sha256};
use wwbl_core::{ImageTensor, Phrase, RelevancyMap, TextEmbedding};

use crate::backend::VisionLanguageBackend;
use crate::error::{ModelError, Result};

pub const CACHE_DIR_ENV: &str = "WWBL_CACHE_DIR";

/// Shape and values of a cached tensor.
type Entry = (Vec<usize>, Vec<f32>);

#[derive(Default)]
pub struct Cache {
    dir: Option<PathBuf>,
    mem: Mutex<HashMap<String, Entry>>,
    hits: Mutex<usize>,
}

impl Cache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn on_disk(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: Some(dir.into()),
            ..Self::default()
        }
    }

    /// Disk-backed when `WWBL_CACHE_DIR` is set, in-memory otherwise.
    pub fn from_env() -> Self {
        match std::env::var_os(CACHE_DIR_ENV) {
            Some(d) if !d.is_empty() => Self::on_disk(d),
            _ => Self::in_memory(),
        }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn hits(&self) -> usize {
        *self.hits.lock().expect("cache lock")
    }

    fn lookup(&self, key: &str) -> Option<(Vec<usize>, Vec<f32>)> {
        if let Some(v) = self.mem.lock().expect("cache lock").get(key) {
            return Some(v.clone());
        }
        let path = self.dir.as_ref()?.join(key);
        let bytes = std::fs::read(path).ok()?;
        let (dims, values) = decode(&bytes)?;
        self.mem
            .lock()
            .expect("cache lock")
            .insert(key.to_string(), (dims.clone(), values.clone()));
        Some((dims, values))
    }

    fn store(&self, key: &str, dims: Vec<usize>, values: Vec<f32>) -> Result<()> {
        if let Some(dir) = &self.dir {
            std::fs::create_dir_all(dir).map_err(|source| ModelError::Io {
                path: dir.display().to_string(),
                source,
            })?;
            let path = dir.join(key);
            // write then rename so concurrent readers never see partial files
            let tmp = dir.join(format!("{key}.tmp{}", std::process::id()));
            std::fs::write(&tmp, encode(&dims, &values))
                .and_then(|_| std::fs::rename(&tmp, &path))
                .map_err(|source| ModelError::Io {
                    path: path.display().to_string(),
                    source,
                })?;
        }
        self.mem
            .lock()
            .expect("cache lock")
            .insert(key.to_string(), (dims, values));
        Ok(())
    }

    fn get_or<F>(&self, key: String, compute: F) -> Result<(Vec<usize>, Vec<f32>)>
    where
        F: FnOnce() -> Result<(Vec<usize>, Vec<f32>)>,
    {
        if let Some(v) = self.lookup(&key) {
            *self.hits.lock().expect("cache lock") += 1;
            return Ok(v);
        }
        let (dims, values) = compute()?;
        self.store(&key, dims.clone(), values.clone())?;
        Ok((dims, values))
    }

    /// Relevancy of `t` over `img`, resampled to `h × w`.
    pub fn relevancy<B: VisionLanguageBackend + ?Sized>(
        &self,
        backend: &B,
        img: &ImageTensor,
        t: &Phrase,
        h: usize,
        w: usize,
    ) -> Result<RelevancyMap> {
        let key = digest(&[
            b"rel",
            backend.fingerprint().as_bytes(),
            &image_bytes(img),
            t.as_str().as_bytes(),
            &(h as u64).to_le_bytes(),
            &(w as u64).to_le_bytes(),
        ]);
        let (dims, values) = self.get_or(key, || {
            let m = backend.relevancy(img, t)?.resize_bilinear(h, w)?;
            Ok((vec![h, w], m.into_values()))
        })?;
        if dims != [h, w] {
            return Err(ModelError::Checkpoint("corrupt relevancy cache entry".into()));
        }
        Ok(RelevancyMap::new(h, w, values)?)
    }

    pub fn text<B: VisionLanguageBackend + ?Sized>(&self, backend: &B, t: &Phrase) -> Result<TextEmbedding> {
        let key = digest(&[b"txt", backend.fingerprint().as_bytes(), t.as_str().as_bytes()]);
        let (_, values) = self.get_or(key, || {
            let e = backend.encode_text(t)?;
            Ok((vec![e.dim()], e.as_slice().to_vec()))
        })?;
        Ok(TextEmbedding::new(values)?)
    }
}

fn image_bytes(img: &ImageTensor) -> Vec<u8> {
    let mut v = Vec::with_capacity(16 + img.data().len() * 4);
    v.extend_from_slice(&(img.height() as u64).to_le_bytes());
    v.extend_from_slice(&(img.width() as u64).to_le_bytes());
    for x in img.data() {
        v.extend_from_slice(&x.to_le_bytes());
    }
    v
}

fn digest(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn encode(dims: &[usize], values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + dims.len() * 8 + values.len() * 4);
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for d in dims {
        out.extend_from_slice(&(*d as u64).to_le_bytes());
    }
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode(bytes: &[u8]) -> Option<(Vec<usize>, Vec<f32>)> {
    let rank = u32::from_le_bytes(bytes.get(..4)?.try_into().ok()?) as usize;
    let mut off = 4;
    let mut dims = Vec::with_capacity(rank);
    for _ in 0..rank {
        dims.push(u64::from_le_bytes(bytes.get(off..off + 8)?.try_into().ok()?) as usize);
        off += 8;
    }
    let n: usize = dims.iter().product();
    let body = bytes.get(off..)?;
    if body.len() != n * 4 {
        return None;
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Some((dims, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::mock::{MockBackend, MockOptions, MockWorldSpec};

    #[test]
    fn disk_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let be = MockBackend::new(MockWorldSpec::default(), MockOptions::default()).unwrap();
        let img = ImageTensor::from_fn(40, 40, |y, x| {
            if (10..25).contains(&y) && (10..25).contains(&x) {
                [0.9, 0.1, 0.1]
            } else {
                [0.2, 0.2, 0.2]
            }
        })
        .unwrap();
        let t = Phrase::new("a red square").unwrap();
        let first = Cache::on_disk(dir.path()).relevancy(&be, &img, &t, 40, 40).unwrap();
        let fresh = Cache::on_disk(dir.path());
        let again = fresh.relevancy(&be, &img, &t, 40, 40).unwrap();
        assert_eq!(fresh.hits(), 1);
        assert_eq!(first, again);
        let e = fresh.text(&be, &t).unwrap();
        assert_eq!(e, Cache::on_disk(dir.path()).text(&be, &t).unwrap());
    }
}
