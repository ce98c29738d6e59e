use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// A non-empty text phrase (stored trimmed).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Phrase(String);

impl Phrase {
    pub fn new(text: impl AsRef<str>) -> Result<Self> {
        let t = text.as_ref().trim();
        if t.is_empty() {
            return Err(CoreError::InvalidPhrase);
        }
        Ok(Self(t.to_string()))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Lower-cased alphanumeric tokens.
    pub fn tokens(&self) -> impl Iterator<Item = String> + '_ {
        self.0
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
            .map(|t| t.to_lowercase())
    }
}

impl fmt::Display for Phrase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for Phrase {
    type Error = CoreError;

    fn try_from(s: String) -> Result<Self> {
        Self::new(s)
    }
}

impl From<Phrase> for String {
    fn from(p: Phrase) -> Self {
        p.0
    }
}

/// Unit-norm text embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding(Vec<f32>);

impl TextEmbedding {
    pub const NORM_TOLERANCE: f64 = 1e-5;

    /// Wrap an already normalized vector.
    pub fn new(vector: Vec<f32>) -> Result<Self> {
        if vector.is_empty() {
            return Err(CoreError::InvalidEmbedding("empty vector".into()));
        }
        let norm = l2(&vector);
        if (norm - 1.0).abs() > Self::NORM_TOLERANCE {
            return Err(CoreError::InvalidEmbedding(format!(
                "norm {norm} is not 1 within {}",
                Self::NORM_TOLERANCE
            )));
        }
        Ok(Self(vector))
    }

    /// Normalize an arbitrary non-zero vector.
    pub fn normalized(vector: Vec<f32>) -> Result<Self> {
        let norm = l2(&vector);
        if !norm.is_finite() || norm == 0.0 {
            return Err(CoreError::InvalidEmbedding(format!(
                "cannot normalize a vector of norm {norm}"
            )));
        }
        Self::new(vector.iter().map(|v| (*v as f64 / norm) as f32).collect())
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    /// Cosine similarity (dot product of unit vectors, accumulated in f64).
    pub fn cosine(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.dim(), other.dim());
        let dot: f64 = self.0.iter().zip(&other.0).map(|(a, b)| *a as f64 * *b as f64).sum();
        dot.clamp(-1.0, 1.0)
    }
}

fn l2(v: &[f32]) -> f64 {
    v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt()
}
