//! Threshold-greedy community detection over caption embeddings.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::text::{Phrase, TextEmbedding};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    #[serde(rename = "threshold")]
    pub similarity_threshold: f64,
    #[serde(rename = "min_size")]
    pub min_cluster_size: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            similarity_threshold: 0.85,
            min_cluster_size: 2,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.similarity_threshold > 0.0 && self.similarity_threshold < 1.0) {
            return Err(CoreError::InvalidConfig("cluster.threshold must lie in (0, 1)".into()));
        }
        if self.min_cluster_size < 1 {
            return Err(CoreError::InvalidConfig("cluster.min_size must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaptionCluster {
    pub representative: Phrase,
    pub embedding: TextEmbedding,
    /// Index of the caption whose neighbourhood formed the cluster.
    pub seed: usize,
    /// Member caption indices, ascending.
    pub member_indices: Vec<usize>,
}

/// Cluster captions by embedding similarity.
///
/// Each caption seeds a candidate holding every caption at or above the
/// threshold to it. Candidates are visited largest first (ties: lower seed
/// index); each loses members already claimed by an accepted cluster and is
/// accepted if it still has `min_cluster_size` members. The representative is
/// the member with the largest summed similarity to the other members.
pub fn cluster_captions(
    captions: &[Phrase],
    embeddings: &[TextEmbedding],
    cfg: &ClusterConfig,
) -> Result<Vec<CaptionCluster>> {
    cfg.validate()?;
    if captions.len() != embeddings.len() {
        return Err(CoreError::DimensionMismatch {
            expected: format!("{} embeddings", captions.len()),
            actual: format!("{}", embeddings.len()),
        });
    }
    if let Some(first) = embeddings.first() {
        if let Some(bad) = embeddings.iter().find(|e| e.dim() != first.dim()) {
            return Err(CoreError::DimensionMismatch {
                expected: format!("embedding dim {}", first.dim()),
                actual: format!("{}", bad.dim()),
            });
        }
    }

    let n = captions.len();
    let sim: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| embeddings[i].cosine(&embeddings[j])).collect())
        .collect();

    let mut candidates: Vec<(usize, Vec<usize>)> = (0..n)
        .map(|i| {
            let members: Vec<usize> = (0..n)
                .filter(|&j| j == i || sim[i][j] >= cfg.similarity_threshold)
                .collect();
            (i, members)
        })
        .filter(|(_, m)| m.len() >= cfg.min_cluster_size)
        .collect();
    candidates.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then(a.0.cmp(&b.0)));

    let mut claimed = vec![false; n];
    let mut out = Vec::new();
    for (seed, members) in candidates {
        let members: Vec<usize> = members.into_iter().filter(|&m| !claimed[m]).collect();
        if members.len() < cfg.min_cluster_size || members.is_empty() {
            continue;
        }
        for &m in &members {
            claimed[m] = true;
        }
        let rep = representative(&members, &sim);
        out.push(CaptionCluster {
            representative: captions[rep].clone(),
            embedding: embeddings[rep].clone(),
            seed,
            member_indices: members,
        });
    }
    Ok(out)
}

fn representative(members: &[usize], sim: &[Vec<f64>]) -> usize {
    let mut best = members[0];
    let mut best_total = f64::NEG_INFINITY;
    for &m in members {
        let total: f64 = members.iter().map(|&o| sim[m][o]).sum();
        if total > best_total {
            best_total = total;
            best = m;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Phrase {
        Phrase::new(s).unwrap()
    }

    fn e(v: &[f32]) -> TextEmbedding {
        TextEmbedding::normalized(v.to_vec()).unwrap()
    }

    #[test]
    fn three_similar_plus_outlier() {
        let caps = [p("a"), p("b"), p("c"), p("d")];
        let embs = [
            e(&[1.0, 0.05, 0.0]),
            e(&[1.0, 0.0, 0.05]),
            e(&[1.0, 0.02, 0.02]),
            e(&[0.0, 1.0, 0.0]),
        ];
        let out = cluster_captions(&caps, &embs, &ClusterConfig::default()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].member_indices, vec![0, 1, 2]);
        // the middle vector is closest to both others
        assert_eq!(out[0].representative, p("c"));
    }

    #[test]
    fn dissimilar_captions_form_no_cluster() {
        let caps = [p("a"), p("b"), p("c")];
        let embs = [e(&[1.0, 0.0, 0.0]), e(&[0.0, 1.0, 0.0]), e(&[0.0, 0.0, 1.0])];
        assert!(cluster_captions(&caps, &embs, &ClusterConfig::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn duplicated_caption_pair() {
        let caps = [p("a dog"), p("a dog")];
        let embs = [e(&[0.3, 0.4]), e(&[0.3, 0.4])];
        let out = cluster_captions(&caps, &embs, &ClusterConfig::default()).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].member_indices, vec![0, 1]);
        assert_eq!(out[0].representative, p("a dog"));
    }

    #[test]
    fn empty_and_mismatched_input() {
        let cfg = ClusterConfig::default();
        assert!(cluster_captions(&[], &[], &cfg).unwrap().is_empty());
        assert!(cluster_captions(&[p("a")], &[], &cfg).is_err());
    }

    #[test]
    fn config_defaults_and_validation() {
        let c = ClusterConfig::default();
        assert_eq!((c.similarity_threshold, c.min_cluster_size), (0.85, 2));
        assert!(ClusterConfig {
            similarity_threshold: 1.0,
            ..c.clone()
        }
        .validate()
        .is_err());
        assert!(ClusterConfig {
            min_cluster_size: 0,
            ..c
        }
        .validate()
        .is_err());
    }
}
