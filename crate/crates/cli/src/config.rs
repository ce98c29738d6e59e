//! Run configuration: one TOML tree with a section per component. Every
//! field has a default; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use wwbl_core::{ClusterConfig, ExtractionConfig, ProposalConfig};
use wwbl_model::synthetic::SceneConfig;
use wwbl_model::{
    BackendKind, LossWeights, MockBackend, MockOptions, MockWorldSpec, NetConfig, TrainConfig, VisionLanguageBackend,
    WwblConfig, WwblMode,
};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSection {
    pub kind: BackendKind,
    /// Directory of pretrained weights. Falls back to `WWBL_PRETRAINED_DIR`.
    pub pretrained_dir: Option<String>,
    pub embed_dim: usize,
    pub match_resolution: usize,
    pub world: MockWorldSpec,
}

impl Default for BackendSection {
    fn default() -> Self {
        let o = MockOptions::default();
        Self {
            kind: BackendKind::Mock,
            pretrained_dir: None,
            embed_dim: o.embed_dim,
            match_resolution: o.match_resolution,
            world: MockWorldSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineSection {
    pub max_iterations: usize,
    pub accept_similarity: f64,
}

impl Default for PipelineSection {
    fn default() -> Self {
        let w = WwblConfig::default();
        Self {
            max_iterations: w.max_iterations,
            accept_similarity: w.accept_similarity,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub backend: BackendSection,
    pub net: NetConfig,
    pub train: TrainConfig,
    pub loss: LossWeights,
    pub extract: ExtractionConfig,
    pub proposals: ProposalConfig,
    pub cluster: ClusterConfig,
    pub pipeline: PipelineSection,
    pub synthetic: SceneConfig,
}

impl Default for RunConfig {
    /// Sized for the mock world on one CPU.
    fn default() -> Self {
        let backend = BackendSection::default();
        let train = TrainConfig {
            batch_size: 8,
            lr: 0.02,
            epochs: 20,
            wsg_input: 96,
            ..TrainConfig::wsg()
        };
        Self {
            net: NetConfig::desk(backend.embed_dim, train.wsg_input),
            backend,
            train,
            loss: LossWeights::default(),
            extract: ExtractionConfig::default(),
            proposals: ProposalConfig::default(),
            cluster: ClusterConfig::default(),
            pipeline: PipelineSection::default(),
            synthetic: SceneConfig::default(),
        }
    }
}

impl RunConfig {
    /// Defaults, then the file, then each `key=value` override in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> CliResult<Self> {
        let mut tree = match toml::Value::try_from(RunConfig::default()) {
            Ok(toml::Value::Table(t)) => t,
            _ => unreachable!("RunConfig serializes to a table"),
        };
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?;
            let file = text
                .parse::<toml::Table>()
                .map_err(|e| CliError::config(format!("{}: {e}", p.display())))?;
            merge(&mut tree, file);
        }
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(tree)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        self.net.validate()?;
        self.train.validate()?;
        self.loss.validate()?;
        self.wwbl(WwblMode::SelectiveSearch).validate()?;
        self.synthetic.validate()?;
        Ok(())
    }

    pub fn wwbl(&self, mode: WwblMode) -> WwblConfig {
        WwblConfig {
            mode,
            max_iterations: self.pipeline.max_iterations,
            accept_similarity: self.pipeline.accept_similarity,
            extraction: self.extract.clone(),
            proposals: self.proposals.clone(),
            cluster: self.cluster.clone(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn backend(&self) -> CliResult<Box<dyn VisionLanguageBackend>> {
        match self.backend.kind {
            BackendKind::Mock => {
                let opts = MockOptions {
                    embed_dim: self.backend.embed_dim,
                    match_resolution: self.backend.match_resolution,
                };
                Ok(Box::new(MockBackend::new(self.backend.world.clone(), opts)?))
            }
            BackendKind::Pretrained => self.pretrained(),
        }
    }

    #[cfg(feature = "pretrained")]
    fn pretrained(&self) -> CliResult<Box<dyn VisionLanguageBackend>> {
        use wwbl_model::backend::pretrained::PretrainedBackend;
        let dir = self
            .backend
            .pretrained_dir
            .clone()
            .map(std::path::PathBuf::from)
            .or_else(PretrainedBackend::env_dir)
            .ok_or_else(|| CliError::config("backend.pretrained_dir is not set".into()))?;
        Ok(Box::new(PretrainedBackend::load(dir)?))
    }

    #[cfg(not(feature = "pretrained"))]
    fn pretrained(&self) -> CliResult<Box<dyn VisionLanguageBackend>> {
        Err(CliError::config(
            "this build has no pretrained backend; rebuild with --features pretrained".into(),
        ))
    }
}

/// `section.key=value`; the value is read as a TOML literal, or as a bare
/// string when it does not parse as one.
/// Overlay `top` onto `base`, table by table.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn apply_override(tree: &mut toml::Table, spec: &str) -> CliResult<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::config(format!("override {spec:?} is not key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::config(format!("override {spec:?} has an empty key")));
    }
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let (last, parents) = path.split_last().expect("non-empty");
    let mut node = tree;
    for p in parents {
        let entry = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| CliError::config(format!("{key}: {p} is not a section")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides_apply_in_order() {
        let cfg = RunConfig::load(
            None,
            &["train.lr=0.5".into(), "train.lr=0.25".into(), "train.task=wsol".into()],
        )
        .unwrap();
        assert_eq!(cfg.train.lr, 0.25);
        assert_eq!(cfg.train.task, wwbl_model::Task::Wsol);
    }

    #[test]
    fn partial_sections_keep_the_other_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[net]\ninput_size = 48\n[train]\nwsg_input = 48\n").unwrap();
        let cfg = RunConfig::load(Some(&path), &["net.width=8".into()]).unwrap();
        let d = RunConfig::default();
        assert_eq!((cfg.net.input_size, cfg.net.width), (48, 8));
        assert_eq!(cfg.net.feature_dim, d.net.feature_dim);
        assert_eq!(cfg.net.encoder, d.net.encoder);
        assert_eq!(cfg.train.lr, d.train.lr);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = RunConfig::load(None, &["train.learning_rate=0.1".into()]).unwrap_err();
        assert_eq!(e.code, 2);
        assert!(e.message.contains("learning_rate"), "{}", e.message);
        assert!(RunConfig::load(None, &["nosuch.x=1".into()]).is_err());
        assert!(RunConfig::load(None, &["train".into()]).is_err());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        let e = RunConfig::load(None, &["train.lr=-1".into()]).unwrap_err();
        assert_eq!(e.code, 2);
    }
}
