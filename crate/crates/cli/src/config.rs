//! Experiment configuration: model geometry, optimizer settings and
//! synthetic-data parameters in one JSON-loadable document. See
//! `docs/config-schema.md` for the schema.

use loralab::error::{Error, Result};
use loralab::model::ModelConfig;
use loralab::synthdata::{DatasetSpec, Split, SOURCE_ARTIFACT_FREQ, TARGET_ARTIFACT_FREQ};
use loralab::training::TrainConfig;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Synthetic-data parameters shared by every driver. Per-split trial counts
/// are separate so evaluation resolution can exceed the training budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub n_train_per_class: usize,
    pub n_dev_per_class: usize,
    pub n_eval_per_class: usize,
    /// Frames per generated sequence; defaults to the model's max_seq_len.
    pub seq_len: Option<usize>,
    pub noise_sigma: f64,
    pub artifact_amp: f64,
    /// Dimensions carrying the artifact; defaults to feat_dim / 4.
    pub artifact_dims: Option<usize>,
    pub base_freq: f64,
    pub source_artifact_freq: f64,
    pub target_artifact_freq: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            n_train_per_class: 200,
            n_dev_per_class: 100,
            n_eval_per_class: 200,
            seq_len: None,
            noise_sigma: 1.0,
            artifact_amp: 0.6,
            artifact_dims: None,
            base_freq: 1.0,
            source_artifact_freq: SOURCE_ARTIFACT_FREQ,
            target_artifact_freq: TARGET_ARTIFACT_FREQ,
        }
    }
}

/// Everything one experiment run needs, echoed verbatim into run reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl ExperimentConfig {
    /// Desk-scale defaults: default geometry with the synthetic-run
    /// learning rate.
    pub fn desk_scale() -> Self {
        ExperimentConfig {
            model: ModelConfig::default(),
            train: TrainConfig::desk_scale(),
            data: DataConfig::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: ExperimentConfig = serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.data.n_train_per_class == 0
            || self.data.n_dev_per_class == 0
            || self.data.n_eval_per_class == 0
        {
            return Err(Error::config("per-class trial counts must be at least 1"));
        }
        Ok(())
    }

    /// Dataset spec for one split of one task, seeded independently per
    /// split index.
    pub fn dataset_spec(&self, split: Split, artifact_freq: f64, seed: u64) -> DatasetSpec {
        let n = match split {
            Split::Train => self.data.n_train_per_class,
            Split::Dev => self.data.n_dev_per_class,
            Split::Eval => self.data.n_eval_per_class,
        };
        let mut spec = DatasetSpec::new(
            n,
            self.data.seq_len.unwrap_or(self.model.max_seq_len),
            self.model.d_model,
            seed,
        );
        spec.noise_sigma = self.data.noise_sigma;
        spec.artifact_amp = self.data.artifact_amp;
        spec.artifact_freq = artifact_freq;
        spec.base_freq = self.data.base_freq;
        if let Some(dims) = self.data.artifact_dims {
            spec.artifact_dims = dims;
        }
        spec
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_validates() {
        ExperimentConfig::desk_scale().validate().unwrap();
    }

    #[test]
    fn json_roundtrip_preserves_the_config() {
        let cfg = ExperimentConfig::desk_scale();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let res: std::result::Result<ExperimentConfig, _> =
            serde_json::from_str(r#"{"modle": {}}"#);
        assert!(res.is_err());
    }
}
