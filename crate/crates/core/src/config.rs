//! Run configuration as read from TOML. Unknown keys are rejected at every
//! level; a resolved copy is echoed into each run directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::encoders::{ClinicalSchema, Modality, PoolingConfig};
use crate::error::{Error, Result};
use crate::experiment::{CvMode, OptimizerKind, TrainConfig};
use crate::fusion::{Aggregation, Combination, FusionConfig};
use crate::survival::CphConfig;

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub training: TrainingConfig,
    pub cv: CvConfig,
    pub fusion: FusionSettings,
    pub data: DataConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub latent_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_width: usize,
    pub dropout: f64,
    /// Rows kept by pathology pooling; 0 keeps every row.
    pub top_k: usize,
    pub pathology_reduction: Vec<usize>,
    pub radiology_reduction: Vec<usize>,
    pub scorer_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let f = FusionConfig::default();
        let p = PoolingConfig::pathology();
        Self {
            latent_dim: f.latent_dim,
            layers: f.layers,
            heads: f.heads,
            ffn_width: f.ffn_dim,
            dropout: f.dropout,
            top_k: p.top_k.unwrap_or(0),
            pathology_reduction: p.reduction_dims,
            radiology_reduction: PoolingConfig::radiology().reduction_dims,
            scorer_hidden: p.scorer_hidden,
        }
    }
}

impl ModelConfig {
    /// Narrow widths that train in seconds on one core.
    pub fn desk() -> Self {
        Self {
            latent_dim: 32,
            layers: 2,
            heads: 4,
            ffn_width: 64,
            dropout: 0.1,
            top_k: 64,
            pathology_reduction: vec![16],
            radiology_reduction: vec![32, 16],
            scorer_hidden: 8,
        }
    }

    pub fn pooling(&self, modality: Modality, input_dim: usize) -> PoolingConfig {
        let (reduction_dims, top_k) = match modality {
            Modality::Pathology => (self.pathology_reduction.clone(), (self.top_k > 0).then_some(self.top_k)),
            Modality::Radiology => (self.radiology_reduction.clone(), None),
            Modality::Clinical => panic!("clinical input is not pooled"),
        };
        PoolingConfig { input_dim, reduction_dims, scorer_hidden: self.scorer_hidden, top_k }
    }

    pub fn fusion(&self, clinical_dim: usize, pathology_dim: usize, radiology_dim: usize) -> FusionConfig {
        FusionConfig {
            clinical_dim,
            pathology_dim,
            radiology_dim,
            latent_dim: self.latent_dim,
            layers: self.layers,
            heads: self.heads,
            ffn_dim: self.ffn_width,
            dropout: self.dropout,
        }
    }
}

/// Optimizer and stopping schedule of one model family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub optimizer: OptimizerKind,
    #[serde(alias = "learning_rate")]
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub min_epochs_before_stop: usize,
    pub patience: usize,
}

impl Schedule {
    fn from_train(c: TrainConfig) -> Self {
        Self {
            optimizer: c.optimizer,
            lr: c.learning_rate,
            weight_decay: c.weight_decay,
            max_epochs: c.max_epochs,
            min_epochs_before_stop: c.min_epochs_before_stop,
            patience: c.patience,
        }
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            optimizer: self.optimizer,
            learning_rate: self.lr,
            weight_decay: self.weight_decay,
            max_epochs: self.max_epochs,
            min_epochs_before_stop: self.min_epochs_before_stop,
            patience: self.patience,
            seed,
        }
    }
}

impl Default for Schedule {
    fn default() -> Self {
        Self::from_train(TrainConfig::fusion())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub optimizer: OptimizerKind,
    #[serde(alias = "learning_rate")]
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub min_epochs_before_stop: usize,
    pub patience: usize,
    pub seed: u64,
    /// Per-modality pooling models.
    pub encoder: Schedule,
    pub cph: CphConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        let f = Schedule::default();
        Self {
            optimizer: f.optimizer,
            lr: f.lr,
            weight_decay: f.weight_decay,
            max_epochs: f.max_epochs,
            min_epochs_before_stop: f.min_epochs_before_stop,
            patience: f.patience,
            seed: 0,
            encoder: Schedule::from_train(TrainConfig::encoder()),
            cph: CphConfig::default(),
        }
    }
}

impl TrainingConfig {
    pub fn fusion_schedule(&self) -> Schedule {
        Schedule {
            optimizer: self.optimizer,
            lr: self.lr,
            weight_decay: self.weight_decay,
            max_epochs: self.max_epochs,
            min_epochs_before_stop: self.min_epochs_before_stop,
            patience: self.patience,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CvConfig {
    pub mode: CvMode,
    pub k: usize,
    pub outer_k: usize,
    pub inner_k: usize,
    /// Deal event subjects across folds before censored ones.
    pub stratify: bool,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self { mode: CvMode::Plain, k: 9, outer_k: 5, inner_k: 5, stratify: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionKind {
    Intermediate,
    Late,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionSettings {
    pub kind: FusionKind,
    pub weight_agg: Aggregation,
    pub score_agg: Aggregation,
    pub modality_combination: Combination,
    /// Aggregate pooling encoders along with heads in late fusion.
    pub aggregate_pooling: bool,
    /// Treat absent imaging as masked; when false a missing file is an error.
    pub mask_missing: bool,
}

impl Default for FusionSettings {
    fn default() -> Self {
        Self {
            kind: FusionKind::Intermediate,
            weight_agg: Aggregation::Median,
            score_agg: Aggregation::Mean,
            modality_combination: Combination::CprMed,
            aggregate_pooling: false,
            mask_missing: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Data directory used when none is given on the command line.
    pub path: Option<PathBuf>,
    /// Clinical schema TOML; the built-in 25-wide schema otherwise.
    pub schema: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if m.latent_dim == 0 || m.layers == 0 || m.heads == 0 || m.ffn_width == 0 || m.latent_dim % m.heads != 0 {
            return Err(Error::Config(format!(
                "model: latent_dim ({}) must be a positive multiple of heads ({}), layers and ffn_width positive",
                m.latent_dim, m.heads
            )));
        }
        if !(0.0..1.0).contains(&m.dropout) {
            return Err(Error::Config(format!("model.dropout must be in [0, 1), got {}", m.dropout)));
        }
        for modality in [Modality::Pathology, Modality::Radiology] {
            m.pooling(modality, 1).validate()?;
        }
        self.training.fusion_schedule().train_config(0).validate()?;
        self.training.encoder.train_config(0).validate()?;
        if self.cv.k < 2 || self.cv.outer_k < 2 || self.cv.inner_k < 2 {
            return Err(Error::Config("cv: k, outer_k and inner_k must be ≥ 2".into()));
        }
        Ok(())
    }

    /// Clinical schema, resolving a relative path against `base`.
    pub fn schema(&self, base: &Path) -> Result<ClinicalSchema> {
        match &self.data.schema {
            Some(p) => ClinicalSchema::load(&base.join(p)),
            None => Ok(ClinicalSchema::default()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        for config in [RunConfig::default(), RunConfig { model: ModelConfig::desk(), ..Default::default() }] {
            let text = config.to_toml_string();
            assert_eq!(RunConfig::from_toml_str(&text).unwrap(), config, "{text}");
        }
    }

    #[test]
    fn unknown_keys_are_named() {
        let err = RunConfig::from_toml_str("[training]\nlearnig_rate = 0.1\n").unwrap_err().to_string();
        assert!(err.contains("learnig_rate"), "{err}");
        let err = RunConfig::from_toml_str("[modle]\n").unwrap_err().to_string();
        assert!(err.contains("modle"), "{err}");
    }

    #[test]
    fn partial_sections_keep_defaults() {
        let c = RunConfig::from_toml_str("[training]\nlr = 0.01\nseed = 3\n[fusion]\nkind = \"late\"\nmodality_combination = \"cp\"\n").unwrap();
        assert_eq!(c.training.lr, 0.01);
        assert_eq!(c.training.seed, 3);
        assert_eq!(c.training.max_epochs, 1000);
        assert_eq!(c.fusion.kind, FusionKind::Late);
        assert_eq!(c.fusion.modality_combination, Combination::Cp);
        assert_eq!(c.model.latent_dim, 768);
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::from_toml_str("[model]\nlatent_dim = 30\nheads = 4\n").is_err());
        assert!(RunConfig::from_toml_str("[cv]\nk = 1\n").is_err());
        assert!(RunConfig::from_toml_str("[training]\nmin_epochs_before_stop = 10\nmax_epochs = 5\n").is_err());
    }
}
