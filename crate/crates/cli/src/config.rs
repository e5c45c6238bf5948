//! Versioned JSON pipeline configuration.

use std::path::Path;

use nephroseg_core::augment::AugmentationSpec;
use nephroseg_core::metrics::DetectionSettings;
use nephroseg_core::unet::TrainConfig;
use nephroseg_core::volume::{Shape, DEFAULT_SPACING};
use nephroseg_core::Spacing;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::phantom::CohortSpec;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub test_fraction: f64,
    pub folds: usize,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { test_fraction: 0.2, folds: 3, seed: 0 }
    }
}

/// Sliding-window settings for prediction; each defaults from the training
/// patch (stride: half the patch).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceConfig {
    pub patch: Option<Shape>,
    pub stride: Option<Shape>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub schema_version: u32,
    pub target_spacing: Spacing,
    /// HU window applied before z-scoring.
    pub clip_hu: [f64; 2],
    pub augmentation: AugmentationSpec,
    pub augment_seed: u64,
    pub training: TrainConfig,
    pub inference: InferenceConfig,
    pub detection: DetectionSettings,
    pub split: SplitConfig,
    pub phantom: CohortSpec,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            target_spacing: DEFAULT_SPACING,
            clip_hu: [-79.0, 304.0],
            augmentation: AugmentationSpec::default(),
            augment_seed: 0,
            training: TrainConfig::default(),
            inference: InferenceConfig::default(),
            detection: DetectionSettings::default(),
            split: SplitConfig::default(),
            phantom: CohortSpec::default(),
        }
    }
}

impl PipelineConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let err = |detail: String| CliError::Config { path: path.to_path_buf(), detail };
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| err(format!("at `{}`: {}", e.path(), e.inner())))?;
        cfg.validate().map_err(|(field, detail)| err(format!("at `{field}`: {detail}")))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&crate::io::read_to_string(path)?, path)
    }

    /// Window and stride used by `predict`.
    pub fn inference_window(&self) -> (Shape, Shape) {
        let patch = self.inference.patch.unwrap_or(self.training.patch);
        let stride = self.inference.stride.unwrap_or(patch.map(|p| (p / 2).max(1)));
        (patch, stride)
    }

    /// Field name and reason of the first violated constraint.
    fn validate(&self) -> std::result::Result<(), (&'static str, String)> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(("schema_version", format!("expected {SCHEMA_VERSION}, got {}", self.schema_version)));
        }
        if self.target_spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(("target_spacing", format!("{:?} must be positive", self.target_spacing)));
        }
        if !(self.clip_hu[0] < self.clip_hu[1]) {
            return Err(("clip_hu", format!("{:?} must satisfy lo < hi", self.clip_hu)));
        }
        self.augmentation.validate().map_err(|e| ("augmentation", e.to_string()))?;
        self.training.validate().map_err(|e| ("training", e.to_string()))?;
        let (patch, stride) = self.inference_window();
        self.training.architecture.check_patch(patch).map_err(|e| ("inference.patch", e.to_string()))?;
        if (0..3).any(|a| stride[a] == 0 || stride[a] > patch[a]) {
            return Err(("inference.stride", format!("{stride:?} must be in 1..=patch {patch:?}")));
        }
        if self.detection.min_component_voxels == 0 {
            return Err(("detection.min_component_voxels", "must be at least 1".into()));
        }
        if !(self.split.test_fraction > 0.0 && self.split.test_fraction < 1.0) {
            return Err(("split.test_fraction", format!("{} not in (0, 1)", self.split.test_fraction)));
        }
        if self.split.folds < 2 {
            return Err(("split.folds", format!("need at least 2, got {}", self.split.folds)));
        }
        if self.split.folds != self.training.folds {
            return Err(("training.folds", format!("{} differs from split.folds {}", self.training.folds, self.split.folds)));
        }
        self.phantom.validate().map_err(|e| ("phantom", e.to_string()))?;
        Ok(())
    }
}
