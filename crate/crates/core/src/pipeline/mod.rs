//! Datasets, fold scheduling, synthetic data, training, inference and
//! evaluation.

mod cache;
mod evaluate;
mod folds;
mod manifest;
mod preprocess;
mod synth;
mod train;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::{mesh_digest, AssetCache};
pub use evaluate::{
    compare_reports, evaluate, infer, infer_with_loader, load_model, Comparison, EvalSource,
    Evaluation, CURVE_METRICS, CURVE_POINTS,
};
pub use folds::{make_folds, pair_id, pair_scheduler, Fold, FoldSpec, Pair, Phase};
pub use manifest::{read_landmarks, write_landmarks, DatasetManifest, GroundTruth};
pub use preprocess::{preprocess, PreprocessOptions};
pub use synth::{synth_generate, SynthOptions};
pub use train::{
    pair_loss, read_log, train, train_fold, write_log, FoldResult, LogRow, PairAssets, TrainOutput,
};

use crate::autodiff::AutodiffError;
use crate::corrnet::{CorrnetError, ModelConfig};
use crate::geodesics::GeodesicError;
use crate::losses::{LossError, LossWeights};
use crate::meshkit::MeshError;
use crate::metrics::MetricsError;
use crate::volumes::VolumeError;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Validation(String),
    #[error("at least 10 patients are required, found {0}")]
    TooFewPatients(usize),
    #[error("non-finite loss in fold {fold}, epoch {epoch}, pair {pair}; state dumped to {dump}")]
    NanLoss {
        fold: usize,
        epoch: usize,
        pair: String,
        dump: String,
    },
    #[error("missing file {0}")]
    MissingFile(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Geodesic(#[from] GeodesicError),
    #[error(transparent)]
    Corrnet(#[from] CorrnetError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// Process exit code: 2 for bad input or configuration, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_)
            | Self::TooFewPatients(_)
            | Self::MissingFile(_)
            | Self::Toml(_) => 2,
            Self::Corrnet(CorrnetError::InvalidConfig(_)) => 2,
            _ => 3,
        }
    }
}

/// Which imaging information a model uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Variant {
    /// Geometry only.
    #[default]
    #[serde(rename = "base")]
    Base,
    /// CT patch features are part of the network input.
    #[serde(rename = "imgfeat")]
    ImageFeatures,
    /// CT patches enter only the training loss.
    #[serde(rename = "imgloss")]
    ImagingLoss,
}

impl Variant {
    pub fn parse(s: &str) -> Result<Self, PipelineError> {
        match s {
            "base" => Ok(Self::Base),
            "imgfeat" => Ok(Self::ImageFeatures),
            "imgloss" => Ok(Self::ImagingLoss),
            other => Err(PipelineError::Validation(format!(
                "unknown variant {other:?}"
            ))),
        }
    }

    /// Whether training reads CT volumes.
    pub fn needs_patches_for_training(self) -> bool {
        self != Self::Base
    }

    /// Whether inference reads CT volumes.
    pub fn needs_patches_for_inference(self) -> bool {
        self == Self::ImageFeatures
    }
}

/// Training settings, read from a TOML file. Every key is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub variant: Variant,
    /// Source vertex pairs sampled per step for the geodesic loss.
    pub geo_pairs: usize,
    /// Save a resumable checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
    pub model: ModelConfig,
    pub weights: LossWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 75,
            lr: 1e-4,
            seed: 0,
            variant: Variant::Base,
            geo_pairs: 1000,
            checkpoint_every: 0,
            model: ModelConfig::default(),
            weights: LossWeights::default(),
        }
    }
}

impl TrainConfig {
    pub fn from_toml(text: &str) -> Result<Self, PipelineError> {
        let c: Self = toml::from_str(text)?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.epochs == 0 {
            return Err(PipelineError::Validation(
                "epochs must be at least 1".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(PipelineError::Validation(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if self.geo_pairs == 0 {
            return Err(PipelineError::Validation(
                "geo_pairs must be at least 1".into(),
            ));
        }
        if self.model.use_image_features != (self.variant == Variant::ImageFeatures) {
            return Err(PipelineError::Validation(
                "model.use_image_features must be true exactly for the imgfeat variant".into(),
            ));
        }
        self.model.validate()?;
        self.weights.validate()?;
        Ok(())
    }

    /// Sets the variant and the matching image-feature switch.
    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self.model.use_image_features = variant == Variant::ImageFeatures;
        self
    }
}
