//! Versioned JSON model files.
//!
//! `serde_json` renders every `f64` with the shortest decimal string that
//! parses back to the same bits, so a save → load cycle is lossless.

use geoclass::estimator::ModelSnapshot;
use geoclass::trainer::TrainConfig;
use geoclass::RbfModel;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const FORMAT: &str = "geoclass-model";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ModelFileError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: malformed model file: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error("{path}: expected format `{FORMAT}` version {VERSION}, found `{format}` version {version}")]
    Version {
        path: String,
        format: String,
        version: u32,
    },
    #[error("{path}: {source}")]
    Model {
        path: String,
        source: geoclass::Error,
    },
}

/// Training settings echoed into the file for reference; not needed to
/// evaluate the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub loss: String,
    pub lambda: f64,
    pub step_size: f64,
    pub max_iters: usize,
    pub simplex_strategy: String,
}

impl From<&TrainConfig> for ConfigEcho {
    fn from(c: &TrainConfig) -> Self {
        Self {
            loss: c.loss.name().to_string(),
            lambda: c.lambda,
            step_size: c.step_size,
            max_iters: c.max_iters,
            simplex_strategy: format!("{:?}", c.simplex_strategy),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub feature_dim: usize,
    pub num_classes: usize,
    pub class_names: Vec<String>,
    pub kernel_width: f64,
    pub normalization: Vec<(f64, f64)>,
    pub centers: Vec<f64>,
    pub coefficients: Vec<f64>,
    pub config: ConfigEcho,
}

impl ModelFile {
    pub fn new(model: &RbfModel, class_names: Vec<String>, config: ConfigEcho) -> Self {
        let s = model.snapshot();
        Self {
            format: FORMAT.into(),
            version: VERSION,
            feature_dim: s.feature_dim,
            num_classes: s.num_classes,
            class_names,
            kernel_width: s.kernel_width,
            normalization: s.normalization,
            centers: s.centers,
            coefficients: s.coefficients,
            config,
        }
    }

    pub fn to_model(&self) -> geoclass::Result<RbfModel> {
        RbfModel::from_snapshot(ModelSnapshot {
            feature_dim: self.feature_dim,
            num_classes: self.num_classes,
            kernel_width: self.kernel_width,
            normalization: self.normalization.clone(),
            centers: self.centers.clone(),
            coefficients: self.coefficients.clone(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelFileError> {
        let text = serde_json::to_string_pretty(self).expect("model file serializes");
        std::fs::write(path, text + "\n").map_err(|source| ModelFileError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<(Self, RbfModel), ModelFileError> {
        let p = || path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ModelFileError::Io { path: p(), source })?;
        let file: ModelFile =
            serde_json::from_str(&text).map_err(|source| ModelFileError::Json { path: p(), source })?;
        if file.format != FORMAT || file.version != VERSION {
            return Err(ModelFileError::Version {
                path: p(),
                format: file.format,
                version: file.version,
            });
        }
        if file.class_names.len() != file.num_classes {
            return Err(ModelFileError::Model {
                path: p(),
                source: geoclass::Error::Dataset(format!(
                    "{} class names for {} classes",
                    file.class_names.len(),
                    file.num_classes
                )),
            });
        }
        let model = file.to_model().map_err(|source| ModelFileError::Model { path: p(), source })?;
        Ok((file, model))
    }
}
