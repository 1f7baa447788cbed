use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use islr_core::imaging::PipelineConfig;
use islr_core::model::IslCnnConfig;
use islr_core::train::TrainConfig;

use crate::error::CliError;

/// Everything a run can be configured with. Any key may be omitted.
///
/// ```json
/// { "pipeline": { "use_otsu": true }, "train": { "epochs": 5 }, "val_ratio": 0.25 }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub pipeline: PipelineConfig,
    pub train: TrainConfig,
    pub model: IslCnnConfig,
    pub val_ratio: f64,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            train: TrainConfig::default(),
            model: IslCnnConfig::default(),
            val_ratio: 0.2,
            data: None,
            out: None,
            metrics: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let cfg: Self = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(Self::default()),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let invalid = |e: &dyn std::fmt::Display| CliError::Validation(e.to_string());
        self.pipeline.validate().map_err(|e| invalid(&e))?;
        self.train.validate().map_err(|e| invalid(&e))?;
        self.model.validate().map_err(|e| invalid(&e))?;
        if self.pipeline.model_input_size != self.model.input_size {
            return Err(CliError::Validation(format!(
                "pipeline.model_input_size ({}) must equal model.input_size ({})",
                self.pipeline.model_input_size, self.model.input_size
            )));
        }
        if self.model.input_channels != 1 {
            return Err(CliError::Validation(
                "the pipeline produces single-channel images; model.input_channels must be 1"
                    .into(),
            ));
        }
        if !(self.val_ratio > 0.0 && self.val_ratio < 1.0) {
            return Err(CliError::Validation(format!(
                "val_ratio must lie strictly between 0 and 1, got {}",
                self.val_ratio
            )));
        }
        Ok(())
    }
}
