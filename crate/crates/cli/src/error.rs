use std::path::Path;

use islr_core::data::DataError;
use islr_core::imaging::ImageError;
use islr_core::model::ModelError;
use islr_core::train::TrainError;

/// A failed command, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Validation(String),
    Numeric(String),
}

impl CliError {
    pub fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        Self::Io(format!("{}: {err}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 1,
            Self::Io(_) => 2,
            Self::Validation(_) => 3,
            Self::Numeric(_) => 4,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Self::Usage(m) | Self::Io(m) | Self::Validation(m) | Self::Numeric(m) => m,
        }
    }
}

impl From<ImageError> for CliError {
    fn from(e: ImageError) -> Self {
        let msg = e.to_string();
        match e {
            ImageError::InvalidParameter(_) => Self::Validation(msg),
            _ => Self::Io(msg),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        let msg = e.to_string();
        match e {
            DataError::MissingRoot(_) | DataError::Io { .. } => Self::Io(msg),
            DataError::Image { source, .. } => match Self::from(source) {
                Self::Validation(_) => Self::Validation(msg),
                _ => Self::Io(msg),
            },
            _ => Self::Validation(msg),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let msg = e.to_string();
        match e {
            ModelError::Config(_) | ModelError::Nn(_) => Self::Validation(msg),
            // unreadable or corrupt checkpoint files
            _ => Self::Io(msg),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        if e.is_numeric() {
            return Self::Numeric(e.to_string());
        }
        match e {
            TrainError::Data(d) => d.into(),
            TrainError::Model(m) => m.into(),
            TrainError::Image { .. } => Self::Io(e.to_string()),
            _ => Self::Validation(e.to_string()),
        }
    }
}
