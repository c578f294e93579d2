use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("missing {file}: run '{producer}' first")]
    MissingInput { file: String, producer: &'static str },

    #[error("{file} was not produced from the current {input} (recorded {recorded}, found {found}); rerun '{producer}'")]
    Mismatch {
        file: String,
        input: String,
        recorded: String,
        found: String,
        producer: &'static str,
    },

    #[error("{file}: {message}")]
    Artifact { file: String, message: String },

    #[error("stage '{stage}' failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<CliError>,
    },

    #[error(transparent)]
    Core(#[from] bctomo_core::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn artifact(file: &str, message: impl Into<String>) -> Self {
        CliError::Artifact {
            file: file.to_string(),
            message: message.into(),
        }
    }

    /// 1 for validation problems, 2 for everything that goes wrong while running.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Stage { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
