use thiserror::Error;

/// Errors produced anywhere in the simulation and evaluation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration value (maps to CLI exit code 2).
    #[error("configuration error: {0}")]
    Config(String),

    /// Shape or length mismatch between two inputs.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Input data violates a domain invariant (maps to CLI exit code 3).
    #[error("invalid data: {0}")]
    Data(String),

    /// Stage artifacts come from different configurations.
    #[error("provenance mismatch: expected config hash {expected}, found {found}")]
    Provenance { expected: String, found: String },

    /// A numeric procedure produced something unusable (maps to CLI exit code 4).
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}{}", fold.map(|f| format!(" (fold {f})")).unwrap_or_default())]
    Divergence { epoch: usize, fold: Option<usize> },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) => 2,
            Error::Numeric(_) | Error::Divergence { .. } => 4,
            _ => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
