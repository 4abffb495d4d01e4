use thiserror::Error;

/// Errors raised by the simulation library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite value in {stage} for configuration {config}")]
    NonFinite { stage: String, config: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Whether this error belongs to the configuration class (CLI exit code 2).
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Dimension { .. } | Error::Serde(_) | Error::Csv(_)
        )
    }
}

/// Render a spin configuration compactly (`+-+-`) for diagnostics.
pub fn format_spins(spins: &[i8]) -> String {
    spins.iter().map(|&s| if s > 0 { '+' } else { '-' }).collect()
}
