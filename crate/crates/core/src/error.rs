use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed endpoint specification, hierarchy, weight or scenario.
    #[error("configuration error: {0}")]
    Config(String),

    /// The rotation set would exceed the configured cap.
    #[error("resource error: hierarchy yields {count} rotations (cap {cap}); split large blocks into smaller ones or keep each block to at most four or five endpoints")]
    RotationCap { count: u128, cap: usize },

    /// Data that cannot be analysed (empty arm, undersized stratum, ...).
    #[error("analysis error: {0}")]
    Analysis(String),

    /// Variance estimation or interval construction failed.
    #[error("inference error: {0}")]
    Inference(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn analysis(msg: impl Into<String>) -> Self {
        Error::Analysis(msg.into())
    }

    pub(crate) fn inference(msg: impl Into<String>) -> Self {
        Error::Inference(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
