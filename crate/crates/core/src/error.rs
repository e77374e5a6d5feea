use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GdpError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("unsupported image format: {0}")]
    Format(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    Input(String),

    /// The closed-form T radicand was not positive, or the marginal had no
    /// usable mass off the origin.
    #[error("T estimation failed: {0}")]
    Estimation(String),

    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    #[error("KL divergence is infinite: q has empty bins where p has mass (enable smoothing)")]
    Divergence,

    #[error("model singular at the origin: {0}")]
    Singularity(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("kernel projection failed: all entries are non-positive")]
    Projection,

    #[error("singular kernel estimate: {0}")]
    SingularEstimate(String),

    #[error("iteration diverged after {iterations} iterations: {reason}")]
    Diverged { iterations: usize, reason: String },

    #[error("inner solve did not converge (residual {residual:.3e})")]
    InnerSolve { residual: f64 },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, GdpError>;
