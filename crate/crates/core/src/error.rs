use thiserror::Error;

/// Errors raised anywhere in the atlas pipeline.
#[derive(Debug, Error)]
pub enum AtlasError {
    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("cover error: {0}")]
    Cover(String),

    #[error("k-nearest-neighbour graph is disconnected ({components} components)")]
    Disconnected { components: usize },

    #[error("numerical failure at point {index}: {message}")]
    Numerical { index: usize, message: String },

    #[error("training diverged in chart {chart} at epoch {epoch}")]
    Divergence { chart: usize, epoch: usize },

    #[error("cocycle has degenerate edges {0:?}; gate on diagnostics before testing")]
    DegenerateEdges(Vec<(usize, usize, usize)>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, AtlasError>;
