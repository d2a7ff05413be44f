use thiserror::Error;

use crate::trajectory::Trajectory;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid Hankel depth {depth} for a signal of length {len}")]
    InvalidDepth { depth: usize, len: usize },

    #[error("insufficient data: need {needed} samples, have {available}")]
    InsufficientData { needed: usize, available: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("infeasible problem: {0}")]
    Infeasible(String),

    #[error("plant diverged: state norm {norm:e} exceeds {limit:e}")]
    Divergence { norm: f64, limit: f64 },

    #[error("input out of bounds: channel {channel} value {value} outside [{min}, {max}]")]
    InputBounds {
        channel: usize,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("episode aborted after {} samples: {source}", .partial.len())]
    EpisodeAborted {
        partial: Box<Trajectory>,
        #[source]
        source: Box<Error>,
    },

    #[error("dataset selection failed: every entry scored +inf")]
    SelectionFailed,

    #[error("invalid duration {0} (must be > 0)")]
    InvalidDuration(f64),

    #[error("reference infeasible: {0}")]
    ReferenceInfeasible(String),

    #[error("training diverged at epoch {epoch}")]
    TrainingDiverged { epoch: usize },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
