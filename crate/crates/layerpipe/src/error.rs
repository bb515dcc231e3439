use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty network")]
    EmptyNetwork,

    #[error("layer {layer}: {reason}")]
    BadLayer { layer: String, reason: String },

    #[error("dimension mismatch at layer {layer}: expected {expected}, got {got}")]
    DimensionMismatch {
        layer: String,
        expected: String,
        got: String,
    },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("non-monotone stage map: layer {layer} has stage {stage}, previous layer has stage {prev}")]
    NonMonotoneStages {
        layer: usize,
        stage: usize,
        prev: usize,
    },

    #[error("illegal retiming on edge {edge}: retimed delay {delays}")]
    IllegalRetiming { edge: String, delays: i64 },

    #[error("deadlocked graph: cycle with zero delays through {node}")]
    DeadlockedGraph { node: String },

    #[error("op_split: idle time {t_idle} does not admit a split of {t_flex}")]
    NoFeasibleSplit { t_idle: u64, t_flex: u64 },

    #[error("alpha must be > 1, got {0}")]
    BadAlpha(f64),

    #[error("allocation does not cover {what}")]
    IncompleteAllocation { what: String },

    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;
