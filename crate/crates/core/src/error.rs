use std::io;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum CraftError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("mode must be 1, 2 or 3, got {0}")]
    InvalidMode(usize),

    #[error("non-finite value at flat index {index}")]
    NonFinite { index: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("rank {rank} for mode {mode} out of range 1..={max}")]
    RankOutOfRange {
        mode: usize,
        rank: usize,
        max: usize,
    },

    #[error("{what} {value} out of range 0..{len}")]
    IndexOutOfRange {
        what: &'static str,
        value: usize,
        len: usize,
    },

    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("{routine} did not converge after {sweeps} sweeps (residual {residual:e}){}", mode_suffix(*.mode))]
    Convergence {
        routine: &'static str,
        sweeps: usize,
        residual: f64,
        mode: Option<usize>,
    },

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error(
        "pre-training reached eval accuracy {accuracy:.4} after {steps} steps, below {required}"
    )]
    PretrainFailure {
        accuracy: f64,
        steps: usize,
        required: f64,
    },

    #[error("training diverged at step {step}: {what} is not finite")]
    Divergence { step: usize, what: &'static str },

    #[error("malformed tensor file: {0}")]
    Format(String),

    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    Checksum { stored: u64, computed: u64 },

    #[error("config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] io::Error),
}

fn mode_suffix(mode: Option<usize>) -> String {
    match mode {
        Some(m) => format!(" in mode {m}"),
        None => String::new(),
    }
}

impl CraftError {
    pub(crate) fn with_mode(self, mode: usize) -> Self {
        match self {
            CraftError::Convergence {
                routine,
                sweeps,
                residual,
                ..
            } => CraftError::Convergence {
                routine,
                sweeps,
                residual,
                mode: Some(mode),
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, CraftError>;
