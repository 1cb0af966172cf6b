//! On-disk formats: run config, trajectory logs, CSV reports and policy
//! checkpoints.

pub mod checkpoint;
pub mod config;
pub mod csv;
pub mod log;

use thiserror::Error;

use crate::error::MapoError;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: episode {episode} turn {turn}: {message}")]
    Validation {
        line: usize,
        episode: u64,
        turn: usize,
        message: String,
    },
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Invalid(#[from] MapoError),
}

/// Rounds to 9 significant decimal digits.
pub fn round_sig9(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{v:.8e}").parse().expect("formatted float parses")
}
