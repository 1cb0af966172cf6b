use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MapoError {
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("invalid judge delta: {0}")]
    InvalidDelta(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("group error: {0}")]
    Group(String),
    #[error("batch error: {0}")]
    Batch(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("policy error: {0}")]
    Policy(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("evaluation error: {0}")]
    Evaluation(String),
}

pub type Result<T> = std::result::Result<T, MapoError>;
