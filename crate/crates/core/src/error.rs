use thiserror::Error;

/// Errors for the density lab.
#[derive(Debug, Error)]
pub enum Error {
    #[error("grid size mismatch: {0} vs {1}")]
    GridMismatch(usize, usize),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("grid too coarse: m = {m} cannot resolve frequency j = {j} (need m >= {min})")]
    Resolution { m: usize, j: usize, min: usize },

    #[error("sampler failed to produce a class member after {attempts} attempts")]
    Generation { attempts: usize },

    #[error("contraction precondition violated: {0}")]
    Contract(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
