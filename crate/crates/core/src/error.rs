use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("illegal transition: {0}")]
    IllegalTransition(String),
    #[error("invalid act: {0}")]
    InvalidAct(String),
    #[error("invalid division: {0}")]
    InvalidDivision(String),
    #[error("scenario sampling failed: {0}")]
    Sampling(String),
    #[error("unknown reward preset `{0}`")]
    UnknownPreset(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("incomplete grid, missing pairs: {0:?}")]
    IncompleteGrid(Vec<(String, String)>),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
