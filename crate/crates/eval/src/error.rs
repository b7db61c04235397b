use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("image dimensions differ or are empty: {0:?} vs {1:?}")]
    Dims((usize, usize), (usize, usize)),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("trajectory is not palindromic")]
    NotPalindromic,
    #[error(transparent)]
    Session(#[from] scenemem_session::Error),
    #[error(transparent)]
    Generator(#[from] scenemem_generator::Error),
    #[error(transparent)]
    Core(#[from] scenemem_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
