use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("trajectory has {got} views, clips have {expected}")]
    TrajectoryLength { expected: usize, got: usize },
    #[error("trajectory starts {translation:.3} m / {angle:.3} rad away from the previous frame")]
    PoseGap { translation: f64, angle: f64 },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("generator failed: {0}")]
    Generator(#[from] scenemem_generator::Error),
    #[error("corrupt bundle: {0}")]
    CorruptBundle(String),
    #[error("unsupported bundle version {0}")]
    BundleVersion(u32),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] scenemem_core::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
