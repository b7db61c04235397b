//! Evaluation: image metrics, closed-loop and long-horizon protocols,
//! condition ablations, density sweeps and a small trainable setup.

pub mod error;
pub mod harness;
pub mod metrics;
pub mod report;
pub mod toy;

pub use error::{Error, Result};
pub use harness::{closed_loop_eval, density_sweep, long_horizon_eval, MetricsRecord, Protocol};
pub use metrics::{match_accuracy, psnr, ssim, MatchConfig, SsimConfig, PSNR_CAP};
pub use toy::ToyConfig;
