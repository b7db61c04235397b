//! Interactive session loop over a spatial memory: create from an image or
//! a procedural scene, step along camera trajectories, edit the memory,
//! export and import bundles, and serve it all over HTTP.

pub mod api;
pub mod bundle;
pub mod config;
pub mod error;
pub mod generators;
pub mod http;
pub mod state;
pub mod step;

pub use config::{GeneratorSpec, ServiceConfig, SessionConfig};
pub use error::{Error, Result};
pub use generators::GeneratorFactory;
pub use state::{ArchiveFrame, SceneSource, SessionInit, SessionState};
pub use step::{step, StepOutput, StepRequest};
