//! Session and service configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use scenemem_core::memory::DEFAULT_CUBE_SIDE;
use scenemem_core::render::DEFAULT_SPLAT_RADIUS;
use scenemem_core::{FusionConfig, RetrievalConfig};
use scenemem_generator::{ConditionSet, ModelConfig};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    /// Frames per generated clip.
    pub clip_len: usize,
    /// Preceding frames handed to the generator.
    pub preceding_len: usize,
    pub cube_side: f64,
    pub fusion: FusionConfig,
    pub splat_radius: usize,
    pub retrieval: RetrievalConfig,
    /// Only the latest `n` eligible archive frames are retrieval candidates.
    pub retrieval_window: Option<usize>,
    /// Largest allowed jump between the previous frame and a new clip's
    /// first pose, as (meters, radians).
    pub max_pose_gap: Option<(f64, f64)>,
    /// Seconds between consecutive frames.
    pub frame_interval: f64,
    pub seed: u64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            clip_len: 9,
            preceding_len: 3,
            cube_side: DEFAULT_CUBE_SIDE,
            fusion: FusionConfig::default(),
            splat_radius: DEFAULT_SPLAT_RADIUS,
            retrieval: RetrievalConfig::default(),
            retrieval_window: None,
            max_pose_gap: Some((1.0, 0.75)),
            frame_interval: 0.1,
            seed: 0,
        }
    }
}

impl SessionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.clip_len == 0 || self.preceding_len == 0 {
            return Err(Error::Config("clip_len and preceding_len must be positive".into()));
        }
        if !(self.cube_side > 0.0 && self.cube_side.is_finite()) {
            return Err(Error::Config("cube_side must be positive".into()));
        }
        if !(self.frame_interval >= 0.0) {
            return Err(Error::Config("frame_interval must be non-negative".into()));
        }
        self.retrieval.validate()?;
        Ok(())
    }
}

/// How a session produces clips.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorSpec {
    /// Ground-truth renders; needs a scene-initialized session.
    Oracle,
    /// Trained network loaded from a checkpoint file.
    Flow {
        checkpoint: PathBuf,
        steps: usize,
        conditions: ConditionSet,
    },
    /// Randomly initialized network.
    Random {
        #[serde(default)]
        model: Option<ModelConfig>,
        steps: usize,
    },
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec::Oracle
    }
}

pub const ENV_PORT: &str = "SCENEMEM_PORT";
pub const ENV_DATA_DIR: &str = "SCENEMEM_DATA_DIR";
pub const ENV_BIND: &str = "SCENEMEM_BIND";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub bind: String,
    pub port: u16,
    /// Where bundles are written on export.
    pub data_dir: PathBuf,
    pub session: SessionConfig,
    pub generator: GeneratorSpec,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 8080,
            data_dir: PathBuf::from("data"),
            session: SessionConfig::default(),
            generator: GeneratorSpec::default(),
        }
    }
}

impl ServiceConfig {
    /// Reads TOML (`.toml`) or JSON (anything else).
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "toml") {
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))
        } else {
            Ok(serde_json::from_str(&text)?)
        }
    }

    /// Applies `SCENEMEM_PORT`, `SCENEMEM_DATA_DIR` and `SCENEMEM_BIND`
    /// from the given lookup.
    pub fn with_env(mut self, get: impl Fn(&str) -> Option<String>) -> Result<Self> {
        if let Some(p) = get(ENV_PORT) {
            self.port = p
                .parse()
                .map_err(|_| Error::Config(format!("{ENV_PORT}={p} is not a port")))?;
        }
        if let Some(d) = get(ENV_DATA_DIR) {
            self.data_dir = PathBuf::from(d);
        }
        if let Some(b) = get(ENV_BIND) {
            self.bind = b;
        }
        Ok(self)
    }
}
