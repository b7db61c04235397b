//! Clip generators used by the session loop.

use std::sync::Arc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use scenemem_core::synth::SceneSpec;
use scenemem_core::{CameraView, RgbImage};

use crate::error::{Error, Result};
use crate::flow::{euler, standard_normal};
use crate::model::{Conditioning, Model, SceneTokens};

/// Inputs for one clip. `scene_preceding` / `scene_target` are projection
/// renders at the preceding and target poses.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerationRequest {
    pub views: Vec<CameraView>,
    /// Capture time of each target frame.
    pub times: Vec<f64>,
    pub preceding: Vec<RgbImage>,
    pub refs: Vec<RgbImage>,
    pub scene_preceding: Vec<RgbImage>,
    pub scene_target: Vec<RgbImage>,
    pub instruction: u32,
}

impl GenerationRequest {
    pub fn validate(&self) -> Result<()> {
        if self.views.is_empty() || self.times.len() != self.views.len() {
            return Err(Error::Shape(format!(
                "{} views with {} times",
                self.views.len(),
                self.times.len()
            )));
        }
        if self.scene_target.len() != self.views.len() || self.scene_preceding.len() != self.preceding.len() {
            return Err(Error::Shape(
                "scene projections must align with preceding and target frames".into(),
            ));
        }
        Ok(())
    }
}

pub trait ClipGenerator: Send + Sync {
    fn generate(&self, req: &GenerationRequest, seed: u64) -> Result<Vec<RgbImage>>;

    fn name(&self) -> &str;
}

/// Which conditions a flow generator passes to its network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConditionSet {
    pub scene: bool,
    pub refs: bool,
}

impl ConditionSet {
    pub const ALL: Self = Self {
        scene: true,
        refs: true,
    };
    pub const SCENE_ONLY: Self = Self {
        scene: true,
        refs: false,
    };
    pub const REFS_ONLY: Self = Self {
        scene: false,
        refs: true,
    };
    pub const NONE: Self = Self {
        scene: false,
        refs: false,
    };
}

pub struct FlowGenerator {
    pub model: Arc<Model>,
    pub steps: usize,
    pub conditions: ConditionSet,
    name: String,
}

impl FlowGenerator {
    pub fn new(model: impl Into<Arc<Model>>, steps: usize, conditions: ConditionSet) -> Self {
        Self {
            model: model.into(),
            steps,
            conditions,
            name: "flow".into(),
        }
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    pub fn conditioning(&self, req: &GenerationRequest) -> Result<Conditioning> {
        let tok = self.model.tokenizer();
        let c = tok.channels();
        Ok(Conditioning {
            refs: if self.conditions.refs {
                tok.tokenize(&req.refs)?
            } else {
                Array2::zeros((0, c))
            },
            preceding: tok.tokenize(&req.preceding)?,
            scene: if self.conditions.scene {
                Some(SceneTokens {
                    preceding: tok.tokenize(&req.scene_preceding)?,
                    target: tok.tokenize(&req.scene_target)?,
                })
            } else {
                None
            },
            instruction: req.instruction,
        })
    }
}

impl ClipGenerator for FlowGenerator {
    fn generate(&self, req: &GenerationRequest, seed: u64) -> Result<Vec<RgbImage>> {
        req.validate()?;
        let cfg = self.model.config();
        for v in &req.views {
            if (v.intrinsics.width, v.intrinsics.height) != (cfg.width, cfg.height) {
                return Err(Error::Shape(format!(
                    "view {}x{} vs model {}x{}",
                    v.intrinsics.width, v.intrinsics.height, cfg.width, cfg.height
                )));
            }
        }
        let cond = self.conditioning(req)?;
        let rows = req.views.len() * cfg.tokens_per_frame();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x0 = standard_normal(rows, cfg.tokenizer.channels, &mut rng);
        let x = euler(x0, self.steps, |x, t| self.model.velocity(&cond, x.view(), t))?;
        let frames = self.model.tokenizer().detokenize(x.view(), cfg.width, cfg.height)?;
        Ok(frames.into_iter().map(|f| f.clamped()).collect())
    }

    fn name(&self) -> &str {
        &self.name
    }
}

/// Returns ground-truth renders of a known scene.
pub struct OracleGenerator {
    pub scene: SceneSpec,
}

impl ClipGenerator for OracleGenerator {
    fn generate(&self, req: &GenerationRequest, _seed: u64) -> Result<Vec<RgbImage>> {
        req.validate()?;
        Ok(req
            .views
            .iter()
            .zip(&req.times)
            .map(|(v, t)| self.scene.render_gt(&v.pose, &v.intrinsics, *t).0)
            .collect())
    }

    fn name(&self) -> &str {
        "oracle"
    }
}
