//! Conditional flow-matching video generator at desk scale.
//!
//! Frames become patch tokens; a transformer predicts the velocity of the
//! linear noise-to-data path for the target clip given reference frames,
//! preceding frames, scene-projection tokens (through ControlNet blocks) and
//! an instruction id.

pub mod autodiff;
pub mod checkpoint;
pub mod error;
pub mod flow;
pub mod generate;
pub mod model;
pub mod params;
pub mod tokenizer;
pub mod train;

pub use error::{Error, Result};
pub use generate::{ClipGenerator, ConditionSet, FlowGenerator, GenerationRequest, OracleGenerator};
pub use model::{Conditioning, Model, ModelConfig, SceneTokens};
pub use params::{ParamGroup, ParamStore};
pub use tokenizer::{Tokenizer, TokenizerConfig, TokenizerKind};
pub use train::{PreparedSample, Stage, StageConfig, StageLog};
