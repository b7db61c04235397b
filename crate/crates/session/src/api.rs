//! JSON request and response bodies shared by the HTTP service and the CLI.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use scenemem_core::io::{npy_to_depth, png_to_mask, png_to_rgb, rgb_to_png};
use scenemem_core::synth::SceneParams;
use scenemem_core::{CameraView, EditOp, Intrinsics, Pose, Trajectory};

use crate::config::{GeneratorSpec, SessionConfig};
use crate::error::{Error, Result};
use crate::state::{ArchiveFrame, SceneSource, SessionInit, SessionState};
use crate::step::StepOutput;

pub const DEFAULT_SIZE: usize = 128;
pub const DEFAULT_FOV: f64 = std::f64::consts::FRAC_PI_2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitSpec {
    Scene {
        seed: u64,
        #[serde(default)]
        params: Option<SceneParams>,
        #[serde(default)]
        view: Option<CameraView>,
        /// Used when `view` is absent; defaults to a 128x128, 90 degree camera.
        #[serde(default)]
        intrinsics: Option<Intrinsics>,
    },
    Image {
        /// Base64 PNG.
        png: String,
        /// Base64 `.npy` float depth map (H, W).
        #[serde(default)]
        depth: Option<String>,
        /// Base64 1-bit PNG, true on dynamic pixels.
        #[serde(default)]
        mask: Option<String>,
        pose: Pose,
        intrinsics: Intrinsics,
    },
}

fn decode(s: &str, what: &str) -> Result<Vec<u8>> {
    B64.decode(s)
        .map_err(|e| Error::InvalidRequest(format!("{what} is not base64: {e}")))
}

pub fn encode_png(img: &scenemem_core::RgbImage) -> Result<String> {
    Ok(B64.encode(rgb_to_png(img)?))
}

impl InitSpec {
    pub fn into_init(self) -> Result<SessionInit> {
        Ok(match self {
            InitSpec::Scene {
                seed,
                params,
                view,
                intrinsics,
            } => SessionInit::Scene {
                source: SceneSource {
                    seed,
                    params: params.unwrap_or_default(),
                },
                view,
                intrinsics: match intrinsics {
                    Some(i) => i,
                    None => Intrinsics::from_fov(DEFAULT_SIZE, DEFAULT_SIZE, DEFAULT_FOV)?,
                },
            },
            InitSpec::Image {
                png,
                depth,
                mask,
                pose,
                intrinsics,
            } => SessionInit::Image {
                rgb: png_to_rgb(&decode(&png, "png")?)?,
                depth: depth
                    .map(|d| -> Result<_> { Ok(npy_to_depth(&decode(&d, "depth")?)?) })
                    .transpose()?,
                mask: mask
                    .map(|m| -> Result<_> { Ok(png_to_mask(&decode(&m, "mask")?)?) })
                    .transpose()?,
                view: CameraView { pose, intrinsics },
            },
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CreateRequest {
    pub init: InitSpec,
    #[serde(default)]
    pub config: Option<SessionConfig>,
    #[serde(default)]
    pub generator: Option<GeneratorSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditRequest {
    pub edits: Vec<EditOp>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionInfo {
    pub id: String,
    pub clip_index: usize,
    pub cells: usize,
    pub frames: usize,
    pub checksum: String,
    pub generator: GeneratorSpec,
    pub config: SessionConfig,
}

impl SessionInfo {
    pub fn new(id: &str, state: &SessionState, generator: &GeneratorSpec) -> Self {
        Self {
            id: id.to_string(),
            clip_index: state.clip_index,
            cells: state.memory.len(),
            frames: state.archive.len(),
            checksum: state.checksum(),
            generator: generator.clone(),
            config: state.config.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepResponse {
    pub clip: usize,
    /// The request's trajectory, echoed back.
    pub trajectory: Trajectory,
    pub references: Vec<u64>,
    pub cells_before: usize,
    pub cells_after: usize,
    /// Base64 PNGs.
    pub frames: Vec<String>,
    pub checksum: String,
}

impl StepResponse {
    pub fn new(trajectory: Trajectory, out: &StepOutput, state: &SessionState) -> Result<Self> {
        Ok(Self {
            clip: out.clip,
            trajectory,
            references: out.references.clone(),
            cells_before: out.cells_before,
            cells_after: out.cells_after,
            frames: out.frames.iter().map(encode_png).collect::<Result<_>>()?,
            checksum: state.checksum(),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EditResponse {
    /// Cells touched by each edit.
    pub touched: Vec<usize>,
    pub cells: usize,
    pub checksum: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipFrame {
    pub index: usize,
    pub time: f64,
    pub view: CameraView,
    pub png: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipResponse {
    pub clip: usize,
    pub frames: Vec<ClipFrame>,
}

impl ClipResponse {
    pub fn new(state: &SessionState, k: usize) -> Result<Option<Self>> {
        let frames: Vec<&ArchiveFrame> = state.clip_frames(k).collect();
        if frames.is_empty() {
            return Ok(None);
        }
        Ok(Some(Self {
            clip: k,
            frames: frames
                .into_iter()
                .enumerate()
                .map(|(index, f)| {
                    Ok(ClipFrame {
                        index,
                        time: f.time,
                        view: f.view,
                        png: encode_png(&f.rgb)?,
                    })
                })
                .collect::<Result<_>>()?,
        }))
    }
}
