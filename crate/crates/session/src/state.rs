//! Session state: memory, archive of posed frames, clip counter.

use log::warn;
use serde::{Deserialize, Serialize};

use scenemem_core::synth::{generate_scene, SceneParams, SceneSpec};
use scenemem_core::{CameraView, DepthMap, Frame, Intrinsics, Mask, Pose, RgbImage, SpatialMemory};

use crate::config::SessionConfig;
use crate::error::{Error, Result};

/// A procedural scene the session was built from; evaluation mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSource {
    pub seed: u64,
    pub params: SceneParams,
}

impl SceneSource {
    pub fn build(&self) -> Result<SceneSpec> {
        Ok(generate_scene(self.seed, &self.params)?)
    }
}

/// One archived frame. Clip 0 holds the initial frame.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchiveFrame {
    pub clip: usize,
    pub time: f64,
    pub view: CameraView,
    pub rgb: RgbImage,
    /// Dynamic pixels, when known.
    pub mask: Option<Mask>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SessionState {
    pub config: SessionConfig,
    pub scene: Option<SceneSource>,
    pub seed: u64,
    pub clip_index: usize,
    pub memory: SpatialMemory,
    pub archive: Vec<ArchiveFrame>,
}

/// How a session starts.
#[derive(Clone, Debug, PartialEq)]
pub enum SessionInit {
    /// Render the first frame of a generated scene from `view`
    /// (defaults to the scene's center camera).
    Scene {
        source: SceneSource,
        view: Option<CameraView>,
        intrinsics: Intrinsics,
    },
    /// A captured image with depth.
    Image {
        rgb: RgbImage,
        depth: Option<DepthMap>,
        mask: Option<Mask>,
        view: CameraView,
    },
}

impl SessionState {
    pub fn create(init: SessionInit, config: SessionConfig) -> Result<Self> {
        config.validate()?;
        let (scene, frame) = match init {
            SessionInit::Scene {
                source,
                view,
                intrinsics,
            } => {
                let spec = source.build()?;
                let view = view.unwrap_or(CameraView {
                    pose: spec.camera_pose(0.0, Default::default()),
                    intrinsics,
                });
                let frame = spec.render_frame(&view, 0.0);
                (Some(source), frame)
            }
            SessionInit::Image { rgb, depth, mask, view } => {
                let depth = depth.ok_or_else(|| Error::InvalidRequest("image init needs a depth map".into()))?;
                let mut f = Frame::new(rgb, view.pose, view.intrinsics)?.with_depth(depth)?;
                if let Some(m) = mask {
                    f = f.with_mask(m)?;
                }
                (None, f)
            }
        };
        let mut memory = SpatialMemory::new(config.cube_side)?;
        memory.fuse_frames([&frame], &config.fusion)?;
        if memory.is_empty() {
            warn!("initial frame contributed no static points; memory starts empty");
        }
        Ok(Self {
            seed: config.seed,
            config,
            scene,
            clip_index: 0,
            memory,
            archive: vec![ArchiveFrame {
                clip: 0,
                time: frame.time,
                view: CameraView {
                    pose: frame.pose,
                    intrinsics: frame.intrinsics,
                },
                rgb: frame.rgb,
                mask: frame.dynamic_mask,
            }],
        })
    }

    pub fn last_pose(&self) -> &Pose {
        &self.archive.last().expect("archive is never empty").view.pose
    }

    pub fn last_time(&self) -> f64 {
        self.archive.last().map_or(0.0, |f| f.time)
    }

    /// Frames of clip `k`; clip 0 is the initial frame.
    pub fn clip_frames(&self, k: usize) -> impl Iterator<Item = &ArchiveFrame> {
        self.archive.iter().filter(move |f| f.clip == k)
    }

    /// SHA-256 of the exported bundle body, hex encoded.
    pub fn checksum(&self) -> String {
        crate::bundle::checksum(self)
    }
}
