//! One generate-then-fuse iteration.
//!
//! `step` takes the state by reference and returns the successor, so a
//! failure anywhere leaves the caller's state untouched.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use scenemem_core::render::{render_projection, visible_cloud};
use scenemem_core::retrieval::retrieve_references;
use scenemem_core::{
    CameraView, Candidate, EditOp, Frame, PointCloud, ProjectionImage, RgbImage, Trajectory, ViewCloud,
};
use scenemem_generator::{ClipGenerator, GenerationRequest};

use crate::error::{Error, Result};
use crate::state::{ArchiveFrame, SessionState};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRequest {
    pub trajectory: Trajectory,
    #[serde(default)]
    pub instruction: u32,
    #[serde(default)]
    pub edits: Vec<EditOp>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub clip: usize,
    pub frames: Vec<RgbImage>,
    /// Archive indices used as references.
    pub references: Vec<u64>,
    pub projections: Vec<ProjectionImage>,
    pub cells_before: usize,
    pub cells_after: usize,
}

/// Applies edits to a copy of the state. Returns the number of cells each
/// edit touched.
pub fn apply_edits(state: &SessionState, edits: &[EditOp]) -> Result<(SessionState, Vec<usize>)> {
    let mut next = state.clone();
    let mut touched = Vec::with_capacity(edits.len());
    for e in edits {
        touched.push(next.memory.apply_edit(e)?);
    }
    Ok((next, touched))
}

pub fn validate_request(state: &SessionState, req: &StepRequest) -> Result<()> {
    let cfg = &state.config;
    if req.trajectory.len() != cfg.clip_len {
        return Err(Error::TrajectoryLength {
            expected: cfg.clip_len,
            got: req.trajectory.len(),
        });
    }
    let first = req.trajectory.first();
    let prev = &state.archive.last().expect("archive is never empty").view;
    if (first.intrinsics.width, first.intrinsics.height) != (prev.intrinsics.width, prev.intrinsics.height) {
        return Err(Error::InvalidRequest(format!(
            "trajectory is {}x{}, session frames are {}x{}",
            first.intrinsics.width, first.intrinsics.height, prev.intrinsics.width, prev.intrinsics.height
        )));
    }
    if let Some((max_t, max_a)) = cfg.max_pose_gap {
        let (translation, angle) = first.pose.distance(&prev.pose);
        if translation > max_t || angle > max_a {
            return Err(Error::PoseGap { translation, angle });
        }
    }
    for e in &req.edits {
        e.validate()?;
    }
    Ok(())
}

/// Generator seed for a clip, derived from the session seed.
pub fn clip_seed(seed: u64, clip: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((clip as u64).to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

fn view_cloud(snapshot: &PointCloud, v: &CameraView) -> ViewCloud {
    ViewCloud {
        pose: v.pose,
        cloud: visible_cloud(snapshot, &v.pose, &v.intrinsics),
    }
}

/// Archive indices eligible as references: everything before the preceding
/// frames, optionally limited to the latest `window`.
fn candidate_range(len: usize, preceding: usize, window: Option<usize>) -> std::ops::Range<usize> {
    let end = len - preceding;
    let start = window.map_or(0, |w| end.saturating_sub(w));
    start..end
}

/// Builds the generator inputs for `req` against an already edited state.
pub fn build_request(
    state: &SessionState,
    req: &StepRequest,
) -> Result<(GenerationRequest, Vec<u64>, Vec<ProjectionImage>)> {
    let cfg = &state.config;
    let snapshot = state.memory.snapshot();
    let views = req.trajectory.views().to_vec();
    let projections: Vec<ProjectionImage> = views
        .iter()
        .map(|v| render_projection(&snapshot, &v.pose, &v.intrinsics, cfg.splat_radius))
        .collect();
    let m = cfg.preceding_len.min(state.archive.len());
    let preceding = &state.archive[state.archive.len() - m..];
    let scene_preceding: Vec<RgbImage> = preceding
        .iter()
        .map(|f| render_projection(&snapshot, &f.view.pose, &f.view.intrinsics, cfg.splat_radius).rgb)
        .collect();

    let range = candidate_range(state.archive.len(), m, cfg.retrieval_window);
    let references = if range.is_empty() {
        Vec::new()
    } else {
        let targets: Vec<ViewCloud> = views.iter().map(|v| view_cloud(&snapshot, v)).collect();
        let candidates: Vec<Candidate> = range
            .map(|i| Candidate {
                frame_id: i as u64,
                view: view_cloud(&snapshot, &state.archive[i].view),
            })
            .collect();
        retrieve_references(&targets, &candidates, &cfg.retrieval)?
    };

    let last = state.last_time();
    let times = (0..views.len())
        .map(|k| last + (k + 1) as f64 * cfg.frame_interval)
        .collect();
    let gen_req = GenerationRequest {
        views,
        times,
        preceding: preceding.iter().map(|f| f.rgb.clone()).collect(),
        refs: references
            .iter()
            .map(|&i| state.archive[i as usize].rgb.clone())
            .collect(),
        scene_preceding,
        scene_target: projections.iter().map(|p| p.rgb.clone()).collect(),
        instruction: req.instruction,
    };
    Ok((gen_req, references, projections))
}

/// Runs one iteration and returns the successor state.
///
/// Generated frames are fused with oracle depth and dynamic masks when the
/// session has a scene, and with projection depth (all-static) otherwise.
pub fn step(
    state: &SessionState,
    req: &StepRequest,
    generator: &dyn ClipGenerator,
) -> Result<(SessionState, StepOutput)> {
    validate_request(state, req)?;
    let (mut next, _) = apply_edits(state, &req.edits)?;
    let cells_before = next.memory.len();
    let (gen_req, references, projections) = build_request(&next, req)?;
    let clip = next.clip_index + 1;
    let frames = generator.generate(&gen_req, clip_seed(next.seed, clip))?;
    if frames.len() != gen_req.views.len() {
        return Err(Error::InvalidRequest(format!(
            "generator returned {} frames for {} views",
            frames.len(),
            gen_req.views.len()
        )));
    }
    let scene = next.scene.as_ref().map(|s| s.build()).transpose()?;
    let mut fused = Vec::with_capacity(frames.len());
    for (k, rgb) in frames.iter().enumerate() {
        let v = &gen_req.views[k];
        let t = gen_req.times[k];
        if rgb.dims() != (v.intrinsics.width, v.intrinsics.height)
            || rgb.data().iter().flatten().any(|x| !x.is_finite())
        {
            return Err(Error::InvalidRequest(format!("generated frame {k} is malformed")));
        }
        let mut f = Frame::new(rgb.clone(), v.pose, v.intrinsics)?.with_time(t);
        match &scene {
            Some(s) => {
                let (_, depth, mask) = s.render_gt(&v.pose, &v.intrinsics, t);
                f = f.with_depth(depth)?.with_mask(mask)?;
            }
            None => f = f.with_depth(projections[k].depth.clone())?,
        }
        fused.push(f);
    }
    next.memory.fuse_frames(fused.iter(), &next.config.fusion)?;
    for f in fused {
        next.archive.push(ArchiveFrame {
            clip,
            time: f.time,
            view: CameraView {
                pose: f.pose,
                intrinsics: f.intrinsics,
            },
            rgb: f.rgb,
            mask: f.dynamic_mask,
        });
    }
    next.clip_index = clip;
    let cells_after = next.memory.len();
    Ok((
        next,
        StepOutput {
            clip,
            frames,
            references,
            projections,
            cells_before,
            cells_after,
        },
    ))
}
