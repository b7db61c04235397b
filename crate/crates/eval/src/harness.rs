//! Closed-loop, long-horizon, ablation and density harnesses.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use scenemem_core::memory::downsample;
use scenemem_core::render::render_projection;
use scenemem_core::synth::{generate_scene, out_and_back, SceneParams};
use scenemem_core::{CameraView, Intrinsics, PointCloud, RgbImage, Trajectory, Vec3};
use scenemem_generator::ClipGenerator;
use scenemem_session::{step, SceneSource, SessionConfig, SessionInit, SessionState, StepRequest};

use crate::error::{Error, Result};
use crate::metrics::{match_accuracy_with, psnr, ssim, MatchConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub psnr_c: f64,
    pub ssim_c: f64,
    pub match_acc: f64,
    /// Clips generated before the comparison.
    pub clip_count: usize,
    pub variant: String,
    pub seed: u64,
    pub config: serde_json::Value,
}

/// Scores `last` against `first` with every closed-loop metric.
pub fn score(first: &RgbImage, last: &RgbImage, cfg: &MatchConfig) -> Result<(f64, f64, f64)> {
    Ok((
        psnr(first, last)?,
        ssim(first, last)?,
        match_accuracy_with(first, last, cfg)?,
    ))
}

fn run_clips(state: &SessionState, generator: &dyn ClipGenerator, views: &[CameraView]) -> Result<SessionState> {
    let n = state.config.clip_len;
    if views.is_empty() || views.len() % n != 0 {
        return Err(Error::Config(format!(
            "{} views do not split into clips of {n}",
            views.len()
        )));
    }
    let mut s = state.clone();
    for chunk in views.chunks(n) {
        let req = StepRequest {
            trajectory: Trajectory::new(chunk.to_vec())?,
            instruction: 0,
            edits: vec![],
        };
        s = step(&s, &req, generator)?.0;
    }
    Ok(s)
}

/// Generates along a palindromic trajectory that starts at the session's
/// latest pose, then compares the final frame with the frame the loop
/// started from.
pub fn closed_loop_eval(
    state: &SessionState,
    generator: &dyn ClipGenerator,
    trajectory: &Trajectory,
    match_cfg: &MatchConfig,
) -> Result<(MetricsRecord, SessionState)> {
    if !trajectory.is_palindromic() {
        return Err(Error::NotPalindromic);
    }
    if !trajectory.first().pose.approx_eq(state.last_pose(), 1e-9) {
        return Err(Error::Config(
            "trajectory must start at the session's latest pose".into(),
        ));
    }
    let first = state.archive.last().expect("archive is never empty").rgb.clone();
    let next = run_clips(state, generator, &trajectory.views()[1..])?;
    let last = &next.archive.last().expect("archive is never empty").rgb;
    let (psnr_c, ssim_c, match_acc) = score(&first, last, match_cfg)?;
    Ok((
        MetricsRecord {
            psnr_c,
            ssim_c,
            match_acc,
            clip_count: next.clip_index - state.clip_index,
            variant: generator.name().to_string(),
            seed: state.seed,
            config: serde_json::to_value(&state.config)?,
        },
        next,
    ))
}

/// Repeats an out-and-back pair of clips `n_clips / 2` times and scores the
/// return to the session's initial image after every pair.
pub fn long_horizon_eval(
    state: &SessionState,
    generator: &dyn ClipGenerator,
    pair: &Trajectory,
    n_clips: usize,
    match_cfg: &MatchConfig,
) -> Result<Vec<MetricsRecord>> {
    if n_clips == 0 || n_clips % 2 != 0 {
        return Err(Error::Config(format!(
            "n_clips must be even and positive, got {n_clips}"
        )));
    }
    if pair.len() != 2 * state.config.clip_len + 1 {
        return Err(Error::Config(
            "a pair trajectory covers two clips plus its start".into(),
        ));
    }
    let initial = state.archive[0].rgb.clone();
    let mut s = state.clone();
    let mut out = Vec::new();
    for _ in 0..n_clips / 2 {
        let (mut rec, next) = closed_loop_eval(&s, generator, pair, match_cfg)?;
        let last = &next.archive.last().expect("archive is never empty").rgb;
        (rec.psnr_c, rec.ssim_c, rec.match_acc) = score(&initial, last, match_cfg)?;
        rec.clip_count = next.clip_index - state.clip_index;
        out.push(rec);
        s = next;
    }
    Ok(out)
}

/// Scene and camera setup shared by the seeded harnesses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub session: SessionConfig,
    pub scene: SceneParams,
    pub width: usize,
    pub height: usize,
    pub fov: f64,
    /// Sideways travel of the outbound clip, in meters.
    pub lateral: f64,
    /// Turn of the outbound clip, in radians.
    pub yaw: f64,
    /// Starting headings are drawn from `[-start_yaw, start_yaw]`.
    pub start_yaw: f64,
    pub matching: MatchConfig,
}

impl Default for Protocol {
    fn default() -> Self {
        Self {
            session: SessionConfig::default(),
            scene: SceneParams::default(),
            width: 128,
            height: 128,
            fov: std::f64::consts::FRAC_PI_2,
            lateral: 0.6,
            yaw: 0.5,
            start_yaw: std::f64::consts::PI,
            matching: MatchConfig::default(),
        }
    }
}

impl Protocol {
    pub fn intrinsics(&self) -> Result<Intrinsics> {
        Ok(Intrinsics::from_fov(self.width, self.height, self.fov)?)
    }

    /// A scene-initialized session and its out-and-back trajectory.
    pub fn setup(&self, seed: u64) -> Result<(SessionState, Trajectory)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let source = SceneSource {
            seed,
            params: self.scene.clone(),
        };
        let spec = source.build()?;
        let heading = rng.random_range(-self.start_yaw..=self.start_yaw);
        let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let start = spec.camera_pose(heading, Vec3::zeros());
        let intrinsics = self.intrinsics()?;
        let state = SessionState::create(
            SessionInit::Scene {
                source,
                view: Some(CameraView {
                    pose: start,
                    intrinsics,
                }),
                intrinsics,
            },
            SessionConfig {
                seed,
                ..self.session.clone()
            },
        )?;
        let poses = out_and_back(&start, sign * self.lateral, sign * self.yaw, self.session.clip_len);
        Ok((state, Trajectory::from_poses(poses, intrinsics)?))
    }
}

/// Closed-loop records for every (seed, generator) pair; seeds run in
/// parallel, each session sequentially.
pub fn closed_loop_suite(
    protocol: &Protocol,
    generators: &[&dyn ClipGenerator],
    seeds: &[u64],
) -> Result<Vec<MetricsRecord>> {
    let rows: Vec<Result<Vec<MetricsRecord>>> = seeds
        .par_iter()
        .map(|&seed| {
            let (state, traj) = protocol.setup(seed)?;
            generators
                .iter()
                .map(|g| Ok(closed_loop_eval(&state, *g, &traj, &protocol.matching)?.0))
                .collect()
        })
        .collect();
    Ok(rows
        .into_iter()
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect())
}

/// Long-horizon records for every (seed, generator) pair.
pub fn long_horizon_suite(
    protocol: &Protocol,
    generators: &[&dyn ClipGenerator],
    seeds: &[u64],
    n_clips: usize,
) -> Result<Vec<MetricsRecord>> {
    let rows: Vec<Result<Vec<MetricsRecord>>> = seeds
        .par_iter()
        .map(|&seed| {
            let (state, traj) = protocol.setup(seed)?;
            let mut out = Vec::new();
            for g in generators {
                out.extend(long_horizon_eval(&state, *g, &traj, n_clips, &protocol.matching)?);
            }
            Ok(out)
        })
        .collect();
    Ok(rows
        .into_iter()
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityRow {
    pub cube_side: f64,
    pub points: usize,
    /// Mean PSNR of the projections against the ground-truth views.
    pub psnr: f64,
}

/// Downsamples `cloud` at each side length, renders it at the given views
/// and scores the projections against `gt`.
pub fn density_sweep(
    cloud: &PointCloud,
    sides: &[f64],
    views: &[CameraView],
    gt: &[RgbImage],
    splat_radius: usize,
) -> Result<Vec<DensityRow>> {
    if views.len() != gt.len() || views.is_empty() {
        return Err(Error::Config("one ground-truth image per view".into()));
    }
    if sides.iter().any(|d| !(*d > 0.0)) || sides.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("cube sides must be positive and ascending".into()));
    }
    sides
        .iter()
        .map(|&d| {
            let c = downsample(cloud, d);
            let mut total = 0.0;
            for (v, g) in views.iter().zip(gt) {
                total += psnr(&render_projection(&c, &v.pose, &v.intrinsics, splat_radius).rgb, g)?;
            }
            Ok(DensityRow {
                cube_side: d,
                points: c.len(),
                psnr: total / views.len() as f64,
            })
        })
        .collect()
}

/// Density sweep over one scene: the cloud fuses ground-truth frames along
/// the protocol trajectory and is scored at those same views.
pub fn scene_density_sweep(protocol: &Protocol, seed: u64, sides: &[f64]) -> Result<Vec<DensityRow>> {
    let (state, traj) = protocol.setup(seed)?;
    let spec = generate_scene(seed, &protocol.scene)?;
    let frames: Vec<_> = traj.views().iter().map(|v| spec.render_frame(v, 0.0)).collect();
    let mut mem = scenemem_core::SpatialMemory::new(1e-4)?;
    mem.fuse_frames(frames.iter(), &state.config.fusion)?;
    let cloud = mem.snapshot();
    let gt: Vec<RgbImage> = frames.iter().map(|f| f.rgb.clone()).collect();
    density_sweep(&cloud, sides, traj.views(), &gt, state.config.splat_radius)
}

/// Records of one variant, optionally at one clip count.
pub fn by_variant<'a>(
    records: &'a [MetricsRecord],
    variant: &str,
    clip_count: Option<usize>,
) -> Vec<&'a MetricsRecord> {
    records
        .iter()
        .filter(|r| r.variant == variant && clip_count.is_none_or(|c| r.clip_count == c))
        .collect()
}
