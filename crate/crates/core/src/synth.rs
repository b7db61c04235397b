//! Procedural rooms with ground-truth color, depth, poses and dynamic masks,
//! plus assembly of target / preceding / candidate training samples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::geometry::{Intrinsics, PointCloud, Pose, Vec3};
use crate::memory::{downsample, frame_points, FuseStats, FusionConfig, DEFAULT_CUBE_SIDE};
use crate::primitive::{Checker, Material, Primitive, Shape};
use crate::raster::{DepthMap, Mask, RgbImage};
use crate::render::{render_projection, visible_cloud, CameraView, ProjectionImage, Trajectory};
use crate::retrieval::{retrieve_references, Candidate, RetrievalConfig, ViewCloud};

/// Symbolic instruction vocabulary standing in for free-form text prompts.
pub const INSTRUCTIONS: [&str; 16] = [
    "pan-left",
    "pan-right",
    "orbit-left",
    "orbit-right",
    "dolly-in",
    "dolly-out",
    "truck-left",
    "truck-right",
    "tilt-up",
    "tilt-down",
    "enter-door",
    "look-around",
    "follow-object",
    "hold-still",
    "return-home",
    "survey-room",
];

/// Depth written for pixels whose ray leaves the scene.
pub const BACKGROUND_DEPTH: f32 = crate::memory::DEFAULT_MAX_RANGE as f32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    /// Room extents (x, y, z) in meters, centered on the origin.
    pub room_size: [f64; 3],
    pub min_static: usize,
    pub max_static: usize,
    pub num_dynamic: usize,
    /// Render the room's walls, floor and ceiling.
    pub walls: bool,
    /// Radius around the vertical axis kept free of primitives for the camera.
    pub camera_clearance: f64,
    /// Seconds covered by dynamic-entity paths.
    pub duration: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            room_size: [6.0, 3.0, 6.0],
            min_static: 3,
            max_static: 6,
            num_dynamic: 0,
            walls: true,
            camera_clearance: 1.2,
            duration: 10.0,
        }
    }
}

impl SceneParams {
    pub fn validate(&self) -> Result<()> {
        if !self.room_size.iter().all(|s| *s > 0.0 && s.is_finite()) {
            return Err(Error::InvalidScene(format!("degenerate room {:?}", self.room_size)));
        }
        let half_xz = self.room_size[0].min(self.room_size[2]) / 2.0;
        if half_xz - self.camera_clearance < 0.8 || self.room_size[1] < 1.5 {
            return Err(Error::InvalidScene(format!(
                "room {:?} too small for camera clearance {}",
                self.room_size, self.camera_clearance
            )));
        }
        if self.min_static == 0 || self.min_static > self.max_static {
            return Err(Error::InvalidScene("need 1 <= min_static <= max_static".into()));
        }
        if !(self.duration > 0.0) {
            return Err(Error::InvalidScene("duration must be positive".into()));
        }
        Ok(())
    }
}

/// A primitive moving back and forth between two centers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicEntity {
    pub primitive: Primitive,
    pub start: [f64; 3],
    pub end: [f64; 3],
    /// Seconds for a full start -> end -> start cycle.
    pub period: f64,
}

impl DynamicEntity {
    pub fn center_at(&self, time: f64) -> Vec3 {
        let phase = (time / self.period).rem_euclid(1.0);
        let s = if phase < 0.5 { 2.0 * phase } else { 2.0 - 2.0 * phase };
        let (a, b) = (Vec3::from(self.start), Vec3::from(self.end));
        a + (b - a) * s
    }

    pub fn primitive_at(&self, time: f64) -> Primitive {
        let mut p = self.primitive.clone();
        let rot = *p.pose.rotation();
        p.pose = Pose::new(rot, self.center_at(time)).expect("rotation already valid");
        p
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub seed: u64,
    pub room_min: [f64; 3],
    pub room_max: [f64; 3],
    pub walls: bool,
    /// Materials of the faces -x, +x, -y, +y, -z, +z.
    pub wall_materials: Vec<Material>,
    pub background: [f32; 3],
    pub statics: Vec<Primitive>,
    pub dynamics: Vec<DynamicEntity>,
    pub instruction_id: u32,
    pub duration: f64,
}

fn random_color(rng: &mut impl Rng) -> [f32; 3] {
    [
        rng.random_range(0.1..0.95),
        rng.random_range(0.1..0.95),
        rng.random_range(0.1..0.95),
    ]
}

fn random_material(rng: &mut impl Rng, cell: (f64, f64)) -> Material {
    let color = random_color(rng);
    let checker = rng.random_bool(0.7).then(|| Checker {
        color: color.map(|c| (c * rng.random_range(0.35..0.75)).clamp(0.0, 1.0)),
        cell: rng.random_range(cell.0..cell.1),
    });
    Material { color, checker }
}

/// Random point in the room's horizontal plane outside the camera clearance.
fn ring_point(rng: &mut impl Rng, half: [f64; 3], clearance: f64, margin: f64) -> (f64, f64) {
    loop {
        let x = rng.random_range(-half[0] + margin..half[0] - margin);
        let z = rng.random_range(-half[2] + margin..half[2] - margin);
        if (x * x + z * z).sqrt() >= clearance + margin {
            return (x, z);
        }
    }
}

/// Deterministic in `seed`. World +Y points down; the floor is at
/// `y = room_size[1] / 2`.
pub fn generate_scene(seed: u64, params: &SceneParams) -> Result<SceneSpec> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = params.room_size.map(|s| s / 2.0);
    let wall_materials = (0..6).map(|_| random_material(&mut rng, (0.3, 0.8))).collect();
    let n_static = rng.random_range(params.min_static..=params.max_static);
    let mut statics = Vec::with_capacity(n_static);
    for _ in 0..n_static {
        let material = random_material(&mut rng, (0.08, 0.25));
        let prim = if rng.random_bool(0.6) {
            let size = [
                rng.random_range(0.3..0.9),
                rng.random_range(0.3..1.2f64).min(params.room_size[1] * 0.8),
                rng.random_range(0.3..0.9),
            ];
            let margin = size[0].max(size[2]) * 0.75;
            let (x, z) = ring_point(&mut rng, half, params.camera_clearance, margin);
            let yaw = rng.random_range(0.0..std::f64::consts::PI);
            let y = half[1] - size[1] / 2.0;
            Primitive::new(
                Shape::Box { size },
                Pose::from_axis_angle(Vec3::y(), yaw, Vec3::new(x, y, z)),
                material,
            )?
        } else {
            let radius = rng.random_range(0.15..0.45f64);
            let (x, z) = ring_point(&mut rng, half, params.camera_clearance, radius);
            let y = if rng.random_bool(0.5) {
                half[1] - radius
            } else {
                rng.random_range(-half[1] + radius..half[1] - radius)
            };
            Primitive::new(
                Shape::Sphere { radius },
                Pose::from_translation(Vec3::new(x, y, z)),
                material,
            )?
        };
        statics.push(prim);
    }
    let mut dynamics = Vec::with_capacity(params.num_dynamic);
    for _ in 0..params.num_dynamic {
        let radius = rng.random_range(0.15..0.3f64);
        let material = random_material(&mut rng, (0.05, 0.15));
        // Move along one room axis on a line that stays outside the clearance.
        let lane = rng.random_range(params.camera_clearance + radius..half[2].min(half[0]) - radius);
        let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        let along_x = rng.random_bool(0.5);
        let span = if along_x { half[0] } else { half[2] } - radius;
        let y = half[1] - radius;
        let (start, end) = if along_x {
            ([-span, y, side * lane], [span, y, side * lane])
        } else {
            ([side * lane, y, -span], [side * lane, y, span])
        };
        dynamics.push(DynamicEntity {
            primitive: Primitive::new(
                Shape::Sphere { radius },
                Pose::from_translation(Vec3::from(start)),
                material,
            )?,
            start,
            end,
            period: rng.random_range(params.duration / 3.0..params.duration),
        });
    }
    Ok(SceneSpec {
        seed,
        room_min: half.map(|h| -h),
        room_max: half,
        walls: params.walls,
        wall_materials,
        background: [0.0, 0.0, 0.0],
        statics,
        dynamics,
        instruction_id: rng.random_range(0..INSTRUCTIONS.len() as u32),
        duration: params.duration,
    })
}

impl SceneSpec {
    /// True when every primitive's bounds stay inside the room at `time`.
    pub fn contained_at(&self, time: f64) -> bool {
        let inside = |p: &Primitive| {
            let (lo, hi) = p.world_bounds();
            (0..3).all(|k| lo[k] >= self.room_min[k] - 1e-9 && hi[k] <= self.room_max[k] + 1e-9)
        };
        self.statics.iter().all(inside) && self.dynamics.iter().all(|d| inside(&d.primitive_at(time)))
    }

    pub fn has_dynamics(&self) -> bool {
        !self.dynamics.is_empty()
    }

    /// A camera pose near the room center looking along +Z, rotated by `yaw`
    /// about the vertical axis and shifted by `offset`.
    pub fn camera_pose(&self, yaw: f64, offset: Vec3) -> Pose {
        Pose::from_axis_angle(Vec3::y(), yaw, offset)
    }

    fn wall_hit(&self, origin: &Vec3, dir: &Vec3) -> Option<(f64, [f32; 3])> {
        if !self.walls {
            return None;
        }
        let mut best: Option<(f64, usize)> = None;
        for k in 0..3 {
            if dir[k].abs() < 1e-15 {
                continue;
            }
            let (bound, face) = if dir[k] > 0.0 {
                (self.room_max[k], 2 * k + 1)
            } else {
                (self.room_min[k], 2 * k)
            };
            let s = (bound - origin[k]) / dir[k];
            if s > 0.0 && best.is_none_or(|(b, _)| s < b) {
                best = Some((s, face));
            }
        }
        let (s, face) = best?;
        let p = origin + dir * s;
        Some((s, self.wall_materials[face].color_at(&p)))
    }

    /// Ground-truth color, camera depth and dynamic mask at `time`.
    pub fn render_gt(&self, cam: &Pose, intr: &Intrinsics, time: f64) -> (RgbImage, DepthMap, Mask) {
        let dynamics: Vec<Primitive> = self.dynamics.iter().map(|d| d.primitive_at(time)).collect();
        let (w, h) = (intr.width, intr.height);
        let origin = cam.center();
        let rows: Vec<Vec<([f32; 3], f32, bool)>> = (0..h)
            .into_par_iter()
            .map(|y| {
                (0..w)
                    .map(|x| {
                        let ray_cam =
                            Vec3::new((x as f64 - intr.cx) / intr.fx, (y as f64 - intr.cy) / intr.fy, 1.0).normalize();
                        let dir = cam.rotation() * ray_cam;
                        let mut best: Option<(f64, [f32; 3], bool)> = None;
                        for (prims, dynamic) in [(&self.statics, false), (&dynamics, true)] {
                            for p in prims.iter() {
                                if let Some(hit) = p.intersect(&origin, &dir, 1e-9) {
                                    if best.is_none_or(|b| hit.distance < b.0) {
                                        best = Some((hit.distance, p.color_at(&hit.point), dynamic));
                                    }
                                }
                            }
                        }
                        if let Some((s, c)) = self.wall_hit(&origin, &dir) {
                            if best.is_none_or(|b| s < b.0) {
                                best = Some((s, c, false));
                            }
                        }
                        match best {
                            Some((s, c, dynamic)) => (c, (s * ray_cam.z) as f32, dynamic),
                            None => (self.background, BACKGROUND_DEPTH, false),
                        }
                    })
                    .collect()
            })
            .collect();
        let flat: Vec<_> = rows.into_iter().flatten().collect();
        let rgb = RgbImage::from_vec(w, h, flat.iter().map(|v| v.0).collect()).expect("sized");
        let depth = DepthMap::from_vec(w, h, flat.iter().map(|v| v.1).collect()).expect("sized");
        let mask = Mask::from_vec(w, h, flat.iter().map(|v| v.2).collect()).expect("sized");
        (rgb, depth, mask)
    }

    /// Ground-truth frame at a camera view.
    pub fn render_frame(&self, view: &CameraView, time: f64) -> Frame {
        let (rgb, depth, mask) = self.render_gt(&view.pose, &view.intrinsics, time);
        Frame {
            rgb,
            depth: Some(depth),
            dynamic_mask: Some(mask),
            pose: view.pose,
            intrinsics: view.intrinsics,
            time,
        }
    }
}

/// Camera poses sweeping sideways from `start` by `lateral` meters (along
/// the camera's +X) while turning by `yaw` radians, over `n` poses; the
/// first pose is `start` itself.
pub fn sweep(start: &Pose, lateral: f64, yaw: f64, n: usize) -> Vec<Pose> {
    let steps = (n.max(2) - 1) as f64;
    (0..n)
        .map(|k| {
            let s = k as f64 / steps;
            let local = Pose::from_axis_angle(Vec3::y(), yaw * s, Vec3::new(lateral * s, 0.0, 0.0));
            start.compose(&local)
        })
        .collect()
}

/// `[p0, p1, ..., pn, ..., p1, p0]` from an outbound sweep of `n + 1` poses.
pub fn out_and_back(start: &Pose, lateral: f64, yaw: f64, n: usize) -> Vec<Pose> {
    let out = sweep(start, lateral, yaw, n + 1);
    let mut all = out.clone();
    all.extend(out.iter().rev().skip(1));
    all
}

/// Frame index sets of one split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoSplit {
    pub target: Vec<usize>,
    pub preceding: Vec<usize>,
    pub candidates: Vec<usize>,
}

/// Split with the target window starting at `start` (which must be >= `m`).
pub fn split_at(len: usize, n: usize, m: usize, start: usize) -> Result<VideoSplit> {
    if n == 0 || len < n + m || start < m || start + n > len {
        return Err(Error::InvalidConfig(format!(
            "cannot place a {n}-frame target after {m} preceding frames at {start} in {len} frames"
        )));
    }
    let target: Vec<usize> = (start..start + n).collect();
    let preceding: Vec<usize> = (start - m..start).collect();
    let candidates = (0..start - m).chain(start + n..len).collect();
    Ok(VideoSplit {
        target,
        preceding,
        candidates,
    })
}

/// Random split: target start drawn uniformly from `m ..= len - n`.
pub fn split_video(len: usize, n: usize, m: usize, rng: &mut impl Rng) -> Result<VideoSplit> {
    if n == 0 || len < n + m {
        return Err(Error::InvalidConfig(format!(
            "video of {len} frames is shorter than n + m = {}",
            n + m
        )));
    }
    let start = rng.random_range(m..=len - n);
    split_at(len, n, m, start)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub target_len: usize,
    pub preceding_len: usize,
    pub retrieval: RetrievalConfig,
    pub cube_side: f64,
    pub splat_radius: usize,
    /// Build the scene cloud from all candidate frames instead of one.
    pub fuse_all_candidates: bool,
    /// Seconds between consecutive frames.
    pub frame_interval: f64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            target_len: 9,
            preceding_len: 3,
            retrieval: RetrievalConfig::default(),
            cube_side: DEFAULT_CUBE_SIDE,
            splat_radius: crate::render::DEFAULT_SPLAT_RADIUS,
            fuse_all_candidates: false,
            frame_interval: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    /// Every ground-truth frame of the source video, in time order.
    pub frames: Vec<Frame>,
    pub split: VideoSplit,
    /// Candidate frames used to build the scene cloud.
    pub cloud_sources: Vec<usize>,
    /// Static-only, voxel-downsampled scene cloud in world coordinates.
    pub scene_cloud: PointCloud,
    /// Scene projection for every frame of the video.
    pub projections: Vec<ProjectionImage>,
    /// Retrieved reference frames (indices into `frames`).
    pub references: Vec<usize>,
    pub instruction_id: u32,
}

impl TrainingSample {
    pub fn target_frames(&self) -> impl Iterator<Item = &Frame> {
        self.split.target.iter().map(|&i| &self.frames[i])
    }

    pub fn preceding_frames(&self) -> impl Iterator<Item = &Frame> {
        self.split.preceding.iter().map(|&i| &self.frames[i])
    }

    pub fn reference_frames(&self) -> impl Iterator<Item = &Frame> {
        self.references.iter().map(|&i| &self.frames[i])
    }
}

/// Renders the ground-truth video, splits it, builds the static scene cloud
/// from a random candidate frame, renders every frame's scene projection and
/// retrieves reference frames.
pub fn assemble_sample(
    scene: &SceneSpec,
    trajectory: &Trajectory,
    cfg: &SampleConfig,
    rng: &mut impl Rng,
) -> Result<TrainingSample> {
    let (n, m) = (cfg.target_len, cfg.preceding_len);
    let split = split_video(trajectory.len(), n, m, rng)?;
    let frames: Vec<Frame> = trajectory
        .views()
        .par_iter()
        .enumerate()
        .map(|(k, v)| scene.render_frame(v, k as f64 * cfg.frame_interval))
        .collect();

    let cloud_sources: Vec<usize> = if split.candidates.is_empty() {
        Vec::new()
    } else if cfg.fuse_all_candidates {
        split.candidates.clone()
    } else {
        vec![split.candidates[rng.random_range(0..split.candidates.len())]]
    };
    let fusion = FusionConfig::default();
    let mut raw = PointCloud::default();
    let mut stats = FuseStats::default();
    for &i in &cloud_sources {
        raw.extend(&frame_points(&frames[i], &fusion, &mut stats));
    }
    let scene_cloud = downsample(&raw, cfg.cube_side);

    let projections: Vec<ProjectionImage> = frames
        .par_iter()
        .map(|f| render_projection(&scene_cloud, &f.pose, &f.intrinsics, cfg.splat_radius))
        .collect();

    let view = |i: usize| ViewCloud {
        pose: frames[i].pose,
        cloud: visible_cloud(&scene_cloud, &frames[i].pose, &frames[i].intrinsics),
    };
    let targets: Vec<ViewCloud> = split.target.iter().map(|&i| view(i)).collect();
    let candidates: Vec<Candidate> = split
        .candidates
        .iter()
        .map(|&i| Candidate {
            frame_id: i as u64,
            view: view(i),
        })
        .collect();
    let references = retrieve_references(&targets, &candidates, &cfg.retrieval)?
        .into_iter()
        .map(|id| id as usize)
        .collect();

    Ok(TrainingSample {
        frames,
        split,
        cloud_sources,
        scene_cloud,
        projections,
        references,
        instruction_id: scene.instruction_id,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::memory::SpatialMemory;
    use std::collections::BTreeSet;

    fn intr() -> Intrinsics {
        Intrinsics::from_fov(32, 32, 1.2).unwrap()
    }

    #[test]
    fn scenes_are_deterministic_and_contained() {
        let params = SceneParams {
            num_dynamic: 2,
            ..SceneParams::default()
        };
        assert_eq!(generate_scene(5, &params).unwrap(), generate_scene(5, &params).unwrap());
        for seed in 0..100 {
            let s = generate_scene(seed, &params).unwrap();
            assert!(!s.statics.is_empty());
            for t in [0.0, 1.3, 4.0, 7.7, 10.0] {
                assert!(s.contained_at(t), "seed {seed} t {t}");
            }
        }
        let none = generate_scene(1, &SceneParams::default()).unwrap();
        assert!(none.dynamics.is_empty());
    }

    #[test]
    fn degenerate_params_rejected() {
        let bad = SceneParams {
            room_size: [0.0, 3.0, 6.0],
            ..SceneParams::default()
        };
        assert!(generate_scene(0, &bad).is_err());
        let tiny = SceneParams {
            room_size: [2.0, 3.0, 2.0],
            ..SceneParams::default()
        };
        assert!(generate_scene(0, &tiny).is_err());
    }

    #[test]
    fn empty_view_renders_background() {
        let mut s = generate_scene(3, &SceneParams::default()).unwrap();
        s.walls = false;
        s.statics.clear();
        let (rgb, depth, mask) = s.render_gt(&Pose::identity(), &intr(), 0.0);
        assert!(rgb.data().iter().all(|c| *c == s.background));
        assert!(depth.data().iter().all(|d| *d == BACKGROUND_DEPTH));
        assert_eq!(mask.count(), 0);
    }

    #[test]
    fn box_front_face_depth() {
        let mut s = generate_scene(3, &SceneParams::default()).unwrap();
        s.walls = false;
        s.statics = vec![Primitive::new(
            Shape::Box { size: [1.0, 1.0, 1.0] },
            Pose::from_translation(Vec3::new(0.0, 0.0, 2.5)),
            Material::solid([1.0, 0.0, 0.0]),
        )
        .unwrap()];
        let i = intr();
        let (rgb, depth, _) = s.render_gt(&Pose::identity(), &i, 0.0);
        // Pixels whose rays hit the front face z = 2.
        let mut n = 0;
        for y in 0..32 {
            for x in 0..32 {
                let (u, v) = ((x as f64 - i.cx) / i.fx, (y as f64 - i.cy) / i.fy);
                if (2.0 * u).abs() < 0.49 && (2.0 * v).abs() < 0.49 {
                    assert!((*depth.get(x, y) - 2.0).abs() < 1e-5);
                    assert_eq!(*rgb.get(x, y), [1.0, 0.0, 0.0]);
                    n += 1;
                }
            }
        }
        assert!(n > 0);
    }

    #[test]
    fn dynamic_mask_tracks_frustum() {
        let mut s = generate_scene(3, &SceneParams::default()).unwrap();
        s.statics.clear();
        s.dynamics = vec![DynamicEntity {
            primitive: Primitive::new(
                Shape::Sphere { radius: 0.2 },
                Pose::identity(),
                Material::solid([0.0, 0.0, 1.0]),
            )
            .unwrap(),
            start: [-2.5, 0.0, 2.0],
            end: [2.5, 0.0, 2.0],
            period: 10.0,
        }];
        let i = intr();
        let half_fov = (i.cx / i.fx).atan();
        for step in 0..=10 {
            let t = step as f64 * 0.5;
            let c = s.dynamics[0].center_at(t);
            let (_, _, mask) = s.render_gt(&Pose::identity(), &i, t);
            // Center well inside / well outside the horizontal frustum.
            let angle = (c.x / c.z).atan().abs();
            if angle < half_fov - 0.15 {
                assert!(mask.count() > 0, "t {t}");
            } else if angle > half_fov + 0.2 {
                assert_eq!(mask.count(), 0, "t {t}");
            }
        }
    }

    #[test]
    fn split_examples() {
        let s = split_at(10, 3, 2, 5).unwrap();
        assert_eq!(s.target, vec![5, 6, 7]);
        assert_eq!(s.preceding, vec![3, 4]);
        assert_eq!(s.candidates, vec![0, 1, 2, 8, 9]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = split_video(5, 3, 2, &mut rng).unwrap();
        assert!(s.candidates.is_empty());
        assert!(split_video(4, 3, 2, &mut rng).is_err());
        for _ in 0..1000 {
            let len = rng.random_range(5..30);
            let s = split_video(len, 3, 2, &mut rng).unwrap();
            let mut all: Vec<usize> = s
                .target
                .iter()
                .chain(&s.preceding)
                .chain(&s.candidates)
                .copied()
                .collect();
            all.sort();
            assert_eq!(all, (0..len).collect::<Vec<_>>());
            assert_eq!(*s.preceding.last().unwrap() + 1, s.target[0]);
        }
    }

    fn small_cfg() -> SampleConfig {
        SampleConfig {
            target_len: 3,
            preceding_len: 2,
            retrieval: RetrievalConfig {
                max_refs: 2,
                stride: 2,
                epsilon: 0.05,
                iou_cube_side: 0.05,
            },
            cube_side: 0.05,
            ..SampleConfig::default()
        }
    }

    #[test]
    fn static_sample_cloud_is_voxelized_source_frame() {
        let scene = generate_scene(11, &SceneParams::default()).unwrap();
        let poses = out_and_back(&Pose::identity(), 0.6, 0.3, 4);
        let traj = Trajectory::from_poses(poses, intr()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let cfg = small_cfg();
        let sample = assemble_sample(&scene, &traj, &cfg, &mut rng).unwrap();
        assert_eq!(sample.cloud_sources.len(), 1);
        let src = &sample.frames[sample.cloud_sources[0]];
        let mut mem = SpatialMemory::new(cfg.cube_side).unwrap();
        mem.fuse_frames([src], &FusionConfig::default()).unwrap();
        assert_eq!(sample.scene_cloud, mem.snapshot());
        for p in &sample.projections {
            for (c, v) in p.rgb.data().iter().zip(p.validity.data()) {
                if !v {
                    assert_eq!(*c, [0.0; 3]);
                }
            }
        }
        let cands: BTreeSet<usize> = sample.split.candidates.iter().copied().collect();
        assert!(sample.references.iter().all(|r| cands.contains(r)));

        let mut rng2 = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(assemble_sample(&scene, &traj, &cfg, &mut rng2).unwrap(), sample);
    }

    #[test]
    fn no_candidates_means_no_references() {
        let scene = generate_scene(2, &SceneParams::default()).unwrap();
        let traj = Trajectory::from_poses(sweep(&Pose::identity(), 0.4, 0.0, 5), intr()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sample = assemble_sample(&scene, &traj, &small_cfg(), &mut rng).unwrap();
        assert!(sample.split.candidates.is_empty());
        assert!(sample.references.is_empty());
        assert!(sample.scene_cloud.is_empty());
    }

    #[test]
    fn dynamic_pixels_never_reach_scene_cloud() {
        let params = SceneParams {
            num_dynamic: 3,
            ..SceneParams::default()
        };
        let scene = generate_scene(4, &params).unwrap();
        let traj = Trajectory::from_poses(out_and_back(&Pose::identity(), 0.5, 0.4, 5), intr()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut cfg = small_cfg();
        cfg.fuse_all_candidates = true;
        let sample = assemble_sample(&scene, &traj, &cfg, &mut rng).unwrap();
        // Every cloud cell must come from an unmasked pixel of a source frame.
        let mut allowed = BTreeSet::new();
        for &i in &sample.cloud_sources {
            let f = &sample.frames[i];
            let mut st = FuseStats::default();
            for p in frame_points(f, &FusionConfig::default(), &mut st).positions {
                allowed.insert(crate::memory::voxel_key(&p, cfg.cube_side));
            }
        }
        for p in &sample.scene_cloud.positions {
            assert!(allowed.contains(&crate::memory::voxel_key(p, cfg.cube_side)));
        }
    }

    #[test]
    fn palindromic_static_video_closes() {
        let scene = generate_scene(8, &SceneParams::default()).unwrap();
        let poses = out_and_back(&Pose::identity(), 0.7, -0.5, 6);
        let traj = Trajectory::from_poses(poses, intr()).unwrap();
        assert!(traj.is_palindromic());
        let first = scene.render_frame(traj.first(), 0.0);
        let last = scene.render_frame(traj.last(), 1.2);
        assert_eq!(first.rgb, last.rgb);
        assert_eq!(first.depth, last.depth);
    }
}
