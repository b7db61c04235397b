//! Pinhole cameras, rigid poses and the point-cloud value type.
//!
//! Conventions used across the workspace:
//!
//! * camera frame is +Z forward, +X right, +Y down;
//! * pixel coordinates have their origin at the top-left pixel and pixel
//!   centers sit on integer coordinates, so pixel `(j, i)` covers
//!   `[j - 0.5, j + 0.5) x [i - 0.5, i + 0.5)`;
//! * a [`Pose`] maps camera coordinates to world coordinates
//!   (`x_world = R * x_cam + t`).

use nalgebra::{Matrix3, Rotation3, Unit, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Points with camera-frame depth at or below this are behind the camera.
pub const DEFAULT_EPSILON_Z: f64 = 1e-6;

const ORTHONORMAL_TOL: f64 = 1e-6;

/// Rigid transform from camera to world coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PoseRepr", into = "PoseRepr")]
pub struct Pose {
    rotation: Mat3,
    translation: Vec3,
}

#[derive(Serialize, Deserialize)]
struct PoseRepr {
    /// Row-major 3x3 rotation.
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

impl From<Pose> for PoseRepr {
    fn from(p: Pose) -> Self {
        let r = &p.rotation;
        PoseRepr {
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [p.translation.x, p.translation.y, p.translation.z],
        }
    }
}

impl TryFrom<PoseRepr> for Pose {
    type Error = Error;

    fn try_from(r: PoseRepr) -> Result<Self> {
        let rot = Mat3::from_fn(|i, j| r.rotation[i][j]);
        Pose::new(rot, Vec3::from(r.translation))
    }
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    /// Validated constructor: the rotation must be orthonormal with
    /// determinant +1 within 1e-6.
    pub fn new(rotation: Mat3, translation: Vec3) -> Result<Self> {
        let err = (rotation.transpose() * rotation - Mat3::identity()).abs().max();
        if !err.is_finite() || err > ORTHONORMAL_TOL {
            return Err(Error::InvalidPose(format!(
                "rotation is not orthonormal (max |R^T R - I| = {err:e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::InvalidPose(format!("rotation determinant {det} != 1")));
        }
        if !translation.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidPose("non-finite translation".into()));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
        }
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: t,
        }
    }

    /// Rotation of `angle` radians about `axis`, followed by translation `t`.
    pub fn from_axis_angle(axis: Vec3, angle: f64, t: Vec3) -> Self {
        let rot = Rotation3::from_axis_angle(&Unit::new_normalize(axis), angle);
        Self {
            rotation: *rot.matrix(),
            translation: t,
        }
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::from_axis_angle(Vec3::x(), angle, Vec3::zeros())
    }

    pub fn rot_y(angle: f64) -> Self {
        Self::from_axis_angle(Vec3::y(), angle, Vec3::zeros())
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::from_axis_angle(Vec3::z(), angle, Vec3::zeros())
    }

    /// Camera at `eye` looking towards `target`. `down` is the world direction
    /// that should appear as +Y (image down).
    pub fn look_at(eye: Vec3, target: Vec3, down: Vec3) -> Result<Self> {
        let forward = target - eye;
        if forward.norm() < 1e-12 {
            return Err(Error::InvalidPose("eye and target coincide".into()));
        }
        let z = forward.normalize();
        let x = down.cross(&z);
        if x.norm() < 1e-9 {
            return Err(Error::InvalidPose("down vector parallel to view direction".into()));
        }
        let x = x.normalize();
        let y = z.cross(&x);
        let rotation = Mat3::from_columns(&[x, y, z]);
        Ok(Self {
            rotation,
            translation: eye,
        })
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.rotation
    }

    pub fn translation(&self) -> &Vec3 {
        &self.translation
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vec3 {
        self.translation
    }

    pub fn apply(&self, x: &Vec3) -> Vec3 {
        self.rotation * x + self.translation
    }

    pub fn apply_inverse(&self, x: &Vec3) -> Vec3 {
        self.rotation.transpose() * (x - self.translation)
    }

    /// `compose(b)` maps `x` to `self(b(x))`.
    pub fn compose(&self, b: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * b.rotation,
            translation: self.rotation * b.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Projects the rotation back onto SO(3) with Gram-Schmidt on its columns.
    pub fn reorthonormalized(&self) -> Pose {
        let c0 = self.rotation.column(0).normalize();
        let c1 = self.rotation.column(1);
        let c1 = (c1 - c0 * c0.dot(&c1)).normalize();
        let c2 = c0.cross(&c1);
        Pose {
            rotation: Mat3::from_columns(&[c0, c1, c2]),
            translation: self.translation,
        }
    }

    /// `max |R^T R - I|`.
    pub fn orthonormality_error(&self) -> f64 {
        (self.rotation.transpose() * self.rotation - Mat3::identity())
            .abs()
            .max()
    }

    /// Translation distance and rotation angle (radians) between two poses.
    pub fn distance(&self, other: &Pose) -> (f64, f64) {
        let dt = (self.translation - other.translation).norm();
        let rel = self.rotation.transpose() * other.rotation;
        let cos = ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
        (dt, cos.acos())
    }

    pub fn approx_eq(&self, other: &Pose, tol: f64) -> bool {
        (self.rotation - other.rotation).abs().max() <= tol && (self.translation - other.translation).abs().max() <= tol
    }
}

pub fn compose(a: &Pose, b: &Pose) -> Pose {
    a.compose(b)
}

pub fn invert(p: &Pose) -> Pose {
    p.inverse()
}

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "IntrinsicsRepr", into = "IntrinsicsRepr")]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

#[derive(Serialize, Deserialize)]
struct IntrinsicsRepr {
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
    width: usize,
    height: usize,
}

impl From<Intrinsics> for IntrinsicsRepr {
    fn from(i: Intrinsics) -> Self {
        IntrinsicsRepr {
            fx: i.fx,
            fy: i.fy,
            cx: i.cx,
            cy: i.cy,
            width: i.width,
            height: i.height,
        }
    }
}

impl TryFrom<IntrinsicsRepr> for Intrinsics {
    type Error = Error;

    fn try_from(r: IntrinsicsRepr) -> Result<Self> {
        Intrinsics::new(r.fx, r.fy, r.cx, r.cy, r.width, r.height)
    }
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::InvalidIntrinsics(format!(
                "focal lengths must be positive (fx={fx}, fy={fy})"
            )));
        }
        if width == 0 || height == 0 {
            return Err(Error::InvalidIntrinsics("zero image size".into()));
        }
        if !(0.0..width as f64).contains(&cx) || !(0.0..height as f64).contains(&cy) {
            return Err(Error::InvalidIntrinsics(format!(
                "principal point ({cx}, {cy}) outside {width}x{height}"
            )));
        }
        Ok(Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// Square pixels, principal point at the image center, horizontal field
    /// of view `fov_x` radians.
    pub fn from_fov(width: usize, height: usize, fov_x: f64) -> Result<Self> {
        let f = width as f64 / 2.0 / (fov_x / 2.0).tan();
        Self::new(f, f, width as f64 / 2.0, height as f64 / 2.0, width, height)
    }

    /// Integer pixel containing `(u, v)`, if it lies inside the image.
    pub fn pixel_index(&self, u: f64, v: f64) -> Option<(usize, usize)> {
        let j = u.round();
        let i = v.round();
        if j < 0.0 || i < 0.0 || j >= self.width as f64 || i >= self.height as f64 {
            return None;
        }
        Some((j as usize, i as usize))
    }
}

/// A successful projection: continuous pixel coordinates and camera depth.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projection {
    pub pixel: Vec2,
    pub depth: f64,
}

pub fn project_camera(p_cam: &Vec3, intr: &Intrinsics, epsilon_z: f64) -> Option<Projection> {
    if !(p_cam.z > epsilon_z) {
        return None;
    }
    Some(Projection {
        pixel: Vec2::new(
            intr.fx * p_cam.x / p_cam.z + intr.cx,
            intr.fy * p_cam.y / p_cam.z + intr.cy,
        ),
        depth: p_cam.z,
    })
}

/// Projects a world point. `None` means the point is behind the camera
/// (camera depth <= [`DEFAULT_EPSILON_Z`]).
pub fn project(point: &Vec3, cam_pose: &Pose, intr: &Intrinsics) -> Option<Projection> {
    project_with_epsilon(point, cam_pose, intr, DEFAULT_EPSILON_Z)
}

pub fn project_with_epsilon(point: &Vec3, cam_pose: &Pose, intr: &Intrinsics, epsilon_z: f64) -> Option<Projection> {
    project_camera(&cam_pose.apply_inverse(point), intr, epsilon_z)
}

pub fn back_project_camera(pixel: &Vec2, depth: f64, intr: &Intrinsics) -> Result<Vec3> {
    if !(depth > 0.0) || !depth.is_finite() {
        return Err(Error::NonPositiveDepth(depth));
    }
    Ok(Vec3::new(
        (pixel.x - intr.cx) * depth / intr.fx,
        (pixel.y - intr.cy) * depth / intr.fy,
        depth,
    ))
}

/// Inverse of [`project`]: the world point seen at `pixel` with camera depth `depth`.
pub fn back_project(pixel: &Vec2, depth: f64, cam_pose: &Pose, intr: &Intrinsics) -> Result<Vec3> {
    Ok(cam_pose.apply(&back_project_camera(pixel, depth, intr)?))
}

/// Positions in meters, colors as linear RGB in `[0, 1]`, optional per-point
/// source frame ids.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub positions: Vec<Vec3>,
    pub colors: Vec<[f32; 3]>,
    pub source_ids: Option<Vec<u32>>,
}

impl PointCloud {
    pub fn new(positions: Vec<Vec3>, colors: Vec<[f32; 3]>) -> Result<Self> {
        let cloud = Self {
            positions,
            colors,
            source_ids: None,
        };
        cloud.validate()?;
        Ok(cloud)
    }

    pub fn with_source_ids(mut self, ids: Vec<u32>) -> Result<Self> {
        if ids.len() != self.positions.len() {
            return Err(Error::InvalidCloud(format!(
                "{} source ids for {} points",
                ids.len(),
                self.positions.len()
            )));
        }
        self.source_ids = Some(ids);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.positions.len() != self.colors.len() {
            return Err(Error::InvalidCloud(format!(
                "{} positions but {} colors",
                self.positions.len(),
                self.colors.len()
            )));
        }
        if let Some(ids) = &self.source_ids {
            if ids.len() != self.positions.len() {
                return Err(Error::InvalidCloud("source id count mismatch".into()));
            }
        }
        if let Some(c) = self.colors.iter().find(|c| c.iter().any(|v| !(0.0..=1.0).contains(v))) {
            return Err(Error::InvalidCloud(format!("color {c:?} outside [0, 1]")));
        }
        if self.positions.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::InvalidCloud("non-finite position".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn push(&mut self, position: Vec3, color: [f32; 3]) {
        self.positions.push(position);
        self.colors.push(color);
    }

    pub fn extend(&mut self, other: &PointCloud) {
        self.positions.extend_from_slice(&other.positions);
        self.colors.extend_from_slice(&other.colors);
        match (&mut self.source_ids, &other.source_ids) {
            (Some(a), Some(b)) => a.extend_from_slice(b),
            _ => self.source_ids = None,
        }
    }
}

/// Maps every position through `p`; colors and ids are carried over.
pub fn transform_cloud(c: &PointCloud, p: &Pose) -> PointCloud {
    PointCloud {
        positions: c.positions.iter().map(|x| p.apply(x)).collect(),
        colors: c.colors.clone(),
        source_ids: c.source_ids.clone(),
    }
}
