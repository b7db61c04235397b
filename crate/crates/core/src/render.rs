//! Hard-splat z-buffer rendering of point clouds into projection images.
//!
//! Each point covers the pixels within `splat_radius` (Euclidean, in whole
//! pixels) of the pixel containing its projection. A pixel keeps the point
//! with the smallest camera depth; equal depths keep the lower point index.
//! Pixels no point reaches are invalid and hold zero color and zero depth.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{project_camera, Intrinsics, PointCloud, Pose, DEFAULT_EPSILON_Z};
use crate::raster::{DepthMap, Mask, RgbImage};

pub const DEFAULT_SPLAT_RADIUS: usize = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionImage {
    pub rgb: RgbImage,
    pub validity: Mask,
    /// Camera depth of the winning point; 0 where invalid.
    pub depth: DepthMap,
}

pub type ProjectionVideo = Vec<ProjectionImage>;

impl ProjectionImage {
    pub fn empty(width: usize, height: usize) -> Self {
        Self {
            rgb: RgbImage::black(width, height),
            validity: Mask::filled(width, height, false),
            depth: DepthMap::filled(width, height, 0.0),
        }
    }

    pub fn valid_count(&self) -> usize {
        self.validity.count()
    }
}

/// One camera of a trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraView {
    pub pose: Pose,
    pub intrinsics: Intrinsics,
}

/// Ordered camera views sharing one image size.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<CameraView>", into = "Vec<CameraView>")]
pub struct Trajectory {
    views: Vec<CameraView>,
}

impl TryFrom<Vec<CameraView>> for Trajectory {
    type Error = Error;

    fn try_from(views: Vec<CameraView>) -> Result<Self> {
        Trajectory::new(views)
    }
}

impl From<Trajectory> for Vec<CameraView> {
    fn from(t: Trajectory) -> Self {
        t.views
    }
}

impl Trajectory {
    pub fn new(views: Vec<CameraView>) -> Result<Self> {
        let Some(first) = views.first() else {
            return Err(Error::InvalidConfig("trajectory must have at least one view".into()));
        };
        let dims = (first.intrinsics.width, first.intrinsics.height);
        if views.iter().any(|v| (v.intrinsics.width, v.intrinsics.height) != dims) {
            return Err(Error::DimensionMismatch("trajectory views differ in image size".into()));
        }
        Ok(Self { views })
    }

    pub fn from_poses(poses: impl IntoIterator<Item = Pose>, intrinsics: Intrinsics) -> Result<Self> {
        Self::new(poses.into_iter().map(|pose| CameraView { pose, intrinsics }).collect())
    }

    pub fn views(&self) -> &[CameraView] {
        &self.views
    }

    pub fn len(&self) -> usize {
        self.views.len()
    }

    pub fn is_empty(&self) -> bool {
        self.views.is_empty()
    }

    pub fn first(&self) -> &CameraView {
        &self.views[0]
    }

    pub fn last(&self) -> &CameraView {
        self.views.last().expect("non-empty")
    }

    /// True when the view list reads the same forwards and backwards.
    pub fn is_palindromic(&self) -> bool {
        let n = self.views.len();
        (0..n / 2).all(|i| self.views[i] == self.views[n - 1 - i])
    }
}

/// Winning point index per pixel (`None` where no point lands) and its depth.
#[derive(Clone, Debug)]
pub struct ZBuffer {
    pub width: usize,
    pub height: usize,
    pub index: Vec<Option<usize>>,
    pub depth: Vec<f64>,
}

pub fn zbuffer(cloud: &PointCloud, cam: &Pose, intr: &Intrinsics, splat_radius: usize) -> ZBuffer {
    let (w, h) = (intr.width, intr.height);
    let mut index = vec![None; w * h];
    let mut depth = vec![f64::INFINITY; w * h];
    let r = splat_radius as isize;
    let offsets: Vec<(isize, isize)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|(dx, dy)| dx * dx + dy * dy <= r * r)
        .collect();
    for (i, p) in cloud.positions.iter().enumerate() {
        let Some(proj) = project_camera(&cam.apply_inverse(p), intr, DEFAULT_EPSILON_Z) else {
            continue;
        };
        let (u, v) = (proj.pixel.x.round(), proj.pixel.y.round());
        // Skip far-off-screen points before the cast.
        if u < -(r as f64) - 1.0 || v < -(r as f64) - 1.0 || u > (w as f64) + r as f64 || v > (h as f64) + r as f64 {
            continue;
        }
        let (cu, cv) = (u as isize, v as isize);
        for (dx, dy) in &offsets {
            let (x, y) = (cu + dx, cv + dy);
            if x < 0 || y < 0 || x >= w as isize || y >= h as isize {
                continue;
            }
            let k = y as usize * w + x as usize;
            if proj.depth < depth[k] {
                depth[k] = proj.depth;
                index[k] = Some(i);
            }
        }
    }
    ZBuffer {
        width: w,
        height: h,
        index,
        depth,
    }
}

pub fn render_projection(cloud: &PointCloud, cam: &Pose, intr: &Intrinsics, splat_radius: usize) -> ProjectionImage {
    let zb = zbuffer(cloud, cam, intr, splat_radius);
    let mut out = ProjectionImage::empty(intr.width, intr.height);
    for (k, idx) in zb.index.iter().enumerate() {
        if let Some(i) = idx {
            out.rgb.data_mut()[k] = cloud.colors[*i];
            out.validity.data_mut()[k] = true;
            out.depth.data_mut()[k] = zb.depth[k] as f32;
        }
    }
    out
}

/// Frame `i` is [`render_projection`] at `traj[i]`; frames render in parallel.
pub fn render_sequence(cloud: &PointCloud, traj: &Trajectory, splat_radius: usize) -> ProjectionVideo {
    traj.views()
        .par_iter()
        .map(|v| render_projection(cloud, &v.pose, &v.intrinsics, splat_radius))
        .collect()
}

/// The view-specific cloud: points of `cloud` that win at least one pixel
/// of a zero-radius render from `cam`, expressed in camera coordinates and
/// kept in their original order.
pub fn visible_cloud(cloud: &PointCloud, cam: &Pose, intr: &Intrinsics) -> PointCloud {
    let zb = zbuffer(cloud, cam, intr, 0);
    let mut seen = vec![false; cloud.len()];
    for i in zb.index.iter().flatten() {
        seen[*i] = true;
    }
    let mut out = PointCloud::default();
    let mut ids = Vec::new();
    for (i, keep) in seen.iter().enumerate() {
        if *keep {
            out.push(cam.apply_inverse(&cloud.positions[i]), cloud.colors[i]);
            if let Some(src) = &cloud.source_ids {
                ids.push(src[i]);
            }
        }
    }
    if cloud.source_ids.is_some() {
        out.source_ids = Some(ids);
    }
    out
}
