//! Voxel-hashed spatial memory.
//!
//! Each occupied cube of side `d` keeps the running sums of the positions
//! and colors that fell into it plus a point count. Centroids and mean colors
//! are derived on demand, which keeps merging associative: fusing a frame
//! first aggregates it into per-cell sums and then adds those sums to the
//! memory.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::geometry::{back_project, PointCloud, Vec2, Vec3, DEFAULT_EPSILON_Z};
use crate::primitive::Primitive;

pub const DEFAULT_CUBE_SIDE: f64 = 0.01;
pub const DEFAULT_MAX_RANGE: f64 = 100.0;

/// Integer voxel coordinates `floor(x / d)` per axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct VoxelKey(pub [i64; 3]);

pub fn voxel_key(point: &Vec3, d: f64) -> VoxelKey {
    debug_assert!(d > 0.0);
    VoxelKey([
        (point.x / d).floor() as i64,
        (point.y / d).floor() as i64,
        (point.z / d).floor() as i64,
    ])
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Cell {
    pub sum_position: [f64; 3],
    pub sum_color: [f64; 3],
    pub count: u64,
}

impl Cell {
    fn single(p: &Vec3, c: &[f32; 3]) -> Self {
        Self {
            sum_position: [p.x, p.y, p.z],
            sum_color: [c[0] as f64, c[1] as f64, c[2] as f64],
            count: 1,
        }
    }

    fn add_point(&mut self, p: &Vec3, c: &[f32; 3]) {
        for k in 0..3 {
            self.sum_position[k] += p[k];
            self.sum_color[k] += c[k] as f64;
        }
        self.count += 1;
    }

    fn merge(&mut self, other: &Cell) {
        for k in 0..3 {
            self.sum_position[k] += other.sum_position[k];
            self.sum_color[k] += other.sum_color[k];
        }
        self.count += other.count;
    }

    pub fn centroid(&self) -> Vec3 {
        let n = self.count as f64;
        Vec3::new(
            self.sum_position[0] / n,
            self.sum_position[1] / n,
            self.sum_position[2] / n,
        )
    }

    pub fn color(&self) -> [f32; 3] {
        let n = self.count as f64;
        self.sum_color.map(|s| ((s / n) as f32).clamp(0.0, 1.0))
    }
}

/// Knobs for turning posed RGB-D frames into memory points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Depths at or below this are skipped.
    pub epsilon_z: f64,
    /// Depths at or beyond this are skipped (background sentinel included).
    pub max_range: f64,
    /// Use every `stride`-th pixel along both axes.
    pub pixel_stride: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            epsilon_z: DEFAULT_EPSILON_Z,
            max_range: DEFAULT_MAX_RANGE,
            pixel_stride: 1,
        }
    }
}

/// Axis-aligned box in world meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Aabb {
    pub fn contains(&self, p: &Vec3) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.max[k])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Box(Aabb),
    Keys(Vec<[i64; 3]>),
}

impl Region {
    fn validate(&self) -> Result<()> {
        match self {
            Region::Box(b) => {
                if (0..3).any(|k| !(b.min[k] < b.max[k])) {
                    return Err(Error::InvalidEdit(format!("empty region box {:?}..{:?}", b.min, b.max)));
                }
            }
            Region::Keys(keys) => {
                if keys.is_empty() {
                    return Err(Error::InvalidEdit("empty voxel-key region".into()));
                }
            }
        }
        Ok(())
    }
}

/// A 3D-aware edit of the memory, applied before generation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EditOp {
    DeleteRegion { region: Region },
    AddPrimitive { primitive: Primitive },
    RecolorRegion { region: Region, color: [f32; 3] },
}

impl EditOp {
    pub fn validate(&self) -> Result<()> {
        match self {
            EditOp::DeleteRegion { region } => region.validate(),
            EditOp::AddPrimitive { primitive } => primitive.validate(),
            EditOp::RecolorRegion { region, color } => {
                region.validate()?;
                if color.iter().any(|v| !(0.0..=1.0).contains(v)) {
                    return Err(Error::InvalidEdit(format!("color {color:?} outside [0, 1]")));
                }
                Ok(())
            }
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct FuseStats {
    pub points_fused: usize,
    pub skipped_dynamic: usize,
    pub skipped_depth: usize,
    pub new_cells: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpatialMemory {
    cube_side: f64,
    cells: BTreeMap<VoxelKey, Cell>,
}

impl SpatialMemory {
    pub fn new(cube_side: f64) -> Result<Self> {
        if !(cube_side > 0.0 && cube_side.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "cube side must be positive, got {cube_side}"
            )));
        }
        Ok(Self {
            cube_side,
            cells: BTreeMap::new(),
        })
    }

    pub fn cube_side(&self) -> f64 {
        self.cube_side
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> impl Iterator<Item = (&VoxelKey, &Cell)> {
        self.cells.iter()
    }

    pub fn cell(&self, key: &VoxelKey) -> Option<&Cell> {
        self.cells.get(key)
    }

    /// Rebuilds a memory from raw cells (used by deserialization).
    pub fn from_cells(cube_side: f64, cells: impl IntoIterator<Item = (VoxelKey, Cell)>) -> Result<Self> {
        let mut mem = Self::new(cube_side)?;
        for (k, c) in cells {
            if c.count == 0 {
                return Err(Error::InvalidCloud(format!("cell {k:?} has zero count")));
            }
            mem.cells.insert(k, c);
        }
        Ok(mem)
    }

    fn merge_cells(&mut self, local: HashMap<VoxelKey, Cell>) -> usize {
        let mut entries: Vec<_> = local.into_iter().collect();
        entries.sort_unstable_by_key(|(k, _)| *k);
        let mut new_cells = 0;
        for (k, c) in entries {
            match self.cells.get_mut(&k) {
                Some(existing) => existing.merge(&c),
                None => {
                    self.cells.insert(k, c);
                    new_cells += 1;
                }
            }
        }
        new_cells
    }

    /// Adds raw points: aggregated per cell first, then merged.
    pub fn insert_points(&mut self, cloud: &PointCloud) -> usize {
        let mut local: HashMap<VoxelKey, Cell> = HashMap::new();
        for (p, c) in cloud.positions.iter().zip(&cloud.colors) {
            local
                .entry(voxel_key(p, self.cube_side))
                .and_modify(|cell| cell.add_point(p, c))
                .or_insert_with(|| Cell::single(p, c));
        }
        self.merge_cells(local)
    }

    /// Fuses posed RGB-D frames. Masked (dynamic) pixels and pixels with
    /// invalid depth contribute nothing; existing cells are never removed.
    /// All frames are validated before any of them is fused.
    pub fn fuse_frames<'a>(
        &mut self,
        frames: impl IntoIterator<Item = &'a Frame>,
        cfg: &FusionConfig,
    ) -> Result<FuseStats> {
        let frames: Vec<&Frame> = frames.into_iter().collect();
        for f in &frames {
            f.validate()?;
            if f.depth.is_none() {
                return Err(Error::DimensionMismatch("frame has no depth map".into()));
            }
        }
        let mut stats = FuseStats::default();
        for f in frames {
            let cloud = frame_points(f, cfg, &mut stats);
            stats.points_fused += cloud.len();
            stats.new_cells += self.insert_points(&cloud);
        }
        Ok(stats)
    }

    /// One point per cell (centroid, mean color), sorted by key.
    pub fn snapshot(&self) -> PointCloud {
        let mut cloud = PointCloud::default();
        for cell in self.cells.values() {
            cloud.push(cell.centroid(), cell.color());
        }
        cloud
    }

    pub fn apply_edit(&mut self, e: &EditOp) -> Result<usize> {
        e.validate()?;
        let d = self.cube_side;
        let affected = match e {
            EditOp::DeleteRegion { region } => {
                let before = self.cells.len();
                self.cells.retain(|k, c| !in_region(region, k, &c.centroid()));
                before - self.cells.len()
            }
            EditOp::RecolorRegion { region, color } => {
                let mut n = 0;
                for (k, c) in self.cells.iter_mut() {
                    if in_region(region, k, &c.centroid()) {
                        let count = c.count as f64;
                        c.sum_color = color.map(|v| v as f64 * count);
                        n += 1;
                    }
                }
                n
            }
            EditOp::AddPrimitive { primitive } => {
                // Spacing d/2 gives at least four samples per d^2 of surface.
                let points = primitive.sample_surface(d / 2.0);
                let colors = points.iter().map(|p| primitive.color_at(p)).collect();
                let cloud = PointCloud::new(points, colors)?;
                self.insert_points(&cloud)
            }
        };
        Ok(affected)
    }
}

fn in_region(region: &Region, key: &VoxelKey, centroid: &Vec3) -> bool {
    match region {
        Region::Box(b) => b.contains(centroid),
        Region::Keys(keys) => keys.contains(&key.0),
    }
}

/// Back-projects the static, valid-depth pixels of a frame to world points.
pub fn frame_points(f: &Frame, cfg: &FusionConfig, stats: &mut FuseStats) -> PointCloud {
    let depth = f.depth.as_ref().expect("frame without depth");
    let stride = cfg.pixel_stride.max(1);
    let mut cloud = PointCloud::default();
    for y in (0..f.rgb.height()).step_by(stride) {
        for x in (0..f.rgb.width()).step_by(stride) {
            if f.dynamic_mask.as_ref().is_some_and(|m| *m.get(x, y)) {
                stats.skipped_dynamic += 1;
                continue;
            }
            let z = *depth.get(x, y) as f64;
            if !(z > cfg.epsilon_z && z < cfg.max_range) {
                stats.skipped_depth += 1;
                continue;
            }
            let p = back_project(&Vec2::new(x as f64, y as f64), z, &f.pose, &f.intrinsics)
                .expect("depth checked positive");
            cloud.push(p, f.rgb.get(x, y).map(|v| v.clamp(0.0, 1.0)));
        }
    }
    cloud
}

/// One point per occupied cube of side `d`: centroid position and mean color,
/// sorted by voxel key.
pub fn downsample(cloud: &PointCloud, d: f64) -> PointCloud {
    let mut mem = SpatialMemory::new(d).expect("cube side must be positive");
    mem.insert_points(cloud);
    mem.snapshot()
}

/// Set of occupied voxel keys.
pub fn occupied_keys(cloud: &PointCloud, d: f64) -> BTreeSet<VoxelKey> {
    cloud.positions.iter().map(|p| voxel_key(p, d)).collect()
}
