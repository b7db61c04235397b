//! Geometry, voxel-hashed scene memory, point splatting, overlap-based
//! reference retrieval and procedural scenes.

pub mod error;
pub mod frame;
pub mod geometry;
pub mod io;
pub mod memory;
pub mod primitive;
pub mod raster;
pub mod render;
pub mod retrieval;
pub mod synth;

pub use error::{Error, Result};
pub use frame::Frame;
pub use geometry::{Intrinsics, PointCloud, Pose, Vec2, Vec3};
pub use memory::{EditOp, FusionConfig, Region, SpatialMemory};
pub use raster::{DepthMap, Mask, Raster, RgbImage};
pub use render::{CameraView, ProjectionImage, ProjectionVideo, Trajectory};
pub use retrieval::{Candidate, RetrievalConfig, ViewCloud};
