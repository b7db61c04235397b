use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Intrinsics, Pose};
use crate::raster::{DepthMap, Mask, RgbImage};

/// A posed RGB frame with optional depth and dynamic-entity mask.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub rgb: RgbImage,
    pub depth: Option<DepthMap>,
    /// True on pixels covered by dynamic entities.
    pub dynamic_mask: Option<Mask>,
    pub pose: Pose,
    pub intrinsics: Intrinsics,
    /// Capture time in seconds.
    pub time: f64,
}

impl Frame {
    pub fn new(rgb: RgbImage, pose: Pose, intrinsics: Intrinsics) -> Result<Self> {
        let f = Self {
            rgb,
            depth: None,
            dynamic_mask: None,
            pose,
            intrinsics,
            time: 0.0,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn with_depth(mut self, depth: DepthMap) -> Result<Self> {
        self.depth = Some(depth);
        self.validate()?;
        Ok(self)
    }

    pub fn with_mask(mut self, mask: Mask) -> Result<Self> {
        self.dynamic_mask = Some(mask);
        self.validate()?;
        Ok(self)
    }

    pub fn with_time(mut self, time: f64) -> Self {
        self.time = time;
        self
    }

    /// Checks that image, depth, mask and intrinsics agree on dimensions.
    pub fn validate(&self) -> Result<()> {
        let dims = self.rgb.dims();
        if dims != (self.intrinsics.width, self.intrinsics.height) {
            return Err(Error::DimensionMismatch(format!(
                "image {}x{} vs intrinsics {}x{}",
                dims.0, dims.1, self.intrinsics.width, self.intrinsics.height
            )));
        }
        if let Some(d) = &self.depth {
            if d.dims() != dims {
                return Err(Error::DimensionMismatch(format!(
                    "depth {:?} vs image {:?}",
                    d.dims(),
                    dims
                )));
            }
        }
        if let Some(m) = &self.dynamic_mask {
            if m.dims() != dims {
                return Err(Error::DimensionMismatch(format!(
                    "mask {:?} vs image {:?}",
                    m.dims(),
                    dims
                )));
            }
        }
        Ok(())
    }
}
