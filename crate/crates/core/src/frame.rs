//! One posed RGB-D observation as consumed by the map.

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, DepthMap, Pose, PATCH_COUNT, PATCH_GRID};

/// Per-pixel segmentation ids; `0` is background.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u32>,
}

impl MaskImage {
    pub fn new(height: usize, width: usize, data: Vec<u32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::MaskMismatch(format!("mask buffer has {} ids, expected {}x{}", data.len(), height, width)));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, id: u32) -> Self {
        Self { height, width, data: vec![id; height * width] }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.data[row * self.width + col]
    }
}

/// Posed observation: patch features on the 24x24 grid, full-resolution depth
/// and masks.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationFrame {
    pub frame_id: u64,
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
    pub feature_dim: usize,
    /// Row-major `PATCH_COUNT x feature_dim`.
    pub patch_features: Vec<f32>,
    pub depth: DepthMap,
    pub masks: MaskImage,
    /// Mask ids are simulator ground-truth instance ids.
    pub ground_truth_masks: bool,
}

impl ObservationFrame {
    #[inline]
    pub fn patch_feature(&self, patch: usize) -> &[f32] {
        &self.patch_features[patch * self.feature_dim..(patch + 1) * self.feature_dim]
    }

    /// Checks grid and buffer shapes against the map's configured dimension.
    pub fn validate(&self, expected_dim: usize) -> Result<()> {
        if self.feature_dim != expected_dim {
            return Err(Error::MalformedFrame(format!("feature dimension {} != configured {}", self.feature_dim, expected_dim)));
        }
        if self.patch_features.len() != PATCH_COUNT * self.feature_dim {
            return Err(Error::MalformedFrame(format!(
                "feature grid holds {} values, expected {PATCH_GRID}x{PATCH_GRID}x{}",
                self.patch_features.len(),
                self.feature_dim
            )));
        }
        self.intrinsics.validate()?;
        self.pose.validate()?;
        if self.depth.height != self.intrinsics.height || self.depth.width != self.intrinsics.width {
            return Err(Error::MalformedFrame(format!(
                "depth map {}x{} does not match image size {}x{}",
                self.depth.height, self.depth.width, self.intrinsics.height, self.intrinsics.width
            )));
        }
        if self.depth.data.len() != self.depth.height * self.depth.width {
            return Err(Error::MalformedFrame("depth buffer length mismatch".into()));
        }
        if self.masks.height != self.depth.height || self.masks.width != self.depth.width || self.masks.data.len() != self.masks.height * self.masks.width {
            return Err(Error::MaskMismatch(format!(
                "mask {}x{} does not match depth {}x{}",
                self.masks.height, self.masks.width, self.depth.height, self.depth.width
            )));
        }
        if self.depth.height < PATCH_GRID || self.depth.width < PATCH_GRID {
            return Err(Error::MalformedFrame(format!("image smaller than the {PATCH_GRID}x{PATCH_GRID} patch grid")));
        }
        Ok(())
    }
}
