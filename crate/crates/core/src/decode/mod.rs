//! From a [`MapStack`] to per-person 2D and 3D poses.
//!
//! The pipeline is [`nms_peaks`] → [`group_joints`] → per person
//! [`ReadoutContext::readout_full_pose`] then [`ReadoutContext::refine_pose`].
//! [`absolute_localization`] turns a decoded pelvis-relative pose and its 2D
//! detections into a camera-space translation.

mod group;
mod localize;
mod nms;
mod readout;

use alloc::vec::Vec;

use crate::error::Result;
use crate::maps::MapStack;
use crate::skeleton::{JointId, KinematicTree, Pose};

pub use group::{group_joints, tag_distance, PersonHypothesis};
pub use localize::{absolute_localization, Localization};
pub use nms::nms_peaks;
pub use readout::{Provenance, ReadoutContext, ReadoutFailure};

/// A heatmap peak.
#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub joint: JointId,
    pub x: usize,
    pub y: usize,
    pub score: f64,
    /// Embedding read at the peak, one value per scale.
    pub tag: Vec<f64>,
}

impl Detection {
    pub fn cell_distance(&self, x: usize, y: usize) -> f64 {
        let dx = self.x as f64 - x as f64;
        let dy = self.y as f64 - y as f64;
        libm::sqrt(dx * dx + dy * dy)
    }
}

/// Thresholds for detection, grouping and readout validity. Defaults are
/// tuned for synthetic maps, not taken from a trained model.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default))]
pub struct ReadoutConfig {
    /// Minimum heatmap value for a detection and for a valid readout.
    pub tau_c: f64,
    /// Minimum distance (cells) between a readout cell and other persons' detections.
    pub tau_d: f64,
    /// Maximum tag distance for joining a person.
    pub tau_ae: f64,
    /// Accepted relative deviation from the mean bone length.
    pub limb_tolerance: f64,
    /// NMS half-window in cells.
    pub nms_window: usize,
    /// Read persons without pelvis or neck at their best-scoring joint instead of dropping them.
    pub keep_rootless: bool,
}

impl Default for ReadoutConfig {
    fn default() -> Self {
        Self { tau_c: 0.3, tau_d: 5.0, tau_ae: 1.0, limb_tolerance: 0.5, nms_window: 2, keep_rootless: false }
    }
}

impl ReadoutConfig {
    pub fn validate(&self) -> Result<()> {
        use crate::error::Error::InvalidConfig;
        if !(self.tau_c > 0.0) || !(self.tau_d > 0.0) || !(self.tau_ae > 0.0) {
            return Err(InvalidConfig("tau_c, tau_d and tau_ae must be positive"));
        }
        if !(self.limb_tolerance > 0.0 && self.limb_tolerance <= 1.0) {
            return Err(InvalidConfig("limb_tolerance must lie in (0, 1]"));
        }
        if self.nms_window == 0 {
            return Err(InvalidConfig("nms_window must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct JointDetection {
    /// Grid cell.
    pub cell: [usize; 2],
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodedPerson {
    /// Pelvis-relative 3D pose. `coords2d` hold grid cells of detected joints
    /// and `visible` marks which joints were detected.
    pub pose: Pose,
    pub joints2d: Vec<Option<JointDetection>>,
    /// Joint whose cell served for the full-pose readout.
    pub root: JointId,
    pub root_score: f64,
    pub provenance: Vec<Provenance>,
    pub reference_tag: Vec<f64>,
}

/// Full single-stack decoding. Output is sorted by descending root score.
pub fn decode(maps: &MapStack, tree: &KinematicTree, cfg: &ReadoutConfig) -> Result<Vec<DecodedPerson>> {
    maps.validate()?;
    cfg.validate()?;
    if maps.joints != tree.len() {
        return Err(crate::error::Error::JointCount { expected: tree.len(), got: maps.joints });
    }
    let detections = nms_peaks(maps, cfg);
    let hypotheses = group_joints(&detections, tree, cfg);
    Ok(ReadoutContext::new(maps, tree, cfg, &detections, &hypotheses).readout_all())
}
