//! Occlusion-robust pose maps for single-shot multi-person 3D pose estimation.
//!
//! The crate is `no_std` (it needs `alloc`) and contains only the numerical
//! pipeline:
//!
//! - [`skeleton`]: kinematic tree, pose frames and readout locations.
//! - [`encode`]: ground-truth heatmaps, ORPM and embedding maps for a scene.
//! - [`losses`]: associative-embedding loss with analytic gradient, map L2
//!   losses and the combined training loss.
//! - [`decode`]: peak detection, embedding grouping, ORPM readout and
//!   refinement, and absolute localisation by reprojection.
//! - [`multiscale`]: resizing and fusion of per-scale map stacks.
//! - [`metrics`]: person matching, MPJPE, 3DPCK and bucketed reports.
//!
//! File formats, the synthetic harness and the CLI live in the `orpm` crate.
#![no_std]
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod camera;
pub mod decode;
pub mod encode;
mod error;
mod hungarian;
pub mod losses;
pub mod maps;
pub mod metrics;
pub mod multiscale;
pub mod skeleton;

pub use camera::PinholeCamera;
pub use error::{Error, Result};
pub use maps::{GridSize, MapStack};
pub use skeleton::{Frame, JointId, KinematicTree, Limb, Pose, Vec3};
