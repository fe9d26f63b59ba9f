//! Monocular traffic-cone localization.
//!
//! A keypoint provider (trained regressor or noisy ground truth) yields seven
//! cone keypoints in an 80x80 patch; the keypoints are mapped back to image
//! pixels and matched against a fixed 3D cone model, and RANSAC PnP recovers
//! the cone base position in the camera frame.
//!
//! Modules:
//! - [`geometry`]: pinhole camera, rigid transforms, cross-ratio.
//! - [`cone_model`]: canonical 3D keypoints of the cone.
//! - [`keypoint_loss`]: squared error + cross-ratio training objective.
//! - [`regressor`]: keypoint providers, training and augmentation.
//! - [`pnp`]: planar PnP with Levenberg-Marquardt and RANSAC.
//! - [`synth`]: synthetic scenes, patch rendering and datasets.
//! - [`eval`]: accuracy and bounding-box perturbation studies.
//! - [`gradcheck`]: finite-difference gradient checks.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod cone_model;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod gradcheck;
pub mod keypoint_loss;
pub mod pnp;
pub mod regressor;
pub mod seed;
pub mod synth;

pub use error::{Error, Result};
