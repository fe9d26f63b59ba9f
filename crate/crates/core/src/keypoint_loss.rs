//! Keypoint training objective: squared coordinate error plus one
//! cross-ratio penalty per cone arm, with analytic gradients.

use nalgebra::Point2;

use crate::cone_model::{ARMS, CR3D, NUM_KEYPOINTS};
use crate::error::{Error, Result};
use crate::geometry::{cross_ratio, cross_ratio_gradient};

/// Side length of the square keypoint patch in pixels.
pub const PATCH_SIZE: usize = 80;

/// Flattened keypoint vector `[x1, y1, ..., x7, y7]`.
pub const KEYPOINT_DIM: usize = 2 * NUM_KEYPOINTS;

/// Axis-aligned scale + offset from patch coordinates to image pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchAffine {
    pub scale_x: f64,
    pub scale_y: f64,
    pub offset_x: f64,
    pub offset_y: f64,
}

impl Default for PatchAffine {
    fn default() -> Self {
        PatchAffine {
            scale_x: 1.0,
            scale_y: 1.0,
            offset_x: 0.0,
            offset_y: 0.0,
        }
    }
}

impl PatchAffine {
    /// Affine that stretches the image rectangle `[x0, x1] x [y0, y1]` onto the patch.
    pub fn from_rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        let n = PATCH_SIZE as f64;
        PatchAffine {
            scale_x: (x1 - x0) / n,
            scale_y: (y1 - y0) / n,
            offset_x: x0,
            offset_y: y0,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.scale_x > 0.0
            && self.scale_y > 0.0
            && self.offset_x.is_finite()
            && self.offset_y.is_finite()
            && self.scale_x.is_finite()
            && self.scale_y.is_finite()
    }

    pub fn to_image(&self, p: &Point2<f64>) -> Point2<f64> {
        Point2::new(
            self.offset_x + self.scale_x * p.x,
            self.offset_y + self.scale_y * p.y,
        )
    }

    pub fn to_patch(&self, p: &Point2<f64>) -> Point2<f64> {
        Point2::new(
            (p.x - self.offset_x) / self.scale_x,
            (p.y - self.offset_y) / self.scale_y,
        )
    }
}

/// Seven ordered keypoints in patch coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeypointSet {
    pub points: [Point2<f64>; NUM_KEYPOINTS],
    pub patch_to_image: PatchAffine,
}

impl KeypointSet {
    pub fn new(points: [Point2<f64>; NUM_KEYPOINTS], patch_to_image: PatchAffine) -> Result<Self> {
        let set = KeypointSet {
            points,
            patch_to_image,
        };
        if !set.is_valid() {
            return Err(Error::InvalidArgument(
                "keypoints must be finite and the patch affine positive".into(),
            ));
        }
        Ok(set)
    }

    pub fn is_valid(&self) -> bool {
        self.points
            .iter()
            .all(|p| p.x.is_finite() && p.y.is_finite())
            && self.patch_to_image.is_valid()
    }

    pub fn from_flat(flat: &[f64], patch_to_image: PatchAffine) -> Self {
        assert_eq!(flat.len(), KEYPOINT_DIM);
        let points = std::array::from_fn(|i| Point2::new(flat[2 * i], flat[2 * i + 1]));
        KeypointSet {
            points,
            patch_to_image,
        }
    }

    pub fn to_flat(&self) -> [f64; KEYPOINT_DIM] {
        let mut out = [0.0; KEYPOINT_DIM];
        for (i, p) in self.points.iter().enumerate() {
            out[2 * i] = p.x;
            out[2 * i + 1] = p.y;
        }
        out
    }

    pub fn image_points(&self) -> [Point2<f64>; NUM_KEYPOINTS] {
        self.points.map(|p| self.patch_to_image.to_image(&p))
    }

    pub fn arm_cross_ratios(&self) -> Result<[f64; 2]> {
        Ok([
            arm_cross_ratio(&self.points, &ARMS.left)?,
            arm_cross_ratio(&self.points, &ARMS.right)?,
        ])
    }
}

fn arm_cross_ratio(points: &[Point2<f64>; NUM_KEYPOINTS], arm: &[usize; 4]) -> Result<f64> {
    cross_ratio(
        &points[arm[0]],
        &points[arm[1]],
        &points[arm[2]],
        &points[arm[3]],
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub gamma: f64,
    pub cr3d: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            gamma: 1e-4,
            cr3d: CR3D,
        }
    }
}

/// Per-patch loss: squared error summed over all 14 coordinates plus
/// `gamma * (Cr(arm) - cr3d)^2` for each predicted arm.
pub fn loss(pred: &KeypointSet, truth: &KeypointSet, cfg: &LossConfig) -> Result<f64> {
    let sq = squared_error(pred, truth);
    let [left, right] = pred.arm_cross_ratios()?;
    Ok(sq + cfg.gamma * ((left - cfg.cr3d).powi(2) + (right - cfg.cr3d).powi(2)))
}

/// Gradient of [`loss`] with respect to the flattened predicted coordinates.
pub fn loss_gradient(
    pred: &KeypointSet,
    truth: &KeypointSet,
    cfg: &LossConfig,
) -> Result<[f64; KEYPOINT_DIM]> {
    let mut grad = squared_error_gradient(pred, truth);
    for arm in [&ARMS.left, &ARMS.right] {
        add_arm_gradient(&mut grad, &pred.points, arm, cfg)?;
    }
    Ok(grad)
}

/// Outcome of evaluating one training sample.
#[derive(Debug, Clone, Copy)]
pub struct SampleLoss {
    pub loss: f64,
    pub gradient: [f64; KEYPOINT_DIM],
    /// Arms whose cross-ratio term was dropped because the prediction was degenerate.
    pub skipped_arms: u32,
}

/// Training-time variant of [`loss`] + [`loss_gradient`]: a degenerate
/// predicted arm contributes nothing instead of failing the sample.
pub fn sample_loss(pred: &KeypointSet, truth: &KeypointSet, cfg: &LossConfig) -> SampleLoss {
    let mut value = squared_error(pred, truth);
    let mut gradient = squared_error_gradient(pred, truth);
    let mut skipped_arms = 0;
    if cfg.gamma != 0.0 {
        for arm in [&ARMS.left, &ARMS.right] {
            match arm_cross_ratio(&pred.points, arm) {
                Ok(cr) => {
                    value += cfg.gamma * (cr - cfg.cr3d).powi(2);
                    add_arm_gradient(&mut gradient, &pred.points, arm, cfg)
                        .expect("arm already checked non-degenerate");
                }
                Err(_) => skipped_arms += 1,
            }
        }
    }
    SampleLoss {
        loss: value,
        gradient,
        skipped_arms,
    }
}

fn squared_error(pred: &KeypointSet, truth: &KeypointSet) -> f64 {
    pred.points
        .iter()
        .zip(&truth.points)
        .map(|(p, t)| (p - t).norm_squared())
        .sum()
}

fn squared_error_gradient(pred: &KeypointSet, truth: &KeypointSet) -> [f64; KEYPOINT_DIM] {
    let mut grad = [0.0; KEYPOINT_DIM];
    for (i, (p, t)) in pred.points.iter().zip(&truth.points).enumerate() {
        grad[2 * i] = 2.0 * (p.x - t.x);
        grad[2 * i + 1] = 2.0 * (p.y - t.y);
    }
    grad
}

fn add_arm_gradient(
    grad: &mut [f64; KEYPOINT_DIM],
    points: &[Point2<f64>; NUM_KEYPOINTS],
    arm: &[usize; 4],
    cfg: &LossConfig,
) -> Result<()> {
    let cr = arm_cross_ratio(points, arm)?;
    let g = cross_ratio_gradient(
        &points[arm[0]],
        &points[arm[1]],
        &points[arm[2]],
        &points[arm[3]],
    )?;
    let coeff = 2.0 * cfg.gamma * (cr - cfg.cr3d);
    for (slot, &k) in arm.iter().enumerate() {
        grad[2 * k] += coeff * g[2 * slot];
        grad[2 * k + 1] += coeff * g[2 * slot + 1];
    }
    Ok(())
}
