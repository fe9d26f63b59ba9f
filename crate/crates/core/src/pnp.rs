//! Perspective-n-Point for the cone keypoints.
//!
//! The cone model is planar, so the solver initializes from the homography
//! between the model plane and the normalized image plane, then refines all
//! six pose parameters with Levenberg-Marquardt on the pixel reprojection
//! error. [`solve_pnp_ransac`] wraps it in a hypothesize-and-verify loop over
//! minimal 4-point subsets.

use nalgebra::{DMatrix, Matrix3, Matrix6, Point2, Point3, Rotation3, Vector3, Vector6, SVD};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::geometry::{CameraIntrinsics, RigidTransform, MIN_DEPTH};

const MINIMAL_SET: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    /// Full-image pixel position.
    pub image_point: Point2<f64>,
    /// Model-frame position in meters.
    pub model_point: Point3<f64>,
    /// Keypoint index, 1-based.
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseEstimate {
    /// Model-frame origin (cone base center) in the camera frame.
    pub translation: Point3<f64>,
    /// Estimated orientation; reported but not consumed downstream.
    pub rotation: Matrix3<f64>,
    /// One flag per input correspondence.
    pub inlier_mask: Vec<bool>,
    /// Mean pixel reprojection error over the inliers.
    pub mean_reprojection_error: f64,
}

impl PoseEstimate {
    pub fn pose(&self) -> RigidTransform {
        RigidTransform::new(self.rotation, self.translation.coords)
    }

    pub fn inlier_count(&self) -> usize {
        self.inlier_mask.iter().filter(|&&b| b).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmConfig {
    pub initial_lambda: f64,
    pub lambda_up: f64,
    pub lambda_down: f64,
    pub max_iterations: usize,
    pub step_tolerance: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            initial_lambda: 1e-3,
            lambda_up: 10.0,
            lambda_down: 0.1,
            max_iterations: 100,
            step_tolerance: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RansacConfig {
    /// Only used when more than 7 correspondences are given; smaller sets
    /// are enumerated exhaustively.
    pub max_iterations: usize,
    pub inlier_threshold: f64,
    pub min_inliers: usize,
    pub seed: u64,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig {
            max_iterations: 200,
            inlier_threshold: 2.0,
            min_inliers: 4,
            seed: 0,
        }
    }
}

impl RansacConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.inlier_threshold > 0.0) || self.min_inliers < MINIMAL_SET {
            return Err(Error::InvalidArgument(format!(
                "ransac config requires threshold > 0 and min_inliers >= 4: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Pose from at least four correspondences, with default LM settings.
pub fn solve_pnp(
    corrs: &[Correspondence],
    k: &CameraIntrinsics,
    initial: Option<&RigidTransform>,
) -> Result<PoseEstimate> {
    solve_pnp_with(corrs, k, initial, &LmConfig::default())
}

pub fn solve_pnp_with(
    corrs: &[Correspondence],
    k: &CameraIntrinsics,
    initial: Option<&RigidTransform>,
    lm: &LmConfig,
) -> Result<PoseEstimate> {
    if corrs.len() < MINIMAL_SET {
        return Err(Error::InsufficientPoints(corrs.len()));
    }
    let init = match initial {
        Some(t) => *t,
        None => planar_initialization(corrs, k)?,
    };
    let refined = refine_pose(corrs, k, &init, lm)?.pose;
    if corrs
        .iter()
        .any(|c| refined.apply(&c.model_point).z <= MIN_DEPTH)
    {
        return Err(Error::BehindCamera);
    }
    let errors = reprojection_errors(corrs, k, &refined);
    Ok(PoseEstimate {
        translation: Point3::from(refined.translation),
        rotation: refined.rotation,
        inlier_mask: vec![true; corrs.len()],
        mean_reprojection_error: errors.iter().sum::<f64>() / errors.len() as f64,
    })
}

/// Robust pose: hypotheses from 4-point subsets, consensus by pixel
/// reprojection error, final LM refit on the winning inlier set.
pub fn solve_pnp_ransac(
    corrs: &[Correspondence],
    k: &CameraIntrinsics,
    cfg: &RansacConfig,
) -> Result<PoseEstimate> {
    cfg.validate()?;
    let n = corrs.len();
    if n < MINIMAL_SET {
        return Err(Error::InsufficientPoints(n));
    }
    let subsets = if n <= 7 {
        combinations4(n)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        (0..cfg.max_iterations)
            .map(|_| {
                let idx = rand::seq::index::sample(&mut rng, n, MINIMAL_SET);
                [idx.index(0), idx.index(1), idx.index(2), idx.index(3)]
            })
            .collect()
    };

    let lm = LmConfig::default();
    let mut best: Option<(usize, f64, RigidTransform, Vec<bool>)> = None;
    for subset in subsets {
        let sample = subset.map(|i| corrs[i]);
        let Ok(hyp) = solve_pnp_with(&sample, k, None, &lm) else {
            continue;
        };
        let pose = hyp.pose();
        let errors = reprojection_errors(corrs, k, &pose);
        let mask: Vec<bool> = errors.iter().map(|&e| e < cfg.inlier_threshold).collect();
        let count = mask.iter().filter(|&&b| b).count();
        let score: f64 = errors
            .iter()
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|(e, _)| e)
            .sum();
        let better = match &best {
            None => true,
            Some((c, s, _, _)) => count > *c || (count == *c && score < *s),
        };
        if better {
            best = Some((count, score, pose, mask));
        }
    }

    let (count, _, pose, mask) = best.ok_or(Error::NoConsensus {
        min_inliers: cfg.min_inliers,
    })?;
    if count < cfg.min_inliers {
        return Err(Error::NoConsensus {
            min_inliers: cfg.min_inliers,
        });
    }
    let inliers: Vec<Correspondence> = corrs
        .iter()
        .zip(&mask)
        .filter(|(_, &m)| m)
        .map(|(c, _)| *c)
        .collect();
    let refit = solve_pnp_with(&inliers, k, Some(&pose), &lm)?;
    Ok(PoseEstimate {
        inlier_mask: mask,
        ..refit
    })
}

/// Cone base position in the vehicle frame.
pub fn cone_position(estimate: &PoseEstimate, camera_to_vehicle: &RigidTransform) -> Point3<f64> {
    camera_to_vehicle.apply(&estimate.translation)
}

/// Pixel reprojection error per correspondence; infinite when the point
/// falls behind the camera.
pub fn reprojection_errors(
    corrs: &[Correspondence],
    k: &CameraIntrinsics,
    pose: &RigidTransform,
) -> Vec<f64> {
    corrs
        .iter()
        .map(
            |c| match k.project_camera_point(&pose.apply(&c.model_point)) {
                Ok(p) => (p - c.image_point).norm(),
                Err(_) => f64::INFINITY,
            },
        )
        .collect()
}

fn combinations4(n: usize) -> Vec<[usize; 4]> {
    let mut out = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            for c in b + 1..n {
                for d in c + 1..n {
                    out.push([a, b, c, d]);
                }
            }
        }
    }
    out
}

/// Result of a Levenberg-Marquardt refinement.
#[derive(Debug, Clone, Copy)]
pub struct Refinement {
    pub pose: RigidTransform,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub iterations: usize,
}

fn squared_cost(corrs: &[Correspondence], k: &CameraIntrinsics, pose: &RigidTransform) -> f64 {
    let mut cost = 0.0;
    for c in corrs {
        match k.project_camera_point(&pose.apply(&c.model_point)) {
            Ok(p) => cost += (p - c.image_point).norm_squared(),
            Err(_) => return f64::INFINITY,
        }
    }
    cost
}

/// Minimizes the summed squared pixel reprojection error over the six pose
/// parameters. Rotation updates are applied on the left: `R <- exp(w) R`.
pub fn refine_pose(
    corrs: &[Correspondence],
    k: &CameraIntrinsics,
    initial: &RigidTransform,
    cfg: &LmConfig,
) -> Result<Refinement> {
    let initial_cost = squared_cost(corrs, k, initial);
    if !initial_cost.is_finite() {
        return Err(Error::NoConvergence);
    }
    let mut pose = *initial;
    let mut cost = initial_cost;
    let mut lambda = cfg.initial_lambda;
    let mut iterations = 0;

    while iterations < cfg.max_iterations && cost > 0.0 {
        iterations += 1;
        let mut jtj = Matrix6::<f64>::zeros();
        let mut jtr = Vector6::<f64>::zeros();
        for c in corrs {
            let rotated = pose.rotation * c.model_point.coords;
            let pc = rotated + pose.translation;
            let inv_z = 1.0 / pc.z;
            let u = k.fx * pc.x * inv_z + k.cx;
            let v = k.fy * pc.y * inv_z + k.cy;
            let residual = [u - c.image_point.x, v - c.image_point.y];
            // d(u, v) / d(camera point)
            let du = Vector3::new(k.fx * inv_z, 0.0, -k.fx * pc.x * inv_z * inv_z);
            let dv = Vector3::new(0.0, k.fy * inv_z, -k.fy * pc.y * inv_z * inv_z);
            // d(camera point)/dw = -[R X]x, so row . (-[a]x) = a x row.
            for (row, r) in [du, dv].iter().zip(residual) {
                let rot = rotated.cross(row);
                let j = Vector6::new(rot.x, rot.y, rot.z, row.x, row.y, row.z);
                jtj += j * j.transpose();
                jtr += j * r;
            }
        }

        let mut step = None;
        while lambda < 1e16 {
            let mut damped = jtj;
            for i in 0..6 {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            if let Some(delta) = damped.cholesky().map(|ch| ch.solve(&(-jtr))) {
                let candidate = apply_increment(&pose, &delta);
                let candidate_cost = squared_cost(corrs, k, &candidate);
                if candidate_cost < cost {
                    pose = candidate;
                    cost = candidate_cost;
                    lambda *= cfg.lambda_down;
                    step = Some(delta.norm());
                    break;
                }
            }
            lambda *= cfg.lambda_up;
        }
        match step {
            None => break,
            Some(norm) if norm < cfg.step_tolerance => break,
            Some(_) => {}
        }
    }

    if !cost.is_finite() || !pose.is_proper(1e-6) {
        return Err(Error::NoConvergence);
    }
    Ok(Refinement {
        pose,
        initial_cost,
        final_cost: cost,
        iterations,
    })
}

fn apply_increment(pose: &RigidTransform, delta: &Vector6<f64>) -> RigidTransform {
    let w = Vector3::new(delta[0], delta[1], delta[2]);
    let dt = Vector3::new(delta[3], delta[4], delta[5]);
    let rotation = Rotation3::new(w).into_inner() * pose.rotation;
    RigidTransform::new(orthonormalize(&rotation), pose.translation + dt)
}

/// Nearest rotation matrix in the Frobenius sense.
fn orthonormalize(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = SVD::new(*m, true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    r
}

/// Pose from the homography between the model plane and the normalized
/// image plane. Works for any model whose points are (close to) coplanar.
pub fn planar_initialization(
    corrs: &[Correspondence],
    k: &CameraIntrinsics,
) -> Result<RigidTransform> {
    if corrs.len() < MINIMAL_SET {
        return Err(Error::InsufficientPoints(corrs.len()));
    }
    let n = corrs.len() as f64;
    let centroid = corrs
        .iter()
        .fold(Vector3::zeros(), |acc, c| acc + c.model_point.coords)
        / n;
    let mut scatter = Matrix3::zeros();
    for c in corrs {
        let d = c.model_point.coords - centroid;
        scatter += d * d.transpose();
    }
    let eig = scatter.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let e1: Vector3<f64> = eig.eigenvectors.column(order[0]).into();
    let e2: Vector3<f64> = eig.eigenvectors.column(order[1]).into();
    let e3 = e1.cross(&e2);
    let basis = Matrix3::from_columns(&[e1, e2, e3]);

    let plane: Vec<Point2<f64>> = corrs
        .iter()
        .map(|c| {
            let d = c.model_point.coords - centroid;
            Point2::new(d.dot(&e1), d.dot(&e2))
        })
        .collect();
    let image: Vec<Point2<f64>> = corrs.iter().map(|c| k.normalize(&c.image_point)).collect();
    let h = fit_homography(&plane, &image).ok_or(Error::DegenerateConfiguration)?;

    let h1: Vector3<f64> = h.column(0).into();
    let h2: Vector3<f64> = h.column(1).into();
    let h3: Vector3<f64> = h.column(2).into();
    let norm = h1.norm() + h2.norm();
    if !(norm > 0.0) || !norm.is_finite() {
        return Err(Error::DegenerateConfiguration);
    }
    let mut scale = 2.0 / norm;
    if h3.z < 0.0 {
        scale = -scale;
    }
    let r1 = h1 * scale;
    let r2 = h2 * scale;
    let m = Matrix3::from_columns(&[r1, r2, r1.cross(&r2)]);
    let rotation = orthonormalize(&m) * basis.transpose();
    let translation = h3 * scale - rotation * centroid;
    let pose = RigidTransform::new(rotation, translation);
    if corrs
        .iter()
        .any(|c| pose.apply(&c.model_point).z <= MIN_DEPTH)
    {
        return Err(Error::BehindCamera);
    }
    Ok(pose)
}

/// Similarity that moves the centroid to the origin and the mean distance to sqrt(2).
fn normalizing_transform(points: &[Point2<f64>]) -> Option<Matrix3<f64>> {
    let n = points.len() as f64;
    let c = points
        .iter()
        .fold(nalgebra::Vector2::zeros(), |a, p| a + p.coords)
        / n;
    let mean_dist = points.iter().map(|p| (p.coords - c).norm()).sum::<f64>() / n;
    if !(mean_dist > 1e-15) {
        return None;
    }
    let s = std::f64::consts::SQRT_2 / mean_dist;
    Some(Matrix3::new(
        s,
        0.0,
        -s * c.x,
        0.0,
        s,
        -s * c.y,
        0.0,
        0.0,
        1.0,
    ))
}

/// Normalized DLT homography mapping `src` onto `dst` (at least 4 pairs).
pub fn fit_homography(src: &[Point2<f64>], dst: &[Point2<f64>]) -> Option<Matrix3<f64>> {
    assert_eq!(src.len(), dst.len());
    let n = src.len();
    if n < MINIMAL_SET {
        return None;
    }
    let ts = normalizing_transform(src)?;
    let td = normalizing_transform(dst)?;
    // Pad to at least 9 rows so the thin SVD exposes the null vector.
    let rows = (2 * n).max(9);
    let mut a = DMatrix::<f64>::zeros(rows, 9);
    for (i, (s, d)) in src.iter().zip(dst).enumerate() {
        let s = ts * s.to_homogeneous();
        let d = td * d.to_homogeneous();
        let (x, y) = (s.x, s.y);
        let (u, v) = (d.x, d.y);
        let r = 2 * i;
        a.row_mut(r)
            .copy_from_slice(&[-x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u]);
        a.row_mut(r + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v]);
    }
    let svd = SVD::new(a, false, true);
    let v_t = svd.v_t?;
    let (min_idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))?;
    let h = v_t.row(min_idx);
    let hn = Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], h[8]);
    let td_inv = td.try_inverse()?;
    let out = td_inv * hn * ts;
    out.iter().all(|v| v.is_finite()).then_some(out)
}
