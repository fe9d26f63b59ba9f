//! Pinhole camera model, rigid transforms and the cross-ratio invariant.
//!
//! Conventions: the camera frame has x right, y down and z along the optical
//! axis. Pixel coordinates are continuous, with pixel `(col, row)` covering
//! `[col, col + 1) x [row, row + 1)`, so its center sits at `(col + 0.5, row + 0.5)`.

use nalgebra::{Matrix3, Point, Point2, Point3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest admissible distance in a cross-ratio denominator.
pub const DEGENERACY_EPS: f64 = 1e-12;

/// Smallest admissible depth for projection, in meters.
pub const MIN_DEPTH: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self> {
        let k = CameraIntrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        };
        k.validate()?;
        Ok(k)
    }

    /// 1600x1200 long-range camera with a 1460 px focal length.
    pub fn default_synthetic() -> Self {
        CameraIntrinsics {
            fx: 1460.0,
            fy: 1460.0,
            cx: 800.0,
            cy: 600.0,
            width: 1600,
            height: 1200,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.fx.is_finite()
            && self.fy.is_finite()
            && self.fx > 0.0
            && self.fy > 0.0
            && self.cx > 0.0
            && self.cx < self.width as f64
            && self.cy > 0.0
            && self.cy < self.height as f64;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "camera intrinsics out of range: {self:?}"
            )))
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// Projects a point already expressed in the camera frame.
    pub fn project_camera_point(&self, p: &Point3<f64>) -> Result<Point2<f64>> {
        if !(p.z > MIN_DEPTH) {
            return Err(Error::NonPositiveDepth(p.z));
        }
        Ok(Point2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    /// Normalized image coordinates `((u - cx) / fx, (v - cy) / fy)`.
    pub fn normalize(&self, pixel: &Point2<f64>) -> Point2<f64> {
        Point2::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy)
    }

    /// Point on the ray through `pixel` at camera-frame depth `depth`.
    pub fn back_project(&self, pixel: &Point2<f64>, depth: f64) -> Point3<f64> {
        let n = self.normalize(pixel);
        Point3::new(n.x * depth, n.y * depth, depth)
    }

    pub fn contains(&self, pixel: &Point2<f64>) -> bool {
        pixel.x >= 0.0
            && pixel.y >= 0.0
            && pixel.x < self.width as f64
            && pixel.y < self.height as f64
    }
}

/// Rigid motion `x -> R x + t`. When used as a pose it maps object (cone
/// base) coordinates into the camera frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        RigidTransform {
            rotation,
            translation,
        }
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation given as an axis-angle vector (radians).
    pub fn from_axis_angle(axis_angle: Vector3<f64>, translation: Vector3<f64>) -> Self {
        RigidTransform {
            rotation: Rotation3::new(axis_angle).into_inner(),
            translation,
        }
    }

    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// Orthonormal with determinant +1, within `tol`.
    pub fn is_proper(&self, tol: f64) -> bool {
        let r = &self.rotation;
        let ortho = (r.transpose() * r - Matrix3::identity()).abs().max();
        ortho <= tol && (r.determinant() - 1.0).abs() <= tol
    }
}

/// Pinhole projection of an object-frame point through pose `pose`.
pub fn project(
    k: &CameraIntrinsics,
    pose: &RigidTransform,
    p: &Point3<f64>,
) -> Result<Point2<f64>> {
    k.project_camera_point(&pose.apply(p))
}

/// Cross-ratio `(Δ13 / Δ14) / (Δ23 / Δ24)` of four points in any dimension.
pub fn cross_ratio<const D: usize>(
    p1: &Point<f64, D>,
    p2: &Point<f64, D>,
    p3: &Point<f64, D>,
    p4: &Point<f64, D>,
) -> Result<f64> {
    let d13 = nalgebra::distance(p1, p3);
    let d14 = nalgebra::distance(p1, p4);
    let d23 = nalgebra::distance(p2, p3);
    let d24 = nalgebra::distance(p2, p4);
    if !(d14 >= DEGENERACY_EPS && d23 >= DEGENERACY_EPS && d24 >= DEGENERACY_EPS) {
        return Err(Error::DegenerateConfiguration);
    }
    Ok((d13 / d14) / (d23 / d24))
}

/// Analytic gradient of [`cross_ratio`] in 2D, laid out as
/// `[∂x1, ∂y1, ∂x2, ∂y2, ∂x3, ∂y3, ∂x4, ∂y4]`.
pub fn cross_ratio_gradient(
    p1: &Point2<f64>,
    p2: &Point2<f64>,
    p3: &Point2<f64>,
    p4: &Point2<f64>,
) -> Result<[f64; 8]> {
    let cr = cross_ratio(p1, p2, p3, p4)?;
    let pts = [p1, p2, p3, p4];
    let mut grad = [0.0; 8];

    // Cr = d13 d24 / (d14 d23). Denominator terms use the log-derivative;
    // d13 is differentiated directly because it may vanish.
    let d13 = nalgebra::distance(p1, p3);
    let d24 = nalgebra::distance(p2, p4);
    let d14 = nalgebra::distance(p1, p4);
    let d23 = nalgebra::distance(p2, p3);
    let denom = d14 * d23;

    let mut accumulate = |i: usize, j: usize, coeff: f64, dist: f64| {
        if dist < DEGENERACY_EPS {
            return;
        }
        let u = (pts[i] - pts[j]) / dist;
        grad[2 * i] += coeff * u.x;
        grad[2 * i + 1] += coeff * u.y;
        grad[2 * j] -= coeff * u.x;
        grad[2 * j + 1] -= coeff * u.y;
    };

    accumulate(0, 2, d24 / denom, d13);
    accumulate(1, 3, cr / d24, d24);
    accumulate(0, 3, -cr / d14, d14);
    accumulate(1, 2, -cr / d23, d23);
    Ok(grad)
}

/// Distance from `p` to the infinite line through `a` and `b`.
pub fn point_line_distance(p: &Point3<f64>, a: &Point3<f64>, b: &Point3<f64>) -> f64 {
    let dir = b - a;
    let n = dir.norm();
    if n < DEGENERACY_EPS {
        return (p - a).norm();
    }
    (p - a).cross(&dir).norm() / n
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector2;

    fn k_test() -> CameraIntrinsics {
        CameraIntrinsics::new(1000.0, 1000.0, 640.0, 512.0, 1280, 1024).unwrap()
    }

    #[test]
    fn projects_optical_axis_to_principal_point() {
        let p = project(
            &k_test(),
            &RigidTransform::identity(),
            &Point3::new(0.0, 0.0, 10.0),
        );
        assert_eq!(p.unwrap(), Point2::new(640.0, 512.0));
    }

    #[test]
    fn projects_lateral_offset() {
        let p = project(
            &k_test(),
            &RigidTransform::identity(),
            &Point3::new(1.0, 0.0, 10.0),
        );
        assert_eq!(p.unwrap(), Point2::new(740.0, 512.0));
    }

    #[test]
    fn rejects_zero_depth() {
        let err = project(&k_test(), &RigidTransform::identity(), &Point3::origin()).unwrap_err();
        assert!(matches!(err, Error::NonPositiveDepth(_)));
    }

    #[test]
    fn intrinsics_validation() {
        assert!(CameraIntrinsics::new(-1.0, 1.0, 1.0, 1.0, 4, 4).is_err());
        assert!(CameraIntrinsics::new(1.0, 1.0, 5.0, 1.0, 4, 4).is_err());
        CameraIntrinsics::default_synthetic().validate().unwrap();
    }

    #[test]
    fn equal_spacing_cross_ratio() {
        let p = |x: f64| Point2::new(x, 0.0);
        let cr = cross_ratio(&p(0.0), &p(1.0), &p(2.0), &p(3.0)).unwrap();
        assert!((cr - 4.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_cross_ratio() {
        let p = Point2::new(1.0, 1.0);
        let q = Point2::new(2.0, 1.0);
        assert!(matches!(
            cross_ratio(&p, &q, &q, &p),
            Err(Error::DegenerateConfiguration)
        ));
    }

    #[test]
    fn gradient_translation_and_scale() {
        let pts = [
            Point2::new(3.0, 1.0),
            Point2::new(7.5, 4.0),
            Point2::new(11.0, 8.0),
            Point2::new(19.0, 12.5),
        ];
        let g = cross_ratio_gradient(&pts[0], &pts[1], &pts[2], &pts[3]).unwrap();
        let sx: f64 = (0..4).map(|i| g[2 * i]).sum();
        let sy: f64 = (0..4).map(|i| g[2 * i + 1]).sum();
        assert!(sx.abs() < 1e-9 && sy.abs() < 1e-9);

        let scaled: Vec<_> = pts.iter().map(|p| Point2::from(p.coords * 2.0)).collect();
        let cr = cross_ratio(&pts[0], &pts[1], &pts[2], &pts[3]).unwrap();
        let cr2 = cross_ratio(&scaled[0], &scaled[1], &scaled[2], &scaled[3]).unwrap();
        assert!((cr - cr2).abs() < 1e-14);
        let g2 = cross_ratio_gradient(&scaled[0], &scaled[1], &scaled[2], &scaled[3]).unwrap();
        for i in 0..8 {
            assert!((g2[i] - 0.5 * g[i]).abs() < 1e-14);
        }
    }

    #[test]
    fn rigid_transform_inverse_round_trip() {
        let t = RigidTransform::from_axis_angle(
            Vector3::new(0.1, -0.4, 0.25),
            Vector3::new(1.0, 2.0, 3.0),
        );
        assert!(t.is_proper(1e-12));
        let p = Point3::new(0.3, -0.2, 5.0);
        let back = t.inverse().apply(&t.apply(&p));
        assert!((back - p).norm() < 1e-12);
        let id = t.compose(&t.inverse());
        assert!((id.rotation - Matrix3::identity()).abs().max() < 1e-12);
        assert!(id.translation.norm() < 1e-12);
    }

    #[test]
    fn normalize_inverts_projection() {
        let k = k_test();
        let px = Point2::new(900.0, 100.0);
        let n = k.normalize(&px);
        let back = Vector2::new(k.fx * n.x + k.cx, k.fy * n.y + k.cy);
        assert!((back - px.coords).norm() < 1e-12);
    }
}
