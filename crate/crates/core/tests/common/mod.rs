#![allow(dead_code)]

use conepose::cone_model::{default_cone_model, lower_stripe_parameter, ConeModel};
use conepose::geometry::{project, CameraIntrinsics, RigidTransform};
use conepose::keypoint_loss::{KeypointSet, PatchAffine};
use conepose::pnp::Correspondence;
use conepose::regressor::{augment, LabeledPatch};
use conepose::seed;
use conepose::synth::{generate_scene, SceneLayout, SceneSpec};
use nalgebra::{Matrix3, Point2, Vector3};
use rand::Rng;

/// Model-to-camera rotation with the keypoint plane facing the camera.
pub fn facing() -> Matrix3<f64> {
    Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0)
}

/// Pose with depth in `depth`, lateral offsets inside the field of view and
/// a tilt of up to ~35 degrees away from fronto-parallel.
pub fn random_pose<R: Rng>(rng: &mut R, depth: (f64, f64)) -> RigidTransform {
    let z = rng.random_range(depth.0..depth.1);
    let tilt = RigidTransform::from_axis_angle(
        Vector3::new(
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.6..0.6),
            rng.random_range(-0.2..0.2),
        ),
        Vector3::zeros(),
    );
    RigidTransform::new(
        tilt.rotation * facing(),
        Vector3::new(
            rng.random_range(-0.3..0.3) * z,
            rng.random_range(-0.2..0.2) * z,
            z,
        ),
    )
}

pub fn correspondences(
    k: &CameraIntrinsics,
    pose: &RigidTransform,
    model: &ConeModel,
) -> Vec<Correspondence> {
    model
        .keypoints
        .iter()
        .enumerate()
        .map(|(i, p)| Correspondence {
            image_point: project(k, pose, p).unwrap(),
            model_point: *p,
            index: i + 1,
        })
        .collect()
}

/// Symmetric cone outline in patch coordinates whose arms have cross-ratio `cr`.
pub fn outline(cr: f64) -> KeypointSet {
    let apex = Point2::new(40.0, 8.0);
    let left = Point2::new(18.0, 72.0);
    let right = Point2::new(62.0, 72.0);
    let b = lower_stripe_parameter(0.4, cr);
    let at = |end: &Point2<f64>, t: f64| apex + (end - apex) * t;
    KeypointSet {
        points: [
            apex,
            at(&left, 0.4),
            at(&left, b),
            left,
            at(&right, 0.4),
            at(&right, b),
            right,
        ],
        patch_to_image: PatchAffine::default(),
    }
}

pub fn scene(cones: usize, seed: u64) -> SceneSpec {
    let layout = SceneLayout {
        cones,
        seed,
        ..Default::default()
    };
    SceneSpec::random(&layout, &default_cone_model()).unwrap()
}

/// Rendered patches of a random scene, each followed by `augmentations`
/// augmented copies.
pub fn dataset(cones: usize, seed: u64, augmentations: usize) -> Vec<LabeledPatch> {
    let generated = generate_scene(&scene(cones, seed), &default_cone_model());
    let mut out = Vec::with_capacity(generated.cones.len() * (1 + augmentations));
    for (i, c) in generated.cones.iter().enumerate() {
        out.push(LabeledPatch {
            patch: c.patch.clone(),
            truth: c.truth_keypoints,
        });
        for a in 0..augmentations {
            let s = seed::indexed(seed, (i * 100 + a) as u64);
            let (patch, truth) = augment(&c.patch, &c.truth_keypoints, s);
            out.push(LabeledPatch { patch, truth });
        }
    }
    out
}

/// Mean `|Cr - target|` over all non-degenerate predicted arms.
pub fn mean_cross_ratio_deviation(
    model: &conepose::regressor::RegressorModel,
    data: &[LabeledPatch],
    target: f64,
) -> f64 {
    let (mut sum, mut n) = (0.0, 0);
    for d in data {
        if let Ok(crs) = model.predict(&d.patch).arm_cross_ratios() {
            for cr in crs {
                sum += (cr - target).abs();
                n += 1;
            }
        }
    }
    sum / n as f64
}

/// Four distinct points on a random line, in order, spaced at least 1 apart.
pub fn random_collinear<R: Rng>(rng: &mut R) -> [Point2<f64>; 4] {
    let origin = Point2::new(
        rng.random_range(-100.0..100.0),
        rng.random_range(-100.0..100.0),
    );
    let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
    let dir = nalgebra::Vector2::new(angle.cos(), angle.sin());
    let mut t = 0.0;
    std::array::from_fn(|_| {
        t += rng.random_range(1.0..30.0);
        origin + dir * t
    })
}

/// Well-conditioned homography: rotation, anisotropic scale in [0.5, 2],
/// translation and a mild projective row.
pub fn random_homography<R: Rng>(rng: &mut R) -> Matrix3<f64> {
    let (s, c) = rng.random_range(0.0..std::f64::consts::TAU).sin_cos();
    let (a, b) = (rng.random_range(0.5..2.0), rng.random_range(0.5..2.0));
    let shear = rng.random_range(-0.3..0.3);
    Matrix3::new(
        c * a,
        -s * b + shear,
        rng.random_range(-100.0..100.0),
        s * a,
        c * b,
        rng.random_range(-100.0..100.0),
        rng.random_range(-1e-3..1e-3),
        rng.random_range(-1e-3..1e-3),
        1.0,
    )
}

pub fn apply_homography(h: &Matrix3<f64>, p: &Point2<f64>) -> Point2<f64> {
    let v = h * Vector3::new(p.x, p.y, 1.0);
    Point2::new(v.x / v.z, v.y / v.z)
}
