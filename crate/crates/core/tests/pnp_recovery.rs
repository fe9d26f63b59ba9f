mod common;

use common::{correspondences, random_pose};
use conepose::cone_model::default_cone_model;
use conepose::eval::median;
use conepose::geometry::{CameraIntrinsics, RigidTransform};
use conepose::pnp::{
    cone_position, refine_pose, solve_pnp, solve_pnp_ransac, LmConfig, RansacConfig,
};
use conepose::{seed, Error};
use nalgebra::{Vector2, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};

fn k() -> CameraIntrinsics {
    CameraIntrinsics::default_synthetic()
}

#[test]
fn noiseless_random_poses_are_recovered() {
    let model = default_cone_model();
    let mut rng = seed::rng(1);
    for _ in 0..500 {
        let pose = random_pose(&mut rng, (4.0, 18.0));
        let est = solve_pnp(&correspondences(&k(), &pose, &model), &k(), None).unwrap();
        let err = (est.translation.coords - pose.translation).norm();
        assert!(err < 1e-5, "error {err} at {:?}", pose.translation);
    }
}

#[test]
fn ransac_without_outliers_matches_direct_solve() {
    let model = default_cone_model();
    let mut rng = seed::rng(2);
    for _ in 0..50 {
        let corrs = correspondences(&k(), &random_pose(&mut rng, (4.0, 18.0)), &model);
        let direct = solve_pnp(&corrs, &k(), None).unwrap();
        let robust = solve_pnp_ransac(&corrs, &k(), &RansacConfig::default()).unwrap();
        assert_eq!(robust.inlier_count(), 7);
        assert!((robust.translation - direct.translation).norm() < 1e-9);
    }
}

#[test]
fn single_corrupted_keypoint_is_rejected() {
    let model = default_cone_model();
    let mut rng = seed::rng(3);
    for trial in 0..100 {
        let pose = random_pose(&mut rng, (4.0, 18.0));
        let mut corrs = correspondences(&k(), &pose, &model);
        let bad = trial % 7;
        let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        corrs[bad].image_point += Vector2::new(angle.cos(), angle.sin()) * 50.0;
        let est = solve_pnp_ransac(&corrs, &k(), &RansacConfig::default()).unwrap();
        assert!(!est.inlier_mask[bad]);
        assert_eq!(est.inlier_count(), 6);
        assert!((est.translation.coords - pose.translation).norm() < 1e-4);
    }
}

/// Four displaced points leave only two residual constraints on a six
/// parameter pose, so a spurious minimal consensus is occasionally possible.
/// It must stay rare, minimal and disappear with a stricter inlier count.
#[test]
fn fully_corrupted_input_has_no_consensus() {
    let model = default_cone_model();
    let mut rng = seed::rng(4);
    let strict = RansacConfig {
        min_inliers: 5,
        ..Default::default()
    };
    let (mut rejected, mut rejected_strict) = (0, 0);
    let trials = 1000;
    for _ in 0..trials {
        let mut corrs = correspondences(&k(), &random_pose(&mut rng, (4.0, 18.0)), &model);
        for c in &mut corrs {
            let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            c.image_point += Vector2::new(angle.cos(), angle.sin()) * 50.0;
        }
        match solve_pnp_ransac(&corrs, &k(), &RansacConfig::default()) {
            Err(Error::NoConsensus { .. }) => rejected += 1,
            Ok(est) => assert!(est.inlier_count() <= 5, "{est:?}"),
            Err(e) => panic!("{e}"),
        }
        if matches!(
            solve_pnp_ransac(&corrs, &k(), &strict),
            Err(Error::NoConsensus { .. })
        ) {
            rejected_strict += 1;
        }
    }
    assert!(rejected >= trials * 85 / 100, "{rejected}/{trials}");
    assert!(
        rejected_strict >= trials * 995 / 1000,
        "{rejected_strict}/{trials}"
    );
}

#[test]
fn depth_error_grows_with_pixel_noise() {
    let model = default_cone_model();
    let pose = RigidTransform::new(common::facing(), Vector3::new(0.3, 0.4, 10.0));
    let clean = correspondences(&k(), &pose, &model);
    let mut medians = Vec::new();
    for sigma in [0.5, 1.0, 2.0] {
        let noise = Normal::new(0.0, sigma).unwrap();
        let mut rng = seed::rng(seed::derive(9, "noise"));
        let mut errors: Vec<f64> = (0..200)
            .filter_map(|_| {
                let mut corrs = clean.clone();
                for c in &mut corrs {
                    c.image_point += Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng));
                }
                solve_pnp(&corrs, &k(), None)
                    .ok()
                    .map(|e| (e.translation.z - pose.translation.z).abs())
            })
            .collect();
        assert!(errors.len() >= 190);
        medians.push(median(&mut errors));
    }
    assert!(
        medians[0] < medians[1] && medians[1] < medians[2],
        "{medians:?}"
    );
}

#[test]
fn solutions_are_deterministic() {
    let model = default_cone_model();
    let mut rng = seed::rng(6);
    let mut corrs = correspondences(&k(), &random_pose(&mut rng, (4.0, 18.0)), &model);
    corrs[2].image_point.x += 30.0;
    let cfg = RansacConfig::default();
    let a = solve_pnp_ransac(&corrs, &k(), &cfg).unwrap();
    let b = solve_pnp_ransac(&corrs, &k(), &cfg).unwrap();
    assert_eq!(a, b);
}

#[test]
fn cone_position_round_trip() {
    let mut rng = seed::rng(7);
    let model = default_cone_model();
    let pose = random_pose(&mut rng, (4.0, 18.0));
    let est = solve_pnp(&correspondences(&k(), &pose, &model), &k(), None).unwrap();
    let extrinsic =
        RigidTransform::from_axis_angle(Vector3::new(0.1, -0.3, 0.2), Vector3::new(1.0, 2.0, -0.5));
    let vehicle = cone_position(&est, &extrinsic);
    let back = extrinsic.inverse().apply(&vehicle);
    assert!((back - est.translation).norm() < 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn refinement_never_increases_cost(seed in any::<u64>(), jitter in 0.0f64..0.2) {
        let model = default_cone_model();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let pose = random_pose(&mut rng, (4.0, 18.0));
        let mut corrs = correspondences(&k(), &pose, &model);
        let noise = Normal::new(0.0, 1.0).unwrap();
        for c in &mut corrs {
            c.image_point += Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng));
        }
        let start = RigidTransform::from_axis_angle(
            Vector3::new(jitter, -jitter, 0.5 * jitter),
            Vector3::new(jitter, 0.0, jitter * 5.0),
        )
        .compose(&pose);
        if let Ok(r) = refine_pose(&corrs, &k(), &start, &LmConfig::default()) {
            prop_assert!(r.final_cost <= r.initial_cost);
        }
    }
}
