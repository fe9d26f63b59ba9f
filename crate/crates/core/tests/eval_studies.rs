mod common;

use conepose::cone_model::default_cone_model;
use conepose::eval::fit_poly2;
use conepose::eval::{run_accuracy_study, run_perturbation_study, KeypointProvider, StudyConfig};
use conepose::regressor::{train, RegressorModel, TrainConfig};
use conepose::{seed, Error};
use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use rand_distr::{Distribution, Normal};

#[test]
fn noiseless_oracle_is_exact() {
    let model = default_cone_model();
    let study = run_accuracy_study(
        &common::scene(104, 1),
        &model,
        KeypointProvider::Oracle { sigma: 0.0 },
        &StudyConfig::default(),
    )
    .unwrap();
    assert_eq!(study.failures(), 0);
    assert_eq!(study.curve.samples.len(), 104);
    for (_, err) in &study.curve.samples {
        assert!(*err < 1e-4, "{err}");
    }
    assert!(study.curve.eval(10.0).abs() < 1e-4);
}

#[test]
fn far_cones_are_worse_than_near_ones() {
    let model = default_cone_model();
    let study = run_accuracy_study(
        &common::scene(104, 2),
        &model,
        KeypointProvider::Oracle { sigma: 1.0 },
        &StudyConfig::default(),
    )
    .unwrap();
    let bins = study.binned_median_errors();
    assert!(bins[3].unwrap() > bins[1].unwrap(), "{bins:?}");
    assert!(study.curve.eval(16.0) > study.curve.eval(8.0));
}

#[test]
fn accuracy_study_is_deterministic() {
    let model = default_cone_model();
    let spec = common::scene(30, 3);
    let run = || {
        run_accuracy_study(
            &spec,
            &model,
            KeypointProvider::Oracle { sigma: 1.0 },
            &StudyConfig::default(),
        )
        .unwrap()
    };
    assert_eq!(run(), run());
}

fn quick_model() -> RegressorModel {
    let cfg = TrainConfig {
        epochs: 10,
        batch_size: 32,
        lr_decay_epochs: vec![],
        ..Default::default()
    };
    train(&common::dataset(60, 8, 3), &cfg).unwrap().model
}

#[test]
fn perturbation_study_contract() {
    let model = default_cone_model();
    let spec = common::scene(6, 4);
    let regressor = quick_model();
    let cfg = StudyConfig::default();
    let provider = KeypointProvider::Model(&regressor);

    let study = run_perturbation_study(&spec, &model, provider, &[0.0, 0.1], 30, &cfg).unwrap();
    for cone in &study.series[0].cones {
        if let Some(v) = cone.variance {
            assert_eq!(v, 0.0);
        }
        assert!(cone.depths.windows(2).all(|w| w[0] == w[1]));
    }
    assert_eq!(
        run_perturbation_study(&spec, &model, provider, &[0.0, 0.1], 30, &cfg).unwrap(),
        study
    );

    assert!(matches!(
        run_perturbation_study(
            &spec,
            &model,
            KeypointProvider::Oracle { sigma: 1.0 },
            &[0.1],
            30,
            &cfg
        ),
        Err(Error::OracleProviderRejected)
    ));
    assert!(matches!(
        run_perturbation_study(&spec, &model, provider, &[0.1], 29, &cfg),
        Err(Error::InvalidArgument(_))
    ));
}

/// Unscaled normal equations solved by LU.
fn brute_force(samples: &[(f64, f64)]) -> [f64; 3] {
    let mut ata = Matrix3::zeros();
    let mut aty = Vector3::zeros();
    for &(x, y) in samples {
        let row = Vector3::new(1.0, x, x * x);
        ata += row * row.transpose();
        aty += row * y;
    }
    let c = ata.lu().solve(&aty).unwrap();
    [c[0], c[1], c[2]]
}

#[test]
fn fit_matches_brute_force_oracle() {
    let mut rng = seed::rng(12);
    for _ in 0..200 {
        let n = rng.random_range(3..60);
        let truth: [f64; 3] = std::array::from_fn(|_| rng.random_range(-2.0..2.0));
        let samples: Vec<(f64, f64)> = (0..n)
            .map(|_| {
                let x = rng.random_range(0.0..20.0);
                let y = truth[0] + truth[1] * x + truth[2] * x * x + rng.random_range(-1.0..1.0);
                (x, y)
            })
            .collect();
        let fit = fit_poly2(&samples).unwrap();
        let oracle = brute_force(&samples);
        for (a, b) in fit.iter().zip(oracle) {
            assert!(
                (a - b).abs() <= 1e-9 * b.abs().max(1.0),
                "{fit:?} vs {oracle:?}"
            );
        }
    }
}

#[test]
fn noisy_line_fit() {
    let mut rng = seed::rng(13);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let samples: Vec<(f64, f64)> = (0..1000)
        .map(|_| {
            let x = rng.random_range(0.0..20.0);
            (x, x + noise.sample(&mut rng))
        })
        .collect();
    let [_, c1, c2] = fit_poly2(&samples).unwrap();
    assert!((0.9..=1.1).contains(&c1), "{c1}");
    assert!((-0.05..=0.05).contains(&c2), "{c2}");
}

#[test]
fn repeated_abscissae_are_rank_deficient() {
    let samples = [(1.0, 2.0), (1.0, 3.0), (2.0, 1.0), (2.0, 5.0)];
    assert!(matches!(fit_poly2(&samples), Err(Error::RankDeficient)));
}
