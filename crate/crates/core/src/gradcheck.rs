//! Finite-difference checks of the analytic loss and network gradients.

use nalgebra::Vector2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::cone_model::{default_cone_model, CR3D};
use crate::geometry::project;
use crate::keypoint_loss::{
    loss, loss_gradient, KeypointSet, LossConfig, PatchAffine, KEYPOINT_DIM,
};
use crate::regressor::{batch_gradient, parameter_count, LabeledPatch, RegressorModel};
use crate::seed;
use crate::synth::{generate_scene, SceneLayout, SceneSpec};

pub const LOSS_STEP: f64 = 1e-4;
pub const LOSS_TOLERANCE: f64 = 1e-4;
pub const MODEL_STEP: f64 = 1e-3;
pub const MODEL_TOLERANCE: f64 = 1e-3;

/// Components smaller than this fraction of the largest analytic component
/// are compared on an absolute scale.
pub const RELATIVE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Parameters whose stencil crossed a ReLU kink.
    pub skipped: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    if denom == 0.0 {
        0.0
    } else {
        (analytic - numeric).abs() / denom
    }
}

/// Random cone-like ground truth in patch coordinates: the cone model seen
/// from a random pose, mapped into an 80x80 box around it.
pub fn random_truth<R: Rng>(rng: &mut R) -> KeypointSet {
    use crate::geometry::{CameraIntrinsics, RigidTransform};
    use nalgebra::{Matrix3, Vector3};
    let k = CameraIntrinsics::default_synthetic();
    let model = default_cone_model();
    let facing = Matrix3::new(1.0, 0.0, 0.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0);
    let tilt = RigidTransform::from_axis_angle(
        Vector3::new(
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.6..0.6),
            rng.random_range(-0.2..0.2),
        ),
        Vector3::zeros(),
    );
    let depth = rng.random_range(4.0..18.0);
    let pose = RigidTransform::new(
        tilt.rotation * facing,
        Vector3::new(rng.random_range(-1.0..1.0), 0.5, depth),
    );
    let pts = model
        .keypoints
        .map(|p| project(&k, &pose, &p).expect("cone in front of camera"));
    let bbox = crate::synth::BBox::around(&pts, 0.1);
    let affine = bbox.patch_affine();
    KeypointSet {
        points: pts.map(|p| affine.to_patch(&p)),
        patch_to_image: PatchAffine::default(),
    }
}

/// Compares [`loss_gradient`] with central differences of [`loss`] over
/// `trials` random configurations (`gamma` log-uniform in `[1e-4, 10]`).
/// `flip_sign` negates the analytic gradient, to confirm the check can fail.
pub fn check_loss_gradient(trials: usize, seed: u64, flip_sign: bool) -> GradCheckReport {
    let mut rng = seed::rng(seed);
    let noise = Normal::new(0.0, 3.0).expect("valid std");
    let mut worst = 0.0f64;
    let mut checked = 0;
    for _ in 0..trials {
        let truth = random_truth(&mut rng);
        let mut pred = truth;
        for p in &mut pred.points {
            *p += Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng));
        }
        let cfg = LossConfig {
            gamma: 10f64.powf(rng.random_range(-4.0..1.0)),
            cr3d: CR3D,
        };
        let Ok(mut analytic) = loss_gradient(&pred, &truth, &cfg) else {
            continue;
        };
        if flip_sign {
            analytic.iter_mut().for_each(|g| *g = -*g);
        }
        let floor = RELATIVE_FLOOR * analytic.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let flat = pred.to_flat();
        for i in 0..KEYPOINT_DIM {
            let eval = |delta: f64| {
                let mut f = flat;
                f[i] += delta;
                loss(
                    &KeypointSet::from_flat(&f, pred.patch_to_image),
                    &truth,
                    &cfg,
                )
            };
            let (Ok(plus), Ok(minus)) = (eval(LOSS_STEP), eval(-LOSS_STEP)) else {
                continue;
            };
            let numeric = (plus - minus) / (2.0 * LOSS_STEP);
            worst = worst.max(relative_error(analytic[i], numeric, floor));
            checked += 1;
        }
    }
    GradCheckReport {
        max_relative_error: worst,
        checked,
        skipped: 0,
    }
}

/// Two rendered cone patches with their labels.
pub fn gradcheck_batch(seed: u64) -> Vec<LabeledPatch> {
    let model = default_cone_model();
    let layout = SceneLayout {
        cones: 2,
        seed,
        ..Default::default()
    };
    let spec = SceneSpec::random(&layout, &model).expect("two cones fit in the default scene");
    generate_scene(&spec, &model)
        .cones
        .into_iter()
        .map(|c| LabeledPatch {
            patch: c.patch,
            truth: c.truth_keypoints,
        })
        .collect()
}

/// Compares backpropagated parameter gradients of the mean batch loss with
/// central differences, for every parameter of a freshly initialized
/// network whose output bias is centered on the labels.
pub fn check_model_gradient(seed: u64, cfg: &LossConfig, flip_sign: bool) -> GradCheckReport {
    let batch = gradcheck_batch(seed);
    let mut model = RegressorModel::new(seed::derive(seed, "gradcheck"));
    let mut bias = [0.0; KEYPOINT_DIM];
    for d in &batch {
        for (b, v) in bias.iter_mut().zip(d.truth.to_flat()) {
            *b += v / batch.len() as f64;
        }
    }
    model.set_output_bias(&bias);

    let features: Vec<Vec<f64>> = batch.iter().map(|d| d.patch.features()).collect();
    let samples: Vec<(&[f64], &KeypointSet)> = features
        .iter()
        .zip(&batch)
        .map(|(f, d)| (f.as_slice(), &d.truth))
        .collect();
    let n = batch.len() as f64;
    let mut analytic = batch_gradient(&model, &samples, cfg).gradient;
    for g in &mut analytic {
        *g /= n;
        if flip_sign {
            *g = -*g;
        }
    }
    let floor = RELATIVE_FLOOR * analytic.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let patterns: Vec<Vec<bool>> = features
        .iter()
        .map(|f| model.forward(f).activation_pattern())
        .collect();

    let mean_loss = |m: &RegressorModel| -> (f64, bool) {
        let mut total = 0.0;
        let mut same = true;
        for ((f, d), pattern) in features.iter().zip(&batch).zip(&patterns) {
            let pass = m.forward(f);
            same &= pass.activation_pattern() == *pattern;
            let pred = KeypointSet::from_flat(&pass.output, d.truth.patch_to_image);
            total += crate::keypoint_loss::sample_loss(&pred, &d.truth, cfg).loss;
        }
        (total / n, same)
    };

    let chunks: Vec<(usize, usize)> = (0..parameter_count())
        .step_by(2048)
        .map(|s| (s, (s + 2048).min(parameter_count())))
        .collect();
    let results: Vec<(f64, usize, usize)> = chunks
        .par_iter()
        .map(|&(start, end)| {
            let mut m = model.clone();
            let (mut worst, mut checked, mut skipped) = (0.0f64, 0, 0);
            for i in start..end {
                let original = m.params()[i];
                m.params_mut()[i] = original + MODEL_STEP;
                let (plus, same_plus) = mean_loss(&m);
                m.params_mut()[i] = original - MODEL_STEP;
                let (minus, same_minus) = mean_loss(&m);
                m.params_mut()[i] = original;
                if !(same_plus && same_minus) {
                    skipped += 1;
                    continue;
                }
                let numeric = (plus - minus) / (2.0 * MODEL_STEP);
                worst = worst.max(relative_error(analytic[i], numeric, floor));
                checked += 1;
            }
            (worst, checked, skipped)
        })
        .collect();
    results.into_iter().fold(
        GradCheckReport {
            max_relative_error: 0.0,
            checked: 0,
            skipped: 0,
        },
        |acc, (w, c, s)| GradCheckReport {
            max_relative_error: acc.max_relative_error.max(w),
            checked: acc.checked + c,
            skipped: acc.skipped + s,
        },
    )
}
