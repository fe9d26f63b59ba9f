//! Experiment harness: position error versus distance and depth variance
//! under bounding-box perturbation.

mod fit;
pub mod plot;
pub mod report;

pub use fit::fit_poly2;

use nalgebra::Point3;
use rayon::prelude::*;

use crate::cone_model::ConeModel;
use crate::error::{Error, Result};
use crate::keypoint_loss::KeypointSet;
use crate::pnp::{cone_position, solve_pnp_ransac, Correspondence, RansacConfig};
use crate::regressor::{oracle_keypoints, RegressorModel};
use crate::seed;
use crate::synth::{generate_scene, perturb_bbox, BBoxPerturbation, SceneRenderer, SceneSpec};

/// Depth bin edges used for the error-growth summary, meters.
pub const DEPTH_BINS: [(f64, f64); 4] = [(4.0, 8.0), (8.0, 12.0), (12.0, 16.0), (16.0, 18.0)];

pub const MIN_TRIALS: usize = 30;

#[derive(Debug, Clone, Copy)]
pub enum KeypointProvider<'a> {
    /// Ground truth plus Gaussian noise of `sigma` patch pixels.
    Oracle {
        sigma: f64,
    },
    Model(&'a RegressorModel),
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StudyConfig {
    pub ransac: RansacConfig,
    pub seed: u64,
}

/// Patch keypoints -> image pixels -> RANSAC PnP.
pub fn localize(
    keypoints: &KeypointSet,
    model: &ConeModel,
    spec: &SceneSpec,
    ransac: &RansacConfig,
) -> Result<crate::pnp::PoseEstimate> {
    let corrs: Vec<Correspondence> = keypoints
        .image_points()
        .iter()
        .zip(&model.keypoints)
        .enumerate()
        .map(|(i, (img, m))| Correspondence {
            image_point: *img,
            model_point: *m,
            index: i + 1,
        })
        .collect();
    solve_pnp_ransac(&corrs, &spec.intrinsics, ransac)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConeOutcome {
    pub cone_index: usize,
    /// Ground-truth depth in the camera frame.
    pub true_depth: f64,
    pub result: std::result::Result<ConeEstimate, String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConeEstimate {
    /// Estimated base position in the vehicle frame.
    pub position: Point3<f64>,
    pub error: f64,
    pub inliers: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorCurve {
    /// `(true depth, Euclidean position error)`, meters.
    pub samples: Vec<(f64, f64)>,
    /// `c0 + c1 d + c2 d^2`.
    pub poly2: [f64; 3],
}

impl ErrorCurve {
    pub fn eval(&self, depth: f64) -> f64 {
        let [c0, c1, c2] = self.poly2;
        c0 + depth * (c1 + depth * c2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyStudy {
    pub outcomes: Vec<ConeOutcome>,
    pub curve: ErrorCurve,
    /// Cones not rendered because they left the image.
    pub skipped: usize,
}

impl AccuracyStudy {
    pub fn failures(&self) -> usize {
        self.outcomes.iter().filter(|o| o.result.is_err()).count()
    }

    /// Median error per [`DEPTH_BINS`] entry (upper edge inclusive for the last bin).
    pub fn binned_median_errors(&self) -> Vec<Option<f64>> {
        binned(&self.curve.samples, &DEPTH_BINS, median)
    }
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Applies `stat` to the ordinates of the samples in each bin.
pub fn binned(
    samples: &[(f64, f64)],
    bins: &[(f64, f64)],
    stat: impl Fn(&mut [f64]) -> f64,
) -> Vec<Option<f64>> {
    bins.iter()
        .enumerate()
        .map(|(i, &(lo, hi))| {
            let last = i + 1 == bins.len();
            let mut v: Vec<f64> = samples
                .iter()
                .filter(|(d, _)| *d >= lo && (*d < hi || (last && *d <= hi)))
                .map(|&(_, e)| e)
                .collect();
            (!v.is_empty()).then(|| stat(&mut v))
        })
        .collect()
}

fn provide(
    provider: &KeypointProvider<'_>,
    truth: &KeypointSet,
    patch: &crate::regressor::Patch,
    noise_seed: u64,
) -> Result<KeypointSet> {
    match provider {
        KeypointProvider::Oracle { sigma } => oracle_keypoints(truth, *sigma, noise_seed),
        KeypointProvider::Model(m) => Ok(m.predict(patch)),
    }
}

/// Runs the full pipeline on every visible cone and fits the error curve.
/// Cones where PnP fails are reported in `outcomes` and left out of the fit.
pub fn run_accuracy_study(
    spec: &SceneSpec,
    model: &ConeModel,
    provider: KeypointProvider<'_>,
    cfg: &StudyConfig,
) -> Result<AccuracyStudy> {
    let scene = generate_scene(spec, model);
    let noise_seed = seed::derive(cfg.seed, seed::NOISE);
    let to_vehicle = spec.camera_to_vehicle();
    let mut outcomes = Vec::with_capacity(scene.cones.len());
    scene
        .cones
        .par_iter()
        .map(|cone| -> Result<ConeOutcome> {
            let kp = provide(
                &provider,
                &cone.truth_keypoints,
                &cone.patch,
                seed::indexed(noise_seed, cone.cone_index as u64),
            )?;
            let result = localize(&kp, model, spec, &cfg.ransac)
                .map(|est| {
                    let position = cone_position(&est, &to_vehicle);
                    ConeEstimate {
                        position,
                        error: (position - cone.truth_position).norm(),
                        inliers: est.inlier_count(),
                    }
                })
                .map_err(|e| e.to_string());
            Ok(ConeOutcome {
                cone_index: cone.cone_index,
                true_depth: cone.truth_camera.z,
                result,
            })
        })
        .collect_into_vec(&mut outcomes);
    let outcomes: Vec<ConeOutcome> = outcomes.into_iter().collect::<Result<_>>()?;

    let samples: Vec<(f64, f64)> = outcomes
        .iter()
        .filter_map(|o| o.result.as_ref().ok().map(|e| (o.true_depth, e.error)))
        .collect();
    let poly2 = fit_poly2(&samples)?;
    Ok(AccuracyStudy {
        outcomes,
        curve: ErrorCurve { samples, poly2 },
        skipped: scene.skipped,
    })
}

/// Unbiased sample variance with Welford's update; identical inputs give
/// exactly zero.
pub fn sample_variance(values: &[f64]) -> Option<f64> {
    if values.len() < 2 {
        return None;
    }
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &x) in values.iter().enumerate() {
        let delta = x - mean;
        mean += delta / (i + 1) as f64;
        m2 += delta * (x - mean);
    }
    Some(m2 / (values.len() - 1) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConeVariance {
    pub cone_index: usize,
    pub true_depth: f64,
    /// Depth estimates (camera z) of the successful trials.
    pub depths: Vec<f64>,
    pub variance: Option<f64>,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationSeries {
    pub magnitude: f64,
    pub cones: Vec<ConeVariance>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerturbationStudy {
    pub trials: usize,
    pub series: Vec<PerturbationSeries>,
}

impl PerturbationStudy {
    /// Cones with a variance at every magnitude.
    pub fn common_cones(&self) -> Vec<usize> {
        let Some(first) = self.series.first() else {
            return Vec::new();
        };
        first
            .cones
            .iter()
            .map(|c| c.cone_index)
            .filter(|idx| {
                self.series.iter().all(|s| {
                    s.cones
                        .iter()
                        .any(|c| c.cone_index == *idx && c.variance.is_some())
                })
            })
            .collect()
    }

    /// Mean depth variance per magnitude over [`Self::common_cones`].
    pub fn mean_variances(&self) -> Vec<f64> {
        let common = self.common_cones();
        self.series
            .iter()
            .map(|s| {
                let v: Vec<f64> = s
                    .cones
                    .iter()
                    .filter(|c| common.contains(&c.cone_index))
                    .filter_map(|c| c.variance)
                    .collect();
                if v.is_empty() {
                    f64::NAN
                } else {
                    v.iter().sum::<f64>() / v.len() as f64
                }
            })
            .collect()
    }

    /// Mean variance per depth bin and magnitude.
    pub fn binned_mean_variances(&self) -> Vec<Vec<Option<f64>>> {
        self.series
            .iter()
            .map(|s| {
                let pts: Vec<(f64, f64)> = s
                    .cones
                    .iter()
                    .filter_map(|c| c.variance.map(|v| (c.true_depth, v)))
                    .collect();
                binned(&pts, &DEPTH_BINS, |v| {
                    v.iter().sum::<f64>() / v.len() as f64
                })
            })
            .collect()
    }
}

/// Re-crops every cone from perturbed boxes, regresses keypoints, solves for
/// the pose and records the variance of the estimated depth. The same
/// uniform draws are reused across magnitudes (scaled by the magnitude).
pub fn run_perturbation_study(
    spec: &SceneSpec,
    model: &ConeModel,
    provider: KeypointProvider<'_>,
    magnitudes: &[f64],
    trials: usize,
    cfg: &StudyConfig,
) -> Result<PerturbationStudy> {
    let KeypointProvider::Model(regressor) = provider else {
        return Err(Error::OracleProviderRejected);
    };
    if trials < MIN_TRIALS {
        return Err(Error::InvalidArgument(format!(
            "perturbation study needs at least {MIN_TRIALS} trials, got {trials}"
        )));
    }
    let renderer = SceneRenderer::new(spec, model);
    let visible: Vec<usize> = (0..renderer.len())
        .filter(|&i| {
            renderer
                .instance(i)
                .is_some_and(|c| c.bbox.inside(&spec.intrinsics))
        })
        .collect();
    let perturb_seed = seed::derive(cfg.seed, seed::PERTURB);

    let series = magnitudes
        .iter()
        .map(|&magnitude| {
            let mut cones = Vec::with_capacity(visible.len());
            visible
                .par_iter()
                .map(|&idx| -> Result<ConeVariance> {
                    let inst = renderer.instance(idx).expect("visible cone");
                    let mut depths = Vec::with_capacity(trials);
                    let mut failures = 0;
                    for t in 0..trials {
                        let p = BBoxPerturbation {
                            magnitude,
                            seed: seed::indexed(seed::indexed(perturb_seed, idx as u64), t as u64),
                        };
                        let bbox = match perturb_bbox(&inst.bbox, &p, &spec.intrinsics) {
                            Ok(b) => b,
                            Err(Error::DegenerateBox { .. }) => {
                                failures += 1;
                                continue;
                            }
                            Err(e) => return Err(e),
                        };
                        let patch = renderer.render_patch(idx, &bbox);
                        let kp = regressor.predict(&patch);
                        match localize(&kp, model, spec, &cfg.ransac) {
                            Ok(est) => depths.push(est.translation.z),
                            Err(_) => failures += 1,
                        }
                    }
                    Ok(ConeVariance {
                        cone_index: idx,
                        true_depth: inst.pose.translation.z,
                        variance: sample_variance(&depths),
                        depths,
                        failures,
                    })
                })
                .collect_into_vec(&mut cones);
            Ok(PerturbationSeries {
                magnitude,
                cones: cones.into_iter().collect::<Result<_>>()?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PerturbationStudy { trials, series })
}

/// `(depth, 100 * error(depth) / depth)` from the fitted curve.
pub fn relative_error_report(curve: &ErrorCurve, depths: &[f64]) -> Vec<(f64, f64)> {
    depths
        .iter()
        .map(|&d| (d, 100.0 * curve.eval(d) / d))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve(poly2: [f64; 3]) -> ErrorCurve {
        ErrorCurve {
            samples: Vec::new(),
            poly2,
        }
    }

    #[test]
    fn relative_report_values() {
        let c = curve([0.0, 0.05, 0.0]);
        let r = relative_error_report(&c, &[5.0]);
        assert!((r[0].1 - 5.0).abs() < 1e-12);
        let c = curve([0.0, 0.0625, 0.0]);
        let r = relative_error_report(&c, &[16.0]);
        assert!((r[0].1 - 6.25).abs() < 1e-12);
        let r = relative_error_report(&curve([0.0; 3]), &[4.0, 9.0, 18.0]);
        assert!(r.iter().all(|&(_, p)| p == 0.0));
    }

    #[test]
    fn welford_variance() {
        assert_eq!(sample_variance(&[3.7; 40]), Some(0.0));
        let v = sample_variance(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((v - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(sample_variance(&[1.0]), None);
    }

    #[test]
    fn medians_and_bins() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        let samples = [(5.0, 1.0), (7.0, 3.0), (9.0, 2.0), (18.0, 4.0)];
        let b = binned(&samples, &DEPTH_BINS, median);
        assert_eq!(b, vec![Some(2.0), Some(2.0), None, Some(4.0)]);
    }
}
