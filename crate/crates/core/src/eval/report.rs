//! CSV output of the studies. Every file starts with a header row.

use std::path::Path;

use super::{relative_error_report, AccuracyStudy, PerturbationStudy, DEPTH_BINS};
use crate::error::{Error, Result};
use crate::regressor::EpochStats;

pub const ACCURACY_HEADER: [&str; 8] = [
    "cone_index",
    "true_depth_m",
    "error_m",
    "est_x_m",
    "est_y_m",
    "est_z_m",
    "inliers",
    "status",
];

pub const FIT_HEADER: [&str; 5] = ["c0", "c1", "c2", "depth_m", "relative_error_pct"];

/// `kind` is `cone` for per-cone rows and `bin` for depth-binned means.
pub const PERTURBATION_HEADER: [&str; 9] = [
    "kind",
    "magnitude",
    "cone_index",
    "depth_m",
    "bin_lo_m",
    "bin_hi_m",
    "variance_m2",
    "count",
    "failures",
];

pub const HISTORY_HEADER: [&str; 4] = ["epoch", "learning_rate", "mean_loss", "skipped_arms"];

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(f))
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_accuracy_csv(study: &AccuracyStudy, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(ACCURACY_HEADER)?;
    for o in &study.outcomes {
        let row = match &o.result {
            Ok(e) => vec![
                o.cone_index.to_string(),
                o.true_depth.to_string(),
                e.error.to_string(),
                e.position.x.to_string(),
                e.position.y.to_string(),
                e.position.z.to_string(),
                e.inliers.to_string(),
                "ok".to_string(),
            ],
            Err(msg) => vec![
                o.cone_index.to_string(),
                o.true_depth.to_string(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                String::new(),
                msg.clone(),
            ],
        };
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Fitted coefficients followed by the relative error at `depths`.
pub fn write_fit_csv(study: &AccuracyStudy, depths: &[f64], path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(FIT_HEADER)?;
    let [c0, c1, c2] = study.curve.poly2;
    for (d, pct) in relative_error_report(&study.curve, depths) {
        w.write_record([c0, c1, c2, d, pct].map(|v| v.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_perturbation_csv(study: &PerturbationStudy, path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(PERTURBATION_HEADER)?;
    for s in &study.series {
        for c in &s.cones {
            w.write_record([
                "cone".to_string(),
                s.magnitude.to_string(),
                c.cone_index.to_string(),
                c.true_depth.to_string(),
                String::new(),
                String::new(),
                opt(c.variance),
                c.depths.len().to_string(),
                c.failures.to_string(),
            ])?;
        }
    }
    for (s, bins) in study.series.iter().zip(study.binned_mean_variances()) {
        for (&(lo, hi), v) in DEPTH_BINS.iter().zip(bins) {
            let count = s
                .cones
                .iter()
                .filter(|c| c.variance.is_some() && c.true_depth >= lo && c.true_depth <= hi)
                .count();
            w.write_record([
                "bin".to_string(),
                s.magnitude.to_string(),
                String::new(),
                String::new(),
                lo.to_string(),
                hi.to_string(),
                opt(v),
                count.to_string(),
                String::new(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_history_csv(history: &[EpochStats], path: &Path) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(HISTORY_HEADER)?;
    for h in history {
        w.write_record([
            h.epoch.to_string(),
            h.learning_rate.to_string(),
            h.mean_loss.to_string(),
            h.skipped_arms.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
