use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Least-squares quadratic `y = c0 + c1 x + c2 x^2` via the normal
/// equations, with the abscissa scaled to `[-1, 1]` before forming them.
pub fn fit_poly2(samples: &[(f64, f64)]) -> Result<[f64; 3]> {
    let mut xs: Vec<f64> = samples.iter().map(|s| s.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.len() < 3
        || samples
            .iter()
            .any(|(x, y)| !x.is_finite() || !y.is_finite())
    {
        return Err(Error::RankDeficient);
    }
    let scale = xs.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut ata = Matrix3::<f64>::zeros();
    let mut aty = Vector3::<f64>::zeros();
    for &(x, y) in samples {
        let u = x / scale;
        let row = Vector3::new(1.0, u, u * u);
        ata += row * row.transpose();
        aty += row * y;
    }
    let b = ata.cholesky().ok_or(Error::RankDeficient)?.solve(&aty);
    Ok([b[0], b[1] / scale, b[2] / (scale * scale)])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_parabola() {
        let s: Vec<_> = (0..10)
            .map(|i| {
                let x = i as f64 * 0.7 - 2.0;
                (x, 1.0 + 2.0 * x + 3.0 * x * x)
            })
            .collect();
        let c = fit_poly2(&s).unwrap();
        assert!((c[0] - 1.0).abs() < 1e-9);
        assert!((c[1] - 2.0).abs() < 1e-9);
        assert!((c[2] - 3.0).abs() < 1e-9);
    }

    #[test]
    fn two_samples_rank_deficient() {
        assert!(matches!(
            fit_poly2(&[(1.0, 2.0), (3.0, 4.0)]),
            Err(Error::RankDeficient)
        ));
        assert!(matches!(
            fit_poly2(&[(1.0, 2.0), (1.0, 4.0), (3.0, 1.0), (3.0, 0.0)]),
            Err(Error::RankDeficient)
        ));
    }
}
