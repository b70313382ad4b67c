//! Log-linear decay fits shared by the correlation, coupling and kernel
//! harnesses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One measured point of a decay curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitPoint {
    pub r: f64,
    pub value: f64,
    pub stderr: f64,
}

/// Weighted log-linear fit log(value) = intercept + slope * r.
///
/// Only points with value > drop_sigma * stderr enter the fit (the rest sit
/// at or below the Monte Carlo noise floor); `usable_range` records the span
/// that survived.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayFit {
    pub points: Vec<FitPoint>,
    pub slope: f64,
    pub slope_stderr: f64,
    pub intercept: f64,
    pub r2: f64,
    pub usable_range: (f64, f64),
    pub n_used: usize,
}

/// Fits log(value) against r by weighted least squares. Log-scale variances
/// come from the delta method, sigma_log = stderr / value. Points whose value
/// is not above `drop_sigma * stderr` are dropped. Deterministic points
/// (stderr = 0) get unit weights.
pub fn fit_log_decay(points: &[FitPoint], drop_sigma: f64) -> Result<DecayFit> {
    let usable: Vec<&FitPoint> = points
        .iter()
        .filter(|p| p.value > drop_sigma * p.stderr && p.value > 0.0 && p.value.is_finite())
        .collect();
    if usable.len() < 3 {
        return Err(Error::FitRejected(format!(
            "{} usable points above the noise floor, need at least 3",
            usable.len()
        )));
    }

    let log_pts: Vec<(f64, f64, f64)> = usable
        .iter()
        .map(|p| {
            let w = if p.stderr > 0.0 {
                let sigma_log = p.stderr / p.value;
                1.0 / (sigma_log * sigma_log)
            } else {
                1.0
            };
            (p.r, p.value.ln(), w)
        })
        .collect();

    let sw: f64 = log_pts.iter().map(|p| p.2).sum();
    let mx = log_pts.iter().map(|p| p.0 * p.2).sum::<f64>() / sw;
    let my = log_pts.iter().map(|p| p.1 * p.2).sum::<f64>() / sw;
    let sxx: f64 = log_pts.iter().map(|p| p.2 * (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = log_pts.iter().map(|p| p.2 * (p.0 - mx) * (p.1 - my)).sum();
    if sxx <= 0.0 {
        return Err(Error::FitRejected("degenerate abscissae".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;

    let ss_res: f64 = log_pts
        .iter()
        .map(|p| {
            let e = p.1 - (intercept + slope * p.0);
            p.2 * e * e
        })
        .sum();
    let ss_tot: f64 = log_pts.iter().map(|p| p.2 * (p.1 - my) * (p.1 - my)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    let slope_stderr = (1.0 / sxx).sqrt();

    let lo = usable.iter().map(|p| p.r).fold(f64::INFINITY, f64::min);
    let hi = usable.iter().map(|p| p.r).fold(f64::NEG_INFINITY, f64::max);

    Ok(DecayFit {
        points: points.to_vec(),
        slope,
        slope_stderr,
        intercept,
        r2,
        usable_range: (lo, hi),
        n_used: usable.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exact_exponential() {
        let points: Vec<FitPoint> = (1..8)
            .map(|i| {
                let r = i as f64;
                FitPoint { r, value: 3.0 * (-0.8 * r).exp(), stderr: 0.0 }
            })
            .collect();
        let fit = fit_log_decay(&points, 3.0).unwrap();
        assert!((fit.slope + 0.8).abs() < 1e-12);
        assert!((fit.intercept - 3.0f64.ln()).abs() < 1e-12);
        assert!(fit.r2 > 1.0 - 1e-12);
        assert_eq!(fit.n_used, 7);
    }

    #[test]
    fn drops_noise_floor_points_and_refuses_thin_fits() {
        let mut points: Vec<FitPoint> = (1..5)
            .map(|i| {
                let r = i as f64;
                FitPoint { r, value: (-r).exp(), stderr: 1e-6 }
            })
            .collect();
        points.push(FitPoint { r: 20.0, value: 1e-12, stderr: 1e-9 });
        let fit = fit_log_decay(&points, 3.0).unwrap();
        assert_eq!(fit.n_used, 4);
        assert!((fit.usable_range.1 - 4.0).abs() < 1e-12);

        let thin: Vec<FitPoint> = points[..2].to_vec();
        assert!(fit_log_decay(&thin, 3.0).is_err());
    }
}
