//! The coupling construction: noises glued to independent copies outside
//! disjoint balls, the noise-gluing identity, the feasible weight rate beta,
//! and the exponential decay of the windowed coupling error as a Monte Carlo
//! experiment.
//!
//! For balls D_1, D_2 centered at x_1, x_2 the glued noises are
//!   xi_i = 1_{D_i} xi + 1_{D_i^c} zeta_i,
//! so xi = xi_i inside D_i while xi_1, xi_2 are independent everywhere.
//! Mollification cannot carry the difference xi - xi_1 (supported off D_1)
//! into supp(theta) when eps < l/4, which makes
//!   theta (xi_eps - xi_{1,eps}) = 0
//! an exact, non-statistical identity on the lattice.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_log_decay, DecayFit, FitPoint};
use crate::lattice::{apply_linv, Field, LatticeConfig};
use crate::noise::{mollify, MollifierSpec, NoiseBundle, RngStream};
use crate::pipeline::solve_from_free_field;
use crate::solver::{ModelParams, SolveOptions};
use crate::stats;

/// Open torus ball.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallSpec {
    pub center: Vec<i64>,
    pub radius: f64,
}

impl BallSpec {
    pub fn new(lat: &LatticeConfig, center: Vec<i64>, radius: f64) -> Result<Self> {
        if center.len() != lat.d() {
            return Err(Error::InvalidParameter(
                "ball center dimension mismatch".into(),
            ));
        }
        if !(radius > 0.0) || radius >= 0.5 * lat.side_length() {
            return Err(Error::InvalidParameter(format!(
                "ball radius {radius} must lie in (0, L/2)"
            )));
        }
        Ok(Self { center, radius })
    }

    pub fn contains(&self, lat: &LatticeConfig, idx: usize) -> bool {
        lat.distance_from(idx, &self.center) < self.radius
    }
}

/// Glued noises and their mollified / free-field descendants.
#[derive(Debug, Clone)]
pub struct CoupledNoise {
    pub xi1: Field,
    pub xi2: Field,
    pub xi1_eps: Field,
    pub xi2_eps: Field,
    pub x1_eps: Field,
    pub x2_eps: Field,
}

/// xi_b = 1_B xi + 1_{B^c} zeta, sitewise.
pub fn glue_noise(lat: &LatticeConfig, xi: &Field, zeta: &Field, ball: &BallSpec) -> Result<Field> {
    xi.check_same_lattice(zeta)?;
    let values: Vec<f64> = (0..lat.site_count())
        .map(|idx| {
            if ball.contains(lat, idx) {
                xi.values()[idx]
            } else {
                zeta.values()[idx]
            }
        })
        .collect();
    Field::new(*lat, values)
}

/// Builds both glued noises plus their mollified and free fields.
/// The balls must be disjoint in the torus metric.
pub fn make_coupled_noises(
    bundle: &NoiseBundle,
    d1: &BallSpec,
    d2: &BallSpec,
    moll: &MollifierSpec,
) -> Result<CoupledNoise> {
    let lat = *bundle.xi.lattice();
    let center_dist = lat.torus_distance(&d1.center, &d2.center);
    if center_dist < d1.radius + d2.radius {
        return Err(Error::Precondition(format!(
            "balls overlap: center distance {center_dist} < {} + {}",
            d1.radius, d2.radius
        )));
    }
    let xi1 = glue_noise(&lat, &bundle.xi, &bundle.zeta1, d1)?;
    let xi2 = glue_noise(&lat, &bundle.xi, &bundle.zeta2, d2)?;
    let xi1_eps = mollify(&xi1, moll)?;
    let xi2_eps = mollify(&xi2, moll)?;
    let x1_eps = apply_linv(&xi1_eps)?;
    let x2_eps = apply_linv(&xi2_eps)?;
    Ok(CoupledNoise { xi1, xi2, xi1_eps, xi2_eps, x1_eps, x2_eps })
}

/// Smooth cutoff theta: 1 on B(x1, l/8), 0 off B(x1, l/4), quintic
/// smoothstep radial blend in between (C^2, so its derivative bound
/// M_theta is finite).
pub fn make_theta(lat: &LatticeConfig, x1: &[i64], l: f64) -> Field {
    let inner = l / 8.0;
    let outer = l / 4.0;
    let center = x1.to_vec();
    Field::from_fn(lat, |idx| {
        let r = lat.distance_from(idx, &center);
        if r <= inner {
            1.0
        } else if r >= outer {
            0.0
        } else {
            let tau = (r - inner) / (outer - inner);
            let s = tau * tau * tau * (10.0 + tau * (-15.0 + 6.0 * tau));
            1.0 - s
        }
    })
}

/// Checks the noise-gluing identity theta (xi_eps - xi_{1,eps}) = 0.
/// Requires eps < l/4 (otherwise mollification reaches supp theta and the
/// identity is not expected).
pub fn verify_noise_gluing(
    xi_eps: &Field,
    xi1_eps: &Field,
    theta: &Field,
    eps: f64,
    l: f64,
) -> Result<bool> {
    if eps >= l / 4.0 {
        return Err(Error::Precondition(format!(
            "eps = {eps} >= l/4 = {}; gluing identity not applicable",
            l / 4.0
        )));
    }
    let diff = xi_eps.sub(xi1_eps)?;
    let masked = diff.zip_with(theta, |a, b| a * b)?;
    Ok(masked.norm_inf() <= 1e-12 * xi_eps.norm_inf())
}

/// Largest beta on a 1e-4 grid satisfying both feasibility constraints
///   1 + beta^2 (2 - 3p)/p > 0   and   m^2 beta^2 <= m^2 / 2.
/// beta = 0 is always feasible, so the search cannot fail.
pub fn choose_beta(moment_p: f64, _m: f64) -> f64 {
    let step = 1e-4;
    let mut k = (0.5f64.sqrt() / step).ceil() as i64;
    while k >= 0 {
        let beta = k as f64 * step;
        let eqn_beta = 1.0 + beta * beta * (2.0 - 3.0 * moment_p) / moment_p;
        if eqn_beta > 0.0 && beta * beta <= 0.5 {
            return beta;
        }
        k -= 1;
    }
    0.0
}

/// K(m, beta, p) = m^2 (1 + beta^2 (2 - 3p)/p); positive for feasible beta.
pub fn coupling_constant(m: f64, beta: f64, moment_p: f64) -> f64 {
    m * m * (1.0 + beta * beta * (2.0 - 3.0 * moment_p) / moment_p)
}

/// Geometry and exponents of one coupling experiment cell.
#[derive(Debug, Clone)]
pub struct CouplingParams {
    pub moment_p: f64,
    pub beta: f64,
    pub x1: Vec<i64>,
    pub x2: Vec<i64>,
    /// Torus separation of the centers.
    pub separation: f64,
    pub theta: Field,
}

impl CouplingParams {
    pub fn new(
        lat: &LatticeConfig,
        moment_p: f64,
        x1: Vec<i64>,
        x2: Vec<i64>,
    ) -> Result<Self> {
        if moment_p < 2.0 {
            return Err(Error::InvalidParameter(
                "moment exponent must be >= 2".into(),
            ));
        }
        let separation = lat.torus_distance(&x1, &x2);
        let beta = choose_beta(moment_p, lat.mass());
        let theta = make_theta(lat, &x1, separation);
        Ok(Self { moment_p, beta, x1, x2, separation, theta })
    }
}

/// Windowed coupling error ||f(. - x1) (phi - phi1)||_p^p over B(x1, 1).
pub fn coupling_error(
    phi: &Field,
    phi1: &Field,
    params: &CouplingParams,
    window: &Field,
) -> Result<f64> {
    phi.check_same_lattice(phi1)?;
    let lat = phi.lattice();
    let f_translated = window.translate(&params.x1);
    let h_d = lat.cell_volume();
    let p = params.moment_p;
    let mut sum = 0.0;
    for i in 0..lat.site_count() {
        let fw = f_translated.values()[i];
        if fw != 0.0 {
            let chi = phi.values()[i] - phi1.values()[i];
            sum += (fw * chi).abs().powf(p);
        }
    }
    Ok(sum * h_d)
}

/// One distance cell of the coupling decay curve.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CouplingPoint {
    pub l: f64,
    pub mean_error: f64,
    pub stderr: f64,
    pub n_used: usize,
    pub moment_p: f64,
    pub beta: f64,
    /// Reference rate -m beta / 8 from the a-priori decay bound.
    pub slope_ref: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CouplingDecayResult {
    pub points: Vec<CouplingPoint>,
    pub fit: DecayFit,
    pub gluing_failures: usize,
    pub tainted_samples: usize,
}

/// Runs the coupling decay experiment: for each separation l, glue noises on
/// balls of radius l/2, solve both fields and average the windowed coupling
/// error over samples. The base-field solve is shared across distances
/// (common random numbers).
#[allow(clippy::too_many_arguments)]
pub fn coupling_decay_experiment(
    lat: &LatticeConfig,
    moll: &MollifierSpec,
    params: &ModelParams,
    window: &Field,
    distances: &[f64],
    n_samples: u64,
    master_seed: u64,
    opts: &SolveOptions,
) -> Result<CouplingDecayResult> {
    let h = lat.spacing();
    let l_max = 0.5 * lat.side_length() - 2.0 * moll.eps;
    let mut cells = Vec::new();
    for &l in distances {
        let steps = (l / h).round() as i64;
        let l_actual = steps as f64 * h;
        if l_actual <= 8.0 || l_actual > l_max + 1e-12 {
            return Err(Error::Precondition(format!(
                "separation {l_actual} outside (8, L/2 - 2 eps] = (8, {l_max}]"
            )));
        }
        let x1 = vec![0i64; lat.d()];
        let mut x2 = vec![0i64; lat.d()];
        x2[0] = steps;
        let cp = CouplingParams::new(lat, params.moment_p, x1.clone(), x2.clone())?;
        let d1 = BallSpec::new(lat, x1, l_actual / 2.0)?;
        let d2 = BallSpec::new(lat, x2, l_actual / 2.0)?;
        cells.push((l_actual, cp, d1, d2));
    }

    struct SampleRow {
        errors: Vec<f64>,
        gluing_ok: bool,
        tainted: bool,
    }

    let rows: Vec<Result<SampleRow>> = (0..n_samples)
        .into_par_iter()
        .map(|s| {
            let stream = RngStream::new(master_seed, s);
            let bundle = NoiseBundle::sample(lat, moll, stream)?;
            let base = solve_from_free_field(&bundle.x_eps, params, opts)?;
            let mut tainted = base.clamped_sites > 0 || !base.report.converged;
            let mut gluing_ok = true;
            let mut errors = Vec::with_capacity(cells.len());
            for (l_actual, cp, d1, d2) in &cells {
                let coupled = make_coupled_noises(&bundle, d1, d2, moll)?;
                gluing_ok &= verify_noise_gluing(
                    &bundle.xi_eps,
                    &coupled.xi1_eps,
                    &cp.theta,
                    moll.eps,
                    *l_actual,
                )?;
                let side1 = solve_from_free_field(&coupled.x1_eps, params, opts)?;
                tainted |= side1.clamped_sites > 0 || !side1.report.converged;
                errors.push(coupling_error(&base.phi, &side1.phi, cp, window)?);
            }
            Ok(SampleRow { errors, gluing_ok, tainted })
        })
        .collect();

    let mut per_distance: Vec<Vec<f64>> = vec![Vec::new(); cells.len()];
    let mut gluing_failures = 0usize;
    let mut tainted_samples = 0usize;
    for row in rows {
        let row = row?;
        if !row.gluing_ok {
            gluing_failures += 1;
        }
        if row.tainted {
            tainted_samples += 1;
            continue;
        }
        for (i, e) in row.errors.iter().enumerate() {
            per_distance[i].push(*e);
        }
    }

    let mut points = Vec::new();
    for (i, (l_actual, cp, _, _)) in cells.iter().enumerate() {
        let xs = &per_distance[i];
        points.push(CouplingPoint {
            l: *l_actual,
            mean_error: stats::mean(xs),
            stderr: stats::stderr_of_mean(xs),
            n_used: xs.len(),
            moment_p: cp.moment_p,
            beta: cp.beta,
            slope_ref: -lat.mass() * cp.beta / 8.0,
        });
    }

    let fit_points: Vec<FitPoint> = points
        .iter()
        .map(|p| FitPoint { r: p.l, value: p.mean_error, stderr: p.stderr })
        .collect();
    let fit = fit_log_decay(&fit_points, 3.0)?;

    Ok(CouplingDecayResult { points, fit, gluing_failures, tainted_samples })
}

/// Exact second moment E[(X_eps - X_{1,eps})(x)^2], from the spectral kernel:
/// the difference field is G_eps-filtered (xi - zeta_1) masked to D_1^c, so
/// its variance is 2 sum_y (G_eps(x - y))^2 1_{D_1^c}(y) h^d with
/// G_eps = L^(-1) a_eps.
pub fn free_difference_variance(
    lat: &LatticeConfig,
    moll: &MollifierSpec,
    d1: &BallSpec,
    x: &[i64],
) -> Result<f64> {
    let origin = vec![0i64; lat.d()];
    let delta = Field::unit_mass_delta(lat, &origin);
    let g_eps = apply_linv(&mollify(&delta, moll)?)?;
    let kernel_at_x = g_eps.translate(x);
    let h_d = lat.cell_volume();
    let mut sum = 0.0;
    for idx in 0..lat.site_count() {
        if !d1.contains(lat, idx) {
            let v = kernel_at_x.values()[idx];
            sum += v * v;
        }
    }
    Ok(2.0 * sum * h_d)
}

/// Hypercontractivity-style check row: the empirical p-th moment of
/// (X_eps - X_{1,eps})(x) against the exact Gaussian constant
/// C_p = (p-1)!! times the empirical variance to the p/2.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TailCheckRow {
    pub moment_p: u32,
    pub c_p: f64,
    pub ratio: f64,
    pub ratio_stderr: f64,
    pub pass: bool,
}

/// Samples (X_eps - X_{1,eps}) at `probe` and verifies the Gaussian moment
/// ratios for p in {2, 4, 6} within three (jackknife) standard errors.
pub fn gaussian_tail_check(
    lat: &LatticeConfig,
    moll: &MollifierSpec,
    d1: &BallSpec,
    probe: &[i64],
    moment_ps: &[u32],
    n_samples: u64,
    master_seed: u64,
) -> Result<Vec<TailCheckRow>> {
    for p in moment_ps {
        if ![2, 4, 6].contains(p) {
            return Err(Error::Precondition(format!(
                "moment exponent {p} not in {{2, 4, 6}}"
            )));
        }
    }
    let values: Vec<f64> = (0..n_samples)
        .into_par_iter()
        .map(|s| -> Result<f64> {
            let bundle = NoiseBundle::sample(lat, moll, RngStream::new(master_seed, s))?;
            let xi1 = glue_noise(lat, &bundle.xi, &bundle.zeta1, d1)?;
            let x1_eps = apply_linv(&mollify(&xi1, moll)?)?;
            Ok(bundle.x_eps.at(probe) - x1_eps.at(probe))
        })
        .collect::<Result<Vec<_>>>()?;

    let double_factorial = |p: u32| -> f64 {
        let mut acc = 1.0;
        let mut k = p as i64 - 1;
        while k > 1 {
            acc *= k as f64;
            k -= 2;
        }
        acc
    };

    let mut rows = Vec::new();
    for &p in moment_ps {
        let c_p = double_factorial(p);
        let ratio_stat = |xs: &[f64]| {
            let var = stats::mean(&xs.iter().map(|x| x * x).collect::<Vec<_>>());
            let mp = stats::mean(&xs.iter().map(|x| x.abs().powi(p as i32)).collect::<Vec<_>>());
            mp / var.powf(p as f64 / 2.0)
        };
        let ratio = ratio_stat(&values);
        let ratio_stderr = if p == 2 {
            0.0
        } else {
            stats::batch_jackknife_stderr(&values, 50, ratio_stat)
        };
        let pass = if p == 2 {
            (ratio - 1.0).abs() < 1e-12
        } else {
            (ratio - c_p).abs() <= 3.0 * ratio_stderr
        };
        rows.push(TailCheckRow { moment_p: p, c_p, ratio, ratio_stderr, pass });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::correlations::window_bump;
    use crate::lattice::SymbolMode;

    fn lat() -> LatticeConfig {
        LatticeConfig::new(2, 64, 32.0, 1.0, SymbolMode::DiscreteLaplacian).unwrap()
    }

    #[test]
    fn beta_selection_matches_analytic_feasible_set() {
        // p = 2: eqn-beta reads 1 - 2 beta^2 > 0, binding at 1/sqrt(2).
        let b2 = choose_beta(2.0, 1.0);
        assert!((b2 - 0.5f64.sqrt()).abs() < 2e-4, "beta {b2}");
        assert!(1.0 - 2.0 * b2 * b2 > 0.0);
        assert!(b2 * b2 <= 0.5);
        // p = 4: 1 - (5/2) beta^2 > 0 binds first at sqrt(2/5).
        let b4 = choose_beta(4.0, 1.0);
        assert!((b4 - (2.0f64 / 5.0).sqrt()).abs() < 2e-4, "beta {b4}");
        assert!(coupling_constant(1.0, b4, 4.0) > 0.0);
        // beta = 0 is always feasible
        assert!(choose_beta(2.0, 1.0) >= 0.0);
    }

    #[test]
    fn glued_noise_matches_xi_inside_ball() {
        let lat = lat();
        let moll = MollifierSpec::new(1.0);
        let bundle = NoiseBundle::sample(&lat, &moll, RngStream::new(1, 0)).unwrap();
        let d1 = BallSpec::new(&lat, vec![0, 0], 5.0).unwrap();
        let xi1 = glue_noise(&lat, &bundle.xi, &bundle.zeta1, &d1).unwrap();
        for idx in 0..lat.site_count() {
            if d1.contains(&lat, idx) {
                assert_eq!(xi1.values()[idx], bundle.xi.values()[idx]);
            } else {
                assert_eq!(xi1.values()[idx], bundle.zeta1.values()[idx]);
            }
        }
    }

    #[test]
    fn degenerate_coupling_zeta_equals_xi() {
        let lat = lat();
        let moll = MollifierSpec::new(1.0);
        let bundle = NoiseBundle::sample(&lat, &moll, RngStream::new(2, 0)).unwrap();
        let d1 = BallSpec::new(&lat, vec![0, 0], 5.0).unwrap();
        let xi1 = glue_noise(&lat, &bundle.xi, &bundle.xi, &d1).unwrap();
        assert_eq!(xi1.values(), bundle.xi.values());
        // and the gluing identity holds for every eps
        let xi1_eps = mollify(&xi1, &moll).unwrap();
        let theta = make_theta(&lat, &[0, 0], 12.0);
        assert!(verify_noise_gluing(&bundle.xi_eps, &xi1_eps, &theta, moll.eps, 12.0).unwrap());
    }

    #[test]
    fn overlapping_balls_are_rejected() {
        let lat = lat();
        let moll = MollifierSpec::new(1.0);
        let bundle = NoiseBundle::sample(&lat, &moll, RngStream::new(3, 0)).unwrap();
        let d1 = BallSpec::new(&lat, vec![0, 0], 6.0).unwrap();
        let d2 = BallSpec::new(&lat, vec![20, 0], 6.0).unwrap();
        assert!(make_coupled_noises(&bundle, &d1, &d2, &moll).is_err());
    }

    #[test]
    fn gluing_identity_holds_iff_eps_below_quarter_separation() {
        let lat = lat();
        let moll = MollifierSpec::new(1.0);
        let l = 12.0;
        let x1 = vec![0i64, 0];
        let mut x2 = vec![0i64, 0];
        x2[0] = (l / lat.spacing()) as i64;
        let d1 = BallSpec::new(&lat, x1.clone(), l / 2.0).unwrap();
        let d2 = BallSpec::new(&lat, x2, l / 2.0).unwrap();
        let theta = make_theta(&lat, &x1, l);
        for s in 0..20 {
            let bundle = NoiseBundle::sample(&lat, &moll, RngStream::new(5, s)).unwrap();
            let coupled = make_coupled_noises(&bundle, &d1, &d2, &moll).unwrap();
            assert!(verify_noise_gluing(
                &bundle.xi_eps,
                &coupled.xi1_eps,
                &theta,
                moll.eps,
                l
            )
            .unwrap());
        }
        // eps >= l/4 violates the precondition
        let wide = MollifierSpec::new(4.0);
        let bundle = NoiseBundle::sample(&lat, &wide, RngStream::new(5, 99)).unwrap();
        let coupled = make_coupled_noises(&bundle, &d1, &d2, &wide).unwrap();
        assert!(matches!(
            verify_noise_gluing(&bundle.xi_eps, &coupled.xi1_eps, &theta, 4.0, 12.0),
            Err(Error::Precondition(_))
        ));
        let _ = coupled;
    }

    #[test]
    fn coupled_noises_are_uncorrelated_across_balls() {
        let lat = lat();
        let moll = MollifierSpec::new(1.0);
        let l = 12.0;
        let steps = (l / lat.spacing()) as i64;
        let d1 = BallSpec::new(&lat, vec![0, 0], l / 2.0).unwrap();
        let d2 = BallSpec::new(&lat, vec![steps, 0], l / 2.0).unwrap();
        // deterministic test functions supported inside each ball
        let f = Field::from_fn(&lat, |idx| if d1.contains(&lat, idx) { 1.0 } else { 0.0 });
        let g = Field::from_fn(&lat, |idx| if d2.contains(&lat, idx) { 1.0 } else { 0.0 });
        let h_d = lat.cell_volume();
        let n = 4000;
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for s in 0..n {
            let bundle = NoiseBundle::sample(&lat, &moll, RngStream::new(7, s)).unwrap();
            let coupled = make_coupled_noises(&bundle, &d1, &d2, &moll).unwrap();
            let px = coupled
                .xi1
                .values()
                .iter()
                .zip(f.values())
                .map(|(a, b)| a * b)
                .sum::<f64>()
                * h_d;
            let py = coupled
                .xi2
                .values()
                .iter()
                .zip(g.values())
                .map(|(a, b)| a * b)
                .sum::<f64>()
                * h_d;
            xs.push(px);
            ys.push(py);
        }
        let cov = stats::covariance(&xs, &ys);
        let se = (stats::variance(&xs) * stats::variance(&ys) / n as f64).sqrt();
        assert!(cov.abs() < 3.0 * se, "cov {cov} vs se {se}");
    }

    #[test]
    fn coupling_error_trivial_cases() {
        let lat = lat();
        let cp = CouplingParams::new(&lat, 2.0, vec![0, 0], vec![32, 0]).unwrap();
        let window = window_bump(&lat);
        let phi = Field::from_fn(&lat, |i| (i as f64 * 0.01).sin());
        // identical fields -> zero error
        assert_eq!(coupling_error(&phi, &phi, &cp, &window).unwrap(), 0.0);
        // zero window -> zero error
        let zero_window = Field::zeros(&lat);
        let other = phi.scale(2.0);
        assert_eq!(coupling_error(&phi, &other, &cp, &zero_window).unwrap(), 0.0);
    }

    #[test]
    fn theta_is_one_inside_and_zero_outside() {
        let lat = lat();
        let theta = make_theta(&lat, &[0, 0], 16.0);
        let center = vec![0i64, 0];
        for idx in 0..lat.site_count() {
            let r = lat.distance_from(idx, &center);
            let v = theta.values()[idx];
            assert!((0.0..=1.0).contains(&v));
            if r <= 2.0 {
                assert_eq!(v, 1.0);
            }
            if r >= 4.0 {
                assert_eq!(v, 0.0);
            }
        }
    }

    #[test]
    fn gaussian_tail_ratios_match_double_factorials() {
        let lat = LatticeConfig::new(2, 32, 16.0, 1.0, SymbolMode::DiscreteLaplacian).unwrap();
        let moll = MollifierSpec::new(1.0);
        let d1 = BallSpec::new(&lat, vec![0, 0], 6.0).unwrap();
        // probe in the annulus between l/8 and l/4 (l = 12)
        let rows =
            gaussian_tail_check(&lat, &moll, &d1, &[4, 0], &[2, 4, 6], 4000, 13).unwrap();
        assert!((rows[0].ratio - 1.0).abs() < 1e-12);
        for row in &rows {
            assert!(row.pass, "p = {}: ratio {} +- {}", row.moment_p, row.ratio, row.ratio_stderr);
        }
        assert_eq!(rows[1].c_p, 3.0);
        assert_eq!(rows[2].c_p, 15.0);
    }

    #[test]
    fn free_difference_variance_matches_monte_carlo() {
        let lat = LatticeConfig::new(2, 32, 16.0, 1.0, SymbolMode::DiscreteLaplacian).unwrap();
        let moll = MollifierSpec::new(1.0);
        let d1 = BallSpec::new(&lat, vec![0, 0], 5.0).unwrap();
        let probe = [3i64, 0];
        let exact = free_difference_variance(&lat, &moll, &d1, &probe).unwrap();
        let n = 4000;
        let vals: Vec<f64> = (0..n)
            .map(|s| {
                let bundle = NoiseBundle::sample(&lat, &moll, RngStream::new(17, s)).unwrap();
                let xi1 = glue_noise(&lat, &bundle.xi, &bundle.zeta1, &d1).unwrap();
                let x1_eps = apply_linv(&mollify(&xi1, &moll).unwrap()).unwrap();
                bundle.x_eps.at(&probe) - x1_eps.at(&probe)
            })
            .collect();
        let var = stats::variance(&vals);
        let se = (2.0 / n as f64).sqrt() * exact;
        assert!((var - exact).abs() < 3.0 * se, "MC {var} vs exact {exact}");
    }
}
