//! The noise-derivative route: the linearized elliptic equation with
//! nonnegative potential, its finite-difference and Feynman-Kac oracles,
//! and the explicit covariance kernel I(x, y) with its exp(-m |x - y|)
//! decay.
//!
//! The derivative of the solved field with respect to the driving noise at
//! z satisfies
//!   (L + V) theta^z = a_eps(. - z),
//! with the potential
//!   V(x) = alpha^2 K_R'(w) w,   w = exp(alpha phi(x) - C_eps),
//! evaluated through the same log-domain code path as the solver Jacobian.
//! Since V >= 0 the system is symmetric positive definite and dominated by
//! the free resolvent, which integrates to the kernel
//!   I(x, y) = ((m^2 - Delta)^(-2) (a_eps * a_eps))(x - y)
//!           = (1/L^d) sum_k e^(i k.(x-y)) |ahat_eps(k)|^2 / sigma(k)^2.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_log_decay, DecayFit, FitPoint};
use crate::lattice::{apply_linv, convolve, Field, LatticeConfig};
use crate::noise::{mollify, wick_exponential, MollifierSpec, NoiseBundle, RngStream};
use crate::solver::{
    assemble_phi, pcg_solve, solve_phibar_with, ModelParams, SolveOptions, SpectralWorkspace,
    TruncationKR,
};
use crate::spectral;
use crate::stats;

/// Nonnegative potential of the linearized equation.
#[derive(Debug, Clone)]
pub struct PotentialField {
    pub v: Field,
}

/// V(x) = alpha^2 K_R'(exp(alpha phi - C_eps)) exp(alpha phi - C_eps).
/// Shares the K_R code path with the solver Jacobian bit for bit.
pub fn linearized_potential(phi: &Field, params: &ModelParams) -> Result<PotentialField> {
    params.validate_basic()?;
    let kr = TruncationKR::new(params.r_level)?;
    let alpha = params.alpha;
    let v = phi.map(|u| {
        let t = alpha * u - params.c_eps;
        let (_, weighted_slope) = kr.value_and_weighted_slope_from_log(t);
        alpha * alpha * weighted_slope
    });
    Ok(PotentialField { v })
}

/// Solution of the linearized equation for a source point z.
#[derive(Debug, Clone)]
pub struct DerivativeField {
    pub z: Vec<i64>,
    pub theta: Field,
}

/// Solves (L + V) theta = a_eps(. - z) by preconditioned conjugate
/// gradients (SPD since V >= 0).
pub fn solve_malliavin_derivative(
    potential: &PotentialField,
    z: &[i64],
    moll: &MollifierSpec,
) -> Result<DerivativeField> {
    let lat = *potential.v.lattice();
    if potential.v.values().iter().any(|&v| v < 0.0) {
        return Err(Error::Precondition("potential must be nonnegative".into()));
    }
    let source = moll.kernel(&lat)?.translate(z);
    let ws = SpectralWorkspace::new(&lat);
    let (theta, _its) = pcg_solve(&ws, potential.v.values(), source.values(), 1e-12, 50_000)?;
    Ok(DerivativeField {
        z: z.to_vec(),
        theta: Field::new(lat, theta)?,
    })
}

/// Resolvent column (L + V)^(-1) applied to a unit-mass lattice delta at
/// `site`. By symmetry of L + V this column evaluated at u equals the
/// kernel G_V(u, site), so mollifying it in its argument yields
/// theta^z(site) for every z at the cost of one linear solve.
pub fn resolvent_delta_column(
    potential: &PotentialField,
    site: &[i64],
) -> Result<Field> {
    let lat = *potential.v.lattice();
    let delta = Field::unit_mass_delta(&lat, site);
    let ws = SpectralWorkspace::new(&lat);
    let (col, _its) = pcg_solve(&ws, potential.v.values(), delta.values(), 1e-12, 50_000)?;
    Field::new(lat, col)
}

/// Directional finite-difference oracle for theta^z: reruns the full
/// pipeline with the noise perturbed along the unit-L^2-mass lattice delta
/// at z and forms the symmetric difference quotient, normalized so the
/// result matches theta^z's convention.
pub fn finite_difference_oracle(
    bundle: &NoiseBundle,
    z: &[i64],
    hstep: f64,
    moll: &MollifierSpec,
    params: &ModelParams,
    opts: &SolveOptions,
) -> Result<Field> {
    if hstep <= 0.0 {
        return Err(Error::Precondition("hstep must be positive".into()));
    }
    let lat = *bundle.xi.lattice();
    let unit_l2 = 1.0 / lat.cell_volume().sqrt();
    let zidx = lat.site_index(z);

    let solve_at = |sign: f64| -> Result<Field> {
        let mut xi = bundle.xi.clone();
        xi.values_mut()[zidx] += sign * hstep * unit_l2;
        let xi_eps = mollify(&xi, moll)?;
        let x_eps = apply_linv(&xi_eps)?;
        let (eta, _) = wick_exponential(&x_eps, params.alpha, params.c_eps);
        let (phibar, _) = solve_phibar_with(&eta, params, opts, None)?;
        assemble_phi(&phibar, &x_eps)
    };

    let phi_plus = solve_at(1.0)?;
    let phi_minus = solve_at(-1.0)?;
    // Perturbing one site by u = h^(-d/2) moves <xi, .> by u h^d, so the
    // difference quotient carries u h^d = h^(d/2).
    Ok(phi_plus
        .sub(&phi_minus)?
        .scale(1.0 / (2.0 * hstep * unit_l2 * lat.cell_volume())))
}

/// Killed-walk Feynman-Kac estimator of
///   theta^z(x) = Integral_0^inf e^(-m^2 t)
///                E_x[a_eps(x + B_t - z) e^(-Integral_0^t V(B_s) ds)] dt.
/// Euler-Maruyama steps of size dt, trapezoid accumulation in time,
/// multilinear interpolation of V, antithetic walker pairs.
/// Returns (estimate, stderr).
#[allow(clippy::too_many_arguments)]
pub fn feynman_kac_estimator(
    potential: &PotentialField,
    z: &[i64],
    x: &[i64],
    moll: &MollifierSpec,
    n_walks: u64,
    dt: f64,
    stream: RngStream,
) -> Result<(f64, f64)> {
    let lat = *potential.v.lattice();
    let d = lat.d();
    let h = lat.spacing();
    if dt > h * h / (2.0 * d as f64) + 1e-15 {
        return Err(Error::Precondition(format!(
            "dt = {dt} must be <= h^2/(2d) = {}",
            h * h / (2.0 * d as f64)
        )));
    }
    moll.validate(&lat)?;
    let m2 = lat.mass() * lat.mass();
    let t_max = 23.0 / m2;
    let n_steps = (t_max / dt).ceil() as usize;
    let n_pairs = (n_walks / 2).max(1);

    // The lattice kernel has unit Riemann mass; the walk integrates the
    // smooth bump continuously, so normalize it to unit continuum mass
    // instead (the two masses differ by a few percent when eps ~ 2h).
    let amplitude = 1.0 / continuum_bump_integral(moll, lat.d());
    let z_pos: Vec<f64> = z.iter().map(|&c| c as f64 * h).collect();
    let x_pos: Vec<f64> = x.iter().map(|&c| c as f64 * h).collect();
    let side = lat.side_length();

    let eval_a = |pos: &[f64]| -> f64 {
        let mut r2 = 0.0;
        for j in 0..d {
            let mut off = (pos[j] - z_pos[j]) % side;
            if off < -0.5 * side {
                off += side;
            } else if off >= 0.5 * side {
                off -= side;
            }
            r2 += off * off;
        }
        let u = r2 / (moll.eps * moll.eps);
        if u < 1.0 {
            amplitude * (-1.0 / (1.0 - u)).exp()
        } else {
            0.0
        }
    };

    let eval_v = |pos: &[f64]| -> f64 { multilinear(&lat, potential.v.values(), pos) };

    let base_seed = stream.seed ^ stream.stream_id.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ 0x464b;
    let observations: Vec<f64> = (0..n_pairs)
        .into_par_iter()
        .map(|pair| {
            let mut rng = RngStream::new(base_seed, pair).rng();
            // e^(t Delta) is the transition semigroup of the walk with
            // per-axis variance 2t.
            let sqrt_dt = (2.0 * dt).sqrt();
            let mut pos_p = x_pos.clone();
            let mut pos_m = x_pos.clone();
            let mut acc_p = 0.0; // integral of V along the + path
            let mut acc_m = 0.0;
            let mut int_p = 0.0;
            let mut int_m = 0.0;
            let mut f_prev_p = eval_a(&pos_p); // t = 0 weight is 1
            let mut f_prev_m = f_prev_p;
            let mut v_prev_p = eval_v(&pos_p);
            let mut v_prev_m = v_prev_p;
            let mut t = 0.0;
            for _ in 0..n_steps {
                for j in 0..d {
                    let g: f64 = rng.sample(StandardNormal);
                    let step = sqrt_dt * g;
                    pos_p[j] = (pos_p[j] + step).rem_euclid(side);
                    pos_m[j] = (pos_m[j] - step).rem_euclid(side);
                }
                t += dt;
                let v_p = eval_v(&pos_p);
                let v_m = eval_v(&pos_m);
                acc_p += 0.5 * (v_prev_p + v_p) * dt;
                acc_m += 0.5 * (v_prev_m + v_m) * dt;
                v_prev_p = v_p;
                v_prev_m = v_m;
                let w = (-m2 * t).exp();
                let f_p = w * (-acc_p).exp() * eval_a(&pos_p);
                let f_m = w * (-acc_m).exp() * eval_a(&pos_m);
                int_p += 0.5 * (f_prev_p + f_p) * dt;
                int_m += 0.5 * (f_prev_m + f_m) * dt;
                f_prev_p = f_p;
                f_prev_m = f_m;
            }
            0.5 * (int_p + int_m)
        })
        .collect();

    Ok((stats::mean(&observations), stats::stderr_of_mean(&observations)))
}

/// R^d integral of the raw bump profile exp(-1/(1 - (r/eps)^2)), by radial
/// Simpson quadrature. Its reciprocal is the unit-continuum-mass amplitude.
fn continuum_bump_integral(moll: &MollifierSpec, d: usize) -> f64 {
    let sphere_area = match d {
        1 => 2.0,
        2 => 2.0 * std::f64::consts::PI,
        3 => 4.0 * std::f64::consts::PI,
        4 => 2.0 * std::f64::consts::PI * std::f64::consts::PI,
        _ => unreachable!(),
    };
    let eps = moll.eps;
    let f = |r: f64| {
        let u = r * r / (eps * eps);
        if u < 1.0 {
            (-1.0 / (1.0 - u)).exp() * r.powi(d as i32 - 1)
        } else {
            0.0
        }
    };
    let n = 20_000;
    let h = eps / n as f64;
    let mut sum = 0.0;
    for i in 0..n {
        let a = i as f64 * h;
        sum += (f(a) + 4.0 * f(a + 0.5 * h) + f(a + h)) / 6.0 * h;
    }
    sum * sphere_area
}

fn multilinear(lat: &LatticeConfig, values: &[f64], pos: &[f64]) -> f64 {
    let d = lat.d();
    let h = lat.spacing();
    let n = lat.n() as i64;
    let mut base = [0i64; 4];
    let mut frac = [0.0f64; 4];
    for j in 0..d {
        let s = pos[j] / h;
        let b = s.floor();
        base[j] = (b as i64).rem_euclid(n);
        frac[j] = s - b;
    }
    let mut acc = 0.0;
    let corners = 1usize << d;
    let mut coords = [0i64; 4];
    for corner in 0..corners {
        let mut weight = 1.0;
        for j in 0..d {
            if corner & (1 << j) != 0 {
                coords[j] = base[j] + 1;
                weight *= frac[j];
            } else {
                coords[j] = base[j];
                weight *= 1.0 - frac[j];
            }
        }
        if weight != 0.0 {
            acc += weight * values[lat.site_index(&coords[..d])];
        }
    }
    acc
}

/// The covariance kernel I(., 0) = ((m^2 - Delta)^(-2)(a_eps * a_eps)) as a
/// field, computed spectrally in one pass.
pub fn covariance_kernel_field(moll: &MollifierSpec, lat: &LatticeConfig) -> Result<Field> {
    let kernel = moll.kernel(lat)?;
    let ahat = spectral::forward(lat, kernel.values());
    let mut k = vec![0.0; lat.d()];
    let spectrum: Vec<_> = ahat
        .iter()
        .enumerate()
        .map(|(idx, c)| {
            lat.wavevector(idx, &mut k);
            let s = lat.symbol(&k);
            rustfft::num_complex::Complex64::new(c.norm_sqr() / (s * s), 0.0)
        })
        .collect();
    Field::new(*lat, spectral::inverse(lat, spectrum))
}

/// Pointwise I(x, y); symmetric and positive. For whole curves prefer
/// [`covariance_kernel_field`], which costs the same single transform.
pub fn covariance_kernel_i(
    x: &[i64],
    y: &[i64],
    moll: &MollifierSpec,
    lat: &LatticeConfig,
) -> Result<f64> {
    let field = covariance_kernel_field(moll, lat)?;
    let offset: Vec<i64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    Ok(field.at(&offset))
}

/// Fits log I(r) against axis separations r in [r_lo, r_hi] and returns the
/// fit. The window must sit inside [2/m, L/4] to stay clear of the short-
/// range regime and torus wrap-around.
pub fn kernel_decay_check(
    moll: &MollifierSpec,
    lat: &LatticeConfig,
    r_lo: f64,
    r_hi: f64,
) -> Result<DecayFit> {
    let m = lat.mass();
    if r_lo < 2.0 / m - 1e-12 || r_hi > lat.side_length() / 4.0 + 1e-12 || r_lo >= r_hi {
        return Err(Error::Precondition(format!(
            "fit window [{r_lo}, {r_hi}] must sit inside [2/m, L/4] = [{}, {}]",
            2.0 / m,
            lat.side_length() / 4.0
        )));
    }
    let field = covariance_kernel_field(moll, lat)?;
    let h = lat.spacing();
    let mut points = Vec::new();
    let mut step = (r_lo / h).ceil() as i64;
    while step as f64 * h <= r_hi + 1e-12 {
        let mut site = vec![0i64; lat.d()];
        site[0] = step;
        points.push(FitPoint {
            r: step as f64 * h,
            value: field.at(&site),
            stderr: 0.0,
        });
        step += 1;
    }
    fit_log_decay(&points, 3.0)
}

/// Both sides of the integrated covariance bound at a pair of points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovBoundReport {
    /// integral (G * a_eps)(x1 - z) (G * a_eps)(x2 - z) dz = I(x1, x2)
    pub analytic: f64,
    /// integral (E|theta^z(x1)|^2)^(1/2) (E|theta^z(x2)|^2)^(1/2) dz
    pub empirical: f64,
    pub empirical_stderr: f64,
    pub n_samples: usize,
    pub pass: bool,
}

/// Compares the sampled z-integral of second-moment square roots of actual
/// theta^z fields against its free-resolvent domination I(x1, x2).
/// One resolvent column per probe point per sample covers all z at once.
#[allow(clippy::too_many_arguments)]
pub fn malliavin_cov_bound(
    lat: &LatticeConfig,
    moll: &MollifierSpec,
    params: &ModelParams,
    x1: &[i64],
    x2: &[i64],
    n_samples: u64,
    master_seed: u64,
    opts: &SolveOptions,
) -> Result<CovBoundReport> {
    if x1 == x2 {
        return Err(Error::Precondition("probe points must differ".into()));
    }
    let analytic = covariance_kernel_i(x1, x2, moll, lat)?;
    let kernel = moll.kernel(lat)?;

    // per-sample fields theta^z(x_i) over all z
    let columns: Vec<(Vec<f64>, Vec<f64>)> = (0..n_samples)
        .into_par_iter()
        .map(|s| -> Result<(Vec<f64>, Vec<f64>)> {
            let stream = RngStream::new(master_seed, s);
            let bundle = NoiseBundle::sample(lat, moll, stream)?;
            let (eta, _) = wick_exponential(&bundle.x_eps, params.alpha, params.c_eps);
            let (phibar, _) = solve_phibar_with(&eta, params, opts, None)?;
            let phi = assemble_phi(&phibar, &bundle.x_eps)?;
            let potential = linearized_potential(&phi, params)?;
            let theta_x1 = convolve(&resolvent_delta_column(&potential, x1)?, &kernel)?;
            let theta_x2 = convolve(&resolvent_delta_column(&potential, x2)?, &kernel)?;
            Ok((theta_x1.into_values(), theta_x2.into_values()))
        })
        .collect::<Result<Vec<_>>>()?;

    let n = columns.len();
    let sites = lat.site_count();
    let h_d = lat.cell_volume();
    let integral_from = |cols: &[&(Vec<f64>, Vec<f64>)]| -> f64 {
        let mut total = 0.0;
        for z in 0..sites {
            let m1 = cols.iter().map(|c| c.0[z] * c.0[z]).sum::<f64>() / cols.len() as f64;
            let m2 = cols.iter().map(|c| c.1[z] * c.1[z]).sum::<f64>() / cols.len() as f64;
            total += (m1 * m2).sqrt();
        }
        total * h_d
    };

    let all: Vec<&(Vec<f64>, Vec<f64>)> = columns.iter().collect();
    let empirical = integral_from(&all);

    // jackknife over samples
    let replicates: Vec<f64> = (0..n)
        .map(|drop| {
            let subset: Vec<&(Vec<f64>, Vec<f64>)> = columns
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != drop)
                .map(|(_, c)| c)
                .collect();
            integral_from(&subset)
        })
        .collect();
    let empirical_stderr = stats::jackknife_stderr(&replicates);

    let pass = empirical <= analytic * (1.0 + 1e-9) + 3.0 * empirical_stderr;
    Ok(CovBoundReport {
        analytic,
        empirical,
        empirical_stderr,
        n_samples: n,
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::SymbolMode;

    fn lat() -> LatticeConfig {
        LatticeConfig::new(2, 32, 16.0, 1.0, SymbolMode::DiscreteLaplacian).unwrap()
    }

    fn solved_sample(
        lat: &LatticeConfig,
        alpha: f64,
        stream_id: u64,
    ) -> (NoiseBundle, Field, ModelParams, MollifierSpec) {
        let moll = MollifierSpec::new(1.0);
        let params = ModelParams::for_lattice(lat, &moll, alpha, 1e6).unwrap();
        let bundle = NoiseBundle::sample(lat, &moll, RngStream::new(211, stream_id)).unwrap();
        let (eta, clamped) = wick_exponential(&bundle.x_eps, alpha, params.c_eps);
        assert_eq!(clamped, 0);
        let opts = SolveOptions::with_tol_rel(1e-12);
        let (phibar, _) = solve_phibar_with(&eta, &params, &opts, None).unwrap();
        let phi = assemble_phi(&phibar, &bundle.x_eps).unwrap();
        (bundle, phi, params, moll)
    }

    #[test]
    fn potential_is_nonnegative_and_bounded() {
        let lat = lat();
        let (_, phi, params, _) = solved_sample(&lat, 2.0, 0);
        let pot = linearized_potential(&phi, &params).unwrap();
        // K_R' w <= (4/3) R, so V <= alpha^2 (4/3) R
        let bound = params.alpha * params.alpha * (4.0 / 3.0) * params.r_level;
        for &v in pot.v.values() {
            assert!(v >= 0.0);
            assert!(v <= bound);
        }
        // alpha = 0 -> V = 0
        let p0 = ModelParams { alpha: 0.0, ..params };
        let pot0 = linearized_potential(&phi, &p0).unwrap();
        assert!(pot0.v.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn potential_vanishes_on_the_plateau() {
        let lat = lat();
        let moll = MollifierSpec::new(1.0);
        // exp(alpha phi - C) > R everywhere -> K_R' = 0 -> V = 0
        let mut params = ModelParams::for_lattice(&lat, &moll, 1.0, 2.0).unwrap();
        params.c_eps = 0.0;
        let phi = Field::constant(&lat, 10.0); // w = e^10 >> R = 2
        let pot = linearized_potential(&phi, &params).unwrap();
        assert!(pot.v.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn potential_matches_finite_difference_of_nonlinearity() {
        // V at phi equals the u-derivative of alpha K_R(exp(alpha u - C)).
        let lat = lat();
        let (_, phi, params, _) = solved_sample(&lat, 2.0, 1);
        let pot = linearized_potential(&phi, &params).unwrap();
        let kr = TruncationKR::new(params.r_level).unwrap();
        let g = |u: f64| {
            let (v, _) = kr.value_and_weighted_slope_from_log(params.alpha * u - params.c_eps);
            params.alpha * v
        };
        let h = 1e-6;
        for idx in (0..lat.site_count()).step_by(97) {
            let u = phi.values()[idx];
            let fd = (g(u + h) - g(u - h)) / (2.0 * h);
            assert!(
                (fd - pot.v.values()[idx]).abs() < 1e-6 * (1.0 + fd.abs()),
                "site {idx}: fd {fd} vs V {}",
                pot.v.values()[idx]
            );
        }
    }

    #[test]
    fn free_case_equals_resolvent_of_mollifier() {
        let lat = lat();
        let moll = MollifierSpec::new(1.0);
        let zero_pot = PotentialField { v: Field::zeros(&lat) };
        let z = [5i64, 7];
        let deriv = solve_malliavin_derivative(&zero_pot, &z, &moll).unwrap();
        let expect = apply_linv(&moll.kernel(&lat).unwrap().translate(&z)).unwrap();
        let err = deriv.theta.sub(&expect).unwrap().norm_inf();
        assert!(err < 1e-10 * expect.norm_inf(), "err {err}");
    }

    #[test]
    fn derivative_field_positive_and_dominated_by_free_solution() {
        let lat = lat();
        let (_, phi, params, moll) = solved_sample(&lat, 2.0, 2);
        let pot = linearized_potential(&phi, &params).unwrap();
        let z = [3i64, 12];
        let deriv = solve_malliavin_derivative(&pot, &z, &moll).unwrap();
        let free = apply_linv(&moll.kernel(&lat).unwrap().translate(&z)).unwrap();
        for (t, f) in deriv.theta.values().iter().zip(free.values()) {
            assert!(*t >= -1e-12);
            assert!(*t <= f + 1e-12);
        }
    }

    #[test]
    fn integral_identity_of_the_linearized_equation() {
        // m^2 sum theta h^d + sum V theta h^d = 1 (unit-mass source,
        // divergence theorem on the torus).
        let lat = lat();
        let (_, phi, params, moll) = solved_sample(&lat, 2.0, 3);
        let pot = linearized_potential(&phi, &params).unwrap();
        let deriv = solve_malliavin_derivative(&pot, &[9, 4], &moll).unwrap();
        let h_d = lat.cell_volume();
        let m2 = lat.mass() * lat.mass();
        let total: f64 = deriv
            .theta
            .values()
            .iter()
            .zip(pot.v.values())
            .map(|(t, v)| (m2 + v) * t)
            .sum::<f64>()
            * h_d;
        assert!((total - 1.0).abs() < 1e-9, "identity total {total}");
    }

    #[test]
    fn finite_difference_oracle_free_case() {
        let lat = lat();
        let moll = MollifierSpec::new(1.0);
        let params = ModelParams::for_lattice(&lat, &moll, 0.0, 10.0).unwrap();
        let bundle = NoiseBundle::sample(&lat, &moll, RngStream::new(219, 0)).unwrap();
        let z = [4i64, 4];
        let opts = SolveOptions::with_tol_rel(1e-12);
        let fd = finite_difference_oracle(&bundle, &z, 1e-3, &moll, &params, &opts).unwrap();
        let expect = apply_linv(&moll.kernel(&lat).unwrap().translate(&z)).unwrap();
        let err = fd.sub(&expect).unwrap().norm_inf();
        assert!(err < 1e-8 * expect.norm_inf(), "err {err}");
    }

    #[test]
    fn finite_difference_matches_linearized_solve_with_hsquared_convergence() {
        let lat = lat();
        let (bundle, phi, params, moll) = solved_sample(&lat, 2.0, 4);
        let pot = linearized_potential(&phi, &params).unwrap();
        let z = [6i64, 6];
        let deriv = solve_malliavin_derivative(&pot, &z, &moll).unwrap();
        let opts = SolveOptions::with_tol_rel(1e-13);
        let scale = deriv.theta.norm_inf();
        let mut errs = Vec::new();
        for &hstep in &[1e-1, 1e-2] {
            let fd =
                finite_difference_oracle(&bundle, &z, hstep, &moll, &params, &opts).unwrap();
            errs.push(fd.sub(&deriv.theta).unwrap().norm_inf() / scale);
        }
        // central differences: error drops ~100x per decade until the floor
        assert!(errs[1] < errs[0] / 30.0, "errors {errs:?}");
        let fd = finite_difference_oracle(&bundle, &z, 1e-3, &moll, &params, &opts).unwrap();
        let rel = fd.sub(&deriv.theta).unwrap().norm_inf() / scale;
        assert!(rel <= 1e-3, "relative sup error {rel}");
    }

    #[test]
    fn feynman_kac_free_case_within_three_sigma() {
        // Continuum symbol: the walk estimates the continuum resolvent, so
        // the deterministic reference must use the same operator.
        let lat = LatticeConfig::new(2, 16, 8.0, 1.0, SymbolMode::Continuum).unwrap();
        let moll = MollifierSpec::new(1.5);
        let zero_pot = PotentialField { v: Field::zeros(&lat) };
        let z = [2i64, 3];
        let x = [4i64, 3];
        let expect = apply_linv(&moll.kernel(&lat).unwrap().translate(&z))
            .unwrap()
            .at(&x);
        let h = lat.spacing();
        let dt = h * h / 4.0;
        let (est, se) =
            feynman_kac_estimator(&zero_pot, &z, &x, &moll, 40_000, dt, RngStream::new(3, 0))
                .unwrap();
        // 3 sigma plus an O(dt) discretization band
        let band = 3.0 * se + 2.0 * dt * expect.abs();
        assert!(
            (est - expect).abs() <= band,
            "estimate {est} vs {expect} (se {se}, dt {dt})"
        );
    }

    #[test]
    fn feynman_kac_decreases_with_larger_potential() {
        let lat = LatticeConfig::new(2, 16, 8.0, 1.0, SymbolMode::DiscreteLaplacian).unwrap();
        let moll = MollifierSpec::new(1.5);
        let z = [2i64, 3];
        let x = [4i64, 3];
        let dt = lat.spacing().powi(2) / 4.0;
        let mut prev = f64::INFINITY;
        for &level in &[0.0, 2.0, 8.0] {
            let pot = PotentialField { v: Field::constant(&lat, level) };
            let (est, _) =
                feynman_kac_estimator(&pot, &z, &x, &moll, 20_000, dt, RngStream::new(5, 0))
                    .unwrap();
            assert!(est < prev, "level {level}: {est} !< {prev}");
            prev = est;
        }
    }

    #[test]
    fn kernel_field_is_symmetric_positive_and_matches_direct_convolution() {
        for (d, n, l) in [(2usize, 8usize, 8.0f64), (4, 8, 8.0)] {
            let lat = LatticeConfig::new(d, n, l, 1.0, SymbolMode::DiscreteLaplacian).unwrap();
            let moll = MollifierSpec::new(2.5);
            let g_eps = apply_linv(&mollify(&Field::unit_mass_delta(&lat, &vec![0; d]), &moll).unwrap()).unwrap();
            let h_d = lat.cell_volume();
            for offsets in [[1i64, 0], [2, 1], [3, 3]] {
                let x: Vec<i64> = (0..d).map(|j| if j == 0 { offsets[0] } else { offsets[1] }).collect();
                let y = vec![0i64; d];
                let spectral_value = covariance_kernel_i(&x, &y, &moll, &lat).unwrap();
                // direct double convolution sum_u g(x-u) g(y-u) h^d
                let gx = g_eps.translate(&x);
                let direct: f64 = gx
                    .values()
                    .iter()
                    .zip(g_eps.values())
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    * h_d;
                assert!(
                    (spectral_value - direct).abs() <= 1e-10 * direct.abs().max(1e-30),
                    "d={d} x={x:?}: spectral {spectral_value} vs direct {direct}"
                );
                // symmetry
                let swapped = covariance_kernel_i(&y, &x, &moll, &lat).unwrap();
                assert_eq!(spectral_value, swapped);
                assert!(spectral_value > 0.0);
            }
        }
    }

    #[test]
    fn kernel_decay_window_is_validated() {
        let lat = LatticeConfig::new(2, 64, 32.0, 1.0, SymbolMode::DiscreteLaplacian).unwrap();
        let moll = MollifierSpec::new(1.0);
        assert!(kernel_decay_check(&moll, &lat, 3.0, 10.0).is_err());
        assert!(kernel_decay_check(&moll, &lat, 0.5, 6.0).is_err());
        let fit = kernel_decay_check(&moll, &lat, 3.5, 6.0).unwrap();
        assert!(fit.slope < 0.0);
    }

    #[test]
    fn cov_bound_free_case_matches_and_nonlinear_case_dominates() {
        let lat = LatticeConfig::new(2, 32, 16.0, 1.0, SymbolMode::DiscreteLaplacian).unwrap();
        let moll = MollifierSpec::new(1.0);
        let opts = SolveOptions::with_tol_rel(1e-11);
        let x1 = [0i64, 0];
        let x2 = [6i64, 0];
        // alpha = 0: theta^z deterministic, empirical = analytic up to solver fuzz
        let p0 = ModelParams::for_lattice(&lat, &moll, 0.0, 10.0).unwrap();
        let rep0 = malliavin_cov_bound(&lat, &moll, &p0, &x1, &x2, 3, 71, &opts).unwrap();
        assert!(
            ((rep0.empirical - rep0.analytic) / rep0.analytic).abs() < 1e-6,
            "free case: {} vs {}",
            rep0.empirical,
            rep0.analytic
        );
        // alpha != 0: domination
        let p = ModelParams::for_lattice(&lat, &moll, 2.0, 40.0).unwrap();
        let rep = malliavin_cov_bound(&lat, &moll, &p, &x1, &x2, 6, 73, &opts).unwrap();
        assert!(rep.pass);
        assert!(rep.empirical <= rep.analytic * (1.0 + 1e-9));
    }
}
