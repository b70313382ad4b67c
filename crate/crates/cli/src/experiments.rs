//! The named experiments: each consumes a resolved config, writes CSV/JSON
//! artifacts with deterministic bytes, and returns embedded assertions.

use std::path::{Path, PathBuf};

use exp_sq_core::coupling::{coupling_decay_experiment, make_coupled_noises, BallSpec};
use exp_sq_core::correlations::{decay_scan, window_bump, ObservableSpec};
use exp_sq_core::error::Result;
use exp_sq_core::fit::{fit_log_decay, FitPoint};
use exp_sq_core::greenfn::{green_bounds_check, green_quadrature, GreenSpec};
use exp_sq_core::io::{fmt_g17, write_csv};
use exp_sq_core::lattice::{
    apply_l, apply_linv, besov_norm, weighted_lp_norm, Field, NormSpec, WeightSpec,
};
use exp_sq_core::malliavin::{
    covariance_kernel_field, feynman_kac_estimator, finite_difference_oracle,
    kernel_decay_check, linearized_potential, solve_malliavin_derivative,
};
use exp_sq_core::noise::{wick_exponential, MollifierSpec, NoiseBundle, RngStream};
use exp_sq_core::pipeline::draw_sample;
use exp_sq_core::solver::{
    solve_phibar, solve_phibar_with, SolveOptions, TruncationKR,
};
use exp_sq_core::{Error, LatticeConfig};

use crate::config::{ExperimentConfig, ExperimentKind, ResolvedConfig};
use crate::manifest::Assertion;

pub struct ExperimentResult {
    pub artifacts: Vec<PathBuf>,
    pub assertions: Vec<Assertion>,
}

fn assert_row(name: &str, pass: bool, detail: String) -> Assertion {
    Assertion { name: name.to_string(), pass, detail }
}

pub fn run_experiment(
    cfg: &ExperimentConfig,
    resolved: &ResolvedConfig,
    out_dir: &Path,
    master_seed: u64,
) -> Result<ExperimentResult> {
    match cfg.experiment {
        ExperimentKind::Decay => run_decay(cfg, resolved, out_dir, master_seed),
        ExperimentKind::Coupling => run_coupling(cfg, resolved, out_dir, master_seed),
        ExperimentKind::MalliavinCheck => run_malliavin(cfg, resolved, out_dir, master_seed),
        ExperimentKind::KernelDecay => run_kernel_decay(cfg, resolved, out_dir),
        ExperimentKind::GreenCheck => run_green_check(cfg, resolved, out_dir),
        ExperimentKind::Selftest => run_selftest(resolved, out_dir, master_seed),
    }
}

fn run_decay(
    cfg: &ExperimentConfig,
    resolved: &ResolvedConfig,
    out_dir: &Path,
    master_seed: u64,
) -> Result<ExperimentResult> {
    let section = cfg.decay.as_ref().expect("validated");
    let lat = &resolved.lattice;
    let scale = section.observable_scale.unwrap_or(1.0);
    let spec = ObservableSpec::tanh_mean(lat, scale);
    let spacing = section
        .translate_spacing
        .unwrap_or_else(|| (lat.n() / 16).max(2));
    let res = decay_scan(
        &spec,
        &spec,
        &section.distances,
        lat,
        &resolved.mollifier,
        &resolved.params,
        cfg.run.n_samples,
        master_seed,
        &SolveOptions::default(),
        spacing,
    )?;

    let rows: Vec<Vec<String>> = res
        .points
        .iter()
        .map(|p| {
            vec![
                fmt_g17(p.r),
                fmt_g17(p.cov),
                fmt_g17(p.stderr),
                p.n_used.to_string(),
            ]
        })
        .collect();
    let csv_path = out_dir.join("decay.csv");
    write_csv(&csv_path, &["r", "cov", "stderr", "n_usable"], &rows)?;
    let fit_path = out_dir.join("decay_fit.json");
    std::fs::write(
        &fit_path,
        serde_json::to_string_pretty(&res.fit)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?,
    )?;

    let assertions = match &res.fit {
        Some(fit) => vec![
            assert_row(
                "decay_fit_available",
                true,
                format!("{} usable points", fit.n_used),
            ),
            assert_row(
                "decay_slope_negative",
                fit.slope < 0.0,
                format!("slope = {:.6}", fit.slope),
            ),
            assert_row(
                "decay_fit_quality",
                fit.r2 >= 0.9,
                format!("R^2 = {:.4} on {} usable points", fit.r2, fit.n_used),
            ),
        ],
        None => vec![assert_row(
            "decay_fit_available",
            false,
            res.fit_refusal.clone().unwrap_or_default(),
        )],
    };
    Ok(ExperimentResult { artifacts: vec![csv_path, fit_path], assertions })
}

fn run_coupling(
    cfg: &ExperimentConfig,
    resolved: &ResolvedConfig,
    out_dir: &Path,
    master_seed: u64,
) -> Result<ExperimentResult> {
    let section = cfg.coupling.as_ref().expect("validated");
    let lat = &resolved.lattice;
    let window = window_bump(lat);
    let res = coupling_decay_experiment(
        lat,
        &resolved.mollifier,
        &resolved.params,
        &window,
        &section.distances,
        cfg.run.n_samples,
        master_seed,
        &SolveOptions::with_tol_rel(1e-12),
    )?;

    let rows: Vec<Vec<String>> = res
        .points
        .iter()
        .map(|p| {
            vec![
                fmt_g17(p.l),
                fmt_g17(p.mean_error),
                fmt_g17(p.stderr),
                p.n_used.to_string(),
                fmt_g17(p.moment_p),
                fmt_g17(p.beta),
                fmt_g17(p.slope_ref),
            ]
        })
        .collect();
    let csv_path = out_dir.join("coupling.csv");
    write_csv(
        &csv_path,
        &["l", "mean_error", "stderr", "n", "p", "beta", "slope_ref"],
        &rows,
    )?;
    let fit_path = out_dir.join("coupling_fit.json");
    std::fs::write(
        &fit_path,
        serde_json::to_string_pretty(&res.fit)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?,
    )?;

    let slope_ref = res.points.first().map(|p| p.slope_ref).unwrap_or(0.0);
    let assertions = vec![
        assert_row(
            "coupling_gluing_identity",
            res.gluing_failures == 0,
            format!("{} gluing violations", res.gluing_failures),
        ),
        assert_row(
            "coupling_slope_negative",
            res.fit.slope < 0.0,
            format!("slope = {:.6}", res.fit.slope),
        ),
        assert_row(
            "coupling_fit_quality",
            res.fit.r2 >= 0.9,
            format!("R^2 = {:.4}", res.fit.r2),
        ),
        assert_row(
            "coupling_decay_at_least_half_reference",
            res.fit.slope <= 0.5 * slope_ref,
            format!("slope {:.4} vs reference {:.4}", res.fit.slope, slope_ref),
        ),
    ];
    Ok(ExperimentResult { artifacts: vec![csv_path, fit_path], assertions })
}

fn run_malliavin(
    cfg: &ExperimentConfig,
    resolved: &ResolvedConfig,
    out_dir: &Path,
    master_seed: u64,
) -> Result<ExperimentResult> {
    let section = cfg.malliavin.as_ref().expect("validated");
    let lat = &resolved.lattice;
    let moll = &resolved.mollifier;
    let params = &resolved.params;
    let hstep = section.hstep.unwrap_or(1e-3);
    let n_walkers = section.n_walkers.unwrap_or(20_000);
    let opts = SolveOptions::with_tol_rel(1e-12);
    let h = lat.spacing();
    let dt = h * h / (2.0 * lat.d() as f64);

    let mut rows = Vec::new();
    let mut max_fd_rel = 0.0f64;
    let mut fk_all_ok = true;
    let x = vec![0i64; lat.d()];
    for s in 0..cfg.run.n_samples {
        let sample = draw_sample(lat, moll, params, RngStream::new(master_seed, s), &opts)?;
        let potential = linearized_potential(&sample.phi, params)?;
        for &offset in &section.probe_offsets {
            let mut z = vec![0i64; lat.d()];
            z[0] = offset;
            let deriv = solve_malliavin_derivative(&potential, &z, moll)?;
            let fd = finite_difference_oracle(&sample.bundle, &z, hstep, moll, params, &opts)?;
            let fd_rel =
                fd.sub(&deriv.theta)?.norm_inf() / deriv.theta.norm_inf().max(1e-300);
            max_fd_rel = max_fd_rel.max(fd_rel);
            let (fk, fk_se) = feynman_kac_estimator(
                &potential,
                &z,
                &x,
                moll,
                n_walkers,
                dt,
                RngStream::new(master_seed, s),
            )?;
            let solve_at_x = deriv.theta.at(&x);
            let band = 3.0 * fk_se + 2.0 * dt * solve_at_x.abs();
            fk_all_ok &= (fk - solve_at_x).abs() <= band;
            rows.push(vec![
                offset.to_string(),
                "0".to_string(),
                fmt_g17(solve_at_x),
                fmt_g17(fd.at(&x)),
                fmt_g17(fk),
                fmt_g17(fk_se),
            ]);
        }
    }

    let csv_path = out_dir.join("probes.csv");
    write_csv(
        &csv_path,
        &["z", "x", "theta_solve", "theta_fd", "theta_fk", "fk_stderr"],
        &rows,
    )?;
    let assertions = vec![
        assert_row(
            "malliavin_fd_agreement",
            max_fd_rel <= 1e-3,
            format!("max relative sup error {max_fd_rel:.3e} at hstep {hstep:.1e}"),
        ),
        assert_row(
            "malliavin_fk_agreement",
            fk_all_ok,
            "walker estimates within 3 sigma + O(dt) of the deterministic solve".into(),
        ),
    ];
    Ok(ExperimentResult { artifacts: vec![csv_path], assertions })
}

fn run_kernel_decay(
    cfg: &ExperimentConfig,
    resolved: &ResolvedConfig,
    out_dir: &Path,
) -> Result<ExperimentResult> {
    let section = cfg.kernel_decay.as_ref().expect("validated");
    let lat = &resolved.lattice;
    let moll = &resolved.mollifier;
    let m = lat.mass();

    let kernel = covariance_kernel_field(moll, lat)?;
    let h = lat.spacing();
    let mut rows = Vec::new();
    let mut step = (2.0 / m / h).ceil() as i64;
    while (step as f64) * h <= lat.side_length() / 4.0 + 1e-12 {
        let mut site = vec![0i64; lat.d()];
        site[0] = step;
        let value = kernel.at(&site);
        rows.push(vec![
            fmt_g17(step as f64 * h),
            fmt_g17(value),
            fmt_g17(value.ln()),
        ]);
        step += 1;
    }
    let csv_path = out_dir.join("kernel.csv");
    write_csv(&csv_path, &["r", "I", "log_I"], &rows)?;

    let fit = kernel_decay_check(moll, lat, section.r_lo, section.r_hi)?;
    let fit_path = out_dir.join("kernel_fit.json");
    std::fs::write(
        &fit_path,
        serde_json::to_string_pretty(&fit).map_err(|e| Error::InvalidParameter(e.to_string()))?,
    )?;

    let in_band = fit.slope >= -1.15 * m && fit.slope <= -0.85 * m;
    let assertions = vec![assert_row(
        "kernel_decay_rate",
        in_band,
        format!("slope {:.4} vs target [-1.15 m, -0.85 m], m = {m}", fit.slope),
    )];
    Ok(ExperimentResult { artifacts: vec![csv_path, fit_path], assertions })
}

fn run_green_check(
    cfg: &ExperimentConfig,
    resolved: &ResolvedConfig,
    out_dir: &Path,
) -> Result<ExperimentResult> {
    let section = cfg.green.as_ref().expect("validated");
    let m = resolved.lattice.mass();
    let mut artifacts = Vec::new();
    let mut assertions = Vec::new();
    let mut reports = Vec::new();
    for &d in &section.dims {
        let spec = GreenSpec::new(d, m)?;
        // radial profile on a log grid
        let mut rows = Vec::new();
        let mut r = 1e-3;
        let r_max = 10.0 / m;
        while r <= r_max * (1.0 + 1e-12) {
            let g = green_quadrature(r, &spec)?;
            let dr = r * 1e-3;
            let slope = (green_quadrature(r + dr, &spec)?.ln()
                - green_quadrature((r - dr).max(1e-12), &spec)?.ln())
                / (dr + dr.min(r - 1e-12));
            rows.push(vec![fmt_g17(r), fmt_g17(g), fmt_g17(g.ln()), fmt_g17(slope)]);
            r *= 10f64.powf(0.125);
        }
        let csv_path = out_dir.join(format!("green_d{d}.csv"));
        write_csv(&csv_path, &["r", "G", "logG", "local_slope"], &rows)?;
        artifacts.push(csv_path);

        let report = green_bounds_check(&spec)?;
        match d {
            1 => {
                let mut max_rel = 0.0f64;
                for &r in &[0.1, 1.0, 3.0, 8.0] {
                    let exact = (-m * r).exp() / (2.0 * m);
                    max_rel =
                        max_rel.max((green_quadrature(r, &spec)? - exact).abs() / exact);
                }
                assertions.push(assert_row(
                    "green_d1_closed_form",
                    max_rel <= 1e-8,
                    format!("max relative error {max_rel:.3e}"),
                ));
            }
            3 => {
                let mut max_rel = 0.0f64;
                for &r in &[0.1, 1.0, 3.0, 8.0] {
                    let exact = (-m * r).exp() / (4.0 * std::f64::consts::PI * r);
                    max_rel =
                        max_rel.max((green_quadrature(r, &spec)? - exact).abs() / exact);
                }
                assertions.push(assert_row(
                    "green_d3_closed_form",
                    max_rel <= 1e-8,
                    format!("max relative error {max_rel:.3e}"),
                ));
            }
            _ => {}
        }
        if d > 2 {
            assertions.push(assert_row(
                &format!("green_d{d}_short_range_exponent"),
                report.short_range_ok,
                format!("{:?} vs {}", report.short_range_exponent, 2 - d as i64),
            ));
        }
        if d == 2 {
            assertions.push(assert_row(
                "green_d2_log_coefficient",
                report.short_range_ok,
                format!("{:?} vs -1/(2 pi)", report.log_coefficient),
            ));
        }
        // The long-range local slope at r = 10/m is -m - (d-1)/(2r) up to
        // higher corrections; the 10% window is attainable only for d <= 3
        // (d = 3 sits exactly on the boundary). For d = 4 the slope is
        // reported but not gated.
        if d <= 3 {
            assertions.push(assert_row(
                &format!("green_d{d}_long_range_slope"),
                report.long_range_ok,
                format!("local slope {:.4} vs -m = {:.4}", report.long_range_local_slope, -m),
            ));
        }
        reports.push(report);
    }
    let report_path = out_dir.join("green_report.json");
    std::fs::write(
        &report_path,
        serde_json::to_string_pretty(&reports)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?,
    )?;
    artifacts.push(report_path);
    Ok(ExperimentResult { artifacts, assertions })
}

/// Condensed module invariant suite on the configured lattice.
fn run_selftest(
    resolved: &ResolvedConfig,
    out_dir: &Path,
    master_seed: u64,
) -> Result<ExperimentResult> {
    let lat = &resolved.lattice;
    let moll = &resolved.mollifier;
    let params = &resolved.params;
    let mut rows: Vec<Vec<String>> = Vec::new();
    let mut all = true;
    let push = |rows: &mut Vec<Vec<String>>, all: &mut bool, name: &str, pass: bool, detail: String| {
        *all &= pass;
        rows.push(vec![name.to_string(), (pass as u8).to_string(), detail]);
    };

    // spectral round trip
    {
        let mut worst = 0.0f64;
        for s in 0..20 {
            let f = exp_sq_core::noise::sample_white_noise(lat, RngStream::new(master_seed, s));
            let back = apply_linv(&apply_l(&f)?)?;
            worst = worst.max(back.sub(&f)?.norm_inf() / f.norm_inf());
        }
        push(&mut rows, &mut all, "spectral_round_trip", worst <= 1e-10, format!("max rel err {worst:.2e}"));
    }
    // maximum principle
    {
        let f = exp_sq_core::noise::sample_white_noise(lat, RngStream::new(master_seed, 100))
            .map(|v| v.abs());
        let u = apply_linv(&f)?;
        let min = u.values().iter().cloned().fold(f64::INFINITY, f64::min);
        push(&mut rows, &mut all, "resolvent_positivity", min > -1e-12, format!("min {min:.2e}"));
    }
    // norm axioms and weight sandwich
    {
        let a = exp_sq_core::noise::sample_white_noise(lat, RngStream::new(master_seed, 101));
        let b = exp_sq_core::noise::sample_white_noise(lat, RngStream::new(master_seed, 102));
        let w = WeightSpec::REll { ell: 2.0 };
        let na = weighted_lp_norm(&a, 2.0, &w)?;
        let nb = weighted_lp_norm(&b, 2.0, &w)?;
        let nab = weighted_lp_norm(&a.add(&b)?, 2.0, &w)?;
        let tri = nab <= na + nb + 1e-12;
        let hom = (weighted_lp_norm(&a.scale(-2.5), 2.0, &w)? - 2.5 * na).abs() <= 1e-12 * na;
        let sandwich = na <= weighted_lp_norm(&a, 2.0, &WeightSpec::REll { ell: 0.0 })?;
        push(&mut rows, &mut all, "norm_axioms", tri && hom && sandwich, String::new());
    }
    // besov parseval at s = 0, p = q = 2
    {
        let f = exp_sq_core::noise::sample_white_noise(lat, RngStream::new(master_seed, 103));
        let spec = NormSpec { p: 2.0, q: 2.0, s: 0.0, weight: WeightSpec::REll { ell: 0.0 } };
        let b = besov_norm(&f, &spec)?;
        let l2 = weighted_lp_norm(&f, 2.0, &spec.weight)?;
        push(&mut rows, &mut all, "besov_parseval", (b / l2 - 1.0).abs() <= 1e-10, format!("ratio {}", b / l2));
    }
    // mollifier mass and support
    {
        let kernel = moll.kernel(lat)?;
        let mass_ok = (kernel.integral() - 1.0).abs() <= 1e-12;
        let origin = vec![0i64; lat.d()];
        let support_ok = (0..lat.site_count())
            .all(|i| kernel.values()[i] == 0.0 || lat.distance_from(i, &origin) < moll.eps);
        push(&mut rows, &mut all, "mollifier_kernel", mass_ok && support_ok, String::new());
    }
    // noise determinism
    {
        let a = NoiseBundle::sample(lat, moll, RngStream::new(master_seed, 104))?;
        let b = NoiseBundle::sample(lat, moll, RngStream::new(master_seed, 104))?;
        push(
            &mut rows,
            &mut all,
            "noise_determinism",
            a.xi.values() == b.xi.values() && a.x_eps.values() == b.x_eps.values(),
            String::new(),
        );
    }
    // solver structure: sign property, uniform bound, wick positivity
    {
        let mut sign_worst = f64::NEG_INFINITY;
        let mut bound_ok = true;
        let mut eta_pos = true;
        for s in 0..5 {
            let sample = draw_sample(lat, moll, params, RngStream::new(master_seed, 200 + s), &SolveOptions::default())?;
            sign_worst = sign_worst.max(sample.report.sign_violation_max);
            let bound = params.alpha.abs() * params.r_level / (params.m * params.m);
            bound_ok &= sample.phibar.norm_inf() <= bound + 1e-8;
            eta_pos &= sample.eta.values().iter().all(|&v| v > 0.0);
        }
        push(&mut rows, &mut all, "sign_property", sign_worst <= 1e-8, format!("max alpha phibar {sign_worst:.2e}"));
        push(&mut rows, &mut all, "uniform_bound", bound_ok, String::new());
        push(&mut rows, &mut all, "wick_positive", eta_pos, String::new());
    }
    // truncation consistency
    {
        let bundle = NoiseBundle::sample(lat, moll, RngStream::new(master_seed, 300))?;
        let (eta, _) = wick_exponential(&bundle.x_eps, params.alpha, params.c_eps);
        let (pa, _) = solve_phibar(&eta, params)?;
        let mut params_big = *params;
        params_big.r_level = (params.alpha.abs() * pa.norm_inf()).exp() * eta.norm_inf() + 1.0;
        params_big.r_level = params_big.r_level.max(10.0 * params.r_level);
        let (pb, _) = solve_phibar_with(&eta, &params_big, &SolveOptions::with_tol_rel(1e-12), None)?;
        let mut params_huge = params_big;
        params_huge.r_level *= 10.0;
        let (pc, _) = solve_phibar_with(&eta, &params_huge, &SolveOptions::with_tol_rel(1e-12), None)?;
        let diff = pb.sub(&pc)?.norm_inf();
        push(&mut rows, &mut all, "truncation_consistency", diff <= 1e-10, format!("diff {diff:.2e}"));
    }
    // gluing identity
    {
        let l = lat.side_length() / 4.0;
        let steps = (l / lat.spacing()) as i64;
        let d1 = BallSpec::new(lat, vec![0i64; lat.d()], l / 2.0)?;
        let mut c2 = vec![0i64; lat.d()];
        c2[0] = steps;
        let d2 = BallSpec::new(lat, c2, l / 2.0)?;
        let theta = exp_sq_core::coupling::make_theta(lat, &vec![0i64; lat.d()], l);
        let mut ok = true;
        for s in 0..5 {
            let bundle = NoiseBundle::sample(lat, moll, RngStream::new(master_seed, 400 + s))?;
            let coupled = make_coupled_noises(&bundle, &d1, &d2, moll)?;
            ok &= exp_sq_core::coupling::verify_noise_gluing(
                &bundle.xi_eps,
                &coupled.xi1_eps,
                &theta,
                moll.eps,
                l,
            )?;
        }
        push(&mut rows, &mut all, "noise_gluing", ok, String::new());
    }
    // truncation blend: finite differences match the derivative
    {
        let kr = TruncationKR::new(5.0)?;
        let mut ok = true;
        for &x in &[2.0, 4.3, 4.8, 6.0] {
            let h = 1e-6;
            let fd = (kr.value(x + h)? - kr.value(x - h)?) / (2.0 * h);
            ok &= (fd - kr.derivative(x)?).abs() <= 1e-6;
        }
        push(&mut rows, &mut all, "truncation_blend", ok, String::new());
    }
    // green closed forms
    {
        let g1 = GreenSpec::new(1, lat.mass())?;
        let g3 = GreenSpec::new(3, lat.mass())?;
        let m = lat.mass();
        let mut worst = 0.0f64;
        for &r in &[0.5, 2.0, 6.0] {
            let e1 = (-m * r).exp() / (2.0 * m);
            let e3 = (-m * r).exp() / (4.0 * std::f64::consts::PI * r);
            worst = worst.max((green_quadrature(r, &g1)? - e1).abs() / e1);
            worst = worst.max((green_quadrature(r, &g3)? - e3).abs() / e3);
        }
        push(&mut rows, &mut all, "green_closed_forms", worst <= 1e-8, format!("max rel err {worst:.2e}"));
    }
    // lattice green vs continuum at mid-range separations
    {
        let spec = GreenSpec::new(lat.d(), lat.mass())?;
        let origin = vec![0i64; lat.d()];
        let kernel = apply_linv(&Field::unit_mass_delta(lat, &origin))?;
        let mut site = vec![0i64; lat.d()];
        site[0] = (1.0 / lat.spacing()).round() as i64;
        let r = site[0] as f64 * lat.spacing();
        let cont = green_quadrature(r, &spec)?;
        let rel = ((kernel.at(&site) - cont) / cont).abs();
        push(&mut rows, &mut all, "lattice_vs_continuum_midrange", rel <= 0.05, format!("rel dev {rel:.2e} at r = {r}"));
    }
    // field binary round trip through the artifact directory
    let field_path = out_dir.join("sample_phibar.field");
    {
        let sample = draw_sample(lat, moll, params, RngStream::new(master_seed, 500), &SolveOptions::default())?;
        exp_sq_core::io::write_field(&field_path, &sample.phibar)?;
        let back = exp_sq_core::io::read_field(&field_path)?;
        push(
            &mut rows,
            &mut all,
            "field_binary_round_trip",
            back.values() == sample.phibar.values(),
            String::new(),
        );
    }

    let csv_path = out_dir.join("selftest.csv");
    write_csv(&csv_path, &["check", "pass", "detail"], &rows)?;

    // Wick-constant table: exact spectral value against the Monte Carlo
    // variance of the free field at a site.
    let ceps_path = out_dir.join("ceps.csv");
    {
        let h = lat.spacing();
        let alpha = params.alpha;
        let mut table = Vec::new();
        for &mult in &[8.0, 4.0, 2.0] {
            let eps = mult * h;
            let sweep_moll = MollifierSpec::new(eps);
            let spectral = exp_sq_core::noise::free_field_variance(lat, &sweep_moll)?;
            let c_eps = 0.5 * alpha * alpha * spectral;
            let n = 2000u64;
            let samples: Vec<f64> = (0..n)
                .map(|s| -> Result<f64> {
                    let b = NoiseBundle::sample(lat, &sweep_moll, RngStream::new(master_seed, 600 + s))?;
                    Ok(b.x_eps.values()[0])
                })
                .collect::<Result<Vec<_>>>()?;
            let mean = samples.iter().sum::<f64>() / n as f64;
            let mc: f64 =
                samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
            let stderr = (2.0 / n as f64).sqrt() * spectral;
            table.push(vec![
                fmt_g17(eps),
                fmt_g17(c_eps),
                fmt_g17(spectral),
                fmt_g17(mc),
                fmt_g17(stderr),
            ]);
        }
        write_csv(&ceps_path, &["eps", "c_eps", "var_spectral", "var_mc", "stderr"], &table)?;
    }

    let assertions = vec![assert_row(
        "selftest_all_pass",
        all,
        format!("{} checks", rows.len()),
    )];
    Ok(ExperimentResult {
        artifacts: vec![csv_path, ceps_path, field_path],
        assertions,
    })
}

/// Free-kernel oracle fit used by callers comparing measured decay slopes.
pub fn free_kernel_oracle_fit(
    lat: &LatticeConfig,
    moll: &MollifierSpec,
    distances: &[f64],
) -> Result<exp_sq_core::DecayFit> {
    let field = covariance_kernel_field(moll, lat)?;
    let points: Vec<FitPoint> = distances
        .iter()
        .map(|&r| {
            let k = (r / lat.spacing()).round() as i64;
            let mut site = vec![0i64; lat.d()];
            site[0] = k;
            FitPoint { r: k as f64 * lat.spacing(), value: field.at(&site), stderr: 0.0 }
        })
        .collect();
    fit_log_decay(&points, 3.0)
}
