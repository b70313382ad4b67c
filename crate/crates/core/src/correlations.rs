//! Direct Monte Carlo estimation of truncated correlations of windowed
//! Lipschitz observables and the exponential-decay fit.
//!
//! Observables are built from a smooth window f supported in the unit ball:
//! the windowed field at x is f(. - x) phi, and the functional is either a
//! bounded 1-Lipschitz map of the windowed mean (tanh or clip) or a linear
//! pairing (unbounded, excluded from decay claims). All of these evaluate
//! as a pointwise map of one periodic convolution of phi, so a decay scan
//! can reuse each sampled field at every probe location: the estimator
//! averages the per-pair covariance over a grid of window translates (and
//! both axis orientations), which is exact by translation invariance in law
//! and cuts the Monte Carlo noise floor far below a single-pair estimate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{fit_log_decay, DecayFit, FitPoint};
use crate::lattice::{convolve, Field, LatticeConfig};
use crate::noise::{MollifierSpec, RngStream};
use crate::pipeline::draw_sample;
use crate::solver::{ModelParams, SolveOptions};
use crate::spectral;
use crate::stats;

/// Radial C^infinity window with peak 1 supported in the unit torus ball.
pub fn window_bump(lat: &LatticeConfig) -> Field {
    let origin = vec![0i64; lat.d()];
    Field::from_fn(lat, |idx| {
        let r = lat.distance_from(idx, &origin);
        if r < 1.0 {
            (-r * r / (1.0 - r * r)).exp()
        } else {
            0.0
        }
    })
}

/// The functional applied to a windowed field.
#[derive(Debug, Clone)]
pub enum ObservableKind {
    /// tanh(scale * windowed mean): bounded by 1, scale-Lipschitz.
    TanhMean { scale: f64 },
    /// clamp(windowed mean, -scale, scale): bounded, 1-Lipschitz.
    ClippedMean { scale: f64 },
    /// <w, g(. - x)> h^d for a fixed probe g; unbounded, excluded from
    /// decay-theorem claims.
    LinearPairing { probe: Field },
}

#[derive(Debug, Clone)]
pub struct ObservableSpec {
    pub window: Field,
    pub kind: ObservableKind,
}

impl ObservableSpec {
    pub fn tanh_mean(lat: &LatticeConfig, scale: f64) -> Self {
        Self {
            window: window_bump(lat),
            kind: ObservableKind::TanhMean { scale },
        }
    }

    pub fn clipped_mean(lat: &LatticeConfig, scale: f64) -> Self {
        Self {
            window: window_bump(lat),
            kind: ObservableKind::ClippedMean { scale },
        }
    }

    /// Point evaluation: unit-mass delta probe against a peak-one window.
    pub fn point_value(lat: &LatticeConfig) -> Self {
        let origin = vec![0i64; lat.d()];
        Self {
            window: window_bump(lat),
            kind: ObservableKind::LinearPairing {
                probe: Field::unit_mass_delta(lat, &origin),
            },
        }
    }

    /// Bounded observables satisfy the decay theorem's hypotheses.
    pub fn bounded(&self) -> bool {
        !matches!(self.kind, ObservableKind::LinearPairing { .. })
    }

    fn window_mass(&self) -> f64 {
        self.window.integral()
    }
}

/// f(. - x) phi: the field windowed at x; zero outside B(x, 1).
pub fn window_field(phi: &Field, window: &Field, x: &[i64]) -> Result<Field> {
    phi.check_same_lattice(window)?;
    let translated = window.translate(x);
    phi.zip_with(&translated, |p, f| p * f)
}

/// Applies the functional to a windowed field w = f(. - x) phi.
pub fn evaluate_observable(spec: &ObservableSpec, w: &Field, center: &[i64]) -> f64 {
    let h_d = w.lattice().cell_volume();
    match &spec.kind {
        ObservableKind::TanhMean { scale } => {
            let mean = w.values().iter().sum::<f64>() * h_d / spec.window_mass();
            (scale * mean).tanh()
        }
        ObservableKind::ClippedMean { scale } => {
            let mean = w.values().iter().sum::<f64>() * h_d / spec.window_mass();
            mean.clamp(-scale.abs(), scale.abs())
        }
        ObservableKind::LinearPairing { probe } => {
            let g = probe.translate(center);
            w.values()
                .iter()
                .zip(g.values())
                .map(|(a, b)| a * b)
                .sum::<f64>()
                * h_d
        }
    }
}

/// The observable of a whole sampled field as a field over window centers:
/// one periodic convolution plus a pointwise map.
pub fn observable_field(spec: &ObservableSpec, phi: &Field) -> Result<Field> {
    match &spec.kind {
        ObservableKind::TanhMean { scale } => {
            let smoothed = convolve(phi, &spec.window)?.scale(1.0 / spec.window_mass());
            let scale = *scale;
            Ok(smoothed.map(|v| (scale * v).tanh()))
        }
        ObservableKind::ClippedMean { scale } => {
            let smoothed = convolve(phi, &spec.window)?.scale(1.0 / spec.window_mass());
            let cap = scale.abs();
            Ok(smoothed.map(|v| v.clamp(-cap, cap)))
        }
        ObservableKind::LinearPairing { probe } => {
            let kernel = spec.window.zip_with(probe, |a, b| a * b)?;
            convolve(phi, &kernel)
        }
    }
}

/// Monte Carlo covariance estimate with jackknife and moment-based errors.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CovEstimate {
    pub value: f64,
    pub stderr: f64,
    pub stderr_naive: f64,
    pub n_used: usize,
    pub n_tainted: usize,
    pub x1: Vec<i64>,
    pub x2: Vec<i64>,
}

/// Estimates Cov(F1(f phi(. + x1)), F2(f phi(. + x2))) over n i.i.d. samples
/// of the full pipeline. Deterministic given the master seed.
#[allow(clippy::too_many_arguments)]
pub fn mc_covariance(
    s1: &ObservableSpec,
    s2: &ObservableSpec,
    x1: &[i64],
    x2: &[i64],
    lat: &LatticeConfig,
    moll: &MollifierSpec,
    params: &ModelParams,
    n_samples: u64,
    master_seed: u64,
    opts: &SolveOptions,
) -> Result<CovEstimate> {
    if n_samples < 100 {
        return Err(Error::Precondition(
            "covariance estimation needs at least 100 samples".into(),
        ));
    }
    let pairs: Vec<Option<(f64, f64)>> = (0..n_samples)
        .into_par_iter()
        .map(|s| -> Result<Option<(f64, f64)>> {
            let sample = draw_sample(lat, moll, params, RngStream::new(master_seed, s), opts)?;
            if sample.tainted() {
                return Ok(None);
            }
            let w1 = window_field(&sample.phi, &s1.window, x1)?;
            let w2 = window_field(&sample.phi, &s2.window, x2)?;
            Ok(Some((
                evaluate_observable(s1, &w1, x1),
                evaluate_observable(s2, &w2, x2),
            )))
        })
        .collect::<Result<Vec<_>>>()?;

    let n_tainted = pairs.iter().filter(|p| p.is_none()).count();
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    for p in pairs.into_iter().flatten() {
        xs.push(p.0);
        ys.push(p.1);
    }
    let n = xs.len();
    if n < 3 {
        return Err(Error::Precondition("all samples tainted".into()));
    }
    let value = stats::covariance(&xs, &ys);

    // Leave-one-out jackknife from running sums, O(n).
    let (sx, sy): (f64, f64) = (xs.iter().sum(), ys.iter().sum());
    let sxy: f64 = xs.iter().zip(&ys).map(|(a, b)| a * b).sum();
    let nf = n as f64;
    let replicates: Vec<f64> = (0..n)
        .map(|i| {
            let m = nf - 1.0;
            let rx = sx - xs[i];
            let ry = sy - ys[i];
            let rxy = sxy - xs[i] * ys[i];
            (rxy - rx * ry / m) / (m - 1.0)
        })
        .collect();
    let stderr = stats::jackknife_stderr(&replicates);

    // Moment-based (delta method) error for the diagnostic ratio.
    let mx = sx / nf;
    let my = sy / nf;
    let m22: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(a, b)| (a - mx).powi(2) * (b - my).powi(2))
        .sum::<f64>()
        / nf;
    let stderr_naive = ((m22 - value * value).max(0.0) / nf).sqrt();

    Ok(CovEstimate {
        value,
        stderr,
        stderr_naive,
        n_used: n,
        n_tainted,
        x1: x1.to_vec(),
        x2: x2.to_vec(),
    })
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DecayScanPoint {
    pub r: f64,
    pub cov: f64,
    pub stderr: f64,
    pub n_used: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecayScanResult {
    pub points: Vec<DecayScanPoint>,
    /// Absent when fewer than 3 points survive above the noise floor; the
    /// refusal reason is recorded instead.
    pub fit: Option<DecayFit>,
    pub fit_refusal: Option<String>,
    pub n_samples: usize,
    pub n_tainted: usize,
}

const JACKKNIFE_BATCHES: usize = 40;

/// Shared-sample decay scan: each sampled field is evaluated at every
/// distance through a grid of window translates along every axis, with
/// common random numbers across distances. Covariances are averaged over
/// translates; errors come from a batched jackknife over samples.
#[allow(clippy::too_many_arguments)]
pub fn decay_scan(
    s1: &ObservableSpec,
    s2: &ObservableSpec,
    distances: &[f64],
    lat: &LatticeConfig,
    moll: &MollifierSpec,
    params: &ModelParams,
    n_samples: u64,
    master_seed: u64,
    opts: &SolveOptions,
    translate_spacing: usize,
) -> Result<DecayScanResult> {
    let h = lat.spacing();
    let d = lat.d();
    let n = lat.n();
    let steps: Vec<i64> = distances
        .iter()
        .map(|&r| {
            let k = (r / h).round() as i64;
            if !(1.0 <= r && r <= lat.side_length() / 4.0 + 1e-12) {
                return Err(Error::Precondition(format!(
                    "distance {r} outside [1, L/4]"
                )));
            }
            Ok(k)
        })
        .collect::<Result<Vec<_>>>()?;
    if translate_spacing == 0 || n % translate_spacing != 0 {
        return Err(Error::InvalidParameter(
            "translate spacing must divide N".into(),
        ));
    }

    // Window centers: a sub-grid with the given spacing, every axis used as
    // the separation direction.
    let per_axis = n / translate_spacing;
    let n_centers = per_axis.pow(d as u32);
    let centers: Vec<Vec<i64>> = (0..n_centers)
        .map(|mut idx| {
            let mut c = vec![0i64; d];
            for a in (0..d).rev() {
                c[a] = ((idx % per_axis) * translate_spacing) as i64;
                idx /= per_axis;
            }
            c
        })
        .collect();
    let n_pairs = n_centers * d;

    struct BatchAcc {
        n: usize,
        tainted: usize,
        // indexed (distance * n_pairs + pair)
        s1: Vec<f64>,
        s2: Vec<f64>,
        s12: Vec<f64>,
    }

    if n_samples < JACKKNIFE_BATCHES as u64 {
        return Err(Error::Precondition(format!(
            "need at least {JACKKNIFE_BATCHES} samples for the batched jackknife"
        )));
    }

    // One task per jackknife batch; inside a batch samples accumulate
    // sequentially in stream order, so the sums (and hence all artifacts)
    // are independent of the thread count.
    let cells = steps.len() * n_pairs;
    let batch_accs: Vec<BatchAcc> = (0..JACKKNIFE_BATCHES)
        .into_par_iter()
        .map(|b| -> Result<BatchAcc> {
            let lo = (b as u64) * n_samples / JACKKNIFE_BATCHES as u64;
            let hi = (b as u64 + 1) * n_samples / JACKKNIFE_BATCHES as u64;
            let mut acc = BatchAcc {
                n: 0,
                tainted: 0,
                s1: vec![0.0; cells],
                s2: vec![0.0; cells],
                s12: vec![0.0; cells],
            };
            let mut shifted = vec![0i64; d];
            for s in lo..hi {
                let sample =
                    draw_sample(lat, moll, params, RngStream::new(master_seed, s), opts)?;
                if sample.tainted() {
                    acc.tainted += 1;
                    continue;
                }
                acc.n += 1;
                let g1 = observable_field(s1, &sample.phi)?;
                let g2 = observable_field(s2, &sample.phi)?;
                let mut cell = 0usize;
                for &k in &steps {
                    for axis in 0..d {
                        for c in &centers {
                            let f1 = g1.at(c);
                            shifted.copy_from_slice(c);
                            shifted[axis] += k;
                            let f2 = g2.at(&shifted);
                            acc.s1[cell] += f1;
                            acc.s2[cell] += f2;
                            acc.s12[cell] += f1 * f2;
                            cell += 1;
                        }
                    }
                }
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;

    let n_tainted: usize = batch_accs.iter().map(|a| a.tainted).sum();
    let n_used: usize = batch_accs.iter().map(|a| a.n).sum();
    if batch_accs.iter().any(|a| a.n < 2) {
        return Err(Error::Precondition(format!(
            "a jackknife batch has fewer than 2 untainted samples ({n_tainted} tainted overall)"
        )));
    }

    let cov_from = |di: usize, skip: Option<usize>| -> f64 {
        let mut nn = 0usize;
        for (b, acc) in batch_accs.iter().enumerate() {
            if Some(b) != skip {
                nn += acc.n;
            }
        }
        let nf = nn as f64;
        let mut total = 0.0;
        for q in 0..n_pairs {
            let cell = di * n_pairs + q;
            let (mut s1, mut s2, mut s12) = (0.0, 0.0, 0.0);
            for (b, acc) in batch_accs.iter().enumerate() {
                if Some(b) != skip {
                    s1 += acc.s1[cell];
                    s2 += acc.s2[cell];
                    s12 += acc.s12[cell];
                }
            }
            total += (s12 - s1 * s2 / nf) / (nf - 1.0);
        }
        total / n_pairs as f64
    };

    let mut points = Vec::new();
    for (di, &k) in steps.iter().enumerate() {
        let cov = cov_from(di, None);
        let replicates: Vec<f64> = (0..JACKKNIFE_BATCHES)
            .map(|drop| cov_from(di, Some(drop)))
            .collect();
        let stderr = stats::jackknife_stderr(&replicates);
        points.push(DecayScanPoint {
            r: k as f64 * h,
            cov,
            stderr,
            n_used,
        });
    }

    let fit_points: Vec<FitPoint> = points
        .iter()
        .map(|p| FitPoint { r: p.r, value: p.cov.abs(), stderr: p.stderr })
        .collect();
    let (fit, fit_refusal) = match fit_log_decay(&fit_points, 3.0) {
        Ok(f) => (Some(f), None),
        Err(Error::FitRejected(reason)) => (None, Some(reason)),
        Err(e) => return Err(e),
    };

    Ok(DecayScanResult {
        points,
        fit,
        fit_refusal,
        n_samples: n_used,
        n_tainted,
    })
}

/// Exact free-field (alpha = 0) covariance of the two windowed means as a
/// field over the separation: the spectral product of both window kernels
/// with the squared resolvent and mollifier. This is the slope oracle for
/// the alpha = 0 control run.
pub fn free_window_mean_covariance(
    lat: &LatticeConfig,
    moll: &MollifierSpec,
    w1: &Field,
    w2: &Field,
) -> Result<Field> {
    let a_hat = spectral::forward(lat, moll.kernel(lat)?.values());
    let f1_hat = spectral::forward(lat, w1.values());
    let f2_hat = spectral::forward(lat, w2.values());
    let mass1 = w1.integral();
    let mass2 = w2.integral();
    let mut k = vec![0.0; lat.d()];
    let spectrum: Vec<_> = (0..lat.site_count())
        .map(|idx| {
            lat.wavevector(idx, &mut k);
            let s = lat.symbol(&k);
            let val = (f1_hat[idx] * f2_hat[idx].conj()).re * a_hat[idx].norm_sqr()
                / (s * s)
                / (mass1 * mass2);
            rustfft::num_complex::Complex64::new(val, 0.0)
        })
        .collect();
    Field::new(*lat, spectral::inverse(lat, spectrum))
}
