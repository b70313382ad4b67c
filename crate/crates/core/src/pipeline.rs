//! The full sampling pipeline shared by the Monte Carlo harnesses:
//! white noise -> mollified noise -> free field -> Wick exponential ->
//! nonlinear solve -> assembled field.

use crate::error::Result;
use crate::lattice::{Field, LatticeConfig};
use crate::noise::{wick_exponential, MollifierSpec, NoiseBundle, RngStream};
use crate::solver::{
    assemble_phi, solve_phibar_with, ModelParams, SolveOptions, SolveReport,
};

/// One fully-solved sample of the regularized field.
#[derive(Debug, Clone)]
pub struct Sample {
    pub bundle: NoiseBundle,
    pub eta: Field,
    pub clamped_sites: usize,
    pub phibar: Field,
    pub phi: Field,
    pub report: SolveReport,
}

impl Sample {
    /// Overflow-clamped sites taint a sample; tainted samples are excluded
    /// from statistics (and counted by the harnesses).
    pub fn tainted(&self) -> bool {
        self.clamped_sites > 0 || !self.report.converged
    }
}

/// Result of the solve stage run on an already-built free field.
#[derive(Debug, Clone)]
pub struct SolvedField {
    pub eta: Field,
    pub clamped_sites: usize,
    pub phibar: Field,
    pub phi: Field,
    pub report: SolveReport,
}

/// Wick exponential + nonlinear solve + assembly for a given free field.
/// A solver that runs out of iterations taints the sample (the harnesses
/// count and exclude it) instead of aborting the whole experiment.
pub fn solve_from_free_field(
    x_eps: &Field,
    params: &ModelParams,
    opts: &SolveOptions,
) -> Result<SolvedField> {
    let (eta, clamped_sites) = wick_exponential(x_eps, params.alpha, params.c_eps);
    match solve_phibar_with(&eta, params, opts, None) {
        Ok((phibar, report)) => {
            let phi = assemble_phi(&phibar, x_eps)?;
            Ok(SolvedField { eta, clamped_sites, phibar, phi, report })
        }
        Err(crate::error::Error::SolverDiverged { iterations, residual, tail }) => {
            let report = SolveReport {
                iterations,
                residual_inf: residual,
                converged: false,
                sign_violation_max: f64::NAN,
                residual_history: tail,
                picard_steps: 0,
                cg_iterations: 0,
                tolerance: f64::NAN,
            };
            Ok(SolvedField {
                eta,
                clamped_sites,
                phibar: Field::zeros(x_eps.lattice()),
                phi: x_eps.clone(),
                report,
            })
        }
        Err(e) => Err(e),
    }
}

/// Draws a complete sample: noise bundle, Wick exponential, solve, assembly.
pub fn draw_sample(
    lat: &LatticeConfig,
    moll: &MollifierSpec,
    params: &ModelParams,
    stream: RngStream,
    opts: &SolveOptions,
) -> Result<Sample> {
    let bundle = NoiseBundle::sample(lat, moll, stream)?;
    let solved = solve_from_free_field(&bundle.x_eps, params, opts)?;
    Ok(Sample {
        bundle,
        eta: solved.eta,
        clamped_sites: solved.clamped_sites,
        phibar: solved.phibar,
        phi: solved.phi,
        report: solved.report,
    })
}
