//! Strict-schema experiment configuration. Unknown keys are rejected and
//! every referenced module precondition is re-validated at load time.

use serde::{Deserialize, Serialize};

use exp_sq_core::solver::{validate_params, ModelParams};
use exp_sq_core::{Error, LatticeConfig, MollifierSpec, Result, SymbolMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Decay,
    Coupling,
    MalliavinCheck,
    KernelDecay,
    GreenCheck,
    Selftest,
}

impl ExperimentKind {
    pub fn name(&self) -> &'static str {
        match self {
            ExperimentKind::Decay => "decay",
            ExperimentKind::Coupling => "coupling",
            ExperimentKind::MalliavinCheck => "malliavin-check",
            ExperimentKind::KernelDecay => "kernel-decay",
            ExperimentKind::GreenCheck => "green-check",
            ExperimentKind::Selftest => "selftest",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "decay" => Some(ExperimentKind::Decay),
            "coupling" => Some(ExperimentKind::Coupling),
            "malliavin-check" => Some(ExperimentKind::MalliavinCheck),
            "kernel-decay" => Some(ExperimentKind::KernelDecay),
            "green-check" => Some(ExperimentKind::GreenCheck),
            "selftest" => Some(ExperimentKind::Selftest),
            _ => None,
        }
    }
}

fn default_symbol_mode() -> SymbolMode {
    SymbolMode::DiscreteLaplacian
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeSection {
    pub d: usize,
    pub n: usize,
    pub l: f64,
    pub m: f64,
    #[serde(default = "default_symbol_mode")]
    pub symbol_mode: SymbolMode,
}

fn default_r_level() -> f64 {
    40.0
}

fn default_strict() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub alpha: f64,
    pub eps: f64,
    #[serde(default = "default_r_level")]
    pub r_level: f64,
    /// Reject couplings outside the admissibility window.
    #[serde(default = "default_strict")]
    pub strict: bool,
    #[serde(default)]
    pub moment_p: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub n_samples: u64,
    pub master_seed: u64,
    #[serde(default)]
    pub thread_count: Option<usize>,
    pub output_dir: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecaySection {
    pub distances: Vec<f64>,
    #[serde(default)]
    pub translate_spacing: Option<usize>,
    #[serde(default)]
    pub observable_scale: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CouplingSection {
    pub distances: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MalliavinSection {
    /// Probe source/evaluation offsets along the first axis, in sites.
    pub probe_offsets: Vec<i64>,
    #[serde(default)]
    pub hstep: Option<f64>,
    #[serde(default)]
    pub n_walkers: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelDecaySection {
    pub r_lo: f64,
    pub r_hi: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GreenSection {
    pub dims: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub lattice: LatticeSection,
    pub model: ModelSection,
    pub run: RunSection,
    #[serde(default)]
    pub decay: Option<DecaySection>,
    #[serde(default)]
    pub coupling: Option<CouplingSection>,
    #[serde(default)]
    pub malliavin: Option<MalliavinSection>,
    #[serde(default)]
    pub kernel_decay: Option<KernelDecaySection>,
    #[serde(default)]
    pub green: Option<GreenSection>,
}

/// Core objects resolved from a validated config.
pub struct ResolvedConfig {
    pub lattice: LatticeConfig,
    pub mollifier: MollifierSpec,
    pub params: ModelParams,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text)
            .map_err(|e| Error::InvalidParameter(format!("config rejected: {e}")))
    }

    /// Re-validates every referenced module precondition and builds the core
    /// objects (including the exact Wick constant).
    pub fn resolve(&self) -> Result<ResolvedConfig> {
        let lattice = LatticeConfig::new(
            self.lattice.d,
            self.lattice.n,
            self.lattice.l,
            self.lattice.m,
            self.lattice.symbol_mode,
        )?;
        let mollifier = MollifierSpec::new(self.model.eps);
        mollifier.validate(&lattice)?;
        let mut params =
            ModelParams::for_lattice(&lattice, &mollifier, self.model.alpha, self.model.r_level)?;
        if let Some(p) = self.model.moment_p {
            params.moment_p = p;
        }
        params.validate_basic()?;
        if self.model.strict {
            let window = validate_params(&params);
            if !window.all_ok {
                return Err(Error::InvalidParameter(format!(
                    "model outside the admissibility window: {window:?}"
                )));
            }
        }
        if self.run.n_samples == 0 {
            return Err(Error::InvalidParameter(
                "run.n_samples must be positive".into(),
            ));
        }
        match self.experiment {
            ExperimentKind::Decay if self.decay.is_none() => Err(Error::InvalidParameter(
                "decay experiment needs a [decay] section".into(),
            )),
            ExperimentKind::Coupling if self.coupling.is_none() => Err(Error::InvalidParameter(
                "coupling experiment needs a [coupling] section".into(),
            )),
            ExperimentKind::MalliavinCheck if self.malliavin.is_none() => {
                Err(Error::InvalidParameter(
                    "malliavin-check experiment needs a [malliavin] section".into(),
                ))
            }
            ExperimentKind::KernelDecay if self.kernel_decay.is_none() => {
                Err(Error::InvalidParameter(
                    "kernel-decay experiment needs a [kernel_decay] section".into(),
                ))
            }
            ExperimentKind::GreenCheck if self.green.is_none() => Err(Error::InvalidParameter(
                "green-check experiment needs a [green] section".into(),
            )),
            _ => Ok(ResolvedConfig { lattice, mollifier, params }),
        }
    }
}
