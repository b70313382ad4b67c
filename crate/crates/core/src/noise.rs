//! White-noise sampling, mollification, the free field X_eps, the exact
//! Wick constant C_eps and the Wick exponential eta_eps.
//!
//! Lattice white noise has i.i.d. N(0, 1/h^d) sites so that the pairing
//! <xi, f> = sum xi f h^d has variance ||f||_{L^2}^2. Mollification uses a
//! radial bump supported in the torus ball B(0, eps) with exact unit mass;
//! the free field is X_eps = L^(-1) xi_eps and
//!   C_eps = (alpha^2/2) Var X_eps(x)
//! is computed spectrally (never by Monte Carlo) as
//!   Var X_eps(x) = (1/L^d) sum_k |ahat_eps(k)|^2 / sigma(k)^2.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{apply_linv, convolve, Field, LatticeConfig};
use crate::spectral;

/// Overflow guard for the Wick exponential.
pub const WICK_EXP_CLAMP: f64 = 700.0;

/// Counter-based RNG coordinates. Distinct (seed, stream_id) pairs give
/// independent, bit-reproducible ChaCha streams, so Monte Carlo samples can
/// be generated in any order or in parallel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    /// A derived stream for an independent sub-purpose (walkers, inits, ...).
    pub fn substream(&self, tag: u64) -> Self {
        Self {
            seed: self.seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15),
            stream_id: self.stream_id,
        }
    }

    pub fn rng(&self) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Radial C^infinity bump mollifier at scale eps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MollifierSpec {
    pub eps: f64,
}

impl MollifierSpec {
    pub fn new(eps: f64) -> Self {
        Self { eps }
    }

    pub fn validate(&self, lat: &LatticeConfig) -> Result<()> {
        let h = lat.spacing();
        if self.eps < 2.0 * h {
            return Err(Error::UnderResolvedMollifier { eps: self.eps, h });
        }
        if self.eps >= 0.5 * lat.side_length() {
            return Err(Error::InvalidParameter(format!(
                "mollifier radius {} does not fit in the torus (L = {})",
                self.eps,
                lat.side_length()
            )));
        }
        Ok(())
    }

    /// The kernel a_eps: c exp(-1/(1 - (r/eps)^2)) inside B(0, eps), zero
    /// outside, renormalized on the lattice to exact unit mass.
    pub fn kernel(&self, lat: &LatticeConfig) -> Result<Field> {
        self.validate(lat)?;
        let origin = vec![0i64; lat.d()];
        let eps = self.eps;
        let mut f = Field::from_fn(lat, |idx| {
            let r = lat.distance_from(idx, &origin) / eps;
            if r < 1.0 {
                (-1.0 / (1.0 - r * r)).exp()
            } else {
                0.0
            }
        });
        let mass = f.integral();
        debug_assert!(mass > 0.0);
        for v in f.values_mut() {
            *v /= mass;
        }
        Ok(f)
    }
}

/// The per-sample noise fields: white noise xi with two independent copies
/// zeta_1, zeta_2 (used by the coupling construction), the mollified noise
/// and the free field X_eps = L^(-1) xi_eps.
#[derive(Debug, Clone)]
pub struct NoiseBundle {
    pub stream: RngStream,
    pub xi: Field,
    pub zeta1: Field,
    pub zeta2: Field,
    pub xi_eps: Field,
    pub x_eps: Field,
}

impl NoiseBundle {
    /// Draws xi, zeta_1, zeta_2 and runs the mollification pipeline.
    /// Bit-reproducible from (lat, spec, stream).
    pub fn sample(lat: &LatticeConfig, spec: &MollifierSpec, stream: RngStream) -> Result<Self> {
        let mut rng = stream.rng();
        let xi = sample_white_noise_from(lat, &mut rng);
        let zeta1 = sample_white_noise_from(lat, &mut rng);
        let zeta2 = sample_white_noise_from(lat, &mut rng);
        let xi_eps = mollify(&xi, spec)?;
        let x_eps = apply_linv(&xi_eps)?;
        Ok(Self { stream, xi, zeta1, zeta2, xi_eps, x_eps })
    }
}

fn sample_white_noise_from(lat: &LatticeConfig, rng: &mut ChaCha12Rng) -> Field {
    let sd = 1.0 / lat.cell_volume().sqrt();
    Field::from_fn(lat, |_| {
        let z: f64 = rng.sample(StandardNormal);
        z * sd
    })
}

/// I.i.d. Gaussian site noise with variance 1/h^d; deterministic in
/// (seed, stream_id).
pub fn sample_white_noise(lat: &LatticeConfig, stream: RngStream) -> Field {
    sample_white_noise_from(lat, &mut stream.rng())
}

/// xi_eps = a_eps * xi (periodic convolution, unit-mass kernel).
pub fn mollify(xi: &Field, spec: &MollifierSpec) -> Result<Field> {
    let kernel = spec.kernel(xi.lattice())?;
    convolve(xi, &kernel)
}

/// Exact spectral Wick constant C_eps = (alpha^2/2) Var X_eps(x).
/// Site-independent by stationarity of the white noise.
pub fn compute_ceps(lat: &LatticeConfig, spec: &MollifierSpec, alpha: f64) -> Result<f64> {
    if !alpha.is_finite() {
        return Err(Error::InvalidParameter("alpha must be finite".into()));
    }
    Ok(0.5 * alpha * alpha * free_field_variance(lat, spec)?)
}

/// Var X_eps(x) = (1/L^d) sum_k |ahat_eps(k)|^2 / sigma(k)^2.
pub fn free_field_variance(lat: &LatticeConfig, spec: &MollifierSpec) -> Result<f64> {
    let kernel = spec.kernel(lat)?;
    let ahat = spectral::forward(lat, kernel.values());
    let mut k = vec![0.0; lat.d()];
    let mut sum = 0.0;
    for (idx, c) in ahat.iter().enumerate() {
        lat.wavevector(idx, &mut k);
        let s = lat.symbol(&k);
        sum += c.norm_sqr() / (s * s);
    }
    Ok(sum / lat.volume())
}

/// Covariance Cov(X_eps(x), X_eps(y)) of the free field at lattice offset
/// `offset`, computed spectrally.
pub fn free_field_covariance(
    lat: &LatticeConfig,
    spec: &MollifierSpec,
    offset: &[i64],
) -> Result<f64> {
    let kernel = spec.kernel(lat)?;
    let ahat = spectral::forward(lat, kernel.values());
    let mut k = vec![0.0; lat.d()];
    let h = lat.spacing();
    let mut sum = 0.0;
    for (idx, c) in ahat.iter().enumerate() {
        lat.wavevector(idx, &mut k);
        let s = lat.symbol(&k);
        let phase: f64 = k
            .iter()
            .zip(offset)
            .map(|(kj, &oj)| kj * oj as f64 * h)
            .sum();
        sum += c.norm_sqr() / (s * s) * phase.cos();
    }
    Ok(sum / lat.volume())
}

/// Wick exponential eta_eps = exp(alpha X_eps - C_eps) > 0, with an overflow
/// clamp at exp(700). Returns the field and the number of clamped sites
/// (zero in healthy runs; nonzero marks the sample as tainted).
pub fn wick_exponential(x_eps: &Field, alpha: f64, c_eps: f64) -> (Field, usize) {
    let mut clamped = 0usize;
    let values: Vec<f64> = x_eps
        .values()
        .iter()
        .map(|&x| {
            let mut t = alpha * x - c_eps;
            if t > WICK_EXP_CLAMP {
                t = WICK_EXP_CLAMP;
                clamped += 1;
            }
            t.exp()
        })
        .collect();
    let field = Field::new(*x_eps.lattice(), values).expect("same lattice by construction");
    (field, clamped)
}

/// One row of the Paley-Wiener style decay table for the mollifier spectrum.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FourierDecayRow {
    pub order: u32,
    /// Smallest C_N with |ahat_eps(k)| <= C_N (1 + |k|)^(-N) over resolved k.
    pub c_n: f64,
}

/// Fits the constants C_N in |ahat_eps(k)| <= C_N (1+|k|)^(-N) over the
/// resolved band (real frequencies up to the Brillouin corner).
pub fn fourier_decay_check(
    lat: &LatticeConfig,
    spec: &MollifierSpec,
    orders: &[u32],
) -> Result<Vec<FourierDecayRow>> {
    let kernel = spec.kernel(lat)?;
    let ahat = spectral::forward(lat, kernel.values());
    let mut k = vec![0.0; lat.d()];
    let mut rows = Vec::with_capacity(orders.len());
    for &order in orders {
        let mut c_n = 0.0f64;
        for (idx, c) in ahat.iter().enumerate() {
            lat.wavevector(idx, &mut k);
            let knorm = k.iter().map(|kj| kj * kj).sum::<f64>().sqrt();
            let bound = (1.0 + knorm).powi(order as i32);
            c_n = c_n.max(c.norm() * bound);
        }
        rows.push(FourierDecayRow { order, c_n });
    }
    Ok(rows)
}
