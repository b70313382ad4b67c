//! Periodic d-dimensional grid, the screened-Laplace operator in spectral
//! form, periodic convolution, and the weighted L^p / Besov norms.
//!
//! The torus [0, L)^d is sampled at N points per axis with spacing h = L/N.
//! All integrals carry the cell measure h^d, so discrete quantities track
//! their continuum counterparts without per-call rescaling. The operator
//!   L = -Delta + m^2
//! is diagonal in Fourier space with symbol
//!   sigma(k) = m^2 + (2/h^2) sum_j (1 - cos(k_j h))      (discrete mode)
//!   sigma(k) = m^2 + |k|^2                               (continuum mode)
//! where k_j = 2 pi n_j / L with signed mode numbers n_j.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral;

/// Which Fourier symbol stands in for -Delta.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SymbolMode {
    DiscreteLaplacian,
    Continuum,
}

/// Immutable description of the periodic grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeConfig {
    d: usize,
    n: usize,
    l: f64,
    m: f64,
    pub symbol_mode: SymbolMode,
}

impl LatticeConfig {
    pub fn new(d: usize, n: usize, l: f64, m: f64, symbol_mode: SymbolMode) -> Result<Self> {
        if !(1..=4).contains(&d) {
            return Err(Error::InvalidLattice(format!("dimension {d} not in 1..=4")));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::InvalidLattice(format!(
                "points per axis {n} must be a power of two >= 8"
            )));
        }
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::InvalidLattice(format!("side length {l} must be positive")));
        }
        if !(m > 0.0 && m.is_finite()) {
            return Err(Error::InvalidLattice(format!("mass {m} must be positive")));
        }
        Ok(Self { d, n, l, m, symbol_mode })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn side_length(&self) -> f64 {
        self.l
    }

    pub fn mass(&self) -> f64 {
        self.m
    }

    /// Grid spacing h = L/N.
    pub fn spacing(&self) -> f64 {
        self.l / self.n as f64
    }

    /// Cell measure h^d attached to every integral.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.d as i32)
    }

    /// Torus volume L^d.
    pub fn volume(&self) -> f64 {
        self.l.powi(self.d as i32)
    }

    pub fn site_count(&self) -> usize {
        self.n.pow(self.d as u32)
    }

    /// Row-major site index of (periodically wrapped) coordinates.
    pub fn site_index(&self, coords: &[i64]) -> usize {
        debug_assert_eq!(coords.len(), self.d);
        let n = self.n as i64;
        let mut idx = 0usize;
        for &c in coords {
            idx = idx * self.n + c.rem_euclid(n) as usize;
        }
        idx
    }

    /// Coordinates of a site index, each in 0..N.
    pub fn site_coords(&self, mut idx: usize, out: &mut [i64]) {
        debug_assert_eq!(out.len(), self.d);
        for a in (0..self.d).rev() {
            out[a] = (idx % self.n) as i64;
            idx /= self.n;
        }
    }

    /// Signed torus offset of `a` grid steps along one axis, in length units.
    /// The result lies in [-L/2, L/2).
    pub fn axis_offset(&self, a: i64) -> f64 {
        let n = self.n as i64;
        let mut t = a.rem_euclid(n);
        if t >= n / 2 {
            t -= n;
        }
        t as f64 * self.spacing()
    }

    /// Euclidean torus distance between two sites.
    pub fn torus_distance(&self, a: &[i64], b: &[i64]) -> f64 {
        let mut sum = 0.0;
        for j in 0..self.d {
            let off = self.axis_offset(a[j] - b[j]);
            sum += off * off;
        }
        sum.sqrt()
    }

    /// Torus distance of a site index from a center given in coordinates.
    pub fn distance_from(&self, idx: usize, center: &[i64]) -> f64 {
        let mut coords = [0i64; 4];
        self.site_coords(idx, &mut coords[..self.d]);
        self.torus_distance(&coords[..self.d], center)
    }

    /// Wavevector of the mode with the same row-major index layout as sites.
    pub fn wavevector(&self, mut idx: usize, out: &mut [f64]) {
        let base = 2.0 * std::f64::consts::PI / self.l;
        let n = self.n;
        for a in (0..self.d).rev() {
            let mut mode = (idx % n) as i64;
            idx /= n;
            if mode >= (n as i64) / 2 {
                mode -= n as i64;
            }
            out[a] = base * mode as f64;
        }
    }

    /// Symbol of L = -Delta + m^2 at wavevector k.
    pub fn symbol(&self, k: &[f64]) -> f64 {
        let m2 = self.m * self.m;
        match self.symbol_mode {
            SymbolMode::Continuum => m2 + k.iter().map(|kj| kj * kj).sum::<f64>(),
            SymbolMode::DiscreteLaplacian => {
                let h = self.spacing();
                let two_over_h2 = 2.0 / (h * h);
                m2 + k
                    .iter()
                    .map(|kj| two_over_h2 * (1.0 - (kj * h).cos()))
                    .sum::<f64>()
            }
        }
    }

    /// Largest resolved |k| (corner of the Brillouin zone).
    pub fn max_wavenumber(&self) -> f64 {
        let nyquist = std::f64::consts::PI / self.spacing();
        nyquist * (self.d as f64).sqrt()
    }

    pub(crate) fn symbol_table(&self) -> Vec<f64> {
        spectral::multiplier_table(self, |k| self.symbol(k))
    }
}

/// Real scalar field on a lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    lattice: LatticeConfig,
    values: Vec<f64>,
}

impl Field {
    pub fn new(lattice: LatticeConfig, values: Vec<f64>) -> Result<Self> {
        if values.len() != lattice.site_count() {
            return Err(Error::InvalidLattice(format!(
                "value count {} does not match lattice sites {}",
                values.len(),
                lattice.site_count()
            )));
        }
        Ok(Self { lattice, values })
    }

    pub fn zeros(lattice: &LatticeConfig) -> Self {
        Self {
            lattice: *lattice,
            values: vec![0.0; lattice.site_count()],
        }
    }

    pub fn constant(lattice: &LatticeConfig, c: f64) -> Self {
        Self {
            lattice: *lattice,
            values: vec![c; lattice.site_count()],
        }
    }

    /// Lattice delta at `site` carrying unit mass: value 1/h^d at one site.
    pub fn unit_mass_delta(lattice: &LatticeConfig, site: &[i64]) -> Self {
        let mut f = Self::zeros(lattice);
        let idx = lattice.site_index(site);
        f.values[idx] = 1.0 / lattice.cell_volume();
        f
    }

    pub fn from_fn<G: FnMut(usize) -> f64>(lattice: &LatticeConfig, mut g: G) -> Self {
        Self {
            lattice: *lattice,
            values: (0..lattice.site_count()).map(|i| g(i)).collect(),
        }
    }

    pub fn lattice(&self) -> &LatticeConfig {
        &self.lattice
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn at(&self, site: &[i64]) -> f64 {
        self.values[self.lattice.site_index(site)]
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn norm_inf(&self) -> f64 {
        self.values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    /// Integral sum f h^d.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.lattice.cell_volume()
    }

    pub fn map<G: Fn(f64) -> f64>(&self, g: G) -> Self {
        Self {
            lattice: self.lattice,
            values: self.values.iter().map(|&v| g(v)).collect(),
        }
    }

    pub fn zip_with<G: Fn(f64, f64) -> f64>(&self, other: &Field, g: G) -> Result<Self> {
        self.check_same_lattice(other)?;
        Ok(Self {
            lattice: self.lattice,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| g(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Field) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn check_same_lattice(&self, other: &Field) -> Result<()> {
        if self.lattice != other.lattice {
            return Err(Error::LatticeMismatch);
        }
        Ok(())
    }

    /// f(. - shift): exact lattice translation by a site vector.
    pub fn translate(&self, shift: &[i64]) -> Field {
        let lat = self.lattice;
        let d = lat.d();
        let mut coords = [0i64; 4];
        let mut out = vec![0.0; self.values.len()];
        for (idx, slot) in out.iter_mut().enumerate() {
            lat.site_coords(idx, &mut coords[..d]);
            for (c, s) in coords[..d].iter_mut().zip(shift) {
                *c -= s;
            }
            *slot = self.values[lat.site_index(&coords[..d])];
        }
        Field { lattice: lat, values: out }
    }
}

/// Spatial weights: polynomial r_ell, scaled polynomial r_{lambda,ell},
/// and the exponential rho used by the coupling estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum WeightSpec {
    /// r_ell(x) = (1 + |x|^2)^(-ell/2), centered at the origin.
    REll { ell: f64 },
    /// r_{lambda,ell}(x) = (1 + lambda |x|^2)^(-ell/2).
    RLambdaEll { lambda: f64, ell: f64 },
    /// rho(x) = exp(-beta m |x - x1|).
    RhoExponential { beta: f64, center: Vec<i64> },
}

impl WeightSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            WeightSpec::REll { ell } if *ell < 0.0 => Err(Error::InvalidParameter(
                format!("weight exponent ell {ell} must be >= 0"),
            )),
            WeightSpec::RLambdaEll { lambda, ell } if *lambda <= 0.0 || *ell < 0.0 => {
                Err(Error::InvalidParameter(format!(
                    "weight scale lambda {lambda} must be > 0 and ell {ell} >= 0"
                )))
            }
            WeightSpec::RhoExponential { beta, .. } if *beta <= 0.0 => Err(
                Error::InvalidParameter(format!("weight rate beta {beta} must be > 0")),
            ),
            _ => Ok(()),
        }
    }

    /// Evaluates the weight at every site. The result is in (0, 1].
    pub fn generate(&self, lat: &LatticeConfig) -> Result<Field> {
        self.validate()?;
        let origin = vec![0i64; lat.d()];
        let field = match self {
            WeightSpec::REll { ell } => Field::from_fn(lat, |idx| {
                let r = lat.distance_from(idx, &origin);
                (1.0 + r * r).powf(-ell / 2.0)
            }),
            WeightSpec::RLambdaEll { lambda, ell } => Field::from_fn(lat, |idx| {
                let r = lat.distance_from(idx, &origin);
                (1.0 + lambda * r * r).powf(-ell / 2.0)
            }),
            WeightSpec::RhoExponential { beta, center } => Field::from_fn(lat, |idx| {
                let r = lat.distance_from(idx, center);
                (-beta * lat.mass() * r).exp()
            }),
        };
        Ok(field)
    }
}

/// Exponent bundle for a weighted Besov norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormSpec {
    pub p: f64,
    pub q: f64,
    pub s: f64,
    pub weight: WeightSpec,
}

impl NormSpec {
    pub fn validate(&self) -> Result<()> {
        if self.p < 1.0 || self.q < 1.0 {
            return Err(Error::InvalidParameter(format!(
                "integrability p={} and summability q={} must be >= 1",
                self.p, self.q
            )));
        }
        self.weight.validate()
    }
}

/// Applies L^(-1) = (m^2 - Delta_h)^(-1) spectrally.
pub fn apply_linv(f: &Field) -> Result<Field> {
    if !f.is_finite() {
        return Err(Error::NonFiniteInput);
    }
    let lat = *f.lattice();
    let out = spectral::apply_multiplier(&lat, f.values(), |k| 1.0 / lat.symbol(k));
    Field::new(lat, out)
}

/// Applies L = m^2 - Delta_h spectrally.
pub fn apply_l(f: &Field) -> Result<Field> {
    if !f.is_finite() {
        return Err(Error::NonFiniteInput);
    }
    let lat = *f.lattice();
    let out = spectral::apply_multiplier(&lat, f.values(), |k| lat.symbol(k));
    Field::new(lat, out)
}

/// Periodic convolution with the h^d measure:
/// (f * g)(x) = sum_y f(y) g(x - y) h^d.
pub fn convolve(f: &Field, g: &Field) -> Result<Field> {
    f.check_same_lattice(g)?;
    if !f.is_finite() || !g.is_finite() {
        return Err(Error::NonFiniteInput);
    }
    let lat = *f.lattice();
    let fs = spectral::forward(&lat, f.values());
    let gs = spectral::forward(&lat, g.values());
    let prod: Vec<_> = fs.iter().zip(&gs).map(|(a, b)| a * b).collect();
    Field::new(lat, spectral::inverse(&lat, prod))
}

/// Weighted L^p norm with Riemann-sum measure h^d.
pub fn weighted_lp_norm(f: &Field, p: f64, weight: &WeightSpec) -> Result<f64> {
    if p < 1.0 {
        return Err(Error::InvalidParameter(format!("p = {p} must be >= 1")));
    }
    let w = weight.generate(f.lattice())?;
    if p.is_infinite() {
        return Ok(f
            .values()
            .iter()
            .zip(w.values())
            .fold(0.0, |acc, (&v, &wv)| acc.max((v * wv).abs())));
    }
    let h_d = f.lattice().cell_volume();
    let sum: f64 = f
        .values()
        .iter()
        .zip(w.values())
        .map(|(&v, &wv)| (v * wv).abs().powf(p))
        .sum();
    Ok((sum * h_d).powf(1.0 / p))
}

/// Dyadic block decomposition bookkeeping for the Besov norm.
/// Block -1 is the ball |k| < k0/2; block j >= 0 is the sharp annulus
/// [2^(j-1) k0, 2^j k0) with k0 the fundamental wavenumber 2 pi / L.
fn dyadic_block_index(knorm: f64, k0: f64) -> i32 {
    if knorm < 0.5 * k0 {
        return -1;
    }
    // smallest j with knorm < 2^j k0
    let mut j = 0i32;
    let mut upper = k0;
    while knorm >= upper {
        j += 1;
        upper *= 2.0;
    }
    j
}

/// Weighted Besov norm with sharp spectral annuli.
pub fn besov_norm(f: &Field, spec: &NormSpec) -> Result<f64> {
    spec.validate()?;
    if !f.is_finite() {
        return Err(Error::NonFiniteInput);
    }
    let lat = *f.lattice();
    let k0 = 2.0 * std::f64::consts::PI / lat.side_length();
    let j_max = dyadic_block_index(lat.max_wavenumber(), k0);

    let spectrum = spectral::forward(&lat, f.values());
    let mut k = vec![0.0; lat.d()];
    let mut block_index = vec![0i32; lat.site_count()];
    for idx in 0..lat.site_count() {
        lat.wavevector(idx, &mut k);
        let knorm = k.iter().map(|kj| kj * kj).sum::<f64>().sqrt();
        block_index[idx] = dyadic_block_index(knorm, k0);
    }

    let mut terms: Vec<f64> = Vec::new();
    for j in -1..=j_max {
        let masked: Vec<_> = spectrum
            .iter()
            .zip(&block_index)
            .map(|(c, &b)| if b == j { *c } else { Default::default() })
            .collect();
        let block = Field::new(lat, spectral::inverse(&lat, masked))?;
        let lp = weighted_lp_norm(&block, spec.p, &spec.weight)?;
        terms.push(2.0f64.powi(j) .powf(spec.s) * lp);
    }

    if spec.q.is_infinite() {
        Ok(terms.iter().fold(0.0, |acc, t| acc.max(*t)))
    } else {
        Ok(terms
            .iter()
            .map(|t| t.powf(spec.q))
            .sum::<f64>()
            .powf(1.0 / spec.q))
    }
}
