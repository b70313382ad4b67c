//! Shared d-dimensional FFT machinery.
//!
//! All transforms use the torus conventions
//!   fhat(k) = sum_x f(x) exp(-i k.x) h^d,
//!   f(x)    = (1/L^d) sum_k fhat(k) exp(i k.x),
//! with k_j = 2 pi n_j / L and signed mode numbers n_j. Under these
//! conventions periodic convolution with the h^d measure is a plain
//! product of transforms and Parseval reads sum |f|^2 h^d = (1/L^d) sum |fhat|^2.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use once_cell::sync::Lazy;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftDirection, FftPlanner};

use crate::lattice::LatticeConfig;

static PLAN_CACHE: Lazy<Mutex<HashMap<(usize, bool), Arc<dyn Fft<f64>>>>> =
    Lazy::new(|| Mutex::new(HashMap::new()));

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut cache = PLAN_CACHE.lock().unwrap();
    cache
        .entry((len, inverse))
        .or_insert_with(|| {
            let mut planner = FftPlanner::new();
            let dir = if inverse {
                FftDirection::Inverse
            } else {
                FftDirection::Forward
            };
            planner.plan_fft(len, dir)
        })
        .clone()
}

/// In-place unnormalized d-dimensional DFT over a row-major N^d buffer.
fn fft_nd(buf: &mut [Complex64], d: usize, n: usize, inverse: bool) {
    let total = buf.len();
    debug_assert_eq!(total, n.pow(d as u32));
    let fft = plan(n, inverse);
    let mut scratch = vec![Complex64::default(); fft.get_inplace_scratch_len()];
    let mut line = vec![Complex64::default(); n];
    // Axis `a` has stride n^(d-1-a) in row-major order.
    for axis in 0..d {
        let stride = n.pow((d - 1 - axis) as u32);
        if stride == 1 {
            for chunk in buf.chunks_exact_mut(n) {
                fft.process_with_scratch(chunk, &mut scratch);
            }
        } else {
            let block = stride * n;
            for base_block in (0..total).step_by(block) {
                for offset in 0..stride {
                    let base = base_block + offset;
                    for (i, slot) in line.iter_mut().enumerate() {
                        *slot = buf[base + i * stride];
                    }
                    fft.process_with_scratch(&mut line, &mut scratch);
                    for (i, value) in line.iter().enumerate() {
                        buf[base + i * stride] = *value;
                    }
                }
            }
        }
    }
}

/// Spectrum of a real field under the measure-weighted transform.
pub fn forward(lat: &LatticeConfig, values: &[f64]) -> Vec<Complex64> {
    let h_d = lat.cell_volume();
    let mut buf: Vec<Complex64> = values
        .iter()
        .map(|&v| Complex64::new(v * h_d, 0.0))
        .collect();
    fft_nd(&mut buf, lat.d(), lat.n(), false);
    buf
}

/// Real field from a spectrum; inverse of [`forward`].
pub fn inverse(lat: &LatticeConfig, mut spectrum: Vec<Complex64>) -> Vec<f64> {
    fft_nd(&mut spectrum, lat.d(), lat.n(), true);
    let vol = lat.volume();
    spectrum.iter().map(|c| c.re / vol).collect()
}

/// Applies a diagonal spectral multiplier `g(k)` to a real field.
pub fn apply_multiplier<G>(lat: &LatticeConfig, values: &[f64], g: G) -> Vec<f64>
where
    G: Fn(&[f64]) -> f64,
{
    let mut spectrum = forward(lat, values);
    let mut k = vec![0.0; lat.d()];
    for (idx, c) in spectrum.iter_mut().enumerate() {
        lat.wavevector(idx, &mut k);
        *c *= g(&k);
    }
    inverse(lat, spectrum)
}

/// Applies `g(k)` given precomputed multiplier values per site index.
pub fn apply_multiplier_table(lat: &LatticeConfig, values: &[f64], table: &[f64]) -> Vec<f64> {
    let mut spectrum = forward(lat, values);
    for (c, &m) in spectrum.iter_mut().zip(table) {
        *c *= m;
    }
    inverse(lat, spectrum)
}

/// Precomputes a multiplier table indexed like the spectrum buffer.
pub fn multiplier_table<G>(lat: &LatticeConfig, g: G) -> Vec<f64>
where
    G: Fn(&[f64]) -> f64,
{
    let mut k = vec![0.0; lat.d()];
    (0..lat.site_count())
        .map(|idx| {
            lat.wavevector(idx, &mut k);
            g(&k)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{LatticeConfig, SymbolMode};

    #[test]
    fn forward_inverse_round_trip() {
        let lat = LatticeConfig::new(2, 16, 8.0, 1.0, SymbolMode::DiscreteLaplacian).unwrap();
        let values: Vec<f64> = (0..lat.site_count())
            .map(|i| ((i * 2654435761) % 1000) as f64 / 500.0 - 1.0)
            .collect();
        let back = inverse(&lat, forward(&lat, &values));
        for (a, b) in values.iter().zip(&back) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn parseval_under_measure_convention() {
        let lat = LatticeConfig::new(1, 64, 16.0, 1.0, SymbolMode::DiscreteLaplacian).unwrap();
        let values: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin()).collect();
        let spectrum = forward(&lat, &values);
        let lhs: f64 = values.iter().map(|v| v * v).sum::<f64>() * lat.cell_volume();
        let rhs: f64 = spectrum.iter().map(|c| c.norm_sqr()).sum::<f64>() / lat.volume();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.max(1.0));
    }
}
