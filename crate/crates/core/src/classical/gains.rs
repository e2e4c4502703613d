//! Per-bin gain rules and the FIR Wiener-Hopf solve.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1, Zip};

use super::bessel::{i0e, i1e};
use crate::error::{ensure_shape, Error, Result};
use crate::linalg::cholesky_solve;

/// Lower bound on the a-priori SNR, -25 dB.
pub const XI_FLOOR: f64 = 0.003_162_277_660_168_379_5;
/// Lower bound on the a-posteriori SNR.
pub const GAMMA_FLOOR: f64 = 1e-10;
/// Smoothing factor of the decision-directed recursion.
pub const DD_ALPHA: f64 = 0.98;

/// A-priori (`xi`) and a-posteriori (`gamma`) SNR for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SnrEstimate {
    pub xi: Array1<f64>,
    pub gamma: Array1<f64>,
}

/// Magnitude spectral subtraction, half-wave rectified.
pub fn spectral_subtraction_gain(
    noisy_mag: ArrayView1<f64>,
    noise_mag: ArrayView1<f64>,
) -> Result<Array1<f64>> {
    ensure_shape("noise magnitude", (noisy_mag.len(), 1), (noise_mag.len(), 1))?;
    Ok(Zip::from(noisy_mag).and(noise_mag).map_collect(|&y, &v| {
        if y > 0.0 {
            (1.0 - v / y).max(0.0)
        } else {
            0.0
        }
    }))
}

pub fn wiener_gain(xi: f64) -> f64 {
    let xi = xi.max(0.0);
    xi / (1.0 + xi)
}

/// Time-domain Wiener-Hopf filter `h = (Rxx + Rvv)^-1 rxx`, solved by Cholesky.
pub fn fir_wiener(rxx_mat: &Array2<f64>, rvv: &Array2<f64>, rxx: &Array1<f64>) -> Result<Array1<f64>> {
    let l = rxx.len();
    ensure_shape("Rxx", (l, l), rxx_mat.dim())?;
    ensure_shape("Rvv", (l, l), rvv.dim())?;
    let ryy = rxx_mat + rvv;
    for i in 0..l {
        for j in 0..i {
            let (a, b) = (ryy[(i, j)], ryy[(j, i)]);
            if (a - b).abs() > 1e-10 * (a.abs() + b.abs()).max(1.0) {
                return Err(Error::Numerical("Rxx + Rvv is not symmetric".into()));
            }
        }
    }
    cholesky_solve(&ryy, rxx)
}

/// Gaussian-prior MMSE short-time spectral amplitude gain.
///
/// Inputs are floored at [`XI_FLOOR`] and [`GAMMA_FLOOR`], so the result is
/// always finite and nonnegative. The `exp(-nu/2)` factor is absorbed by the
/// scaled Bessel functions.
pub fn stsa_mmse_gain(xi: f64, gamma: f64) -> f64 {
    let xi = if xi.is_nan() { XI_FLOOR } else { xi.max(XI_FLOOR) };
    let gamma = if gamma.is_nan() { GAMMA_FLOOR } else { gamma.max(GAMMA_FLOOR) };
    let nu = xi / (1.0 + xi) * gamma;
    let h = nu / 2.0;
    PI.sqrt() / 2.0 * nu.sqrt() / gamma * ((1.0 + nu) * i0e(h) + nu * i1e(h))
}

/// Decision-directed a-priori SNR for one bin.
pub fn decision_directed(
    prev_gain: f64,
    prev_noisy_mag: f64,
    noise_psd: f64,
    gamma: f64,
    alpha: f64,
) -> f64 {
    let prev = (prev_gain * prev_noisy_mag).powi(2) / noise_psd;
    (alpha * prev + (1.0 - alpha) * (gamma - 1.0).max(0.0)).max(XI_FLOOR)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn spectral_subtraction_examples() {
        let y = array![1.0, 2.0, 2.0, 0.0];
        let v = array![0.0, 2.0, 4.0, 1.0];
        let g = spectral_subtraction_gain(y.view(), v.view()).unwrap();
        assert_eq!(g, array![1.0, 0.0, 0.0, 0.0]);
        assert!(spectral_subtraction_gain(y.view(), array![1.0].view()).is_err());
    }

    #[test]
    fn wiener_examples() {
        assert_eq!(wiener_gain(1.0), 0.5);
        assert_eq!(wiener_gain(0.0), 0.0);
        assert!((wiener_gain(99.0) - 0.99).abs() < 1e-15);
    }

    #[test]
    fn fir_wiener_scalar_and_noiseless() {
        let h = fir_wiener(&array![[1.0]], &array![[1.0]], &array![1.0]).unwrap();
        assert!((h[0] - 0.5).abs() < 1e-15);
        let rxx = array![[2.0, 0.5], [0.5, 1.0]];
        let r = array![1.0, -1.0];
        let h = fir_wiener(&rxx, &Array2::zeros((2, 2)), &r).unwrap();
        assert!((rxx.dot(&h) - &r).iter().all(|e| e.abs() < 1e-14));
        let singular = array![[1.0, 1.0], [1.0, 1.0]];
        assert!(matches!(
            fir_wiener(&singular, &Array2::zeros((2, 2)), &r),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn decision_directed_examples() {
        // prev term (g |y|)^2 / psd = 1
        assert!((decision_directed(1.0, 1.0, 1.0, 1.0, 0.98) - 0.98).abs() < 1e-15);
        assert_eq!(decision_directed(0.0, 1.0, 1.0, 0.5, 0.98), XI_FLOOR);
        assert_eq!(decision_directed(1.0, 3.0, 1.0, 4.0, 0.0), 3.0);
    }

    #[test]
    fn mmse_gain_is_finite_at_extremes() {
        for &xi in &[0.0, XI_FLOOR, 1.0, 1e6, 1e12, f64::NAN] {
            for &gamma in &[0.0, 1e-10, 1.0, 1e6, 1e12] {
                let g = stsa_mmse_gain(xi, gamma);
                assert!(g.is_finite() && g >= 0.0, "G({xi},{gamma}) = {g}");
            }
        }
    }
}
