//! Oracle time-frequency masks and their application.

use ndarray::{Array2, Zip};
use rustfft::num_complex::Complex64;

use crate::audio::AudioBuffer;
use crate::cochlea::{self, Cochleagram, GammatoneBank};
use crate::error::{ensure_shape, Error, Result};
use crate::signal::{self, ComplexSpectrogram, FrameConfig};

/// IRM exponent used throughout.
pub const DEFAULT_BETA: f64 = 0.5;
/// Local-SNR threshold (magnitude ratio) for the IBM; 1 is the 0 dB criterion.
pub const DEFAULT_IBM_THRESHOLD: f64 = 1.0;
/// Upper clamp for the amplitude mask.
pub const DEFAULT_AM_MAX: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MaskDomain {
    /// Gammatone T-F units, `channels x frames`.
    Gammatone,
    /// STFT bins, `bins x frames`.
    Stft,
}

impl MaskDomain {
    pub fn name(&self) -> &'static str {
        match self {
            MaskDomain::Gammatone => "gammatone",
            MaskDomain::Stft => "stft",
        }
    }
}

/// Real gain per T-F cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    grid: Array2<f64>,
    domain: MaskDomain,
    clamp: (f64, f64),
}

impl Mask {
    /// Clamps every entry into `clamp`; non-finite entries are rejected.
    pub fn new(grid: Array2<f64>, domain: MaskDomain, clamp: (f64, f64)) -> Result<Self> {
        if clamp.0 > clamp.1 {
            return Err(Error::Config(format!("empty clamp range {clamp:?}")));
        }
        if grid.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("mask contains non-finite values".into()));
        }
        let grid = grid.mapv(|v| v.clamp(clamp.0, clamp.1));
        Ok(Self {
            grid,
            domain,
            clamp,
        })
    }

    /// Mask with every entry equal to `value`, unclamped beyond `[0, value.max(1)]`.
    pub fn constant(shape: (usize, usize), value: f64, domain: MaskDomain) -> Self {
        Self {
            grid: Array2::from_elem(shape, value),
            domain,
            clamp: (0.0_f64.min(value), 1.0_f64.max(value)),
        }
    }

    pub fn grid(&self) -> &Array2<f64> {
        &self.grid
    }

    pub fn into_grid(self) -> Array2<f64> {
        self.grid
    }

    pub fn domain(&self) -> MaskDomain {
        self.domain
    }

    pub fn clamp_range(&self) -> (f64, f64) {
        self.clamp
    }

    pub fn dim(&self) -> (usize, usize) {
        self.grid.dim()
    }

    /// 1 where the mask exceeds `threshold`, else 0.
    pub fn binarize(&self, threshold: f64) -> Mask {
        Mask {
            grid: self.grid.mapv(|v| if v > threshold { 1.0 } else { 0.0 }),
            domain: self.domain,
            clamp: (0.0, 1.0),
        }
    }
}

/// `(Ex / (Ex + Ev))^beta`; cells where both energies are zero get 0.
pub fn irm(
    clean_energy: &Array2<f64>,
    noise_energy: &Array2<f64>,
    beta: f64,
    domain: MaskDomain,
) -> Result<Mask> {
    ensure_shape("irm", clean_energy.dim(), noise_energy.dim())?;
    if clean_energy.iter().chain(noise_energy).any(|&e| e < 0.0) {
        return Err(Error::InvalidData("energies must be nonnegative".into()));
    }
    let grid = Zip::from(clean_energy)
        .and(noise_energy)
        .map_collect(|&ex, &ev| {
            let total = ex + ev;
            if total > 0.0 {
                (ex / total).powf(beta)
            } else {
                0.0
            }
        });
    Mask::new(grid, domain, (0.0, 1.0))
}

/// Binary mask: 1 iff `|x| / |v| > threshold[row]` (strict).
///
/// `thresholds` holds one magnitude-ratio threshold per channel/bin.
pub fn ibm(
    clean_mag: &Array2<f64>,
    noise_mag: &Array2<f64>,
    thresholds: &[f64],
    domain: MaskDomain,
) -> Result<Mask> {
    ensure_shape("ibm", clean_mag.dim(), noise_mag.dim())?;
    if thresholds.len() != clean_mag.nrows() {
        return Err(Error::shape(
            "ibm thresholds",
            (clean_mag.nrows(), 1),
            (thresholds.len(), 1),
        ));
    }
    let grid = Array2::from_shape_fn(clean_mag.dim(), |(k, m)| {
        // |x| > T |v| avoids dividing by a zero noise magnitude
        if clean_mag[(k, m)] > thresholds[k] * noise_mag[(k, m)] {
            1.0
        } else {
            0.0
        }
    });
    Mask::new(grid, domain, (0.0, 1.0))
}

/// `|x| / |y|` clamped to `[0, g_max]`; zero where `|y| = 0`.
pub fn amplitude_mask(clean_mag: &Array2<f64>, noisy_mag: &Array2<f64>, g_max: f64) -> Result<Mask> {
    ensure_shape("amplitude mask", clean_mag.dim(), noisy_mag.dim())?;
    let grid = Zip::from(clean_mag)
        .and(noisy_mag)
        .map_collect(|&x, &y| if y > 0.0 { x / y } else { 0.0 });
    Mask::new(grid, MaskDomain::Stft, (0.0, g_max))
}

/// Phase-sensitive filter `Re[x / y] = |x|/|y| cos(angle x - angle y)`.
///
/// With `clamp` the values are limited to `[0, 1]`; otherwise they are raw.
pub fn psf(clean: &Array2<Complex64>, noisy: &Array2<Complex64>, clamp: bool) -> Result<Mask> {
    ensure_shape("psf", clean.dim(), noisy.dim())?;
    let grid = Zip::from(clean).and(noisy).map_collect(|x, y| {
        let p = y.norm_sqr();
        if p > 0.0 {
            (x * y.conj()).re / p
        } else {
            0.0
        }
    });
    let range = if clamp {
        (0.0, 1.0)
    } else {
        (f64::NEG_INFINITY, f64::INFINITY)
    };
    Mask::new(grid, MaskDomain::Stft, range)
}

/// Scales every noisy T-F unit by its mask entry and overlap-adds each channel.
pub fn apply_mask_cochleagram(mask: &Mask, noisy: &Cochleagram) -> Result<Array2<f64>> {
    if mask.domain != MaskDomain::Gammatone {
        return Err(Error::Domain {
            expected: MaskDomain::Gammatone.name(),
            actual: mask.domain.name(),
        });
    }
    cochlea::overlap_add_units(noisy, &mask.grid)
}

/// Scales STFT magnitudes, keeping the noisy phase.
pub fn apply_mask_stft(mask: &Mask, noisy: &ComplexSpectrogram) -> Result<ComplexSpectrogram> {
    if mask.domain != MaskDomain::Stft {
        return Err(Error::Domain {
            expected: MaskDomain::Stft.name(),
            actual: mask.domain.name(),
        });
    }
    ensure_shape("stft mask", noisy.data.dim(), mask.dim())?;
    let mut out = noisy.clone();
    out.data.zip_mut_with(&mask.grid, |c, g| *c *= *g);
    Ok(out)
}

/// Gammatone-domain IRM computed from the clean and noise components of a mixture.
pub fn oracle_irm(
    clean: &AudioBuffer,
    noise: &AudioBuffer,
    bank: &GammatoneBank,
    cfg: &FrameConfig,
    beta: f64,
) -> Result<Mask> {
    let ex = cochlea::unit_energy(&cochlea::analyze(clean, bank, cfg)?);
    let ev = cochlea::unit_energy(&cochlea::analyze(noise, bank, cfg)?);
    irm(&ex, &ev, beta, MaskDomain::Gammatone)
}

/// Applies a gammatone-domain mask to `noisy` and resynthesizes a waveform.
pub fn enhance_gammatone(
    noisy: &AudioBuffer,
    mask: &Mask,
    bank: &GammatoneBank,
    cfg: &FrameConfig,
) -> Result<AudioBuffer> {
    let coch = cochlea::analyze(noisy, bank, cfg)?;
    let channels = apply_mask_cochleagram(mask, &coch)?;
    cochlea::synthesize(&channels, bank)
}

/// Applies an STFT-domain mask and resynthesizes with the noisy phase.
pub fn enhance_stft(noisy: &AudioBuffer, mask: &Mask, cfg: &FrameConfig) -> Result<AudioBuffer> {
    let spec = signal::stft(noisy, cfg)?;
    let masked = apply_mask_stft(mask, &spec)?;
    Ok(signal::istft(&masked)?.resized(noisy.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn one(v: f64) -> Array2<f64> {
        array![[v]]
    }

    #[test]
    fn irm_examples() {
        let g = MaskDomain::Gammatone;
        assert_eq!(irm(&one(1.0), &one(0.0), 0.5, g).unwrap().grid()[(0, 0)], 1.0);
        let eq = irm(&one(2.0), &one(2.0), 0.5, g).unwrap().grid()[(0, 0)];
        assert!((eq - 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(irm(&one(1.0), &one(3.0), 0.5, g).unwrap().grid()[(0, 0)], 0.5);
        assert_eq!(irm(&one(0.0), &one(0.0), 0.5, g).unwrap().grid()[(0, 0)], 0.0);
        assert!(irm(&one(1.0), &array![[1.0, 2.0]], 0.5, g).is_err());
        assert!(irm(&one(-1.0), &one(1.0), 0.5, g).is_err());
    }

    #[test]
    fn ibm_examples() {
        let t = [1.0];
        let s = MaskDomain::Stft;
        assert_eq!(ibm(&one(2.0), &one(1.0), &t, s).unwrap().grid()[(0, 0)], 1.0);
        assert_eq!(ibm(&one(0.5), &one(1.0), &t, s).unwrap().grid()[(0, 0)], 0.0);
        // tie goes to zero
        assert_eq!(ibm(&one(1.0), &one(1.0), &t, s).unwrap().grid()[(0, 0)], 0.0);
        assert_eq!(ibm(&one(1.0), &one(0.0), &t, s).unwrap().grid()[(0, 0)], 1.0);
        assert!(ibm(&one(1.0), &one(1.0), &[1.0, 1.0], s).is_err());
    }

    #[test]
    fn amplitude_mask_examples() {
        assert_eq!(amplitude_mask(&one(2.0), &one(2.0), 10.0).unwrap().grid()[(0, 0)], 1.0);
        assert_eq!(amplitude_mask(&one(0.0), &one(2.0), 10.0).unwrap().grid()[(0, 0)], 0.0);
        assert_eq!(amplitude_mask(&one(3.0), &one(1.0), 2.0).unwrap().grid()[(0, 0)], 2.0);
        assert_eq!(amplitude_mask(&one(3.0), &one(0.0), 2.0).unwrap().grid()[(0, 0)], 0.0);
    }

    #[test]
    fn psf_examples() {
        let c = |m: f64, p: f64| array![[Complex64::from_polar(m, p)]];
        assert!((psf(&c(2.0, 0.3), &c(2.0, 0.3), false).unwrap().grid()[(0, 0)] - 1.0).abs() < 1e-15);
        assert!(psf(&c(1.0, std::f64::consts::FRAC_PI_2), &c(1.0, 0.0), false).unwrap().grid()[(0, 0)].abs() < 1e-15);
        let raw = psf(&c(1.0, std::f64::consts::PI), &c(2.0, 0.0), false).unwrap().grid()[(0, 0)];
        assert!((raw + 0.5).abs() < 1e-15);
        assert_eq!(psf(&c(1.0, std::f64::consts::PI), &c(2.0, 0.0), true).unwrap().grid()[(0, 0)], 0.0);
        assert_eq!(psf(&c(1.0, 0.0), &c(0.0, 0.0), false).unwrap().grid()[(0, 0)], 0.0);
    }

    #[test]
    fn domain_mismatch() {
        let m = Mask::constant((3, 2), 1.0, MaskDomain::Gammatone);
        let spec = ComplexSpectrogram {
            data: Array2::zeros((3, 2)),
            config: FrameConfig::speech(16000),
            sample_rate: 16000,
            signal_len: 480,
        };
        assert!(matches!(apply_mask_stft(&m, &spec), Err(Error::Domain { .. })));
    }

    #[test]
    fn mask_rejects_nan() {
        assert!(Mask::new(array![[f64::NAN]], MaskDomain::Stft, (0.0, 1.0)).is_err());
    }
}
