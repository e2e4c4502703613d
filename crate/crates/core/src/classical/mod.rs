//! Non-learning enhancement: spectral subtraction, Wiener filtering,
//! Gaussian STSA-MMSE with decision-directed a-priori SNR, and EVD subspace
//! projection.

mod bessel;
mod gains;
mod subspace;
mod tracker;

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView1, ArrayViewMut1};
use rustfft::num_complex::Complex64;

pub use bessel::{i0e, i1e};
pub use gains::{
    decision_directed, fir_wiener, spectral_subtraction_gain, stsa_mmse_gain, wiener_gain,
    SnrEstimate, DD_ALPHA, GAMMA_FLOOR, XI_FLOOR,
};
pub use subspace::{
    sample_covariance, signal_subspace, subspace_enhance, subspace_enhance_signal, SignalSubspace,
    SubspaceConfig, DEFAULT_EPSILON,
};
pub use tracker::{
    track_noise_psd, NoiseTrackerState, DEFAULT_INIT_SAMPLES, DEFAULT_SMOOTHING,
    NOISE_ENERGY_RATIO, PSD_FLOOR_REL,
};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::signal::{apply_gain_pipeline, stft, ComplexSpectrogram, FrameConfig, GainEstimator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    SpectralSubtraction,
    Wiener,
    Mmse,
    Subspace,
}

impl Method {
    pub const ALL: [Method; 4] =
        [Method::SpectralSubtraction, Method::Wiener, Method::Mmse, Method::Subspace];

    pub fn name(&self) -> &'static str {
        match self {
            Method::SpectralSubtraction => "specsub",
            Method::Wiener => "wiener",
            Method::Mmse => "mmse",
            Method::Subspace => "subspace",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown classical method '{s}'")))
    }
}

#[derive(Debug, Clone)]
pub struct ClassicalConfig {
    pub frame: FrameConfig,
    pub dd_alpha: f64,
    pub tracker: NoiseTrackerState,
    pub subspace: SubspaceConfig,
}

impl ClassicalConfig {
    /// 32 ms sqrt-Hann frames at 50% overlap, 1000-sample noise head.
    pub fn standard(sample_rate: u32) -> Self {
        Self {
            frame: FrameConfig::wide(sample_rate),
            dd_alpha: DD_ALPHA,
            tracker: NoiseTrackerState::default(),
            subspace: SubspaceConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dd_alpha >= 0.0 && self.dd_alpha < 1.0) {
            return Err(Error::Config(format!("dd_alpha must be in [0,1), got {}", self.dd_alpha)));
        }
        if self.frame.cola_gain().is_none() {
            return Err(Error::Config("classical frame config must satisfy COLA".into()));
        }
        Ok(())
    }
}

/// Side information some methods can use instead of blind estimates.
#[derive(Debug, Clone, Copy, Default)]
pub struct Oracle<'a> {
    pub clean: Option<&'a AudioBuffer>,
    pub noise: Option<&'a AudioBuffer>,
}

impl<'a> Oracle<'a> {
    pub fn none() -> Self {
        Self::default()
    }
}

/// Applies a precomputed `bins x frames` gain matrix.
struct GainTable<'a>(&'a Array2<f64>);

impl GainEstimator for GainTable<'_> {
    fn estimate(
        &mut self,
        frame: usize,
        _spectrum: ArrayView1<Complex64>,
        mut gains: ArrayViewMut1<f64>,
    ) -> Result<()> {
        gains.assign(&self.0.column(frame));
        Ok(())
    }
}

/// Decision-directed gain recursion over a whole spectrogram.
///
/// The first frame uses a previous-frame term of 1, i.e. it starts at
/// `alpha + (1 - alpha) max(gamma - 1, 0)`.
pub fn decision_directed_gains(
    spec: &ComplexSpectrogram,
    noise_psd: &Array2<f64>,
    alpha: f64,
    rule: impl Fn(f64, f64) -> f64,
) -> Result<Array2<f64>> {
    crate::error::ensure_shape("noise psd", spec.data.dim(), noise_psd.dim())?;
    let power = spec.power();
    let mut out = Array2::zeros(power.dim());
    let mut prev_clean = Array1::<f64>::zeros(spec.bins());
    for m in 0..spec.frames() {
        for k in 0..spec.bins() {
            let lambda = noise_psd[(k, m)];
            let gamma = (power[(k, m)] / lambda).max(GAMMA_FLOOR);
            let xi = if m == 0 {
                decision_directed(1.0, lambda.sqrt(), lambda, gamma, alpha)
            } else {
                decision_directed(1.0, prev_clean[k], lambda, gamma, alpha)
            };
            let g = rule(xi, gamma);
            out[(k, m)] = g;
            prev_clean[k] = g * power[(k, m)].sqrt();
        }
    }
    Ok(out)
}

fn check_oracle(buf: Option<&AudioBuffer>, noisy: &AudioBuffer) -> Result<()> {
    buf.map_or(Ok(()), |b| noisy.check_compatible(b))
}

/// Noise PSD per frame: from the oracle noise if given, tracked otherwise.
fn noise_psd(spec: &ComplexSpectrogram, cfg: &ClassicalConfig, oracle: &Oracle) -> Result<Array2<f64>> {
    match oracle.noise {
        Some(noise) => {
            let p = stft(noise, &cfg.frame)?.power();
            let floor = (PSD_FLOOR_REL * spec.power().mean().unwrap_or(0.0)).max(f64::MIN_POSITIVE);
            Ok(p.mapv(|v| v.max(floor)))
        }
        None => track_noise_psd(spec, &cfg.tracker),
    }
}

/// File-level enhancement with one of the classical methods.
///
/// * `specsub` subtracts the oracle noise magnitude when available, else the
///   square root of the tracked PSD.
/// * `wiener` uses the oracle a-priori SNR `|X|^2/|V|^2` when both clean and
///   noise are given, else the decision-directed estimate.
/// * `mmse` uses decision-directed `xi` with the oracle or tracked noise PSD.
/// * `subspace` uses the oracle noise variance or the variance of the head.
pub fn enhance(
    method: Method,
    noisy: &AudioBuffer,
    cfg: &ClassicalConfig,
    oracle: &Oracle,
) -> Result<AudioBuffer> {
    cfg.validate()?;
    check_oracle(oracle.clean, noisy)?;
    check_oracle(oracle.noise, noisy)?;
    if method == Method::Subspace {
        let variance = match oracle.noise {
            Some(n) => n.power(),
            None => {
                let head = cfg.tracker.init_samples;
                if noisy.len() < head {
                    return Err(Error::EmptyInput(format!(
                        "signal shorter than the {head}-sample noise-only head"
                    )));
                }
                noisy.samples()[..head].iter().map(|v| v * v).sum::<f64>() / head as f64
            }
        };
        return subspace_enhance_signal(noisy, variance, &cfg.subspace);
    }

    let spec = stft(noisy, &cfg.frame)?;
    let gains = match method {
        Method::SpectralSubtraction => {
            let noise_mag = match oracle.noise {
                Some(n) => stft(n, &cfg.frame)?.magnitude(),
                None => track_noise_psd(&spec, &cfg.tracker)?.mapv(f64::sqrt),
            };
            let mag = spec.magnitude();
            let mut g = Array2::zeros(mag.dim());
            for m in 0..spec.frames() {
                g.column_mut(m)
                    .assign(&spectral_subtraction_gain(mag.column(m), noise_mag.column(m))?);
            }
            g
        }
        Method::Wiener => match (oracle.clean, oracle.noise) {
            (Some(c), Some(n)) => {
                let x = stft(c, &cfg.frame)?.power();
                let v = stft(n, &cfg.frame)?.power();
                ndarray::Zip::from(&x).and(&v).map_collect(|&x, &v| oracle_wiener(x, v))
            }
            _ => {
                let psd = noise_psd(&spec, cfg, oracle)?;
                decision_directed_gains(&spec, &psd, cfg.dd_alpha, |xi, _| wiener_gain(xi))?
            }
        },
        Method::Mmse => {
            let psd = noise_psd(&spec, cfg, oracle)?;
            decision_directed_gains(&spec, &psd, cfg.dd_alpha, stsa_mmse_gain)?
        }
        Method::Subspace => unreachable!("handled above"),
    };
    apply_gain_pipeline(noisy, &mut GainTable(&gains), &cfg.frame)
}

/// Wiener gain from true clean and noise powers; a cell with no noise passes.
pub fn oracle_wiener(clean_power: f64, noise_power: f64) -> f64 {
    if noise_power > 0.0 {
        wiener_gain(clean_power / noise_power)
    } else if clean_power > 0.0 {
        1.0
    } else {
        0.0
    }
}
