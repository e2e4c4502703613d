//! Noise PSD tracking: initialise from a noise-only head, then smooth
//! recursively in frames whose energy looks like noise.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::signal::ComplexSpectrogram;

pub const DEFAULT_SMOOTHING: f64 = 0.9;
/// Length of the noise-only head, in samples at 16 kHz (62.5 ms).
pub const DEFAULT_INIT_SAMPLES: usize = 1000;
/// A frame is treated as noise-only when its energy is below this multiple
/// of the current noise energy estimate.
pub const NOISE_ENERGY_RATIO: f64 = 1.5;
/// Floor on the PSD, relative to mean periodogram power.
pub const PSD_FLOOR_REL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTrackerState {
    pub psd: Array1<f64>,
    pub smoothing: f64,
    pub init_samples: usize,
    pub psd_floor: f64,
}

impl NoiseTrackerState {
    /// Configuration-only state; `psd` is filled in by [`track_noise_psd`].
    pub fn new(smoothing: f64, init_samples: usize) -> Result<Self> {
        if !(0.0..=1.0).contains(&smoothing) {
            return Err(Error::Config(format!("noise smoothing must be in [0,1], got {smoothing}")));
        }
        if init_samples == 0 {
            return Err(Error::Config("noise-only head must be non-empty".into()));
        }
        Ok(Self { psd: Array1::zeros(0), smoothing, init_samples, psd_floor: 0.0 })
    }

    pub fn from_millis(smoothing: f64, init_ms: f64, sample_rate: u32) -> Result<Self> {
        Self::new(smoothing, (init_ms * sample_rate as f64 / 1000.0).round() as usize)
    }

    pub fn init_ms(&self, sample_rate: u32) -> f64 {
        self.init_samples as f64 * 1000.0 / sample_rate as f64
    }

    fn update(&mut self, power: ndarray::ArrayView1<f64>) {
        let frame_energy: f64 = power.sum();
        if frame_energy < NOISE_ENERGY_RATIO * self.psd.sum() {
            let a = self.smoothing;
            let floor = self.psd_floor;
            self.psd.zip_mut_with(&power, |p, &y| *p = (a * *p + (1.0 - a) * y).max(floor));
        }
    }
}

impl Default for NoiseTrackerState {
    fn default() -> Self {
        Self::new(DEFAULT_SMOOTHING, DEFAULT_INIT_SAMPLES).expect("valid defaults")
    }
}

/// Noise PSD estimate for every frame, as a `bins x frames` matrix.
///
/// Head frames (those lying entirely inside the first `init_samples`) all get
/// the mean head periodogram. Later frames are smoothed into the estimate only
/// when classified as noise-only, and column `m` holds the state after frame `m`.
pub fn track_noise_psd(spec: &ComplexSpectrogram, state: &NoiseTrackerState) -> Result<Array2<f64>> {
    let power = spec.power();
    let head = spec.config.num_frames(state.init_samples);
    if spec.signal_len < state.init_samples || head == 0 || head > spec.frames() {
        return Err(Error::EmptyInput(format!(
            "signal of {} samples is shorter than the {}-sample noise-only head",
            spec.signal_len, state.init_samples
        )));
    }
    let mean_power = power.mean().unwrap_or(0.0);
    let floor = (PSD_FLOOR_REL * mean_power).max(f64::MIN_POSITIVE);
    let mut st = state.clone();
    st.psd_floor = floor;
    st.psd = power
        .slice(ndarray::s![.., ..head])
        .mean_axis(Axis(1))
        .expect("head is non-empty")
        .mapv(|p| p.max(floor));
    let mut out = Array2::zeros(power.dim());
    for m in 0..spec.frames() {
        if m >= head {
            st.update(power.column(m));
        }
        out.column_mut(m).assign(&st.psd);
    }
    Ok(out)
}
