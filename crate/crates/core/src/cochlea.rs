//! Gammatone filterbank analysis into T-F units and group-delay-compensated
//! resynthesis.
//!
//! Each channel is a 4th-order all-pole gammatone: four identical two-pole
//! sections with pole radius `exp(-2 pi 1.019 ERB(fc) / fs)` at angle
//! `2 pi fc / fs`, normalised to unit gain at the centre frequency. Centres are
//! uniformly spaced on the mel scale `2595 log10(1 + f / 700)`.
//!
//! Resynthesis runs every channel backwards through its own filter, which
//! cancels the channel phase, and sums the channels with fixed weights that
//! flatten the summed squared magnitude response over the analysis band.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView1};
use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::signal::{FrameConfig, Window};

pub const DEFAULT_CHANNELS: usize = 64;
pub const DEFAULT_F_LO: f64 = 50.0;
pub const DEFAULT_F_HI: f64 = 8000.0;
pub const FILTER_ORDER: usize = 4;

/// Pole bandwidth relative to one ERB for a 4th-order gammatone.
const ERB_POLE_FACTOR: f64 = 1.019;
const WEIGHT_GRID: usize = 2048;
const WEIGHT_ITERS: usize = 300;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Equivalent rectangular bandwidth in Hz.
pub fn erb(f: f64) -> f64 {
    24.7 * (4.37 * f / 1000.0 + 1.0)
}

/// One two-pole section `g / (1 + a1 z^-1 + a2 z^-2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Section {
    g: f64,
    a1: f64,
    a2: f64,
}

impl Section {
    fn design(fc: f64, fs: f64) -> Self {
        let theta = 2.0 * PI * fc / fs;
        let r = (-2.0 * PI * ERB_POLE_FACTOR * erb(fc) / fs).exp();
        let a1 = -2.0 * r * theta.cos();
        let a2 = r * r;
        let z1 = Complex64::from_polar(1.0, -theta);
        let den = Complex64::new(1.0, 0.0) + a1 * z1 + a2 * z1 * z1;
        Section { g: den.norm(), a1, a2 }
    }

    fn response(&self, omega: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -omega);
        Complex64::new(self.g, 0.0) / (1.0 + self.a1 * z1 + self.a2 * z1 * z1)
    }

    fn filter_in_place(&self, x: &mut [f64]) {
        let (mut s1, mut s2) = (0.0, 0.0);
        for v in x.iter_mut() {
            let y = self.g * *v + s1;
            s1 = -self.a1 * y + s2;
            s2 = -self.a2 * y;
            *v = y;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammatoneBank {
    center_freqs: Vec<f64>,
    bandwidths: Vec<f64>,
    sections: Vec<Section>,
    synthesis_weights: Vec<f64>,
    sample_rate: u32,
}

/// Builds a mel-spaced bank of `n_channels` gammatone filters between `f_lo` and `f_hi`.
pub fn make_bank(n_channels: usize, f_lo: f64, f_hi: f64, sample_rate: u32) -> Result<GammatoneBank> {
    let nyquist = sample_rate as f64 / 2.0;
    if n_channels == 0 {
        return Err(Error::Config("filterbank needs at least one channel".into()));
    }
    if !(f_lo > 0.0 && f_lo < f_hi && f_hi <= nyquist) {
        return Err(Error::Config(format!(
            "invalid frequency range [{f_lo}, {f_hi}] Hz for fs = {sample_rate} Hz"
        )));
    }
    let (m_lo, m_hi) = (hz_to_mel(f_lo), hz_to_mel(f_hi));
    let center_freqs: Vec<f64> = if n_channels == 1 {
        vec![mel_to_hz(0.5 * (m_lo + m_hi))]
    } else {
        (0..n_channels)
            .map(|i| {
                if i == 0 {
                    f_lo
                } else if i == n_channels - 1 {
                    f_hi
                } else {
                    mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (n_channels - 1) as f64)
                }
            })
            .collect()
    };
    let fs = sample_rate as f64;
    let bandwidths = center_freqs.iter().map(|&f| erb(f)).collect();
    let sections = center_freqs.iter().map(|&f| Section::design(f, fs)).collect();
    let mut bank = GammatoneBank {
        center_freqs,
        bandwidths,
        sections,
        synthesis_weights: Vec::new(),
        sample_rate,
    };
    bank.synthesis_weights = bank.fit_synthesis_weights(f_lo, f_hi);
    Ok(bank)
}

impl GammatoneBank {
    /// 64 channels, 50 Hz to 8 kHz.
    pub fn standard(sample_rate: u32) -> Result<Self> {
        make_bank(
            DEFAULT_CHANNELS,
            DEFAULT_F_LO,
            DEFAULT_F_HI.min(sample_rate as f64 / 2.0),
            sample_rate,
        )
    }

    pub fn n_channels(&self) -> usize {
        self.center_freqs.len()
    }

    pub fn center_freqs(&self) -> &[f64] {
        &self.center_freqs
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn order(&self) -> usize {
        FILTER_ORDER
    }

    pub fn synthesis_weights(&self) -> &[f64] {
        &self.synthesis_weights
    }

    /// Complex frequency response of `channel` at `freq` Hz.
    pub fn response(&self, channel: usize, freq: f64) -> Complex64 {
        let omega = 2.0 * PI * freq / self.sample_rate as f64;
        self.sections[channel].response(omega).powi(FILTER_ORDER as i32)
    }

    /// Runs one channel's filter over `x` in place.
    pub fn filter_channel(&self, channel: usize, x: &mut [f64]) {
        let s = self.sections[channel];
        for _ in 0..FILTER_ORDER {
            s.filter_in_place(x);
        }
    }

    pub fn impulse_response(&self, channel: usize, len: usize) -> Vec<f64> {
        let mut x = vec![0.0; len];
        if len > 0 {
            x[0] = 1.0;
        }
        self.filter_channel(channel, &mut x);
        x
    }

    /// Nonnegative weights `w` minimising `sum_f (sum_c w_c |H_c(f)|^2 - 1)^2`
    /// over a uniform grid on `[f_lo, f_hi]`, via multiplicative updates.
    fn fit_synthesis_weights(&self, f_lo: f64, f_hi: f64) -> Vec<f64> {
        let n = self.n_channels();
        let grid: Vec<f64> = (0..WEIGHT_GRID)
            .map(|i| f_lo + (f_hi - f_lo) * i as f64 / (WEIGHT_GRID - 1) as f64)
            .collect();
        let power: Vec<Vec<f64>> = (0..n)
            .map(|c| grid.iter().map(|&f| self.response(c, f).norm_sqr()).collect())
            .collect();
        let target: Vec<f64> = power.iter().map(|p| p.iter().sum()).collect();
        let mut w = vec![1.0; n];
        let mut total = vec![0.0; grid.len()];
        for _ in 0..WEIGHT_ITERS {
            total.iter_mut().for_each(|t| *t = 0.0);
            for (wc, p) in w.iter().zip(&power) {
                for (t, v) in total.iter_mut().zip(p) {
                    *t += wc * v;
                }
            }
            for (c, wc) in w.iter_mut().enumerate() {
                let denom: f64 = power[c].iter().zip(&total).map(|(p, t)| p * t).sum();
                *wc *= target[c] / denom.max(1e-300);
            }
        }
        w
    }
}

/// Filterbank output cut into T-F units.
///
/// Unit `(channel, m)` is `channels[channel][m * hop .. m * hop + frame_len]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cochleagram {
    /// Full-length filter outputs, `n_channels x signal_len`.
    pub channels: Array2<f64>,
    pub config: FrameConfig,
    pub frames: usize,
}

impl Cochleagram {
    pub fn n_channels(&self) -> usize {
        self.channels.nrows()
    }

    pub fn signal_len(&self) -> usize {
        self.channels.ncols()
    }

    pub fn unit(&self, channel: usize, frame: usize) -> ArrayView1<'_, f64> {
        let start = frame * self.config.hop;
        self.channels
            .slice(ndarray::s![channel, start..start + self.config.frame_len])
    }
}

/// Framing used for T-F units: 20 ms rectangular frames every 10 ms.
pub fn unit_config(sample_rate: u32) -> FrameConfig {
    FrameConfig::speech(sample_rate).with_window(Window::Rectangular)
}

pub fn analyze(signal: &AudioBuffer, bank: &GammatoneBank, cfg: &FrameConfig) -> Result<Cochleagram> {
    if signal.sample_rate() != bank.sample_rate {
        return Err(Error::SampleRate {
            expected: bank.sample_rate,
            actual: signal.sample_rate(),
        });
    }
    let outputs: Vec<Vec<f64>> = (0..bank.n_channels())
        .into_par_iter()
        .map(|c| {
            let mut x = signal.samples().to_vec();
            bank.filter_channel(c, &mut x);
            x
        })
        .collect();
    let len = signal.len();
    let mut channels = Array2::zeros((bank.n_channels(), len));
    for (mut row, out) in channels.rows_mut().into_iter().zip(outputs) {
        row.assign(&ArrayView1::from(&out));
    }
    Ok(Cochleagram {
        channels,
        config: *cfg,
        frames: cfg.num_frames(len),
    })
}

/// Squared 2-norm of every unit, `n_channels x frames`.
pub fn unit_energy(coch: &Cochleagram) -> Array2<f64> {
    Array2::from_shape_fn((coch.n_channels(), coch.frames), |(c, m)| {
        coch.unit(c, m).iter().map(|v| v * v).sum()
    })
}

/// Scales every unit by `gains[(channel, frame)]` and overlap-adds the units
/// back into full-length channel signals.
///
/// Each sample is divided by the number of units covering it (2 in the interior
/// at 50% overlap); samples after the last unit are zero.
pub fn overlap_add_units(coch: &Cochleagram, gains: &Array2<f64>) -> Result<Array2<f64>> {
    crate::error::ensure_shape(
        "unit gains",
        (coch.n_channels(), coch.frames),
        gains.dim(),
    )?;
    let cfg = &coch.config;
    let len = coch.signal_len();
    let mut coverage = vec![0.0f64; len];
    for m in 0..coch.frames {
        for c in coverage.iter_mut().skip(m * cfg.hop).take(cfg.frame_len) {
            *c += 1.0;
        }
    }
    let mut out = Array2::zeros((coch.n_channels(), len));
    for (c, mut row) in out.rows_mut().into_iter().enumerate() {
        let src = coch.channels.row(c);
        for m in 0..coch.frames {
            let g = gains[(c, m)];
            let start = m * cfg.hop;
            for n in start..start + cfg.frame_len {
                row[n] += g * src[n];
            }
        }
        for (v, &k) in row.iter_mut().zip(&coverage) {
            if k > 0.0 {
                *v /= k;
            }
        }
    }
    Ok(out)
}

/// Time-reverse, filter, time-reverse each channel, then take the weighted sum.
pub fn synthesize(channels: &Array2<f64>, bank: &GammatoneBank) -> Result<AudioBuffer> {
    if channels.nrows() != bank.n_channels() {
        return Err(Error::shape(
            "synthesis channels",
            (bank.n_channels(), channels.ncols()),
            channels.dim(),
        ));
    }
    let len = channels.ncols();
    let filtered: Vec<Vec<f64>> = (0..bank.n_channels())
        .into_par_iter()
        .map(|c| {
            let mut x: Vec<f64> = channels.row(c).iter().rev().copied().collect();
            bank.filter_channel(c, &mut x);
            x.reverse();
            x
        })
        .collect();
    let mut out = vec![0.0; len];
    for (x, w) in filtered.iter().zip(&bank.synthesis_weights) {
        for (o, v) in out.iter_mut().zip(x) {
            *o += w * v;
        }
    }
    AudioBuffer::new(out, bank.sample_rate)
}

/// Same as [`synthesize`], taking channel signals as separate rows.
pub fn synthesize_rows(rows: &[Vec<f64>], bank: &GammatoneBank) -> Result<AudioBuffer> {
    let len = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != len) {
        return Err(Error::shape("synthesis channel length", (len, 1), (bad.len(), 1)));
    }
    let mut m = Array2::zeros((rows.len(), len));
    for (mut dst, src) in m.rows_mut().into_iter().zip(rows) {
        dst.assign(&ArrayView1::from(src));
    }
    synthesize(&m, bank)
}
