//! Framing, windowing and STFT analysis/synthesis.
//!
//! Frames start at `m * hop` and only whole frames are produced, so a signal of
//! `len` samples yields `floor((len - frame_len) / hop) + 1` frames. Trailing
//! samples that do not fill a frame are dropped by the analysis and come back as
//! zeros from [`apply_gain_pipeline`].

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1, ArrayViewMut1};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

/// Analysis/synthesis window shape. All windows are periodic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Window {
    Rectangular,
    Hann,
    SqrtHann,
}

impl Window {
    pub fn coefficients(&self, len: usize) -> Vec<f64> {
        let hann = |n: usize| 0.5 - 0.5 * (2.0 * PI * n as f64 / len as f64).cos();
        match self {
            Window::Rectangular => vec![1.0; len],
            Window::Hann => (0..len).map(hann).collect(),
            Window::SqrtHann => (0..len).map(|n| hann(n).sqrt()).collect(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Window::Rectangular => "rectangular",
            Window::Hann => "hann",
            Window::SqrtHann => "sqrt_hann",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "rectangular" | "rect" => Ok(Window::Rectangular),
            "hann" => Ok(Window::Hann),
            "sqrt_hann" | "sqrt-hann" => Ok(Window::SqrtHann),
            other => Err(Error::Config(format!("unknown window '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FrameConfig {
    pub frame_len: usize,
    pub hop: usize,
    pub window: Window,
    pub fft_size: usize,
}

impl FrameConfig {
    pub fn new(frame_len: usize, hop: usize, window: Window, fft_size: usize) -> Result<Self> {
        if hop == 0 || hop > frame_len || frame_len > fft_size {
            return Err(Error::Config(format!(
                "need 0 < hop <= frame_len <= fft_size, got hop={hop} frame_len={frame_len} fft_size={fft_size}"
            )));
        }
        if !fft_size.is_multiple_of(2) {
            return Err(Error::Config(format!("fft_size must be even, got {fft_size}")));
        }
        Ok(Self {
            frame_len,
            hop,
            window,
            fft_size,
        })
    }

    /// Frame and hop given in milliseconds; the FFT size is the next power of two.
    pub fn from_millis(sample_rate: u32, frame_ms: f64, hop_ms: f64, window: Window) -> Result<Self> {
        let frame_len = (sample_rate as f64 * frame_ms / 1000.0).round() as usize;
        let hop = (sample_rate as f64 * hop_ms / 1000.0).round() as usize;
        Self::new(frame_len, hop, window, frame_len.max(2).next_power_of_two())
    }

    /// 20 ms frames every 10 ms, sqrt-Hann (320/160/512 at 16 kHz).
    pub fn speech(sample_rate: u32) -> Self {
        Self::from_millis(sample_rate, 20.0, 10.0, Window::SqrtHann)
            .expect("20/10 ms framing is valid for any positive rate")
    }

    /// 32 ms frames every 16 ms, sqrt-Hann (512/256/512 at 16 kHz).
    pub fn wide(sample_rate: u32) -> Self {
        Self::from_millis(sample_rate, 32.0, 16.0, Window::SqrtHann)
            .expect("32/16 ms framing is valid for any positive rate")
    }

    /// Same framing with a different window.
    pub fn with_window(self, window: Window) -> Self {
        Self { window, ..self }
    }

    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn num_frames(&self, len: usize) -> usize {
        if len < self.frame_len {
            0
        } else {
            (len - self.frame_len) / self.hop + 1
        }
    }

    /// Length covered by `frames` overlapping frames.
    pub fn covered_len(&self, frames: usize) -> usize {
        if frames == 0 {
            0
        } else {
            (frames - 1) * self.hop + self.frame_len
        }
    }

    /// Constant that the overlapped squared window sums to, if it is constant.
    ///
    /// Analysis and synthesis use the same window, so the relevant sum is over
    /// `w[n]^2` shifted by multiples of the hop.
    pub fn cola_gain(&self) -> Option<f64> {
        let w = self.window.coefficients(self.frame_len);
        let sums: Vec<f64> = (0..self.hop)
            .map(|n| w.iter().skip(n).step_by(self.hop).map(|c| c * c).sum())
            .collect();
        let first = sums[0];
        let tol = 1e-9 * first.abs().max(1.0);
        if first > 0.0 && sums.iter().all(|s| (s - first).abs() <= tol) {
            Some(first)
        } else {
            None
        }
    }
}

/// Complex STFT, `bins x frames`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSpectrogram {
    pub data: Array2<Complex64>,
    pub config: FrameConfig,
    pub sample_rate: u32,
    /// Length of the analysed signal, kept so synthesis can restore it.
    pub signal_len: usize,
}

impl ComplexSpectrogram {
    pub fn bins(&self) -> usize {
        self.data.nrows()
    }

    pub fn frames(&self) -> usize {
        self.data.ncols()
    }

    pub fn magnitude(&self) -> Array2<f64> {
        self.data.mapv(|c| c.norm())
    }

    pub fn power(&self) -> Array2<f64> {
        self.data.mapv(|c| c.norm_sqr())
    }

    pub fn phase(&self) -> Array2<f64> {
        self.data.mapv(|c| c.arg())
    }
}

/// Windowed frames as columns of a `frame_len x M` matrix.
pub fn frame_signal(signal: &AudioBuffer, cfg: &FrameConfig) -> Result<Array2<f64>> {
    let m = cfg.num_frames(signal.len());
    if m == 0 {
        return Err(Error::EmptyInput(format!(
            "signal of {} samples is shorter than one {}-sample frame",
            signal.len(),
            cfg.frame_len
        )));
    }
    let w = cfg.window.coefficients(cfg.frame_len);
    let x = signal.samples();
    Ok(Array2::from_shape_fn((cfg.frame_len, m), |(n, j)| {
        x[j * cfg.hop + n] * w[n]
    }))
}

struct Plans {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

fn plans(size: usize) -> Plans {
    let mut planner = FftPlanner::new();
    Plans {
        forward: planner.plan_fft_forward(size),
        inverse: planner.plan_fft_inverse(size),
    }
}

pub fn stft(signal: &AudioBuffer, cfg: &FrameConfig) -> Result<ComplexSpectrogram> {
    let frames = frame_signal(signal, cfg)?;
    let fft = plans(cfg.fft_size).forward;
    let k = cfg.bins();
    let mut data = Array2::zeros((k, frames.ncols()));
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_size];
    for (j, frame) in frames.columns().into_iter().enumerate() {
        buf.iter_mut().for_each(|c| *c = Complex64::new(0.0, 0.0));
        for (b, &s) in buf.iter_mut().zip(frame.iter()) {
            b.re = s;
        }
        fft.process(&mut buf);
        for bin in 0..k {
            data[(bin, j)] = buf[bin];
        }
        // real input: DC and Nyquist are real
        data[(0, j)].im = 0.0;
        data[(k - 1, j)].im = 0.0;
    }
    Ok(ComplexSpectrogram {
        data,
        config: *cfg,
        sample_rate: signal.sample_rate(),
        signal_len: signal.len(),
    })
}

/// Inverse DFT of one Hermitian-completed column, scaled by `1/N`.
fn inverse_column(column: ArrayView1<Complex64>, fft: &dyn Fft<f64>, buf: &mut [Complex64]) {
    let n = buf.len();
    let k = column.len();
    for (bin, c) in column.iter().enumerate() {
        buf[bin] = *c;
    }
    for bin in 1..(k - 1) {
        buf[n - bin] = column[bin].conj();
    }
    fft.process(buf);
    let scale = 1.0 / n as f64;
    buf.iter_mut().for_each(|c| *c *= scale);
}

/// Weighted overlap-add synthesis.
///
/// The output has `(M - 1) * hop + frame_len` samples; only samples covered by
/// a full complement of overlapping frames are exactly reconstructed.
pub fn istft(spec: &ComplexSpectrogram) -> Result<AudioBuffer> {
    let cfg = &spec.config;
    let gain = cfg.cola_gain().ok_or_else(|| {
        Error::Config(format!(
            "{} window with frame_len={} hop={} is not COLA",
            cfg.window.name(),
            cfg.frame_len,
            cfg.hop
        ))
    })?;
    if spec.bins() != cfg.bins() {
        return Err(Error::shape(
            "istft bins",
            (cfg.bins(), spec.frames()),
            spec.data.dim(),
        ));
    }
    let m = spec.frames();
    let fft = plans(cfg.fft_size).inverse;
    let w = cfg.window.coefficients(cfg.frame_len);
    let mut out = vec![0.0; cfg.covered_len(m)];
    let mut buf = vec![Complex64::new(0.0, 0.0); cfg.fft_size];
    for (j, column) in spec.data.columns().into_iter().enumerate() {
        inverse_column(column, fft.as_ref(), &mut buf);
        let start = j * cfg.hop;
        for n in 0..cfg.frame_len {
            out[start + n] += buf[n].re * w[n] / gain;
        }
    }
    AudioBuffer::new(out, spec.sample_rate)
}

/// Per-frame gain rule used by [`apply_gain_pipeline`].
///
/// `gains` has one entry per bin and must be filled with finite, nonnegative values.
pub trait GainEstimator {
    fn estimate(
        &mut self,
        frame: usize,
        spectrum: ArrayView1<Complex64>,
        gains: ArrayViewMut1<f64>,
    ) -> Result<()>;
}

impl<F> GainEstimator for F
where
    F: FnMut(usize, ArrayView1<Complex64>, ArrayViewMut1<f64>),
{
    fn estimate(
        &mut self,
        frame: usize,
        spectrum: ArrayView1<Complex64>,
        gains: ArrayViewMut1<f64>,
    ) -> Result<()> {
        self(frame, spectrum, gains);
        Ok(())
    }
}

/// Applies a real gain to every bin of a spectrogram, keeping the noisy phase.
pub fn apply_gains(
    spec: &ComplexSpectrogram,
    estimator: &mut dyn GainEstimator,
) -> Result<ComplexSpectrogram> {
    let mut out = spec.clone();
    let mut gains = ndarray::Array1::zeros(spec.bins());
    for (j, mut column) in out.data.columns_mut().into_iter().enumerate() {
        gains.fill(0.0);
        estimator.estimate(j, spec.data.column(j), gains.view_mut())?;
        if let Some(g) = gains.iter().find(|g| !g.is_finite() || **g < 0.0) {
            return Err(Error::Numerical(format!(
                "gain estimator produced {g} in frame {j}"
            )));
        }
        // g |y| e^{j angle(y)} == g y
        column.zip_mut_with(&gains, |c, g| *c *= *g);
    }
    Ok(out)
}

/// STFT, per-frame gain, noisy-phase synthesis. The output has the input length.
pub fn apply_gain_pipeline(
    noisy: &AudioBuffer,
    estimator: &mut dyn GainEstimator,
    cfg: &FrameConfig,
) -> Result<AudioBuffer> {
    let spec = stft(noisy, cfg)?;
    let enhanced = apply_gains(&spec, estimator)?;
    Ok(istft(&enhanced)?.resized(noisy.len()))
}
