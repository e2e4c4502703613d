//! Synthetic test signals: speech-like harmonic utterances and toy noises.
//!
//! These stand in for recorded corpora in tests, demos and the desk-scale
//! experiments. Nothing here tries to be realistic speech; the utterances only
//! need voiced harmonic structure, formant-shaped spectra, syllabic
//! modulation and leading/trailing silence.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::audio::AudioBuffer;
use crate::rng;

/// Vowel formant triplets (Hz) for an adult male voice.
const VOWELS: [[f64; 3]; 6] = [
    [730.0, 1090.0, 2440.0],
    [270.0, 2290.0, 3010.0],
    [530.0, 1840.0, 2480.0],
    [570.0, 840.0, 2410.0],
    [300.0, 870.0, 2240.0],
    [660.0, 1720.0, 2410.0],
];
const FORMANT_BW: [f64; 3] = [90.0, 110.0, 170.0];

/// Voice parameters of one synthetic speaker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Talker {
    /// Mean fundamental frequency in Hz.
    pub f0: f64,
    /// Multiplier applied to all formant frequencies.
    pub formant_scale: f64,
    /// Level of the aspiration noise relative to the voiced part.
    pub breathiness: f64,
}

impl Talker {
    pub const LOW: Talker = Talker {
        f0: 110.0,
        formant_scale: 1.0,
        breathiness: 0.02,
    };
    pub const HIGH: Talker = Talker {
        f0: 210.0,
        formant_scale: 1.17,
        breathiness: 0.03,
    };
}

pub fn gaussian_noise(len: usize, sample_rate: u32, rng: &mut rng::Rng) -> AudioBuffer {
    let samples = (0..len).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    AudioBuffer::new(samples, sample_rate).expect("finite gaussian samples")
}

/// Gaussian noise with all spectral content outside `[f_lo, f_hi]` removed.
pub fn band_limited_noise(
    len: usize,
    f_lo: f64,
    f_hi: f64,
    sample_rate: u32,
    rng: &mut rng::Rng,
) -> AudioBuffer {
    let white = gaussian_noise(len, sample_rate, rng);
    let fs = sample_rate as f64;
    shape_spectrum(white.samples(), sample_rate, |f| {
        if f >= f_lo && f <= f_hi.min(fs / 2.0) {
            1.0
        } else {
            0.0
        }
    })
}

/// Gaussian noise with the long-term spectral tilt of voiced speech.
pub fn speech_shaped_noise(len: usize, sample_rate: u32, rng: &mut rng::Rng) -> AudioBuffer {
    let white = gaussian_noise(len, sample_rate, rng);
    shape_spectrum(white.samples(), sample_rate, |f| {
        let hp = (f / 120.0).powi(2) / (1.0 + (f / 120.0).powi(2));
        hp / (1.0 + (f / 700.0).powi(2)).sqrt()
    })
}

/// Sum of unit-amplitude sinusoids with random phases.
pub fn tone_complex(freqs: &[f64], len: usize, sample_rate: u32, rng: &mut rng::Rng) -> AudioBuffer {
    let fs = sample_rate as f64;
    let phases: Vec<f64> = freqs.iter().map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    let samples = (0..len)
        .map(|n| {
            freqs
                .iter()
                .zip(&phases)
                .map(|(f, p)| (2.0 * PI * f * n as f64 / fs + p).sin())
                .sum()
        })
        .collect();
    AudioBuffer::new(samples, sample_rate).expect("finite tone samples")
}

/// The 8-tone complex used as a narrowband toy noise.
pub const EIGHT_TONES: [f64; 8] = [310.0, 570.0, 890.0, 1330.0, 1870.0, 2590.0, 3610.0, 5030.0];

/// Applies a real frequency-domain weighting to `x` with one whole-signal FFT.
pub fn shape_spectrum(x: &[f64], sample_rate: u32, weight: impl Fn(f64) -> f64) -> AudioBuffer {
    let n = x.len();
    if n == 0 {
        return AudioBuffer::new(Vec::new(), sample_rate).expect("empty buffer");
    }
    let mut planner = FftPlanner::new();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut buf);
    let fs = sample_rate as f64;
    for (k, c) in buf.iter_mut().enumerate() {
        let bin = if k <= n / 2 { k } else { n - k };
        *c *= weight(bin as f64 * fs / n as f64);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let samples = buf.iter().map(|c| c.re / n as f64).collect();
    AudioBuffer::new(samples, sample_rate).expect("finite shaped samples")
}

/// A speech-like utterance of `seconds` total length, including 0.1-0.2 s of
/// silence at each end.
pub fn speech_like(talker: &Talker, seconds: f64, sample_rate: u32, rng: &mut rng::Rng) -> AudioBuffer {
    let fs = sample_rate as f64;
    let len = (seconds * fs).round() as usize;
    let lead = (rng.random_range(0.1..0.2) * fs) as usize;
    let trail = (rng.random_range(0.1..0.2) * fs) as usize;
    let mut out = vec![0.0; len];
    if lead + trail >= len {
        return AudioBuffer::new(out, sample_rate).expect("silence");
    }
    let body_end = len - trail;
    let nyquist = fs / 2.0;
    let mut pos = lead;
    let mut phase = 0.0f64;
    while pos < body_end {
        let syl_len = ((rng.random_range(0.12..0.25) * fs) as usize).min(body_end - pos);
        let vowel = VOWELS[rng.random_range(0..VOWELS.len())];
        let next = VOWELS[rng.random_range(0..VOWELS.len())];
        let f0_start = talker.f0 * rng.random_range(0.9..1.1);
        let f0_end = talker.f0 * rng.random_range(0.85..1.1);
        let level = rng.random_range(0.5..1.0);
        for i in 0..syl_len {
            let t = i as f64 / syl_len as f64;
            let f0 = f0_start + (f0_end - f0_start) * t;
            phase += 2.0 * PI * f0 / fs;
            if phase > 2.0 * PI * 1e6 {
                phase %= 2.0 * PI;
            }
            let formants: Vec<f64> = (0..3)
                .map(|j| talker.formant_scale * (vowel[j] + (next[j] - vowel[j]) * t * 0.5))
                .collect();
            let mut v = 0.0;
            let mut h = 1;
            while h as f64 * f0 < nyquist.min(7000.0) {
                let f = h as f64 * f0;
                let env: f64 = formants
                    .iter()
                    .zip(FORMANT_BW)
                    .map(|(fc, bw)| 1.0 / (1.0 + ((f - fc) / bw).powi(2)))
                    .sum::<f64>()
                    + 0.02;
                v += env * (h as f64 * phase).sin() / (1.0 + f / 3000.0);
                h += 1;
            }
            let aspiration = talker.breathiness * rng.sample::<f64, _>(StandardNormal);
            let envelope = (PI * t).sin().powf(0.6);
            out[pos + i] = level * envelope * (v + aspiration);
        }
        pos += syl_len;
        pos += ((rng.random_range(0.02..0.06) * fs) as usize).min(body_end - pos);
    }
    AudioBuffer::new(out, sample_rate).expect("finite speech samples")
}
