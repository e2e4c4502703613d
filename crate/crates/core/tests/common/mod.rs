//! Oracles shared between integration test targets.
#![allow(dead_code)]

use std::f64::consts::PI;

/// Conditional mean E{A | Y} / |Y| by direct 2-D quadrature over amplitude
/// and phase, with unit noise variance, speech variance `xi` and |Y| = sqrt(gamma).
///
/// Priors: complex Gaussian speech and noise, so
/// p(a, theta) = a / (pi xi) exp(-a^2 / xi) and
/// p(Y | a, theta) = exp(-|Y - a e^{j theta}|^2) / pi.
pub fn mmse_gain_quadrature(xi: f64, gamma: f64) -> f64 {
    let r = gamma.sqrt();
    let c = (1.0 + xi) / xi;
    // exponent -c a^2 + 2 a r cos(theta); its maximum is r^2 / c
    let shift = r * r / c;
    let peak = r / c;
    let width = (1.0 / c).sqrt();
    let a_max = peak + 14.0 * width;
    let na = 6000; // even, Simpson
    let nt = 720; // periodic trapezoid
    let ha = a_max / na as f64;
    let ht = 2.0 * PI / nt as f64;
    let cos: Vec<f64> = (0..nt).map(|i| (i as f64 * ht).cos()).collect();
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..=na {
        let a = i as f64 * ha;
        let w = if i == 0 || i == na { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
        let mut inner = 0.0;
        for &ct in &cos {
            inner += (-c * a * a + 2.0 * a * r * ct - shift).exp();
        }
        let f = a * inner;
        den += w * f;
        num += w * a * f;
    }
    num / den / r
}

pub fn snr_db(reference: &[f64], test: &[f64]) -> f64 {
    let s: f64 = reference.iter().map(|v| v * v).sum();
    let e: f64 = reference.iter().zip(test).map(|(a, b)| (a - b) * (a - b)).sum();
    10.0 * (s / e).log10()
}

/// Writes a small speech corpus (`speech/<speaker>/<utt>.wav`) and two noise
/// files (`white.wav`, `tones.wav`) under `dir`, all float32 at 16 kHz.
pub fn write_corpus(dir: &std::path::Path, speakers: usize, utterances: usize, seconds: f64) {
    use senhance::{rng, synth, wav};
    let talkers = [synth::Talker::LOW, synth::Talker::HIGH];
    for s in 0..speakers {
        let spk = dir.join("speech").join(format!("spk{s}"));
        std::fs::create_dir_all(&spk).unwrap();
        for u in 0..utterances {
            let x = synth::speech_like(&talkers[s % 2], seconds, 16000, &mut rng::stream(500 + s as u64, u as u64));
            wav::write_wav(&x, &spk.join(format!("u{u}.wav")), wav::WavFormat::Float32).unwrap();
        }
    }
    let n = (seconds * 16000.0) as usize * 3;
    let white = synth::gaussian_noise(n, 16000, &mut rng::seeded(900));
    let tones = synth::tone_complex(&synth::EIGHT_TONES, n, 16000, &mut rng::seeded(901));
    wav::write_wav(&white, &dir.join("white.wav"), wav::WavFormat::Float32).unwrap();
    wav::write_wav(&tones, &dir.join("tones.wav"), wav::WavFormat::Float32).unwrap();
}
