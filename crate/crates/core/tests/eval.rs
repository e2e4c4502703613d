mod common;

use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng as _;
use senhance::cochlea::{self, GammatoneBank};
use senhance::eval::{self, EvalReport, FileMetrics, HitFa, Tags};
use senhance::masks::{self, Mask, MaskDomain};
use senhance::{mixer, rng, synth, AudioBuffer, FrameConfig, Window};

const SR: u32 = 16000;

fn buf(x: Vec<f64>) -> AudioBuffer {
    AudioBuffer::new(x, SR).unwrap()
}

fn noise(len: usize, seed: u64) -> AudioBuffer {
    synth::gaussian_noise(len, SR, &mut rng::seeded(seed))
}

#[test]
fn global_snr_examples() {
    let x = noise(4000, 1);
    assert_eq!(eval::global_snr(&x, &x).unwrap(), eval::SNR_CAP_DB);
    // equal-power error: alternate sign flips of x itself
    let e: Vec<f64> = x.samples().iter().enumerate().map(|(i, v)| if i % 2 == 0 { *v } else { -*v }).collect();
    let t = x.add(&buf(e)).unwrap();
    assert!(eval::global_snr(&x, &t).unwrap().abs() < 1e-10);
    assert!(eval::global_snr(&AudioBuffer::zeros(100, SR).unwrap(), &x.resized(100)).is_err());
    assert!(eval::global_snr(&x, &x.resized(10)).is_err());
}

#[test]
fn global_snr_matches_formula_and_ignores_common_gain() {
    for seed in 0..20 {
        let x = noise(3000, 100 + seed);
        let y = x.add(&noise(3000, 200 + seed).scaled(0.3)).unwrap();
        let direct = common::snr_db(x.samples(), y.samples());
        let got = eval::global_snr(&x, &y).unwrap();
        assert!((got - direct).abs() < 1e-10);
        let scaled = eval::global_snr(&x.scaled(7.5), &y.scaled(7.5)).unwrap();
        assert!((scaled - got).abs() < 1e-10);
    }
}

fn seg_oracle(r: &[f64], t: &[f64], len: usize, hop: usize) -> f64 {
    let mut frames = vec![];
    let mut start = 0;
    while start + len <= r.len() {
        let s: f64 = r[start..start + len].iter().map(|v| v * v).sum();
        let e: f64 = (start..start + len).map(|i| (r[i] - t[i]).powi(2)).sum();
        frames.push((s, e));
        start += hop;
    }
    let peak = frames.iter().map(|f| f.0).fold(0.0, f64::max);
    let active: Vec<f64> = frames
        .iter()
        .filter(|f| f.0 > 0.0 && 10.0 * (peak / f.0).log10() <= 40.0)
        .map(|&(s, e)| if e == 0.0 { 35.0 } else { (10.0 * (s / e).log10()).clamp(-10.0, 35.0) })
        .collect();
    active.iter().sum::<f64>() / active.len() as f64
}

#[test]
fn segmental_snr_examples() {
    let cfg = FrameConfig::speech(SR).with_window(Window::Rectangular);
    let x = synth::speech_like(&synth::Talker::LOW, 1.0, SR, &mut rng::seeded(3));
    assert_eq!(eval::segmental_snr(&x, &x, &cfg).unwrap(), 35.0);
    // a deep cancellation error is clamped at the floor
    assert_eq!(eval::segmental_snr(&x, &x.scaled(-10.0), &cfg).unwrap(), -10.0);
    // plain sign inversion doubles the error: 10 log10(1/4) on every frame
    let anti = eval::segmental_snr(&x, &x.scaled(-1.0), &cfg).unwrap();
    assert!((anti + 20.0 * 2f64.log10()).abs() < 1e-9, "{anti}");
}

#[test]
fn segmental_snr_matches_loop_oracle() {
    let cfg = FrameConfig::speech(SR).with_window(Window::Rectangular);
    for seed in 0..10 {
        let x = synth::speech_like(&synth::Talker::HIGH, 0.8, SR, &mut rng::seeded(10 + seed));
        let y = x.add(&noise(x.len(), 50 + seed).scaled(0.05 * (seed + 1) as f64)).unwrap();
        let got = eval::segmental_snr(&x, &y, &cfg).unwrap();
        let want = seg_oracle(x.samples(), y.samples(), cfg.frame_len, cfg.hop);
        assert!((got - want).abs() < 1e-10, "{got} vs {want}");
        assert!((-10.0..=35.0).contains(&got));
    }
}

fn grid(rows: usize, cols: usize, seed: u64, p: f64) -> Mask {
    let mut r = rng::seeded(seed);
    let g = Array2::from_shape_fn((rows, cols), |_| if r.random::<f64>() < p { 1.0 } else { 0.0 });
    Mask::new(g, MaskDomain::Gammatone, (0.0, 1.0)).unwrap()
}

#[test]
fn hit_fa_examples() {
    let ibm = grid(16, 40, 1, 0.4);
    let same = eval::hit_fa(&ibm, &ibm).unwrap();
    assert_eq!(same, HitFa { hit: Some(1.0), fa: Some(0.0) });
    let ones = Mask::constant(ibm.dim(), 1.0, MaskDomain::Gammatone);
    let all = eval::hit_fa(&ones, &ibm).unwrap();
    assert_eq!((all.hit, all.fa, all.hit_minus_fa()), (Some(1.0), Some(1.0), Some(0.0)));
    // all-speech reference: FA undefined
    let d = eval::hit_fa(&ibm, &ones).unwrap();
    assert!(d.fa.is_none() && d.hit.is_some() && d.hit_minus_fa().is_none());
    let half = Mask::constant(ibm.dim(), 0.5, MaskDomain::Gammatone);
    assert!(eval::hit_fa(&half, &ibm).is_err());
}

#[test]
fn hit_fa_matches_counting_oracle() {
    for seed in 0..20 {
        let est = grid(8, 30, 100 + seed, 0.5);
        let ibm = grid(8, 30, 200 + seed, 0.3);
        let (mut h, mut n1, mut f, mut n0) = (0, 0, 0, 0);
        for (e, i) in est.grid().iter().zip(ibm.grid().iter()) {
            if *i == 1.0 {
                n1 += 1;
                h += (*e == 1.0) as usize;
            } else {
                n0 += 1;
                f += (*e == 1.0) as usize;
            }
        }
        let got = eval::hit_fa(&est, &ibm).unwrap();
        assert_eq!(got.hit, Some(h as f64 / n1 as f64));
        assert_eq!(got.fa, Some(f as f64 / n0 as f64));
    }
}

#[test]
fn log_spectral_distance_examples() {
    let mut r = rng::seeded(4);
    let a = Array2::from_shape_fn((33, 20), |_| r.random::<f64>() + 0.01);
    assert_eq!(eval::log_spectral_distance(&a, &a).unwrap(), 0.0);
    let lsd = eval::log_spectral_distance(&(&a * 10.0), &a).unwrap();
    assert!((lsd - 20.0).abs() < 1e-6, "{lsd}");
    let b = Array2::from_shape_fn((33, 20), |_| r.random::<f64>());
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        s += (20.0 * (x + 1e-10).log10() - 20.0 * (y + 1e-10).log10()).powi(2);
    }
    let want = (s / a.len() as f64).sqrt();
    assert!((eval::log_spectral_distance(&a, &b).unwrap() - want).abs() < 1e-10);
    assert!(eval::log_spectral_distance(&a, &b.slice(ndarray::s![.., ..10]).to_owned()).is_err());
}

#[test]
fn envelope_correlation_identity_and_length() {
    let bank = GammatoneBank::standard(SR).unwrap();
    let x = synth::speech_like(&synth::Talker::LOW, 1.0, SR, &mut rng::seeded(8));
    let s = eval::envelope_correlation(&x, &x, &bank).unwrap();
    assert!((s - 1.0).abs() < 1e-12, "{s}");
    // envelope correlation ignores a global gain
    let g = eval::envelope_correlation(&x, &x.scaled(0.01), &bank).unwrap();
    assert!((g - 1.0).abs() < 1e-9);
    // 29 frames of 10 ms is too short
    let short = x.resized(160 * 30);
    assert!(eval::envelope_correlation(&short, &short, &bank).is_err());
}

#[test]
fn envelope_correlation_of_independent_noise_is_near_zero() {
    let bank = GammatoneBank::standard(SR).unwrap();
    let x = synth::speech_like(&synth::Talker::HIGH, 0.6, SR, &mut rng::seeded(9));
    let scores: Vec<f64> = (0..50)
        .map(|t| eval::envelope_correlation(&x, &noise(x.len(), 1000 + t), &bank).unwrap())
        .collect();
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    assert!(mean.abs() < 0.1, "mean {mean}");
}

#[test]
fn envelope_correlation_decreases_with_noise_level() {
    let bank = GammatoneBank::standard(SR).unwrap();
    for seed in 0..5 {
        let x = synth::speech_like(&synth::Talker::LOW, 1.0, SR, &mut rng::seeded(20 + seed));
        let v = noise(x.len(), 40 + seed).scaled(x.rms());
        let mut last = f64::INFINITY;
        for level in [0.03, 0.1, 0.3, 1.0, 3.0] {
            let s = eval::envelope_correlation(&x, &x.add(&v.scaled(level)).unwrap(), &bank).unwrap();
            assert!(s < last, "seed {seed} level {level}: {s} !< {last}");
            last = s;
        }
    }
}

#[test]
fn oracle_irm_improves_snr_and_envelope_correlation() {
    let bank = GammatoneBank::standard(SR).unwrap();
    let units = cochlea::unit_config(SR);
    let talkers = [synth::Talker::LOW, synth::Talker::HIGH];
    for (i, talker) in talkers.iter().enumerate() {
        let x = synth::speech_like(talker, 1.5, SR, &mut rng::seeded(60 + i as u64));
        let noises = [
            noise(x.len(), 70 + i as u64),
            synth::speech_shaped_noise(x.len(), SR, &mut rng::seeded(80 + i as u64)),
            synth::tone_complex(&synth::EIGHT_TONES, x.len(), SR, &mut rng::seeded(90 + i as u64)),
        ];
        for (j, v) in noises.iter().enumerate() {
            for snr in [-5.0, 0.0, 5.0] {
                let mix = mixer::mix_at_snr(&x, v, snr).unwrap();
                let mask = masks::oracle_irm(&x, &mix.scaled_noise, &bank, &units, masks::DEFAULT_BETA).unwrap();
                let out = masks::enhance_gammatone(&mix.mixture, &mask, &bank, &units).unwrap();
                let m = eval::evaluate_file(&x, &mix.mixture, &out, &bank, Tags::default()).unwrap();
                let base = eval::envelope_correlation(&x, &mix.mixture, &bank).unwrap();
                assert!(m.delta_snr() > 0.0, "talker {i} noise {j} snr {snr}: {}", m.delta_snr());
                assert!(m.env_corr > base, "talker {i} noise {j} snr {snr}: {} <= {base}", m.env_corr);
            }
        }
    }
}

fn row(id: &str, hit: Option<f64>) -> FileMetrics {
    FileMetrics {
        id: id.into(),
        noise: "white".into(),
        snr_db: "0".into(),
        method: "irm".into(),
        snr_in: 0.0,
        snr_out: 6.5,
        seg_snr: 3.25,
        lsd: 4.0,
        hit_fa: HitFa { hit, fa: Some(0.25) },
        env_corr: 0.75,
    }
}

#[test]
fn report_layout_is_stable() {
    let rep = EvalReport { rows: vec![row("a", Some(0.75)), row("b", None)] };
    let tsv = rep.to_tsv();
    let lines: Vec<&str> = tsv.lines().collect();
    assert_eq!(lines[0], eval::REPORT_MAGIC);
    assert_eq!(lines[1].split('\t').collect::<Vec<_>>(), eval::REPORT_COLUMNS);
    assert_eq!(
        lines[2],
        "a\twhite\t0\tirm\t0.000000\t6.500000\t6.500000\t3.250000\t4.000000\t0.750000\t0.250000\t0.500000\t0.750000"
    );
    assert!(lines[3].contains("\tNA\t0.250000\tNA\t"));
    assert!(lines.contains(&"# mean\thit\t0.750000"));
    assert!(lines.contains(&"# mean\tdelta_snr_db\t6.500000"));
    assert!(!tsv.to_lowercase().contains("stoi"));
    for l in &lines[2..4] {
        assert_eq!(l.split('\t').count(), eval::REPORT_COLUMNS.len());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn segmental_snr_stays_in_clamp_range(seed in 0u64..1000, gain in -3.0f64..3.0) {
        let cfg = FrameConfig::speech(SR).with_window(Window::Rectangular);
        let x = noise(3200, seed);
        let y = x.add(&noise(3200, seed + 1).scaled(gain)).unwrap();
        let s = eval::segmental_snr(&x, &y, &cfg).unwrap();
        prop_assert!((-10.0..=35.0).contains(&s));
    }

    #[test]
    fn hit_fa_rates_are_probabilities(seed in 0u64..1000, p in 0.05f64..0.95) {
        let h = eval::hit_fa(&grid(6, 20, seed, p), &grid(6, 20, seed + 7, 0.5)).unwrap();
        for r in [h.hit, h.fa].into_iter().flatten() {
            prop_assert!((0.0..=1.0).contains(&r));
        }
    }
}
