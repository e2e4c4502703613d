use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::Rng;
use senhance::cochlea::{self, GammatoneBank};
use senhance::features::{self, FeatureExtractor, FeatureLayout, FeatureMatrix, NormStats, Normalizer};
use senhance::signal::stft;
use senhance::{rng, synth, AudioBuffer};

fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut r = rng::seeded(seed);
    Array2::from_shape_fn((rows, cols), |_| r.random_range(-3.0..3.0))
}

#[test]
fn mfcc_of_silence_is_constant() {
    let x = AudioBuffer::zeros(8000, 16000).unwrap();
    let c = features::mfcc(&x).unwrap();
    assert_eq!(c.nrows(), 31);
    let first = c.column(0).to_owned();
    // a constant log-energy vector maps onto the 0th cepstral coefficient only
    assert!((first[0] - 40f64.sqrt() * 1e-10f64.ln()).abs() < 1e-9);
    assert!(first.iter().skip(1).all(|v| v.abs() < 1e-9));
    for col in c.columns() {
        assert_eq!(col, first);
    }
}

#[test]
fn mfcc_scaling_moves_only_c0() {
    let x = synth::speech_like(&synth::Talker::HIGH, 1.0, 16000, &mut rng::seeded(1));
    // keep every mel energy above the log floor
    let x = x.add(&synth::gaussian_noise(x.len(), 16000, &mut rng::seeded(2)).scaled(1e-2)).unwrap();
    let a = features::mfcc(&x).unwrap();
    let b = features::mfcc(&x.scaled(2.0)).unwrap();
    let shift = 40f64.sqrt() * 4f64.ln();
    for (ca, cb) in a.columns().into_iter().zip(b.columns()) {
        assert!((cb[0] - ca[0] - shift).abs() < 1e-8);
        for k in 1..31 {
            assert!((cb[k] - ca[k]).abs() < 1e-8);
        }
    }
    let ext = features::MfccExtractor::standard(16000).unwrap();
    assert_eq!(a.ncols(), stft(&x, &ext.frame).unwrap().frames());
}

#[test]
fn gfe_matches_energy_log_composition() {
    let bank = GammatoneBank::standard(16000).unwrap();
    let x = synth::speech_like(&synth::Talker::LOW, 0.5, 16000, &mut rng::seeded(3));
    let coch = cochlea::analyze(&x, &bank, &cochlea::unit_config(16000)).unwrap();
    let g = features::gfe(&coch);
    let e = cochlea::unit_energy(&coch);
    assert!(g.iter().zip(e.iter()).all(|(g, e)| (g - (e + 1e-10).ln()).abs() < 1e-12));

    let loud = cochlea::analyze(&x.scaled(10.0), &bank, &cochlea::unit_config(16000)).unwrap();
    let gl = features::gfe(&loud);
    let mut checked = 0;
    for ((a, b), e) in g.iter().zip(gl.iter()).zip(e.iter()) {
        if *e > 1.0 {
            assert!((b - a - 100f64.ln()).abs() < 1e-9);
            checked += 1;
        }
    }
    assert!(checked > 100, "only {checked} units far from the floor");
    let silent = cochlea::analyze(&AudioBuffer::zeros(3200, 16000).unwrap(), &bank, &cochlea::unit_config(16000)).unwrap();
    assert!(features::gfe(&silent).iter().all(|&v| v == 1e-10f64.ln()));
}

#[test]
fn frame_counts_agree_across_features_and_targets() {
    let ext = FeatureExtractor::standard(16000).unwrap();
    for len in [3200, 4321, 16000, 16159, 16160] {
        let x = synth::gaussian_noise(len, 16000, &mut rng::seeded(len as u64));
        let f = ext.extract(&x).unwrap();
        let coch = cochlea::analyze(&x, &ext.bank, &cochlea::unit_config(16000)).unwrap();
        assert_eq!(f.frames(), coch.frames, "len {len}");
        assert_eq!(f.dims(), 1425);
    }
}

#[test]
fn deltas_examples() {
    let c = Array2::from_elem((3, 10), 4.2);
    assert!(features::deltas(&c, 2).iter().all(|&v| v == 0.0));
    let ramp = Array2::from_shape_fn((2, 12), |(i, j)| 0.7 * j as f64 + i as f64);
    let d = features::deltas(&ramp, 2);
    for j in 2..10 {
        assert!((d[(0, j)] - 0.7).abs() < 1e-12 && (d[(1, j)] - 0.7).abs() < 1e-12);
    }
    let f = random(5, 9, 4);
    let d = features::deltas(&f, 2);
    for i in 0..5 {
        for j in 0..9 {
            let at = |k: isize| f[(i, k.clamp(0, 8) as usize)];
            let j = j as isize;
            let want = (1.0 * (at(j + 1) - at(j - 1)) + 2.0 * (at(j + 2) - at(j - 2))) / 10.0;
            assert!((d[(i, j as usize)] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn context_stacking_examples() {
    let f = random(369, 7, 5);
    assert_eq!(features::stack_context(&f, 2, 2).nrows(), 1845);
    let one = random(4, 1, 6);
    let s = features::stack_context(&one, 2, 2);
    for b in 0..5 {
        assert_eq!(s.slice(ndarray::s![b * 4..(b + 1) * 4, 0]), one.column(0));
    }
    assert_eq!(features::stack_context(&f, 0, 0), f);
    let s = features::stack_context(&f, 2, 2);
    assert_eq!(features::unstack_center(&s, 2, 2), f);
    assert_eq!(s.slice(ndarray::s![0..369, 3]), f.column(1));
    assert_eq!(s.slice(ndarray::s![4 * 369.., 3]), f.column(5));
}

#[test]
fn normalizer_definition_and_floor() {
    let mut f = random(6, 500, 7);
    f.row_mut(3).fill(2.5);
    let stats = NormStats::fit(&f).unwrap();
    let z = stats.apply(&f).unwrap();
    for (i, row) in z.rows().into_iter().enumerate() {
        let mean = row.mean().unwrap();
        let var = row.mapv(|v| (v - mean) * (v - mean)).mean().unwrap();
        assert!(mean.abs() < 1e-9);
        if i == 3 {
            assert!(row.iter().all(|&v| v == 0.0));
        } else {
            assert!((var - 1.0).abs() < 1e-6, "var {var}");
        }
    }
    let back = stats.invert(&z).unwrap();
    assert!((&back - &f).iter().all(|e| e.abs() < 1e-12));
    assert!(NormStats::fit(&random(3, 1, 8)).is_err());
}

#[test]
fn streaming_moments_match_two_pass() {
    let f = random(8, 1000, 9) + 1e4;
    let mut n = Normalizer::new(8);
    let mut start = 0;
    for size in [1, 7, 100, 3, 500, 389] {
        n.update(&f.slice(ndarray::s![.., start..start + size]).to_owned()).unwrap();
        start += size;
    }
    let s = n.finish().unwrap();
    for i in 0..8 {
        let row = f.row(i);
        let mean = row.sum() / 1000.0;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 1000.0;
        assert!((s.mean[i] - mean).abs() < 1e-9);
        assert!((s.std[i] - var.sqrt()).abs() < 1e-9);
    }
}

#[test]
fn feature_cache_round_trip_and_reuse() {
    let ext = FeatureExtractor::new(
        FeatureLayout { mfcc: true, gfe: true, delta_order: 1, past: 1, future: 0 },
        GammatoneBank::standard(16000).unwrap(),
    )
    .unwrap();
    let x = synth::gaussian_noise(4000, 16000, &mut rng::seeded(10));
    let dir = tempfile::tempdir().unwrap();
    let a = ext.extract_cached(&x, Some(dir.path())).unwrap();
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    let b = ext.extract_cached(&x, Some(dir.path())).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, ext.extract(&x).unwrap());
    let mut buf = Vec::new();
    a.write_to(&mut buf).unwrap();
    assert_eq!(FeatureMatrix::read_from(&buf[..]).unwrap(), a);
    assert!(FeatureMatrix::read_from(&buf[..buf.len() - 8]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn merge_order_does_not_matter(seed in 0u64..1000, split in 2usize..48) {
        let f = random(3, 50, seed);
        let mut a = Normalizer::new(3);
        a.update(&f.slice(ndarray::s![.., ..split]).to_owned()).unwrap();
        let mut b = Normalizer::new(3);
        b.update(&f.slice(ndarray::s![.., split..]).to_owned()).unwrap();
        let mut ab = a.clone();
        ab.merge(&b).unwrap();
        b.merge(&a).unwrap();
        let (x, y) = (ab.finish().unwrap(), b.finish().unwrap());
        let d: Array1<f64> = &x.std - &y.std;
        prop_assert!(d.iter().all(|v| v.abs() < 1e-12));
        prop_assert!((&x.mean - &y.mean).iter().all(|v| v.abs() < 1e-12));
    }
}
