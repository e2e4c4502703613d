use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::Rng;
use senhance::cochlea::GammatoneBank;
use senhance::features::{FeatureExtractor, FeatureLayout};
use senhance::masks::{self, MaskDomain};
use senhance::mixer;
use senhance::neural::{
    self, AdaGrad, EarlyStopping, FnnModel, Layer, LossKind, Mode, StopDecision, Targets, TrainConfig,
};
use senhance::{pipeline, rng, synth, AudioBuffer, Error};

fn random(rows: usize, cols: usize, lo: f64, hi: f64, seed: u64) -> Array2<f64> {
    let mut r = rng::seeded(seed);
    Array2::from_shape_fn((rows, cols), |_| r.random_range(lo..hi))
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

#[test]
fn glorot_bounds_moments_and_determinism() {
    let w = neural::init_glorot(&mut rng::seeded(0), 1, 1);
    assert!(w[(0, 0)].abs() <= 3f64.sqrt());
    let bound = (6.0f64 / 200.0).sqrt();
    let mut r = rng::seeded(1);
    let mut all = Vec::new();
    for _ in 0..10 {
        all.extend(neural::init_glorot(&mut r, 100, 100).iter().copied());
    }
    assert_eq!(all.len(), 100_000);
    let max = all.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(max <= bound && max > bound * 0.9999, "max {max} bound {bound}");
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    let sigma = bound / 3f64.sqrt() / (all.len() as f64).sqrt();
    assert!(mean.abs() < 3.0 * sigma);
    assert_eq!(neural::init_glorot(&mut rng::seeded(5), 7, 3), neural::init_glorot(&mut rng::seeded(5), 7, 3));
}

fn zero_model(sizes: &[usize]) -> FnnModel {
    let mut m = FnnModel::new(sizes, &mut rng::seeded(0)).unwrap();
    for l in m.layers_mut() {
        l.weights.fill(0.0);
    }
    m
}

#[test]
fn forward_examples() {
    let m = zero_model(&[5, 4, 3]);
    let out = m.forward(random(5, 6, -1.0, 1.0, 2).view(), Mode::Eval).unwrap().output;
    assert!(out.iter().all(|&v| v == 0.5));

    let id = FnnModel::from_layers(vec![Layer {
        weights: Array2::eye(3),
        bias: Array1::zeros(3),
        activation: neural::Activation::Sigmoid,
    }])
    .unwrap();
    let x = random(3, 4, -5.0, 5.0, 3);
    let out = id.forward(x.view(), Mode::Eval).unwrap().output;
    assert!(out.iter().zip(x.iter()).all(|(o, v)| (o - 1.0 / (1.0 + (-v).exp())).abs() < 1e-15));

    let m = FnnModel::new(&[5, 8, 3], &mut rng::seeded(4)).unwrap();
    let x = random(5, 10, -1.0, 1.0, 5);
    let reference = m.forward(x.view(), Mode::Eval).unwrap().output;
    for _seed in 0..5 {
        assert_eq!(m.forward(x.view(), Mode::Eval).unwrap().output, reference);
    }
    assert!(matches!(m.forward(random(4, 2, 0.0, 1.0, 0).view(), Mode::Eval), Err(Error::Shape { .. })));
}

#[test]
fn loss_examples() {
    let t = random(3, 4, 0.0, 1.0, 6);
    assert_eq!(neural::loss_mask_mse(&t, &t).unwrap().0, 0.0);
    assert!((neural::loss_mask_mse(&(&t + 0.1), &t).unwrap().0 - 0.01).abs() < 1e-12);

    let x = random(3, 4, 0.0, 1.0, 7);
    let d = random(3, 4, 0.0, 1.0, 8);
    let y = &x + &d;
    let o = &x / &y;
    assert!(neural::loss_signal_approx(&o, &y, &x, &d).unwrap().0 < 1e-30);
    let zero = Array2::zeros((3, 4));
    assert_eq!(neural::loss_signal_approx(&zero, &d, &zero, &d).unwrap().0, 0.0);

    let ones = Array2::ones((3, 4));
    assert!(neural::loss_psa(&o, &y, &x, &ones).unwrap().0 < 1e-30);
    // theta = pi/2: target zero, so o = 0 is the minimiser
    let (l0, g0) = neural::loss_psa(&zero, &y, &x, &zero).unwrap();
    assert_eq!(l0, 0.0);
    assert!(g0.iter().all(|&g| g == 0.0));
    assert!(neural::loss_psa(&(&zero + 0.1), &y, &x, &zero).unwrap().0 > 0.0);
}

/// Central-difference derivative of `f` with respect to every entry of `o`.
fn numeric_grad(o: &Array2<f64>, f: impl Fn(&Array2<f64>) -> f64) -> Array2<f64> {
    let h = 1e-6;
    let mut g = Array2::zeros(o.dim());
    for idx in ndarray::indices(o.dim()) {
        let (mut p, mut m) = (o.clone(), o.clone());
        p[idx] += h;
        m[idx] -= h;
        g[idx] = (f(&p) - f(&m)) / (2.0 * h);
    }
    g
}

#[test]
fn loss_gradients_match_finite_differences() {
    let o = random(4, 5, 0.05, 0.95, 9);
    let y = random(4, 5, 0.5, 2.0, 10);
    let x = random(4, 5, 0.0, 1.0, 11);
    let d = random(4, 5, 0.0, 1.0, 12);
    let c = random(4, 5, -1.0, 1.0, 13);
    let cases: Vec<(&str, Box<dyn Fn(&Array2<f64>) -> (f64, Array2<f64>)>)> = vec![
        ("mask", Box::new(|o: &Array2<f64>| neural::loss_mask_mse(o, &x).unwrap())),
        ("sa", Box::new(|o: &Array2<f64>| neural::loss_signal_approx(o, &y, &x, &d).unwrap())),
        ("psa", Box::new(|o: &Array2<f64>| neural::loss_psa(o, &y, &x, &c).unwrap())),
    ];
    for (name, f) in cases {
        let (_, g) = f(&o);
        let num = numeric_grad(&o, |p| f(p).0);
        for (a, b) in g.iter().zip(num.iter()) {
            assert!(rel_err(*a, *b) < 1e-6, "{name}: {a} vs {b}");
        }
    }
}

fn toy_targets(kind: LossKind, cols: usize, seed: u64) -> Targets {
    let x = random(3, cols, 0.0, 1.0, seed);
    let d = random(3, cols, 0.0, 1.0, seed + 1);
    let y = &x + &d + 0.1;
    match kind {
        LossKind::MaskMse => Targets::Mask(random(3, cols, 0.0, 1.0, seed + 2)),
        LossKind::SignalApprox => Targets::SignalApprox { noisy: y, clean: x, noise: d },
        LossKind::Psa => Targets::Psa { noisy: y, clean: x, cos_phase: random(3, cols, -1.0, 1.0, seed + 3) },
    }
}

#[test]
fn network_gradients_match_finite_differences() {
    let x = random(5, 7, -1.0, 1.0, 20);
    for kind in LossKind::ALL {
        for dropout in [0.0, 0.3] {
            let model = FnnModel::new(&[5, 4, 3], &mut rng::seeded(21)).unwrap();
            let t = toy_targets(kind, 7, 22);
            // the same dropout masks are drawn for every evaluation
            let loss_of = |m: &FnnModel| {
                let mode = if dropout > 0.0 {
                    Mode::Train { dropout, rng: &mut rng::seeded(23) }
                } else {
                    Mode::Eval
                };
                let cache = m.forward(x.view(), mode).unwrap();
                (t.loss(&cache.output).unwrap(), cache)
            };
            let ((_, g_out), cache) = loss_of(&model);
            let grads = model.backward(&cache, &g_out).unwrap();
            let h = 1e-6;
            for li in 0..model.layers.len() {
                let (rows, cols) = model.layers[li].weights.dim();
                for (r, c) in (0..rows).flat_map(|r| (0..cols).map(move |c| (r, c))) {
                    let mut p = model.clone();
                    p.layers_mut()[li].weights[(r, c)] += h;
                    let mut m = model.clone();
                    m.layers_mut()[li].weights[(r, c)] -= h;
                    let num = (loss_of(&p).0 .0 - loss_of(&m).0 .0) / (2.0 * h);
                    let ana = grads.layers[li].0[(r, c)];
                    assert!(rel_err(ana, num) < 1e-5 || (ana - num).abs() < 1e-9, "{kind} p={dropout} W{li}[{r},{c}]: {ana} vs {num}");
                }
                for r in 0..rows {
                    let mut p = model.clone();
                    p.layers_mut()[li].bias[r] += h;
                    let mut m = model.clone();
                    m.layers_mut()[li].bias[r] -= h;
                    let num = (loss_of(&p).0 .0 - loss_of(&m).0 .0) / (2.0 * h);
                    let ana = grads.layers[li].1[r];
                    assert!(rel_err(ana, num) < 1e-5 || (ana - num).abs() < 1e-9, "{kind} p={dropout} b{li}[{r}]: {ana} vs {num}");
                }
            }
        }
    }
}

#[test]
fn backward_is_linear_and_checks_staleness() {
    let mut model = FnnModel::new(&[5, 4, 3], &mut rng::seeded(30)).unwrap();
    let x = random(5, 6, -1.0, 1.0, 31);
    let cache = model.forward(x.view(), Mode::Eval).unwrap();
    let zero = model.backward(&cache, &Array2::zeros((3, 6))).unwrap();
    assert_eq!(zero.max_abs(), 0.0);
    let g = random(3, 6, -1.0, 1.0, 32);
    let one = model.backward(&cache, &g).unwrap();
    let two = model.backward(&cache, &(&g * 2.0)).unwrap();
    assert_eq!(two, one.scaled(2.0));
    let mut opt = AdaGrad::new(&model, 0.1, neural::ADAGRAD_EPS);
    opt.step(&mut model, &one).unwrap();
    assert!(matches!(model.backward(&cache, &g), Err(Error::StaleCache)));
}

#[test]
fn adagrad_examples() {
    let (mut p, mut acc) = (vec![0.0], vec![0.0]);
    neural::adagrad_step(&mut p, &[1.0], &mut acc, 0.1, 1e-8);
    assert!((p[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-15);
    let before = (p.clone(), acc.clone());
    neural::adagrad_step(&mut p, &[0.0], &mut acc, 0.1, 1e-8);
    assert_eq!((p.clone(), acc.clone()), before);
    // constant gradient g: step t is lr / sqrt(t) (up to eps)
    let (mut p, mut acc) = (vec![0.0], vec![0.0]);
    let mut last = f64::INFINITY;
    for t in 1..=50 {
        let old = p[0];
        neural::adagrad_step(&mut p, &[0.7], &mut acc, 0.1, 1e-8);
        let step = (old - p[0]).abs();
        assert!(step < last);
        assert!(rel_err(step, 0.1 / (t as f64).sqrt()) < 1e-7);
        last = step;
    }
}

#[test]
fn early_stopping_triggers_at_best_plus_21() {
    for best in [0usize, 3, 10] {
        let mut s = EarlyStopping::new(20, 0.01);
        let mut stopped = None;
        for epoch in 0..200 {
            let loss = if epoch <= best { 1.0 / (1 + epoch) as f64 } else { 1.0 / (1 + best) as f64 * 0.995 };
            if s.observe(epoch, loss) == StopDecision::Stop {
                stopped = Some(epoch);
                break;
            }
        }
        assert_eq!(stopped, Some(best + 21));
        // the sub-1% dip right after `best` is still the lowest loss seen
        assert_eq!(s.best().unwrap().0, best + 1);
    }
}

#[test]
fn signal_approx_minimum_is_the_ratio_mask() {
    let x = random(2, 3, 0.1, 1.0, 40);
    let d = random(2, 3, 0.1, 1.0, 41);
    let y = &x + &d;
    for idx in ndarray::indices((2, 3)) {
        let cell = |o: f64| {
            let oo = Array2::from_elem((1, 1), o);
            let s = |a: &Array2<f64>| Array2::from_elem((1, 1), a[idx]);
            neural::loss_signal_approx(&oo, &s(&y), &s(&x), &s(&d)).unwrap().0
        };
        let (best, _) = (0..=10000)
            .map(|i| i as f64 / 10000.0)
            .map(|o| (o, cell(o)))
            .fold((0.0, f64::INFINITY), |a, b| if b.1 < a.1 { b } else { a });
        assert!((best - x[idx] / y[idx]).abs() <= 1e-4);
    }
}

#[test]
fn model_file_round_trip_is_bit_exact() {
    let mut m = FnnModel::new(&[6, 5, 4], &mut rng::seeded(50)).unwrap();
    m.norm = Some(senhance::features::NormStats::fit(&random(6, 10, -1.0, 1.0, 51)).unwrap());
    m.loss = LossKind::Psa;
    m.layout = Some(FeatureLayout::default());
    let mut buf = Vec::new();
    m.write_to(&mut buf).unwrap();
    let back = FnnModel::read_from(&buf[..]).unwrap();
    assert_eq!(back.layers, m.layers);
    assert_eq!((back.norm.clone(), back.loss, back.domain, back.layout), (m.norm.clone(), m.loss, m.domain, m.layout));
    let mut again = Vec::new();
    back.write_to(&mut again).unwrap();
    assert_eq!(again, buf);
    assert!(FnnModel::read_from(&buf[..buf.len() - 3]).is_err());
}

fn tone_mixture(i: u64, seconds: f64) -> mixer::NoisyMixture {
    let sr = 16000;
    let n = (seconds * sr as f64) as usize;
    let mut r = rng::stream(77, i);
    let f: f64 = r.random_range(300.0..3000.0);
    let tone: Vec<f64> = (0..n).map(|t| (2.0 * std::f64::consts::PI * f * t as f64 / sr as f64).sin()).collect();
    let tone = AudioBuffer::new(tone, sr).unwrap();
    let noise = synth::gaussian_noise(n, sr, &mut r);
    mixer::mix_at_snr(&tone, &noise, 0.0).unwrap()
}

fn toy_extractor() -> FeatureExtractor {
    FeatureExtractor::new(
        FeatureLayout { mfcc: false, gfe: true, delta_order: 0, past: 1, future: 1 },
        GammatoneBank::standard(16000).unwrap(),
    )
    .unwrap()
}

fn toy_config(seed: u64, max_epochs: usize) -> TrainConfig {
    TrainConfig {
        hidden: vec![64, 64],
        batch_size: 128,
        learning_rate: 0.02,
        dropout: 0.0,
        max_epochs,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn toy_irm_training_converges_and_predicts() {
    let ext = toy_extractor();
    let train_mix: Vec<_> = (0..20).map(|i| tone_mixture(i, 1.0)).collect();
    let val_mix: Vec<_> = (100..105).map(|i| tone_mixture(i, 1.0)).collect();
    let train = pipeline::build_training_set(&train_mix, &ext, LossKind::MaskMse, masks::DEFAULT_BETA).unwrap();
    let val = pipeline::build_training_set(&val_mix, &ext, LossKind::MaskMse, masks::DEFAULT_BETA).unwrap();
    assert!(train.frames() >= 1900);
    let cfg = toy_config(1, 150);
    let (model, hist) = neural::train(&train, &val, &cfg, MaskDomain::Gammatone, Some(ext.layout)).unwrap();

    // the untrained network with the same seed and normaliser
    let mut init = FnnModel::new(&[train.features.nrows(), 64, 64, 64], &mut rng::stream(1, 0)).unwrap();
    init.norm = model.norm.clone();
    let xv = model.norm.as_ref().unwrap().apply(&val.features).unwrap();
    let initial = neural::evaluate_loss(&init, &xv, &val.targets, 1024).unwrap();
    println!("toy IRM: initial val {initial:.5}, best {:.5} at epoch {}", hist.best_val_loss, hist.best_epoch);
    assert!(hist.best_val_loss < 0.1 * initial);
    let lowest = hist.epochs.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(lowest, hist.best_val_loss);

    let test = tone_mixture(200, 1.0);
    let (mask, _) = pipeline::estimate_mask(&test.mixture, &model, &ext).unwrap();
    let oracle = masks::oracle_irm(&test.clean, &test.scaled_noise, &ext.bank, &senhance::cochlea::unit_config(16000), masks::DEFAULT_BETA).unwrap();
    let mse = pipeline::mask_mse(&mask, &oracle).unwrap();
    println!("toy IRM: test mask MSE {mse:.5}");
    assert!(mse < 0.02);
}

#[test]
fn training_is_bit_reproducible() {
    let ext = toy_extractor();
    let mixes: Vec<_> = (0..3).map(|i| tone_mixture(i, 0.5)).collect();
    let set = pipeline::build_training_set(&mixes, &ext, LossKind::SignalApprox, masks::DEFAULT_BETA).unwrap();
    let mut cfg = toy_config(9, 5);
    cfg.dropout = 0.2;
    cfg.loss = LossKind::SignalApprox;
    let (a, ha) = neural::train(&set, &set, &cfg, MaskDomain::Gammatone, None).unwrap();
    let (b, hb) = neural::train(&set, &set, &cfg, MaskDomain::Gammatone, None).unwrap();
    assert_eq!(ha, hb);
    for (la, lb) in a.layers.iter().zip(&b.layers) {
        assert!(la.weights.iter().zip(lb.weights.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(la.bias.iter().zip(lb.bias.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}

#[test]
fn predict_mask_examples() {
    let ext = toy_extractor();
    let mut m = zero_model(&[ext.dims(), 8, 64]);
    let x = synth::gaussian_noise(4000, 16000, &mut rng::seeded(60));
    let feats = ext.extract(&x).unwrap();
    assert!(matches!(m.predict_mask(&feats), Err(Error::Config(_))));
    m.norm = Some(senhance::features::NormStats::fit(&feats.data).unwrap());
    let mask = m.predict_mask(&feats).unwrap();
    assert!(mask.grid().iter().all(|&v| v == 0.5));
    m.layout = Some(FeatureLayout::default());
    assert!(m.predict_mask(&feats).is_err());

    let big = FnnModel::new(&[10, 16, 4], &mut rng::seeded(61)).unwrap();
    let x = random(10, 20, -1e6, 1e6, 62);
    let out = big.forward(x.view(), Mode::Eval).unwrap().output;
    assert!(out.iter().all(|&v| (0.0..=1.0).contains(&v) && v.is_finite()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn random_small_nets_pass_gradient_check(seed in 0u64..10_000, kind in 0usize..3) {
        let kind = LossKind::ALL[kind];
        let model = FnnModel::new(&[3, 4, 2], &mut rng::seeded(seed)).unwrap();
        let x = random(3, 4, -2.0, 2.0, seed + 1);
        let t = toy_targets(kind, 4, seed + 2).select(&[0, 1, 2, 3]);
        let t = match t {
            Targets::Mask(m) => Targets::Mask(m.slice(ndarray::s![..2, ..]).to_owned()),
            Targets::SignalApprox { noisy, clean, noise } => Targets::SignalApprox {
                noisy: noisy.slice(ndarray::s![..2, ..]).to_owned(),
                clean: clean.slice(ndarray::s![..2, ..]).to_owned(),
                noise: noise.slice(ndarray::s![..2, ..]).to_owned(),
            },
            Targets::Psa { noisy, clean, cos_phase } => Targets::Psa {
                noisy: noisy.slice(ndarray::s![..2, ..]).to_owned(),
                clean: clean.slice(ndarray::s![..2, ..]).to_owned(),
                cos_phase: cos_phase.slice(ndarray::s![..2, ..]).to_owned(),
            },
        };
        let loss = |m: &FnnModel| t.loss(&m.forward(x.view(), Mode::Eval).unwrap().output).unwrap().0;
        let cache = model.forward(x.view(), Mode::Eval).unwrap();
        let grads = model.backward(&cache, &t.loss(&cache.output).unwrap().1).unwrap();
        let h = 1e-6;
        for li in 0..2 {
            for idx in ndarray::indices(model.layers[li].weights.dim()) {
                let mut p = model.clone();
                p.layers_mut()[li].weights[idx] += h;
                let mut m = model.clone();
                m.layers_mut()[li].weights[idx] -= h;
                let num = (loss(&p) - loss(&m)) / (2.0 * h);
                let ana = grads.layers[li].0[idx];
                prop_assert!(rel_err(ana, num) < 1e-5 || (ana - num).abs() < 1e-9);
            }
        }
    }
}
