//! Sparse non-negative matrix factorisation `V ~ D H` with multiplicative
//! updates, and dictionary-based speech/noise separation.

use std::io::{Read, Write};

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng as _;

use crate::audio::AudioBuffer;
use crate::binio::{read_f64, read_u32, read_u64};
use crate::error::{ensure_shape, Error, Result};
use crate::rng::Rng;
use crate::signal::{apply_gains, frame_signal, istft, stft, FrameConfig, Window};

pub const DEFAULT_K: usize = 64;
pub const DEFAULT_TOL: f64 = 1e-4;
pub const DEFAULT_MAX_ITER: usize = 500;
/// Frames whose sample variance is below this are dropped from training data.
pub const DEFAULT_VARIANCE_THRESHOLD: f64 = 3e-5;
/// Every update denominator is floored at this value.
pub const DENOM_FLOOR: f64 = 1e-12;

const MAGIC: &[u8; 4] = b"SNMF";
const VERSION: u32 = 1;

/// Iteration controls shared by training and inference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmfOptions {
    pub alpha: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for NmfOptions {
    fn default() -> Self {
        Self { alpha: 0.0, max_iter: DEFAULT_MAX_ITER, tol: DEFAULT_TOL }
    }
}

impl NmfOptions {
    fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        Ok(())
    }
}

/// Cost after each completed iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct NmfTrace {
    pub costs: Vec<f64>,
    pub converged: bool,
}

fn check_nonneg(name: &str, m: &ArrayView2<f64>) -> Result<()> {
    if let Some(v) = m.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidData(format!("{name} must be finite and non-negative, found {v}")));
    }
    Ok(())
}

/// `0.5 ||V - D H||_F^2 + alpha ||H||_1`.
pub fn nmf_cost(v: &Array2<f64>, d: &Array2<f64>, h: &Array2<f64>, alpha: f64) -> Result<f64> {
    ensure_shape("dictionary rows", (v.nrows(), h.nrows()), d.dim())?;
    ensure_shape("activations", (d.ncols(), v.ncols()), h.dim())?;
    let r = v - &d.dot(h);
    Ok(0.5 * r.iter().map(|e| e * e).sum::<f64>() + alpha * h.iter().map(|x| x.abs()).sum::<f64>())
}

fn update_h(v: &Array2<f64>, d: &Array2<f64>, h: &mut Array2<f64>, alpha: f64) {
    let num = d.t().dot(v);
    let den = d.t().dot(d).dot(&*h);
    Zip::from(h).and(&num).and(&den).for_each(|h, &n, &dd| {
        *h *= n / (dd + alpha).max(DENOM_FLOOR);
    });
}

fn update_d(v: &Array2<f64>, d: &mut Array2<f64>, h: &Array2<f64>) {
    let num = v.dot(&h.t());
    let den = d.dot(&h.dot(&h.t()));
    Zip::from(d).and(&num).and(&den).for_each(|d, &n, &dd| {
        *d *= n / dd.max(DENOM_FLOOR);
    });
}

fn uniform_open(rows: usize, cols: usize, rng: &mut Rng) -> Array2<f64> {
    // (0, 1]: strictly positive so no entry starts absorbed at zero
    Array2::from_shape_fn((rows, cols), |_| 1.0 - rng.random::<f64>())
}

/// Rescales columns of `D` to unit l2 norm and rows of `H` by the inverse,
/// leaving `D H` unchanged.
pub fn normalize_columns(d: &mut Array2<f64>, h: &mut Array2<f64>) -> Result<()> {
    for (j, mut col) in d.columns_mut().into_iter().enumerate() {
        let norm = col.dot(&col).sqrt();
        if !(norm > 0.0) {
            return Err(Error::Numerical(format!("dictionary column {j} collapsed to zero")));
        }
        col /= norm;
        h.row_mut(j).mapv_inplace(|x| x * norm);
    }
    Ok(())
}

/// Learns `D` (`K x k`) and `H` (`k x M`) by alternating H and D updates.
///
/// Stops when the cost drops below `tol` or after `max_iter` iterations.
/// `D` is column-normalised on return.
pub fn train(
    v: &Array2<f64>,
    k: usize,
    opts: &NmfOptions,
    rng: &mut Rng,
) -> Result<(Array2<f64>, Array2<f64>, NmfTrace)> {
    opts.validate()?;
    if k == 0 {
        return Err(Error::Config("NMF rank k must be >= 1".into()));
    }
    if v.is_empty() {
        return Err(Error::EmptyInput("NMF training matrix is empty".into()));
    }
    check_nonneg("V", &v.view())?;
    let mut d = uniform_open(v.nrows(), k, rng);
    let mut h = uniform_open(k, v.ncols(), rng);
    let mut trace = NmfTrace { costs: Vec::new(), converged: false };
    for _ in 0..opts.max_iter {
        update_h(v, &d, &mut h, opts.alpha);
        update_d(v, &mut d, &h);
        let c = nmf_cost(v, &d, &h, opts.alpha)?;
        if !c.is_finite() {
            return Err(Error::Numerical("NMF cost diverged".into()));
        }
        trace.costs.push(c);
        if c < opts.tol {
            trace.converged = true;
            break;
        }
    }
    normalize_columns(&mut d, &mut h)?;
    Ok((d, h, trace))
}

/// Activations for fixed `D`, starting from all ones.
pub fn infer_activations(v: &Array2<f64>, d: &Array2<f64>, opts: &NmfOptions) -> Result<Array2<f64>> {
    opts.validate()?;
    ensure_shape("dictionary rows", (v.nrows(), d.ncols()), d.dim())?;
    check_nonneg("V", &v.view())?;
    let mut h = Array2::ones((d.ncols(), v.ncols()));
    for _ in 0..opts.max_iter {
        update_h(v, d, &mut h, opts.alpha);
        if nmf_cost(v, d, &h, opts.alpha)? < opts.tol {
            break;
        }
    }
    Ok(h)
}

/// `Y * S / (S + N)` per cell, with the denominator floored; equivalent to
/// the ratio form `Y * (S/N) / (1 + S/N)` but defined where `N = 0`.
pub fn wiener_reconstruct(
    noisy_mag: &Array2<f64>,
    speech: &Array2<f64>,
    noise: &Array2<f64>,
) -> Result<Array2<f64>> {
    ensure_shape("speech model", noisy_mag.dim(), speech.dim())?;
    ensure_shape("noise model", noisy_mag.dim(), noise.dim())?;
    Ok(Zip::from(noisy_mag).and(speech).and(noise).map_collect(|&y, &s, &n| {
        let den = s + n;
        if den > DENOM_FLOOR { y * (s / den) } else { 0.0 }
    }))
}

/// Infers joint activations over `[Dx Dd]` and returns the clean magnitude estimate.
pub fn separate(
    noisy_mag: &Array2<f64>,
    dx: &Array2<f64>,
    dd: &Array2<f64>,
    opts: &NmfOptions,
) -> Result<Array2<f64>> {
    if dx.nrows() != dd.nrows() || dx.nrows() != noisy_mag.nrows() {
        return Err(Error::shape("dictionary bins", (noisy_mag.nrows(), dx.ncols()), (dd.nrows(), dd.ncols())));
    }
    let d = concatenate![Axis(1), *dx, *dd];
    let h = infer_activations(noisy_mag, &d, opts)?;
    let kx = dx.ncols();
    let sx = dx.dot(&h.slice(s![..kx, ..]));
    let sd = dd.dot(&h.slice(s![kx.., ..]));
    wiener_reconstruct(noisy_mag, &sx, &sd)
}

/// Unbiased sample variance of each column.
pub fn frame_variances(frames: &Array2<f64>) -> Array1<f64> {
    let n = frames.nrows();
    frames.map_axis(Axis(0), |c| {
        if n < 2 {
            return 0.0;
        }
        let mean = c.sum() / n as f64;
        c.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64
    })
}

/// Indices of columns whose sample variance is at least `threshold`.
pub fn frame_select_for_training(frames: &Array2<f64>, threshold: f64) -> Vec<usize> {
    frame_variances(frames)
        .iter()
        .enumerate()
        .filter(|(_, v)| **v >= threshold)
        .map(|(i, _)| i)
        .collect()
}

/// A trained dictionary plus what it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct NmfModel {
    pub dictionary: Array2<f64>,
    pub alpha: f64,
    pub tag: String,
}

impl NmfModel {
    pub fn new(dictionary: Array2<f64>, alpha: f64, tag: impl Into<String>) -> Result<Self> {
        check_nonneg("dictionary", &dictionary.view())?;
        if dictionary.is_empty() {
            return Err(Error::EmptyInput("dictionary is empty".into()));
        }
        if let Some(j) = dictionary.columns().into_iter().position(|c| c.iter().all(|&x| x == 0.0)) {
            return Err(Error::InvalidData(format!("dictionary column {j} is all zero")));
        }
        Ok(Self { dictionary, alpha, tag: tag.into() })
    }

    pub fn bins(&self) -> usize {
        self.dictionary.nrows()
    }

    pub fn k(&self) -> usize {
        self.dictionary.ncols()
    }

    /// Binary layout, little endian: `"SNMF"`, u32 version, u64 K, u64 k,
    /// f64 alpha, K*k f64 (row-major D), u32 tag length, UTF-8 tag.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&(self.bins() as u64).to_le_bytes())?;
        w.write_all(&(self.k() as u64).to_le_bytes())?;
        w.write_all(&self.alpha.to_le_bytes())?;
        for x in self.dictionary.iter() {
            w.write_all(&x.to_le_bytes())?;
        }
        w.write_all(&(self.tag.len() as u32).to_le_bytes())?;
        w.write_all(self.tag.as_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::InvalidData("not an NMF model file".into()));
        }
        let version = read_u32(&mut r)?;
        if version != VERSION {
            return Err(Error::Unsupported(format!("NMF model version {version}")));
        }
        let bins = read_u64(&mut r)? as usize;
        let k = read_u64(&mut r)? as usize;
        let alpha = read_f64(&mut r)?;
        let n = bins.checked_mul(k).filter(|&n| n <= 1 << 28).ok_or_else(|| {
            Error::InvalidData(format!("implausible dictionary size {bins}x{k}"))
        })?;
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(read_f64(&mut r)?);
        }
        let tag_len = read_u32(&mut r)? as usize;
        let mut tag = vec![0u8; tag_len];
        r.read_exact(&mut tag)?;
        let tag = String::from_utf8(tag).map_err(|_| Error::InvalidData("tag is not UTF-8".into()))?;
        let dictionary = Array2::from_shape_vec((bins, k), data).expect("length checked");
        Self::new(dictionary, alpha, tag)
    }
}

/// STFT magnitudes of the frames of `signals` that pass the variance test.
///
/// Variance is measured on the unwindowed time-domain frames.
pub fn training_magnitudes(
    signals: &[AudioBuffer],
    cfg: &FrameConfig,
    variance_threshold: f64,
) -> Result<Array2<f64>> {
    let mut columns: Vec<Array1<f64>> = Vec::new();
    let raw = cfg.with_window(Window::Rectangular);
    for sig in signals {
        let frames = frame_signal(sig, &raw)?;
        let mag = stft(sig, cfg)?.magnitude();
        for j in frame_select_for_training(&frames, variance_threshold) {
            columns.push(mag.column(j).to_owned());
        }
    }
    if columns.is_empty() {
        return Err(Error::EmptyInput("no frames passed the variance threshold".into()));
    }
    let views: Vec<_> = columns.iter().map(|c| c.view().insert_axis(Axis(1))).collect();
    Ok(concatenate(Axis(1), &views).expect("equal lengths"))
}

/// Trains a dictionary on the STFT magnitudes of `signals`.
pub fn train_model(
    signals: &[AudioBuffer],
    cfg: &FrameConfig,
    k: usize,
    opts: &NmfOptions,
    variance_threshold: f64,
    tag: &str,
    rng: &mut Rng,
) -> Result<(NmfModel, NmfTrace)> {
    let v = training_magnitudes(signals, cfg, variance_threshold)?;
    let (d, _, trace) = train(&v, k, opts, rng)?;
    Ok((NmfModel::new(d, opts.alpha, tag)?, trace))
}

/// Separates `noisy` with a speech and a noise model; noisy phase is kept.
pub fn enhance(
    noisy: &AudioBuffer,
    speech: &NmfModel,
    noise: &NmfModel,
    cfg: &FrameConfig,
    opts: &NmfOptions,
) -> Result<AudioBuffer> {
    let spec = stft(noisy, cfg)?;
    if speech.bins() != spec.bins() || noise.bins() != spec.bins() {
        return Err(Error::shape("dictionary bins", (spec.bins(), speech.k()), (noise.bins(), noise.k())));
    }
    let mag = spec.magnitude();
    let clean = separate(&mag, &speech.dictionary, &noise.dictionary, opts)?;
    let gains = Zip::from(&clean).and(&mag).map_collect(|&c, &y| if y > 0.0 { c / y } else { 0.0 });
    let mut table = |m: usize, _: ndarray::ArrayView1<_>, mut g: ndarray::ArrayViewMut1<f64>| {
        g.assign(&gains.column(m));
    };
    let out = apply_gains(&spec, &mut table)?;
    Ok(istft(&out)?.resized(noisy.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn cost_examples() {
        let i = Array2::<f64>::eye(2);
        assert_eq!(nmf_cost(&i, &i, &i, 1.0).unwrap(), 2.0);
        let z = Array2::<f64>::zeros((2, 2));
        assert_eq!(nmf_cost(&z, &z, &z, 3.0).unwrap(), 0.0);
        assert!(nmf_cost(&i, &Array2::zeros((3, 2)), &i, 0.0).is_err());
    }

    #[test]
    fn rejects_negative_input() {
        let v = array![[1.0, -1.0]];
        assert!(matches!(
            train(&v, 1, &NmfOptions::default(), &mut crate::rng::seeded(0)),
            Err(Error::InvalidData(_))
        ));
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        let d = array![[0.1, 1.0 / 3.0], [std::f64::consts::PI, 1e-300]];
        let m = NmfModel::new(d, 0.25, "spk-03/white").unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        let back = NmfModel::read_from(&buf[..]).unwrap();
        assert_eq!(back, m);
        assert!(back.dictionary.iter().zip(m.dictionary.iter()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(NmfModel::read_from(&buf[..buf.len() - 1]).is_err());
        buf[0] = b'X';
        assert!(matches!(NmfModel::read_from(&buf[..]), Err(Error::InvalidData(_))));
    }
}
