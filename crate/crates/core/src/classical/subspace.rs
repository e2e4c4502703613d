//! Eigen-decomposition (signal subspace) enhancement for white noise.

use ndarray::{s, Array2};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::linalg::symmetric_eigen;

/// Relative margin above the noise variance an eigenvalue needs to count as signal.
pub const DEFAULT_EPSILON: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct SignalSubspace {
    /// `L x L` orthogonal projector onto the retained eigenvectors.
    pub projector: Array2<f64>,
    /// Number of retained dimensions.
    pub rank: usize,
    pub eigenvalues: Vec<f64>,
}

/// Sample covariance `Y Y^T / N` of column vectors.
pub fn sample_covariance(frames: &Array2<f64>) -> Array2<f64> {
    let n = frames.ncols().max(1) as f64;
    frames.dot(&frames.t()) / n
}

/// Keeps eigenvectors with `lambda > noise_variance * (1 + epsilon)`.
pub fn signal_subspace(cov: &Array2<f64>, noise_variance: f64, epsilon: f64) -> Result<SignalSubspace> {
    if !(noise_variance >= 0.0) {
        return Err(Error::Config(format!("noise variance must be >= 0, got {noise_variance}")));
    }
    let sym = (cov + &cov.t()) / 2.0;
    let (values, vectors) = symmetric_eigen(&sym)?;
    let scale = values.first().map_or(0.0, |v| v.abs()).max(f64::MIN_POSITIVE);
    if values.iter().any(|&l| l < -1e-9 * scale) {
        return Err(Error::Numerical("covariance is not positive semidefinite".into()));
    }
    let threshold = noise_variance * (1.0 + epsilon);
    let rank = values.iter().take_while(|&&l| l > threshold).count();
    let u1 = vectors.slice(s![.., ..rank]);
    Ok(SignalSubspace { projector: u1.dot(&u1.t()), rank, eigenvalues: values })
}

/// Projects each column of `noisy_frames` (`L x N`) onto the signal subspace of
/// their own sample covariance.
pub fn subspace_enhance(
    noisy_frames: &Array2<f64>,
    noise_variance: f64,
    epsilon: f64,
) -> Result<Array2<f64>> {
    let (l, n) = noisy_frames.dim();
    if l == 0 || n < l {
        return Err(Error::EmptyInput(format!(
            "need at least {l} frames of length {l} for a covariance estimate, got {n}"
        )));
    }
    let sub = signal_subspace(&sample_covariance(noisy_frames), noise_variance, epsilon)?;
    Ok(sub.projector.dot(noisy_frames))
}

/// Vector dimension, segment length (samples) and eigenvalue margin for
/// waveform-level subspace enhancement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubspaceConfig {
    pub dim: usize,
    pub segment: usize,
    pub epsilon: f64,
}

impl Default for SubspaceConfig {
    fn default() -> Self {
        Self { dim: 40, segment: 4000, epsilon: DEFAULT_EPSILON }
    }
}

/// Segment-wise subspace enhancement of a waveform.
///
/// The covariance of each segment is estimated from all length-`dim` vectors
/// at hop 1; the segment is then projected block by block (non-overlapping
/// blocks of `dim` samples).
pub fn subspace_enhance_signal(
    noisy: &AudioBuffer,
    noise_variance: f64,
    cfg: &SubspaceConfig,
) -> Result<AudioBuffer> {
    let x = noisy.samples();
    let l = cfg.dim;
    if l == 0 || cfg.segment < 2 * l {
        return Err(Error::Config(format!(
            "subspace segment ({}) must be at least twice the dimension ({l})",
            cfg.segment
        )));
    }
    if x.len() < 2 * l {
        return Err(Error::EmptyInput(format!("signal shorter than {} samples", 2 * l)));
    }
    // segment boundaries are multiples of `l`; a short tail joins the previous segment
    let seg = cfg.segment / l * l;
    let mut bounds = Vec::new();
    let mut start = 0;
    while start < x.len() {
        let end = if x.len() - start < seg + seg / 2 { x.len() } else { start + seg };
        bounds.push((start, end));
        start = end;
    }
    let mut out = vec![0.0; x.len()];
    for (a, b) in bounds {
        let vectors = b - a - l + 1;
        let mut frames = Array2::<f64>::zeros((l, vectors));
        for (j, mut col) in frames.columns_mut().into_iter().enumerate() {
            col.assign(&ndarray::ArrayView1::from(&x[a + j..a + j + l]));
        }
        let sub = signal_subspace(&sample_covariance(&frames), noise_variance, cfg.epsilon)?;
        let mut block = ndarray::Array1::<f64>::zeros(l);
        let mut p = a;
        while p < b {
            let take = (b - p).min(l);
            block.fill(0.0);
            block.slice_mut(s![..take]).assign(&ndarray::ArrayView1::from(&x[p..p + take]));
            let y = sub.projector.dot(&block);
            out[p..p + take].copy_from_slice(&y.as_slice().expect("contiguous")[..take]);
            p += take;
        }
    }
    AudioBuffer::new(out, noisy.sample_rate())
}
