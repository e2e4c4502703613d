//! Acoustic features for mask estimation: MFCC, gammatone filterbank
//! energies, regression deltas, context stacking and z-score normalisation.
//!
//! All features share the 20 ms / 10 ms T-F unit framing, so feature
//! matrices and mask targets for the same utterance have the same number of
//! frames.

use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use sha2::{Digest, Sha256};

use crate::audio::AudioBuffer;
use crate::binio::{read_array, read_f64, read_u32, read_u64};
use crate::cochlea::{self, Cochleagram, GammatoneBank};
use crate::error::{Error, Result};
use crate::signal::{stft, FrameConfig, Window};

pub const MFCC_COEFFS: usize = 31;
pub const MEL_FILTERS: usize = 40;
pub const MEL_F_LO: f64 = 50.0;
pub const MEL_F_HI: f64 = 8000.0;
pub const LOG_FLOOR: f64 = 1e-10;
pub const DELTA_WINDOW: usize = 2;
pub const CONTEXT: usize = 2;
pub const STD_FLOOR: f64 = 1e-8;
/// Environment variable naming a directory for cached feature matrices.
pub const CACHE_DIR_ENV: &str = "SENHANCE_CACHE_DIR";

const CACHE_MAGIC: &[u8; 4] = b"SFEA";
const CACHE_VERSION: u32 = 1;

/// Triangular mel filters (`n_filters x bins`), each normalised to unit sum.
pub fn mel_filterbank(
    n_filters: usize,
    fft_size: usize,
    sample_rate: u32,
    f_lo: f64,
    f_hi: f64,
) -> Result<Array2<f64>> {
    let bins = fft_size / 2 + 1;
    let (m_lo, m_hi) = (cochlea::hz_to_mel(f_lo), cochlea::hz_to_mel(f_hi));
    let edges: Vec<f64> = (0..n_filters + 2)
        .map(|i| cochlea::mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (n_filters + 1) as f64))
        .collect();
    let mut fb = Array2::zeros((n_filters, bins));
    for j in 0..n_filters {
        let (a, c, b) = (edges[j], edges[j + 1], edges[j + 2]);
        let mut row = fb.row_mut(j);
        for k in 0..bins {
            let f = k as f64 * sample_rate as f64 / fft_size as f64;
            row[k] = if f > a && f <= c {
                (f - a) / (c - a)
            } else if f > c && f < b {
                (b - f) / (b - c)
            } else {
                0.0
            };
        }
        let area = row.sum();
        if area <= 0.0 {
            return Err(Error::Config(format!(
                "mel filter {j} ({a:.1}-{b:.1} Hz) covers no FFT bin; use a larger FFT"
            )));
        }
        row /= area;
    }
    Ok(fb)
}

/// Orthonormal DCT-II matrix keeping the first `n_out` of `n_in` coefficients.
pub fn dct_matrix(n_in: usize, n_out: usize) -> Array2<f64> {
    let n = n_in as f64;
    Array2::from_shape_fn((n_out, n_in), |(k, i)| {
        let scale = if k == 0 { (1.0 / n).sqrt() } else { (2.0 / n).sqrt() };
        scale * (std::f64::consts::PI * k as f64 * (i as f64 + 0.5) / n).cos()
    })
}

#[derive(Debug, Clone)]
pub struct MfccExtractor {
    pub frame: FrameConfig,
    filters: Array2<f64>,
    dct: Array2<f64>,
}

impl MfccExtractor {
    /// 31 coefficients from 40 mel filters over 50-8000 Hz on Hann-windowed
    /// 20 ms frames.
    pub fn standard(sample_rate: u32) -> Result<Self> {
        let frame = FrameConfig::speech(sample_rate).with_window(Window::Hann);
        let f_hi = MEL_F_HI.min(sample_rate as f64 / 2.0);
        Ok(Self {
            filters: mel_filterbank(MEL_FILTERS, frame.fft_size, sample_rate, MEL_F_LO, f_hi)?,
            dct: dct_matrix(MEL_FILTERS, MFCC_COEFFS),
            frame,
        })
    }

    pub fn n_coeffs(&self) -> usize {
        self.dct.nrows()
    }

    /// `n_coeffs x M` cepstra of `ln(max(E, 1e-10))` mel energies.
    pub fn compute(&self, signal: &AudioBuffer) -> Result<Array2<f64>> {
        let power = stft(signal, &self.frame)?.power();
        let mel = self.filters.dot(&power).mapv(|e| e.max(LOG_FLOOR).ln());
        Ok(self.dct.dot(&mel))
    }
}

pub fn mfcc(signal: &AudioBuffer) -> Result<Array2<f64>> {
    MfccExtractor::standard(signal.sample_rate())?.compute(signal)
}

/// Log gammatone filterbank energies, `ln(unit energy + 1e-10)`.
pub fn gfe(coch: &Cochleagram) -> Array2<f64> {
    cochlea::unit_energy(coch).mapv(|e| (e + LOG_FLOOR).ln())
}

/// Regression deltas over `+-window` frames with replicated edges.
pub fn deltas(features: &Array2<f64>, window: usize) -> Array2<f64> {
    let m = features.ncols();
    if window == 0 || m == 0 {
        return Array2::zeros(features.dim());
    }
    let norm = 2.0 * (1..=window).map(|d| (d * d) as f64).sum::<f64>();
    let at = |j: isize| features.column(j.clamp(0, m as isize - 1) as usize);
    let mut out = Array2::zeros(features.dim());
    for (j, mut col) in out.columns_mut().into_iter().enumerate() {
        for d in 1..=window {
            let (fwd, back) = (at(j as isize + d as isize), at(j as isize - d as isize));
            col.zip_mut_with(&(&fwd - &back), |o, v| *o += d as f64 * v);
        }
        col /= norm;
    }
    out
}

/// Stacks `past` previous and `future` following frames around each frame,
/// oldest first, replicating edge frames.
pub fn stack_context(features: &Array2<f64>, past: usize, future: usize) -> Array2<f64> {
    let (f, m) = features.dim();
    let width = past + future + 1;
    let mut out = Array2::zeros((f * width, m));
    if m == 0 {
        return out;
    }
    for j in 0..m {
        for (b, off) in (-(past as isize)..=future as isize).enumerate() {
            let src = (j as isize + off).clamp(0, m as isize - 1) as usize;
            out.slice_mut(s![b * f..(b + 1) * f, j]).assign(&features.column(src));
        }
    }
    out
}

/// Centre block of a context-stacked matrix.
pub fn unstack_center(stacked: &Array2<f64>, past: usize, future: usize) -> Array2<f64> {
    let f = stacked.nrows() / (past + future + 1);
    stacked.slice(s![past * f..(past + 1) * f, ..]).to_owned()
}

/// Which feature blocks are extracted and how they are expanded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct FeatureLayout {
    pub mfcc: bool,
    pub gfe: bool,
    /// 0 = static only, 1 = +delta, 2 = +delta+double delta.
    pub delta_order: usize,
    pub past: usize,
    pub future: usize,
}

impl Default for FeatureLayout {
    /// (31 MFCC + 64 GFE) x (static, delta, double delta) x 5 frames = 1425.
    fn default() -> Self {
        Self { mfcc: true, gfe: true, delta_order: 2, past: CONTEXT, future: CONTEXT }
    }
}

impl FeatureLayout {
    pub fn base_dims(&self, gfe_channels: usize) -> usize {
        (if self.mfcc { MFCC_COEFFS } else { 0 }) + (if self.gfe { gfe_channels } else { 0 })
    }

    pub fn dims(&self, gfe_channels: usize) -> usize {
        self.base_dims(gfe_channels) * (1 + self.delta_order) * (1 + self.past + self.future)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mfcc && !self.gfe {
            return Err(Error::Config("feature layout selects no blocks".into()));
        }
        if self.delta_order > 2 {
            return Err(Error::Config(format!("delta order {} > 2", self.delta_order)));
        }
        Ok(())
    }

    /// Parses the [`Display`](fmt::Display) form, e.g. `mfcc+gfe/d2/c2,2`.
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("bad feature layout '{s}'"));
        let mut parts = s.split('/');
        let blocks = parts.next().ok_or_else(bad)?;
        let mut layout = Self { mfcc: false, gfe: false, delta_order: 0, past: 0, future: 0 };
        for b in blocks.split('+') {
            match b {
                "mfcc" => layout.mfcc = true,
                "gfe" => layout.gfe = true,
                _ => return Err(bad()),
            }
        }
        let d = parts.next().and_then(|p| p.strip_prefix('d')).ok_or_else(bad)?;
        layout.delta_order = d.parse().map_err(|_| bad())?;
        let c = parts.next().and_then(|p| p.strip_prefix('c')).ok_or_else(bad)?;
        let (p, f) = c.split_once(',').ok_or_else(bad)?;
        layout.past = p.parse().map_err(|_| bad())?;
        layout.future = f.parse().map_err(|_| bad())?;
        if parts.next().is_some() {
            return Err(bad());
        }
        layout.validate()?;
        Ok(layout)
    }
}

impl fmt::Display for FeatureLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let blocks: Vec<&str> =
            [(self.mfcc, "mfcc"), (self.gfe, "gfe")].iter().filter(|b| b.0).map(|b| b.1).collect();
        write!(f, "{}/d{}/c{},{}", blocks.join("+"), self.delta_order, self.past, self.future)
    }
}

/// Features of one utterance, `dims x frames`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub data: Array2<f64>,
    pub layout: FeatureLayout,
}

impl FeatureMatrix {
    pub fn dims(&self) -> usize {
        self.data.nrows()
    }

    pub fn frames(&self) -> usize {
        self.data.ncols()
    }

    /// Binary layout, little endian: `"SFEA"`, u32 version, u32 descriptor
    /// length, UTF-8 layout descriptor, u64 dims, u64 frames, then
    /// `frames x dims` f64 values frame by frame.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let desc = self.layout.to_string();
        w.write_all(CACHE_MAGIC)?;
        w.write_all(&CACHE_VERSION.to_le_bytes())?;
        w.write_all(&(desc.len() as u32).to_le_bytes())?;
        w.write_all(desc.as_bytes())?;
        w.write_all(&(self.dims() as u64).to_le_bytes())?;
        w.write_all(&(self.frames() as u64).to_le_bytes())?;
        for col in self.data.columns() {
            for x in col {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let magic: [u8; 4] = read_array(&mut r)?;
        if &magic != CACHE_MAGIC {
            return Err(Error::InvalidData("not a feature file".into()));
        }
        let version = read_u32(&mut r)?;
        if version != CACHE_VERSION {
            return Err(Error::Unsupported(format!("feature file version {version}")));
        }
        let len = read_u32(&mut r)? as usize;
        if len > 256 {
            return Err(Error::InvalidData("feature layout descriptor too long".into()));
        }
        let mut desc = vec![0u8; len];
        r.read_exact(&mut desc)?;
        let desc = String::from_utf8(desc).map_err(|_| Error::InvalidData("layout is not UTF-8".into()))?;
        let layout = FeatureLayout::parse(&desc)?;
        let dims = read_u64(&mut r)? as usize;
        let frames = read_u64(&mut r)? as usize;
        let n = dims
            .checked_mul(frames)
            .filter(|&n| n <= 1 << 30)
            .ok_or_else(|| Error::InvalidData(format!("implausible feature size {dims}x{frames}")))?;
        let mut values = Vec::with_capacity(n);
        for _ in 0..n {
            values.push(read_f64(&mut r)?);
        }
        let data = Array2::from_shape_vec((frames, dims), values).expect("length checked").reversed_axes();
        Ok(Self { data: data.as_standard_layout().to_owned(), layout })
    }
}

/// Computes [`FeatureMatrix`]es for a fixed layout and filterbank.
#[derive(Debug, Clone)]
pub struct FeatureExtractor {
    pub layout: FeatureLayout,
    pub bank: GammatoneBank,
    mfcc: MfccExtractor,
    units: FrameConfig,
}

impl FeatureExtractor {
    pub fn new(layout: FeatureLayout, bank: GammatoneBank) -> Result<Self> {
        layout.validate()?;
        let sr = bank.sample_rate();
        Ok(Self { layout, mfcc: MfccExtractor::standard(sr)?, units: cochlea::unit_config(sr), bank })
    }

    pub fn standard(sample_rate: u32) -> Result<Self> {
        Self::new(FeatureLayout::default(), GammatoneBank::standard(sample_rate)?)
    }

    pub fn dims(&self) -> usize {
        self.layout.dims(self.bank.n_channels())
    }

    /// Features from a precomputed cochleagram of the same signal.
    pub fn extract_with(&self, signal: &AudioBuffer, coch: &Cochleagram) -> Result<FeatureMatrix> {
        let mut blocks: Vec<Array2<f64>> = Vec::new();
        if self.layout.mfcc {
            blocks.push(self.mfcc.compute(signal)?);
        }
        if self.layout.gfe {
            blocks.push(gfe(coch));
        }
        let views: Vec<ArrayView2<f64>> = blocks.iter().map(|b| b.view()).collect();
        let stat = concatenate(Axis(0), &views).map_err(|_| {
            Error::InvalidData("feature blocks disagree on frame count".into())
        })?;
        let mut parts = vec![stat];
        for _ in 0..self.layout.delta_order {
            let next = deltas(parts.last().expect("non-empty"), DELTA_WINDOW);
            parts.push(next);
        }
        let views: Vec<ArrayView2<f64>> = parts.iter().map(|b| b.view()).collect();
        let full = concatenate(Axis(0), &views).expect("equal frame counts");
        let data = stack_context(&full, self.layout.past, self.layout.future);
        Ok(FeatureMatrix { data, layout: self.layout })
    }

    pub fn extract(&self, signal: &AudioBuffer) -> Result<FeatureMatrix> {
        let coch = cochlea::analyze(signal, &self.bank, &self.units)?;
        self.extract_with(signal, &coch)
    }

    /// Like [`extract`](Self::extract) but reads/writes `cache_dir` when given,
    /// keyed by a hash of the layout and the samples.
    pub fn extract_cached(&self, signal: &AudioBuffer, cache_dir: Option<&Path>) -> Result<FeatureMatrix> {
        let Some(dir) = cache_dir else {
            return self.extract(signal);
        };
        let path = self.cache_path(dir, signal);
        if let Ok(file) = std::fs::File::open(&path) {
            if let Ok(f) = FeatureMatrix::read_from(std::io::BufReader::new(file)) {
                if f.layout == self.layout && f.dims() == self.dims() {
                    return Ok(f);
                }
            }
        }
        let f = self.extract(signal)?;
        std::fs::create_dir_all(dir)?;
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        {
            let mut w = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
            f.write_to(&mut w)?;
            w.flush()?;
        }
        std::fs::rename(&tmp, &path)?;
        Ok(f)
    }

    fn cache_path(&self, dir: &Path, signal: &AudioBuffer) -> PathBuf {
        let mut h = Sha256::new();
        h.update(self.layout.to_string().as_bytes());
        h.update(self.bank.n_channels().to_le_bytes());
        h.update(signal.sample_rate().to_le_bytes());
        for x in signal.samples() {
            h.update(x.to_le_bytes());
        }
        let hex: String = h.finalize().iter().map(|b| format!("{b:02x}")).collect();
        dir.join(format!("{hex}.sfea"))
    }
}

/// Cache directory from [`CACHE_DIR_ENV`], if set and non-empty.
pub fn cache_dir_from_env() -> Option<PathBuf> {
    std::env::var_os(CACHE_DIR_ENV).filter(|v| !v.is_empty()).map(PathBuf::from)
}

/// Streaming per-dimension mean and variance (Chan et al. pairwise combine).
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    count: usize,
    mean: Array1<f64>,
    m2: Array1<f64>,
}

/// Per-dimension z-score statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl Normalizer {
    pub fn new(dims: usize) -> Self {
        Self { count: 0, mean: Array1::zeros(dims), m2: Array1::zeros(dims) }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Adds the columns of `batch` (`dims x n`).
    pub fn update(&mut self, batch: &Array2<f64>) -> Result<()> {
        if batch.nrows() != self.mean.len() {
            return Err(Error::shape("normalizer batch", (self.mean.len(), batch.ncols()), batch.dim()));
        }
        let n = batch.ncols();
        if n == 0 {
            return Ok(());
        }
        let mean = batch.mean_axis(Axis(1)).expect("n > 0");
        let centered = batch - &mean.view().insert_axis(Axis(1));
        let m2 = (&centered * &centered).sum_axis(Axis(1));
        self.merge(&Normalizer { count: n, mean, m2 })
    }

    pub fn merge(&mut self, other: &Normalizer) -> Result<()> {
        if other.mean.len() != self.mean.len() {
            return Err(Error::shape("normalizer merge", (self.mean.len(), 1), (other.mean.len(), 1)));
        }
        if other.count == 0 {
            return Ok(());
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let delta = &other.mean - &self.mean;
        self.m2 = &self.m2 + &other.m2 + &(&delta * &delta) * (na * nb / n);
        self.mean = &self.mean + &(&delta * (nb / n));
        self.count += other.count;
        Ok(())
    }

    /// Population statistics, std floored at [`STD_FLOOR`].
    pub fn finish(&self) -> Result<NormStats> {
        if self.count < 2 {
            return Err(Error::EmptyInput(format!(
                "need at least 2 frames to fit a normalizer, got {}",
                self.count
            )));
        }
        let std = self.m2.mapv(|m| (m / self.count as f64).sqrt().max(STD_FLOOR));
        Ok(NormStats { mean: self.mean.clone(), std })
    }
}

impl NormStats {
    pub fn dims(&self) -> usize {
        self.mean.len()
    }

    pub fn fit(data: &Array2<f64>) -> Result<Self> {
        let mut n = Normalizer::new(data.nrows());
        n.update(data)?;
        n.finish()
    }

    fn check(&self, data: &Array2<f64>) -> Result<()> {
        if data.nrows() != self.dims() {
            return Err(Error::shape("normalizer input", (self.dims(), data.ncols()), data.dim()));
        }
        Ok(())
    }

    pub fn apply(&self, data: &Array2<f64>) -> Result<Array2<f64>> {
        self.check(data)?;
        let mean = self.mean.view().insert_axis(Axis(1));
        let std = self.std.view().insert_axis(Axis(1));
        Ok((data - &mean) / std)
    }

    pub fn invert(&self, data: &Array2<f64>) -> Result<Array2<f64>> {
        self.check(data)?;
        let mean = self.mean.view().insert_axis(Axis(1));
        let std = self.std.view().insert_axis(Axis(1));
        Ok(data * &std + mean)
    }
}
