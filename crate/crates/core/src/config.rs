//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key has a
//! default; unknown keys and unparsable values are errors. Later assignments
//! override earlier ones, which is how command-line overrides are applied.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use crate::classical::{ClassicalConfig, Method, NoiseTrackerState, SubspaceConfig};
use crate::error::{Error, Result};
use crate::features::FeatureLayout;
use crate::masks::DEFAULT_BETA;
use crate::mixer::{MixSpec, SnrSpec};
use crate::neural::{LossKind, TrainConfig};
use crate::nmf::{self, NmfOptions};
use crate::signal::{FrameConfig, Window};
use crate::wav::{WavFormat, SAMPLE_RATE};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub jobs: usize,
    pub wav_format: WavFormat,
    pub method: String,
    pub mix_snr: SnrSpec,
    pub mix_repeats: usize,
    pub frame_len: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub dd_alpha: f64,
    pub noise_smoothing: f64,
    pub noise_init_samples: usize,
    pub subspace: SubspaceConfig,
    pub nmf_k: usize,
    pub nmf: NmfOptions,
    pub nmf_variance_threshold: f64,
    pub layout: FeatureLayout,
    pub mask_beta: f64,
    pub train: TrainConfig,
    pub val_fraction: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let wide = FrameConfig::wide(SAMPLE_RATE);
        let tracker = NoiseTrackerState::default();
        Self {
            seed: 0,
            jobs: 1,
            wav_format: WavFormat::Float32,
            method: Method::Wiener.name().into(),
            mix_snr: SnrSpec::Fixed(-5.0),
            mix_repeats: 1,
            frame_len: wide.frame_len,
            hop: wide.hop,
            fft_size: wide.fft_size,
            dd_alpha: crate::classical::DD_ALPHA,
            noise_smoothing: tracker.smoothing,
            noise_init_samples: tracker.init_samples,
            subspace: SubspaceConfig::default(),
            nmf_k: nmf::DEFAULT_K,
            nmf: NmfOptions::default(),
            nmf_variance_threshold: nmf::DEFAULT_VARIANCE_THRESHOLD,
            layout: FeatureLayout::default(),
            mask_beta: DEFAULT_BETA,
            train: TrainConfig::default(),
            val_fraction: 0.1,
        }
    }
}

/// Every accepted key, in the order [`ExperimentConfig::to_text`] prints them.
pub const KEYS: [&str; 31] = [
    "seed",
    "jobs",
    "wav_format",
    "method",
    "mix.snr",
    "mix.repeats",
    "frame.len",
    "frame.hop",
    "frame.fft_size",
    "classical.dd_alpha",
    "classical.noise_smoothing",
    "classical.noise_init_samples",
    "subspace.dim",
    "subspace.segment",
    "subspace.epsilon",
    "nmf.k",
    "nmf.alpha",
    "nmf.max_iter",
    "nmf.tol",
    "nmf.variance_threshold",
    "features.layout",
    "mask.beta",
    "fnn.hidden",
    "fnn.batch_size",
    "fnn.learning_rate",
    "fnn.dropout",
    "fnn.patience",
    "fnn.improvement",
    "fnn.max_epochs",
    "fnn.loss",
    "fnn.val_fraction",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::Config(format!("{key}: cannot parse '{value}'")))
}

fn parse_hidden(value: &str) -> Result<Vec<usize>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse("fnn.hidden", v.trim())).collect()
}

impl ExperimentConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "jobs" => self.jobs = parse(key, v)?,
            "wav_format" => self.wav_format = v.parse()?,
            "method" => self.method = v.to_string(),
            "mix.snr" => self.mix_snr = SnrSpec::parse(v)?,
            "mix.repeats" => self.mix_repeats = parse(key, v)?,
            "frame.len" => self.frame_len = parse(key, v)?,
            "frame.hop" => self.hop = parse(key, v)?,
            "frame.fft_size" => self.fft_size = parse(key, v)?,
            "classical.dd_alpha" => self.dd_alpha = parse(key, v)?,
            "classical.noise_smoothing" => self.noise_smoothing = parse(key, v)?,
            "classical.noise_init_samples" => self.noise_init_samples = parse(key, v)?,
            "subspace.dim" => self.subspace.dim = parse(key, v)?,
            "subspace.segment" => self.subspace.segment = parse(key, v)?,
            "subspace.epsilon" => self.subspace.epsilon = parse(key, v)?,
            "nmf.k" => self.nmf_k = parse(key, v)?,
            "nmf.alpha" => self.nmf.alpha = parse(key, v)?,
            "nmf.max_iter" => self.nmf.max_iter = parse(key, v)?,
            "nmf.tol" => self.nmf.tol = parse(key, v)?,
            "nmf.variance_threshold" => self.nmf_variance_threshold = parse(key, v)?,
            "features.layout" => self.layout = FeatureLayout::parse(v)?,
            "mask.beta" => self.mask_beta = parse(key, v)?,
            "fnn.hidden" => self.train.hidden = parse_hidden(v)?,
            "fnn.batch_size" => self.train.batch_size = parse(key, v)?,
            "fnn.learning_rate" => self.train.learning_rate = parse(key, v)?,
            "fnn.dropout" => self.train.dropout = parse(key, v)?,
            "fnn.patience" => self.train.patience = parse(key, v)?,
            "fnn.improvement" => self.train.improvement = parse(key, v)?,
            "fnn.max_epochs" => self.train.max_epochs = parse(key, v)?,
            "fnn.loss" => self.train.loss = v.parse::<LossKind>()?,
            "fnn.val_fraction" => self.val_fraction = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown configuration key '{key}'"))),
        }
        Ok(())
    }

    /// Applies `key=value` (the form used by `--set`).
    pub fn apply_override(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got '{assignment}'")))?;
        self.set(k.trim(), v)
    }

    /// Applies every assignment in `text` on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            self.apply_override(line)
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.jobs == 0 {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        if self.mix_repeats == 0 {
            return Err(Error::Config("mix.repeats must be at least 1".into()));
        }
        if self.nmf_k == 0 {
            return Err(Error::Config("nmf.k must be at least 1".into()));
        }
        if !(self.mask_beta > 0.0 && self.mask_beta.is_finite()) {
            return Err(Error::Config("mask.beta must be positive".into()));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Config("fnn.val_fraction must be in (0, 1)".into()));
        }
        self.mix_snr.validate()?;
        self.classical()?.validate()?;
        self.training().validate()
    }

    pub fn frame(&self) -> Result<FrameConfig> {
        FrameConfig::new(self.frame_len, self.hop, Window::SqrtHann, self.fft_size)
    }

    pub fn classical(&self) -> Result<ClassicalConfig> {
        Ok(ClassicalConfig {
            frame: self.frame()?,
            dd_alpha: self.dd_alpha,
            tracker: NoiseTrackerState::new(self.noise_smoothing, self.noise_init_samples)?,
            subspace: self.subspace,
        })
    }

    pub fn mix_spec(&self) -> MixSpec {
        MixSpec { snr: self.mix_snr, repeats: self.mix_repeats, seed: self.seed }
    }

    /// Network training settings with the experiment seed.
    pub fn training(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train.clone() }
    }

    /// Canonical text form; parsing it yields an equal configuration.
    pub fn to_text(&self) -> String {
        let t = &self.train;
        let hidden = t.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(",");
        let values: [String; 31] = [
            self.seed.to_string(),
            self.jobs.to_string(),
            self.wav_format.name().into(),
            self.method.clone(),
            self.mix_snr.to_string(),
            self.mix_repeats.to_string(),
            self.frame_len.to_string(),
            self.hop.to_string(),
            self.fft_size.to_string(),
            format!("{:?}", self.dd_alpha),
            format!("{:?}", self.noise_smoothing),
            self.noise_init_samples.to_string(),
            self.subspace.dim.to_string(),
            self.subspace.segment.to_string(),
            format!("{:?}", self.subspace.epsilon),
            self.nmf_k.to_string(),
            format!("{:?}", self.nmf.alpha),
            self.nmf.max_iter.to_string(),
            format!("{:?}", self.nmf.tol),
            format!("{:?}", self.nmf_variance_threshold),
            self.layout.to_string(),
            format!("{:?}", self.mask_beta),
            hidden,
            t.batch_size.to_string(),
            format!("{:?}", t.learning_rate),
            format!("{:?}", t.dropout),
            t.patience.to_string(),
            format!("{:?}", t.improvement),
            t.max_epochs.to_string(),
            t.loss.name().into(),
            format!("{:?}", self.val_fraction),
        ];
        let mut s = String::new();
        for (k, v) in KEYS.iter().zip(values) {
            writeln!(s, "{k} = {v}").unwrap();
        }
        s
    }
}
