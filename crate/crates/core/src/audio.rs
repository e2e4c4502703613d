use crate::error::{Error, Result};

/// Mono sample sequence with its sample rate.
///
/// Samples are kept as `f64` regardless of the on-disk bit depth.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidData(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Result<Self> {
        Self::new(vec![0.0; len], sample_rate)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Sum of squared samples.
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|s| s * s).sum()
    }

    /// Mean-square power; zero for an empty buffer.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            self.energy() / self.samples.len() as f64
        }
    }

    pub fn rms(&self) -> f64 {
        self.power().sqrt()
    }

    pub fn scaled(&self, gain: f64) -> AudioBuffer {
        AudioBuffer {
            samples: self.samples.iter().map(|s| s * gain).collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Rescales to unit RMS over the whole buffer. Silent buffers are returned unchanged.
    pub fn normalized_rms(&self) -> AudioBuffer {
        let rms = self.rms();
        if rms > 0.0 {
            self.scaled(1.0 / rms)
        } else {
            self.clone()
        }
    }

    /// Copy truncated or zero-padded to `len` samples.
    pub fn resized(&self, len: usize) -> AudioBuffer {
        let mut samples = self.samples.clone();
        samples.resize(len, 0.0);
        AudioBuffer {
            samples,
            sample_rate: self.sample_rate,
        }
    }

    /// Samplewise sum; fails on rate or length mismatch.
    pub fn add(&self, other: &AudioBuffer) -> Result<AudioBuffer> {
        self.check_compatible(other)?;
        Ok(AudioBuffer {
            samples: self
                .samples
                .iter()
                .zip(&other.samples)
                .map(|(a, b)| a + b)
                .collect(),
            sample_rate: self.sample_rate,
        })
    }

    /// Samplewise difference `self - other`.
    pub fn sub(&self, other: &AudioBuffer) -> Result<AudioBuffer> {
        self.check_compatible(other)?;
        Ok(AudioBuffer {
            samples: self
                .samples
                .iter()
                .zip(&other.samples)
                .map(|(a, b)| a - b)
                .collect(),
            sample_rate: self.sample_rate,
        })
    }

    pub(crate) fn check_compatible(&self, other: &AudioBuffer) -> Result<()> {
        if self.sample_rate != other.sample_rate {
            return Err(Error::SampleRate {
                expected: self.sample_rate,
                actual: other.sample_rate,
            });
        }
        if self.len() != other.len() {
            return Err(Error::shape(
                "audio length",
                (self.len(), 1),
                (other.len(), 1),
            ));
        }
        Ok(())
    }
}
