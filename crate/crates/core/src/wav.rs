//! WAV input/output (RIFF PCM16 and IEEE float32).

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

/// The only rate the toolkit processes.
pub const SAMPLE_RATE: u32 = 16000;
const PCM16_SCALE: f64 = 32768.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WavFormat {
    Pcm16,
    #[default]
    Float32,
}

impl WavFormat {
    pub fn name(&self) -> &'static str {
        match self {
            WavFormat::Pcm16 => "pcm16",
            WavFormat::Float32 => "float32",
        }
    }
}

impl FromStr for WavFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pcm16" => Ok(WavFormat::Pcm16),
            "float32" => Ok(WavFormat::Float32),
            _ => Err(Error::Config(format!("unknown wav format '{s}' (pcm16|float32)"))),
        }
    }
}

/// Reads a 16 kHz PCM16 or float32 file; multichannel input is averaged to mono.
pub fn read_wav(path: &Path) -> Result<AudioBuffer> {
    let mut reader = WavReader::open(path)?;
    let spec = reader.spec();
    if spec.sample_rate != SAMPLE_RATE {
        return Err(Error::Unsupported(format!(
            "{}: sample rate is {} Hz; resample to {SAMPLE_RATE} Hz first",
            path.display(),
            spec.sample_rate
        )));
    }
    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .samples::<i16>()
            .map(|s| s.map(|v| v as f64 / PCM16_SCALE))
            .collect::<std::result::Result<_, _>>()?,
        (SampleFormat::Float, 32) => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<std::result::Result<_, _>>()?,
        (fmt, bits) => {
            return Err(Error::Unsupported(format!(
                "{}: {bits}-bit {fmt:?} samples (need 16-bit PCM or 32-bit float)",
                path.display()
            )))
        }
    };
    let ch = spec.channels as usize;
    if ch == 0 {
        return Err(Error::Unsupported(format!("{}: zero channels", path.display())));
    }
    let samples = if ch == 1 {
        interleaved
    } else {
        interleaved.chunks_exact(ch).map(|f| f.iter().sum::<f64>() / ch as f64).collect()
    };
    AudioBuffer::new(samples, SAMPLE_RATE)
}

fn temp_sibling(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(format!(".tmp{}", std::process::id()));
    path.with_file_name(name)
}

/// Writes `tmp` via `fill`, then renames it over `path`.
pub(crate) fn write_atomic(path: &Path, fill: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let tmp = temp_sibling(path);
    match fill(&tmp).and_then(|_| fs::rename(&tmp, path).map_err(Error::from)) {
        Ok(()) => Ok(()),
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}

/// Writes a mono file. PCM16 stores `round(x * 32768)` and rejects samples
/// outside [-1, 1] instead of clipping them.
pub fn write_wav(buffer: &AudioBuffer, path: &Path, format: WavFormat) -> Result<()> {
    let (bits, sample_format) = match format {
        WavFormat::Pcm16 => (16, SampleFormat::Int),
        WavFormat::Float32 => (32, SampleFormat::Float),
    };
    let spec = WavSpec { channels: 1, sample_rate: buffer.sample_rate(), bits_per_sample: bits, sample_format };
    if format == WavFormat::Pcm16 {
        if let Some(v) = buffer.samples().iter().find(|v| v.abs() > 1.0) {
            return Err(Error::InvalidData(format!(
                "{}: sample {v} outside [-1, 1]; write float32 or rescale",
                path.display()
            )));
        }
    }
    write_atomic(path, |tmp| {
        let mut w = WavWriter::new(BufWriter::new(fs::File::create(tmp)?), spec)?;
        match format {
            WavFormat::Pcm16 => {
                for &v in buffer.samples() {
                    w.write_sample((v * PCM16_SCALE).round().clamp(-32768.0, 32767.0) as i16)?;
                }
            }
            WavFormat::Float32 => {
                for &v in buffer.samples() {
                    w.write_sample(v as f32)?;
                }
            }
        }
        w.finalize()?;
        Ok(())
    })
}
