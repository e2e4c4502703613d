//! Noisy mixture construction.
//!
//! Noise is scaled so that the SNR measured over the speech-active region
//! (the utterance with its leading and trailing silence removed) equals the
//! requested value. Noise segments are cut from a longer noise recording at a
//! uniformly drawn start index, wrapping around to the beginning when the
//! segment runs past the end.

use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::ops::Range;

use rand::Rng as _;
use rayon::prelude::*;

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};
use crate::rng;

/// Frames quieter than the loudest frame by more than this are silence.
pub const ACTIVE_THRESHOLD_DB: f64 = 40.0;
const ACTIVE_FRAME_MS: f64 = 20.0;
const ACTIVE_HOP_MS: f64 = 10.0;

/// Returns the speech-active sample range `[start, end)`.
///
/// The signal is cut into 20 ms frames every 10 ms (the last frame may be
/// shorter). The region runs from the start of the first frame to the end of
/// the last frame whose RMS lies within `threshold_db` of the loudest frame.
pub fn active_region(speech: &AudioBuffer, threshold_db: f64) -> Result<Range<usize>> {
    if speech.is_empty() {
        return Err(Error::EmptyInput("speech signal is empty".into()));
    }
    let fs = speech.sample_rate() as f64;
    let frame_len = ((ACTIVE_FRAME_MS * fs / 1000.0).round() as usize).max(1);
    let hop = ((ACTIVE_HOP_MS * fs / 1000.0).round() as usize).max(1);
    let x = speech.samples();
    let len = x.len();
    let n_frames = if len <= frame_len {
        1
    } else {
        (len - frame_len).div_ceil(hop) + 1
    };
    let rms: Vec<f64> = (0..n_frames)
        .map(|m| {
            let seg = &x[m * hop..(m * hop + frame_len).min(len)];
            (seg.iter().map(|v| v * v).sum::<f64>() / seg.len() as f64).sqrt()
        })
        .collect();
    let peak = rms.iter().copied().fold(0.0, f64::max);
    if peak <= 0.0 {
        return Err(Error::NoActiveRegion);
    }
    let floor = peak * 10f64.powf(-threshold_db / 20.0);
    let first = rms.iter().position(|&r| r > floor).ok_or(Error::NoActiveRegion)?;
    let last = rms.iter().rposition(|&r| r > floor).ok_or(Error::NoActiveRegion)?;
    Ok(first * hop..(last * hop + frame_len).min(len))
}

/// Where a mixture's randomness came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Provenance {
    pub seed: u64,
    pub stream: u64,
    pub noise_start: usize,
    pub requested_snr_db: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisyMixture {
    pub mixture: AudioBuffer,
    pub clean: AudioBuffer,
    pub scaled_noise: AudioBuffer,
    pub achieved_snr_db: f64,
    pub noise_scale: f64,
    pub active: Range<usize>,
    pub provenance: Provenance,
    pub speaker: String,
    pub utterance: String,
    pub noise: String,
}

fn mean_square(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// Scales `noise` so that the active-region SNR of `speech + noise` is `snr_db`.
pub fn mix_at_snr(speech: &AudioBuffer, noise: &AudioBuffer, snr_db: f64) -> Result<NoisyMixture> {
    speech.check_compatible(noise)?;
    let active = active_region(speech, ACTIVE_THRESHOLD_DB)?;
    let p_speech = mean_square(&speech.samples()[active.clone()]);
    let p_noise = mean_square(&noise.samples()[active.clone()]);
    if p_noise <= 0.0 || !p_noise.is_finite() {
        return Err(Error::InvalidNoise(
            "noise has zero power over the speech-active region".into(),
        ));
    }
    let scale = (p_speech / (p_noise * 10f64.powf(snr_db / 10.0))).sqrt();
    let scaled_noise = noise.scaled(scale);
    let mixture = speech.add(&scaled_noise)?;
    let achieved = 10.0 * (p_speech / mean_square(&scaled_noise.samples()[active.clone()])).log10();
    Ok(NoisyMixture {
        mixture,
        clean: speech.clone(),
        scaled_noise,
        achieved_snr_db: achieved,
        noise_scale: scale,
        active,
        provenance: Provenance {
            requested_snr_db: snr_db,
            ..Provenance::default()
        },
        speaker: String::new(),
        utterance: String::new(),
        noise: String::new(),
    })
}

/// `length` samples of `noise` starting at `start`, wrapping to index 0.
pub fn noise_segment(noise: &AudioBuffer, start: usize, length: usize) -> Result<AudioBuffer> {
    if noise.is_empty() {
        return Err(Error::EmptyInput("noise signal is empty".into()));
    }
    let x = noise.samples();
    let samples = (0..length).map(|i| x[(start + i) % x.len()]).collect();
    AudioBuffer::new(samples, noise.sample_rate())
}

/// Draws a start index uniformly from `[0, len(noise) - 1]` and cuts a segment.
pub fn draw_noise_segment(
    noise: &AudioBuffer,
    length: usize,
    rng: &mut rng::Rng,
) -> Result<(AudioBuffer, usize)> {
    if noise.is_empty() {
        return Err(Error::EmptyInput("noise signal is empty".into()));
    }
    let start = rng.random_range(0..noise.len());
    Ok((noise_segment(noise, start, length)?, start))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SnrSpec {
    Fixed(f64),
    /// Integer dB values drawn uniformly from the inclusive range.
    Range(f64, f64),
}

impl SnrSpec {
    pub fn draw(&self, rng: &mut rng::Rng) -> f64 {
        match *self {
            SnrSpec::Fixed(v) => v,
            SnrSpec::Range(lo, hi) => {
                let (lo, hi) = (lo.ceil() as i64, hi.floor() as i64);
                rng.random_range(lo..=hi) as f64
            }
        }
    }

    /// Parses `-5` or `-5:0`.
    pub fn parse(s: &str) -> Result<Self> {
        let num = |t: &str| {
            t.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("invalid SNR '{t}'")))
        };
        let spec = match s.split_once(':') {
            Some((lo, hi)) => SnrSpec::Range(num(lo)?, num(hi)?),
            None => SnrSpec::Fixed(num(s)?),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SnrSpec::Fixed(v) if v.is_finite() => Ok(()),
            SnrSpec::Range(lo, hi) if lo.is_finite() && hi.is_finite() && lo.ceil() <= hi.floor() => {
                Ok(())
            }
            other => Err(Error::Config(format!("invalid SNR specification {other:?}"))),
        }
    }
}

impl std::fmt::Display for SnrSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SnrSpec::Fixed(v) => write!(f, "{v}"),
            SnrSpec::Range(lo, hi) => write!(f, "{lo}:{hi}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixSpec {
    pub snr: SnrSpec,
    pub repeats: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub speaker: String,
    pub id: String,
    pub audio: AudioBuffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSource {
    pub id: String,
    pub audio: AudioBuffer,
}

/// `#speakers x #utterances x #repetitions`.
pub fn dataset_size(speakers: usize, utterances_per_speaker: usize, repeats: usize) -> usize {
    speakers * utterances_per_speaker * repeats
}

/// Mixes every utterance `spec.repeats` times with fresh noise and SNR draws.
///
/// Utterances and noises are normalised to unit RMS over the whole file. The
/// noise pool is concatenated into one sequence, so a multi-noise pool yields
/// mixtures of every noise type in proportion to its length. Mixture `i`
/// (`i = utterance_index * repeats + repeat`) uses ChaCha stream `i` of
/// `spec.seed`, so the result does not depend on thread scheduling.
pub fn build_dataset(
    utterances: &[Utterance],
    noise_pool: &[NoiseSource],
    spec: &MixSpec,
) -> Result<Vec<NoisyMixture>> {
    if utterances.is_empty() {
        return Err(Error::EmptyInput("no utterances".into()));
    }
    if noise_pool.is_empty() || noise_pool.iter().all(|n| n.audio.is_empty()) {
        return Err(Error::EmptyInput("no noise".into()));
    }
    if spec.repeats == 0 {
        return Err(Error::Config("repeats must be at least 1".into()));
    }
    spec.snr.validate()?;
    let rate = noise_pool[0].audio.sample_rate();
    let mut noise = Vec::new();
    for n in noise_pool {
        if n.audio.sample_rate() != rate {
            return Err(Error::SampleRate {
                expected: rate,
                actual: n.audio.sample_rate(),
            });
        }
        noise.extend_from_slice(n.audio.normalized_rms().samples());
    }
    let noise = AudioBuffer::new(noise, rate)?;
    let noise_id = noise_pool
        .iter()
        .map(|n| n.id.as_str())
        .collect::<Vec<_>>()
        .join("+");
    let clean: Vec<AudioBuffer> = utterances.iter().map(|u| u.audio.normalized_rms()).collect();

    (0..utterances.len() * spec.repeats)
        .into_par_iter()
        .map(|i| {
            let u = i / spec.repeats;
            let mut rng = rng::stream(spec.seed, i as u64);
            let snr = spec.snr.draw(&mut rng);
            let (segment, start) = draw_noise_segment(&noise, clean[u].len(), &mut rng)?;
            let mut mix = mix_at_snr(&clean[u], &segment, snr)?;
            mix.provenance = Provenance {
                seed: spec.seed,
                stream: i as u64,
                noise_start: start,
                requested_snr_db: snr,
            };
            mix.speaker = utterances[u].speaker.clone();
            mix.utterance = utterances[u].id.clone();
            mix.noise = noise_id.clone();
            Ok(mix)
        })
        .collect()
}

pub const MANIFEST_MAGIC: &str = "# senhance-manifest v1";
pub const MANIFEST_COLUMNS: [&str; 12] = [
    "index",
    "speaker",
    "utterance",
    "noise",
    "seed",
    "stream",
    "noise_start",
    "snr_requested_db",
    "snr_achieved_db",
    "mixture",
    "clean",
    "noise_component",
];

/// One line of a dataset manifest.
///
/// Manifests are UTF-8 text: a magic comment line, a tab-separated header with
/// [`MANIFEST_COLUMNS`], then one tab-separated row per mixture. Paths are
/// relative to the manifest's directory. The achieved SNR is printed with six
/// decimals; everything else is printed exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    pub index: usize,
    pub speaker: String,
    pub utterance: String,
    pub noise: String,
    pub seed: u64,
    pub stream: u64,
    pub noise_start: usize,
    pub snr_requested_db: f64,
    pub snr_achieved_db: f64,
    pub mixture: String,
    pub clean: String,
    pub noise_component: String,
}

impl ManifestRow {
    pub fn from_mixture(index: usize, mix: &NoisyMixture, paths: [String; 3]) -> Self {
        let [mixture, clean, noise_component] = paths;
        ManifestRow {
            index,
            speaker: mix.speaker.clone(),
            utterance: mix.utterance.clone(),
            noise: mix.noise.clone(),
            seed: mix.provenance.seed,
            stream: mix.provenance.stream,
            noise_start: mix.provenance.noise_start,
            snr_requested_db: mix.provenance.requested_snr_db,
            snr_achieved_db: mix.achieved_snr_db,
            mixture,
            clean,
            noise_component,
        }
    }
}

fn check_field(s: &str) -> Result<&str> {
    if s.contains(['\t', '\n', '\r']) {
        Err(Error::InvalidData(format!("manifest field contains a tab or newline: {s:?}")))
    } else {
        Ok(s)
    }
}

pub fn write_manifest<W: Write>(rows: &[ManifestRow], mut out: W) -> Result<()> {
    let mut text = String::new();
    writeln!(text, "{MANIFEST_MAGIC}").unwrap();
    writeln!(text, "{}", MANIFEST_COLUMNS.join("\t")).unwrap();
    for r in rows {
        writeln!(
            text,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.6}\t{}\t{}\t{}",
            r.index,
            check_field(&r.speaker)?,
            check_field(&r.utterance)?,
            check_field(&r.noise)?,
            r.seed,
            r.stream,
            r.noise_start,
            r.snr_requested_db,
            r.snr_achieved_db,
            check_field(&r.mixture)?,
            check_field(&r.clean)?,
            check_field(&r.noise_component)?,
        )
        .unwrap();
    }
    out.write_all(text.as_bytes())?;
    Ok(())
}

pub fn read_manifest<R: BufRead>(input: R) -> Result<Vec<ManifestRow>> {
    let mut lines = input.lines();
    let bad = |msg: String| Error::InvalidData(format!("manifest: {msg}"));
    match lines.next() {
        Some(Ok(l)) if l.trim_end() == MANIFEST_MAGIC => {}
        _ => return Err(bad("missing magic line".into())),
    }
    match lines.next() {
        Some(Ok(l)) if l.trim_end() == MANIFEST_COLUMNS.join("\t") => {}
        _ => return Err(bad("missing or unexpected header".into())),
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != MANIFEST_COLUMNS.len() {
            return Err(bad(format!("line {}: expected {} fields", lineno + 3, MANIFEST_COLUMNS.len())));
        }
        let num = |i: usize| -> Result<f64> {
            f[i].parse().map_err(|_| bad(format!("line {}: bad number '{}'", lineno + 3, f[i])))
        };
        let int = |i: usize| -> Result<u64> {
            f[i].parse().map_err(|_| bad(format!("line {}: bad integer '{}'", lineno + 3, f[i])))
        };
        rows.push(ManifestRow {
            index: int(0)? as usize,
            speaker: f[1].to_string(),
            utterance: f[2].to_string(),
            noise: f[3].to_string(),
            seed: int(4)?,
            stream: int(5)?,
            noise_start: int(6)? as usize,
            snr_requested_db: num(7)?,
            snr_achieved_db: num(8)?,
            mixture: f[9].to_string(),
            clean: f[10].to_string(),
            noise_component: f[11].to_string(),
        });
    }
    Ok(rows)
}
