//! Objective evaluation: SNR measures, binary-mask accuracy, log-spectral
//! distance and an envelope-correlation intelligibility proxy.
//!
//! The proxy is *not* STOI and its values are not comparable to published
//! STOI scores; it only tracks whether sub-band envelopes of the processed
//! signal follow those of the clean reference.

use std::fmt::Write as _;
use std::io::Write;

use ndarray::{Array2, Zip};

use crate::audio::AudioBuffer;
use crate::cochlea::{self, GammatoneBank};
use crate::error::{ensure_shape, Error, Result};
use crate::masks::{self, Mask, MaskDomain};
use crate::signal::{stft, FrameConfig, Window};

/// Reported in place of +inf for a perfect reconstruction.
pub const SNR_CAP_DB: f64 = 99.0;
pub const SEG_SNR_MIN_DB: f64 = -10.0;
pub const SEG_SNR_MAX_DB: f64 = 35.0;
/// Frames more than this far below the loudest reference frame are skipped.
pub const SEG_ACTIVE_RANGE_DB: f64 = 40.0;
pub const LSD_FLOOR: f64 = 1e-10;
/// Envelope segment length in 10 ms frames.
pub const ENVELOPE_SEGMENT: usize = 30;

fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn check_lengths(a: &AudioBuffer, b: &AudioBuffer) -> Result<()> {
    a.check_compatible(b)
}

/// `10 log10(sum ref^2 / sum (ref - test)^2)`, capped at [`SNR_CAP_DB`].
pub fn global_snr(reference: &AudioBuffer, test: &AudioBuffer) -> Result<f64> {
    check_lengths(reference, test)?;
    let s = reference.energy();
    if s == 0.0 {
        return Err(Error::InvalidData("reference signal is all zero".into()));
    }
    let e: f64 = reference.samples().iter().zip(test.samples()).map(|(r, t)| (r - t) * (r - t)).sum();
    Ok(if e == 0.0 { SNR_CAP_DB } else { (10.0 * (s / e).log10()).min(SNR_CAP_DB) })
}

/// Mean per-frame SNR, each clamped to `[-10, 35]` dB, over frames whose
/// reference energy is within 40 dB of the loudest frame.
pub fn segmental_snr(reference: &AudioBuffer, test: &AudioBuffer, cfg: &FrameConfig) -> Result<f64> {
    check_lengths(reference, test)?;
    let m = cfg.num_frames(reference.len());
    if m == 0 {
        return Err(Error::EmptyInput("signal shorter than one frame".into()));
    }
    let (r, t) = (reference.samples(), test.samples());
    let frames: Vec<(f64, f64)> = (0..m)
        .map(|j| {
            let span = j * cfg.hop..j * cfg.hop + cfg.frame_len;
            let s = energy(&r[span.clone()]);
            let e: f64 = r[span.clone()].iter().zip(&t[span]).map(|(a, b)| (a - b) * (a - b)).sum();
            (s, e)
        })
        .collect();
    let peak = frames.iter().fold(0.0f64, |p, f| p.max(f.0));
    if peak == 0.0 {
        return Err(Error::NoActiveRegion);
    }
    let floor = peak * 10f64.powf(-SEG_ACTIVE_RANGE_DB / 10.0);
    let per_frame: Vec<f64> = frames
        .iter()
        .filter(|(s, _)| *s > 0.0 && *s >= floor)
        .map(|&(s, e)| {
            let snr = if e == 0.0 { SEG_SNR_MAX_DB } else { 10.0 * (s / e).log10() };
            snr.clamp(SEG_SNR_MIN_DB, SEG_SNR_MAX_DB)
        })
        .collect();
    Ok(per_frame.iter().sum::<f64>() / per_frame.len() as f64)
}

/// Hit and false-alarm rates of a binary mask against the ideal binary mask.
/// A rate is `None` when its conditioning class is empty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HitFa {
    pub hit: Option<f64>,
    pub fa: Option<f64>,
}

impl HitFa {
    pub fn hit_minus_fa(&self) -> Option<f64> {
        Some(self.hit? - self.fa?)
    }
}

pub fn hit_fa(estimate: &Mask, ibm: &Mask) -> Result<HitFa> {
    ensure_shape("binary mask", ibm.dim(), estimate.dim())?;
    let mut counts = [[0usize; 2]; 2]; // [ibm][est]
    for (&e, &i) in estimate.grid().iter().zip(ibm.grid().iter()) {
        let bin = |v: f64| -> Result<usize> {
            match v {
                0.0 => Ok(0),
                1.0 => Ok(1),
                _ => Err(Error::InvalidData(format!("mask value {v} is not binary"))),
            }
        };
        counts[bin(i)?][bin(e)?] += 1;
    }
    let rate = |row: [usize; 2]| {
        let n = row[0] + row[1];
        (n > 0).then(|| row[1] as f64 / n as f64)
    };
    Ok(HitFa { hit: rate(counts[1]), fa: rate(counts[0]) })
}

/// RMS over cells of `20 log10((ref + f) / (test + f))`, `f = 1e-10`.
pub fn log_spectral_distance(reference: &Array2<f64>, test: &Array2<f64>) -> Result<f64> {
    ensure_shape("log-spectral distance", reference.dim(), test.dim())?;
    if reference.is_empty() {
        return Err(Error::EmptyInput("empty spectra".into()));
    }
    let mut s = 0.0;
    Zip::from(reference).and(test).for_each(|&r, &t| {
        let d = 20.0 * ((r + LSD_FLOOR).log10() - (t + LSD_FLOOR).log10());
        s += d * d;
    });
    Ok((s / reference.len() as f64).sqrt())
}

/// Envelope-correlation proxy.
///
/// Sub-band envelopes are square roots of gammatone unit energies. For every
/// channel and every 30-frame window (hop 1 frame), both envelope segments
/// are made zero-mean and unit-norm and their inner product is taken; the
/// score is the mean over all windows with a non-constant clean segment
/// (a constant processed segment counts as 0).
pub fn envelope_correlation(clean: &AudioBuffer, processed: &AudioBuffer, bank: &GammatoneBank) -> Result<f64> {
    check_lengths(clean, processed)?;
    let cfg = cochlea::unit_config(clean.sample_rate());
    let ex = cochlea::unit_energy(&cochlea::analyze(clean, bank, &cfg)?).mapv(f64::sqrt);
    let ey = cochlea::unit_energy(&cochlea::analyze(processed, bank, &cfg)?).mapv(f64::sqrt);
    envelope_correlation_from(&ex, &ey)
}

/// [`envelope_correlation`] on precomputed `channels x frames` envelopes.
pub fn envelope_correlation_from(clean_env: &Array2<f64>, processed_env: &Array2<f64>) -> Result<f64> {
    ensure_shape("envelopes", clean_env.dim(), processed_env.dim())?;
    let (nc, m) = clean_env.dim();
    if m < ENVELOPE_SEGMENT {
        return Err(Error::EmptyInput(format!(
            "need at least {ENVELOPE_SEGMENT} frames for one envelope segment, got {m}"
        )));
    }
    let normalise = |seg: ndarray::ArrayView1<f64>| {
        let mean = seg.sum() / seg.len() as f64;
        let c = seg.mapv(|v| v - mean);
        let norm = c.dot(&c).sqrt();
        // relative test so rounding noise on a constant segment is not amplified
        let scale = seg.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        (norm > 1e-12 * scale.max(f64::MIN_POSITIVE) && norm > 0.0).then(|| c / norm)
    };
    let (mut total, mut count) = (0.0, 0usize);
    for ch in 0..nc {
        for start in 0..=m - ENVELOPE_SEGMENT {
            let span = ndarray::s![ch, start..start + ENVELOPE_SEGMENT];
            let Some(x) = normalise(clean_env.slice(span)) else { continue };
            total += normalise(processed_env.slice(span)).map_or(0.0, |y| x.dot(&y));
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::NoActiveRegion);
    }
    Ok(total / count as f64)
}

/// Per-file metrics plus condition tags.
#[derive(Debug, Clone, PartialEq)]
pub struct FileMetrics {
    pub id: String,
    pub noise: String,
    pub snr_db: String,
    pub method: String,
    pub snr_in: f64,
    pub snr_out: f64,
    pub seg_snr: f64,
    pub lsd: f64,
    pub hit_fa: HitFa,
    pub env_corr: f64,
}

impl FileMetrics {
    pub fn delta_snr(&self) -> f64 {
        self.snr_out - self.snr_in
    }
}

/// Condition tags attached to a report row.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Tags {
    pub id: String,
    pub noise: String,
    pub snr_db: String,
    pub method: String,
}

/// Computes every metric for one processed file.
///
/// The estimated binary mask for HIT/FA is the effective gain of the
/// processing, `sqrt(E_processed / E_noisy)` per gammatone unit, thresholded
/// at 0.5; the reference is the 0 dB local-criterion IBM of clean vs
/// `noisy - clean`.
pub fn evaluate_file(
    clean: &AudioBuffer,
    noisy: &AudioBuffer,
    processed: &AudioBuffer,
    bank: &GammatoneBank,
    tags: Tags,
) -> Result<FileMetrics> {
    check_lengths(clean, noisy)?;
    check_lengths(clean, processed)?;
    let sr = clean.sample_rate();
    let speech = FrameConfig::speech(sr);
    let snr_in = global_snr(clean, noisy)?;
    let snr_out = global_snr(clean, processed)?;
    let seg_snr = segmental_snr(clean, processed, &speech.with_window(Window::Rectangular))?;
    let lsd = log_spectral_distance(&stft(clean, &speech)?.magnitude(), &stft(processed, &speech)?.magnitude())?;

    let units = cochlea::unit_config(sr);
    let noise = noisy.sub(clean)?;
    let ex = cochlea::unit_energy(&cochlea::analyze(clean, bank, &units)?);
    let ev = cochlea::unit_energy(&cochlea::analyze(&noise, bank, &units)?);
    let ey = cochlea::unit_energy(&cochlea::analyze(noisy, bank, &units)?);
    let ep = cochlea::unit_energy(&cochlea::analyze(processed, bank, &units)?);
    let ibm = masks::ibm(&ex.mapv(f64::sqrt), &ev.mapv(f64::sqrt), &vec![masks::DEFAULT_IBM_THRESHOLD; ex.nrows()], MaskDomain::Gammatone)?;
    let gain = Zip::from(&ep).and(&ey).map_collect(|&p, &y| if y > 0.0 { (p / y).sqrt() } else { 0.0 });
    let est = Mask::new(gain, MaskDomain::Gammatone, (0.0, f64::INFINITY))?.binarize(0.5);
    let hf = hit_fa(&est, &ibm)?;
    let env_corr = envelope_correlation_from(&ex.mapv(f64::sqrt), &ep.mapv(f64::sqrt))?;
    Ok(FileMetrics {
        id: tags.id,
        noise: tags.noise,
        snr_db: tags.snr_db,
        method: tags.method,
        snr_in,
        snr_out,
        seg_snr,
        lsd,
        hit_fa: hf,
        env_corr,
    })
}

pub const REPORT_MAGIC: &str = "# senhance-report v1";
pub const REPORT_COLUMNS: [&str; 13] = [
    "id", "noise", "snr_db", "method", "snr_in_db", "snr_out_db", "delta_snr_db", "seg_snr_db", "lsd_db",
    "hit", "fa", "hit_minus_fa", "env_corr",
];

/// Tab-separated report: one row per file followed by an aggregate block of
/// column means (undefined HIT/FA entries, written `NA`, are skipped).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<FileMetrics>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"))
}

impl EvalReport {
    pub fn means(&self) -> Vec<(&'static str, Option<f64>)> {
        let mean = |f: &dyn Fn(&FileMetrics) -> Option<f64>| {
            let vals: Vec<f64> = self.rows.iter().filter_map(f).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        vec![
            ("snr_in_db", mean(&|r| Some(r.snr_in))),
            ("snr_out_db", mean(&|r| Some(r.snr_out))),
            ("delta_snr_db", mean(&|r| Some(r.delta_snr()))),
            ("seg_snr_db", mean(&|r| Some(r.seg_snr))),
            ("lsd_db", mean(&|r| Some(r.lsd))),
            ("hit", mean(&|r| r.hit_fa.hit)),
            ("fa", mean(&|r| r.hit_fa.fa)),
            ("hit_minus_fa", mean(&|r| r.hit_fa.hit_minus_fa())),
            ("env_corr", mean(&|r| Some(r.env_corr))),
        ]
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{REPORT_MAGIC}").unwrap();
        writeln!(s, "{}", REPORT_COLUMNS.join("\t")).unwrap();
        for r in &self.rows {
            writeln!(
                s,
                "{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\t{}\t{:.6}",
                r.id,
                r.noise,
                r.snr_db,
                r.method,
                r.snr_in,
                r.snr_out,
                r.delta_snr(),
                r.seg_snr,
                r.lsd,
                fmt_opt(r.hit_fa.hit),
                fmt_opt(r.hit_fa.fa),
                fmt_opt(r.hit_fa.hit_minus_fa()),
                r.env_corr
            )
            .unwrap();
        }
        writeln!(s, "# aggregate\tfiles={}", self.rows.len()).unwrap();
        for (name, v) in self.means() {
            writeln!(s, "# mean\t{name}\t{}", fmt_opt(v)).unwrap();
        }
        s
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_tsv().as_bytes())?;
        Ok(())
    }
}
