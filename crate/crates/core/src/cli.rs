//! The `senhance` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error (bad flags, bad configuration,
//! missing input), 2 data error, 3 numerical failure. Every input path is
//! checked before anything is computed, and every output is computed before
//! anything is written, so a failing invocation leaves no partial outputs
//! behind (short of an I/O failure while writing).

use std::ffi::OsString;
use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::audio::AudioBuffer;
use crate::classical::{self, Method, Oracle};
use crate::cochlea::{self, GammatoneBank};
use crate::config::ExperimentConfig;
use crate::error::Error;
use crate::eval::{self, EvalReport, FileMetrics, Tags};
use crate::features::FeatureExtractor;
use crate::masks::{self, MaskDomain};
use crate::mixer::{self, ManifestRow, NoiseSource, NoisyMixture, Provenance, Utterance};
use crate::neural::{self, FnnModel};
use crate::nmf::{self, NmfModel};
use crate::pipeline;
use crate::rng;
use crate::wav::{self, write_atomic, SAMPLE_RATE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

pub const MANIFEST_NAME: &str = "manifest.tsv";

#[derive(Debug, Parser)]
#[command(name = "senhance", version, about = "Single-microphone speech enhancement toolkit")]
struct Cli {
    /// Flat key=value configuration file.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Configuration override, applied after --config (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed for every random draw.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for file-level parallelism; outputs do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a noisy corpus and its manifest.
    Mix(MixArgs),
    /// Train a mask-estimation network on a mixed corpus.
    TrainFnn(TrainFnnArgs),
    /// Train an NMF dictionary.
    TrainNmf(TrainNmfArgs),
    /// Enhance one file or every mixture of a manifest.
    Enhance(EnhanceArgs),
    /// Score enhanced files against their clean references.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
struct MixArgs {
    /// Speech directory: one subdirectory of WAVs per speaker, or WAVs directly.
    #[arg(long)]
    speech: PathBuf,
    /// Noise WAV (repeatable); all noises form one pool.
    #[arg(long, required = true)]
    noise: Vec<PathBuf>,
    /// Output directory for the manifest and WAVs.
    #[arg(long)]
    out: PathBuf,
    /// Fixed SNR in dB or an integer range `lo:hi`.
    #[arg(long, allow_hyphen_values = true)]
    snr: Option<String>,
    /// Mixtures per utterance.
    #[arg(long)]
    repeats: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainFnnArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// Output model file.
    #[arg(long)]
    out: PathBuf,
    /// mask_mse | signal_approx | psa
    #[arg(long)]
    loss: Option<String>,
    /// Hidden layer sizes, e.g. `64,64`.
    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    max_epochs: Option<usize>,
}

#[derive(Debug, Args)]
struct TrainNmfArgs {
    /// Training WAV (repeatable).
    #[arg(long)]
    input: Vec<PathBuf>,
    /// Train on one column of a manifest instead of (or in addition to) --input.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Manifest column to use: clean | noise.
    #[arg(long, default_value = "clean")]
    source: String,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Tag stored in the model (speaker or noise id).
    #[arg(long, default_value = "")]
    tag: String,
}

#[derive(Debug, Args)]
struct EnhanceArgs {
    /// specsub | wiener | mmse | subspace | nmf | fnn | irm
    #[arg(long)]
    method: Option<String>,
    /// Noisy input WAV (single-file mode).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Enhanced output WAV (single-file mode).
    #[arg(long)]
    output: Option<PathBuf>,
    /// Oracle clean sidecar (single-file mode).
    #[arg(long)]
    clean: Option<PathBuf>,
    /// Oracle noise sidecar (single-file mode).
    #[arg(long)]
    noise: Option<PathBuf>,
    /// Manifest to enhance (batch mode).
    #[arg(long, conflicts_with_all = ["input", "output", "clean", "noise"])]
    manifest: Option<PathBuf>,
    /// Output directory (batch mode).
    #[arg(long, requires = "manifest")]
    out_dir: Option<PathBuf>,
    /// Batch mode: pass the manifest's clean and noise files as oracle sidecars.
    #[arg(long, requires = "manifest")]
    oracle: bool,
    /// Network model for `fnn`.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Speech dictionary for `nmf`.
    #[arg(long)]
    speech_model: Option<PathBuf>,
    /// Noise dictionary for `nmf`.
    #[arg(long)]
    noise_model: Option<PathBuf>,
    /// Also write an evaluation report (needs a clean reference).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Manifest of the mixtures (batch mode).
    #[arg(long, requires_all = ["dir", "method"])]
    manifest: Option<PathBuf>,
    /// Directory written by `enhance --manifest`.
    #[arg(long)]
    dir: Option<PathBuf>,
    /// Method name used for the enhanced files.
    #[arg(long)]
    method: Option<String>,
    #[arg(long, conflicts_with = "manifest", requires_all = ["noisy", "processed"])]
    clean: Option<PathBuf>,
    #[arg(long)]
    noisy: Option<PathBuf>,
    #[arg(long)]
    processed: Option<PathBuf>,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure of a subcommand, classified by exit code.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Lib(e.into())
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(Failure::Usage(msg.into()))
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_USAGE,
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => EXIT_USAGE,
        Error::Numerical(_) | Error::StaleCache => EXIT_NUMERICAL,
        _ => EXIT_DATA,
    }
}

/// Runs the tool on `argv` (including the program name) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            EXIT_USAGE
        }
        Err(Failure::Lib(e)) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(cli: Cli) -> CliResult<()> {
    let mut cfg = match &cli.config {
        Some(p) => {
            require_file(p)?;
            let mut c = ExperimentConfig::default();
            c.apply_text(&fs::read_to_string(p)?)?;
            c
        }
        None => ExperimentConfig::default(),
    };
    for o in &cli.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    match &cli.command {
        Command::Mix(a) => {
            if let Some(s) = &a.snr {
                cfg.set("mix.snr", s)?;
            }
            if let Some(r) = a.repeats {
                cfg.mix_repeats = r;
            }
        }
        Command::TrainFnn(a) => {
            if let Some(l) = &a.loss {
                cfg.set("fnn.loss", l)?;
            }
            if let Some(h) = &a.hidden {
                cfg.set("fnn.hidden", h)?;
            }
            if let Some(m) = a.max_epochs {
                cfg.train.max_epochs = m;
            }
        }
        Command::TrainNmf(a) => {
            if let Some(k) = a.k {
                cfg.nmf_k = k;
            }
            if let Some(al) = a.alpha {
                cfg.nmf.alpha = al;
            }
        }
        Command::Enhance(a) => {
            if let Some(m) = &a.method {
                cfg.method = m.clone();
            }
        }
        Command::Evaluate(_) => {}
    }
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Failure::Usage(format!("cannot start {} worker threads: {e}", cfg.jobs)))?;
    pool.install(|| match &cli.command {
        Command::Mix(a) => cmd_mix(a, &cfg),
        Command::TrainFnn(a) => cmd_train_fnn(a, &cfg),
        Command::TrainNmf(a) => cmd_train_nmf(a, &cfg),
        Command::Enhance(a) => cmd_enhance(a, &cfg),
        Command::Evaluate(a) => cmd_evaluate(a),
    })
}

fn require_file(p: &Path) -> CliResult<()> {
    if p.is_file() {
        Ok(())
    } else {
        usage(format!("input file not found: {}", p.display()))
    }
}

fn require_dir(p: &Path) -> CliResult<()> {
    if p.is_dir() {
        Ok(())
    } else {
        usage(format!("input directory not found: {}", p.display()))
    }
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn is_wav(p: &Path) -> bool {
    p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("wav"))
}

fn sorted_entries(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut v = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<Vec<_>>>()?;
    v.sort();
    Ok(v)
}

/// `(speaker, utterance path)` pairs in a stable order.
fn discover_speech(dir: &Path) -> CliResult<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in sorted_entries(dir)? {
        if entry.is_dir() {
            let speaker = entry.file_name().unwrap().to_string_lossy().into_owned();
            for f in sorted_entries(&entry)? {
                if is_wav(&f) {
                    out.push((speaker.clone(), f));
                }
            }
        } else if is_wav(&entry) {
            out.push(("default".to_string(), entry));
        }
    }
    if out.is_empty() {
        return usage(format!("no WAV files under {}", dir.display()));
    }
    Ok(out)
}

fn create_parent(p: &Path) -> CliResult<()> {
    if let Some(parent) = p.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    create_parent(path)?;
    write_atomic(path, |tmp| {
        fs::write(tmp, text)?;
        Ok(())
    })?;
    Ok(())
}

fn cmd_mix(a: &MixArgs, cfg: &ExperimentConfig) -> CliResult<()> {
    require_dir(&a.speech)?;
    for n in &a.noise {
        require_file(n)?;
    }
    let speech = discover_speech(&a.speech)?;
    let utterances = speech
        .par_iter()
        .map(|(spk, p)| Ok(Utterance { speaker: spk.clone(), id: stem(p), audio: wav::read_wav(p)? }))
        .collect::<crate::Result<Vec<_>>>()?;
    let noises = a
        .noise
        .iter()
        .map(|p| Ok(NoiseSource { id: stem(p), audio: wav::read_wav(p)? }))
        .collect::<crate::Result<Vec<_>>>()?;
    let mixtures = mixer::build_dataset(&utterances, &noises, &cfg.mix_spec())?;

    let rows: Vec<ManifestRow> = mixtures
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let paths = ["mix", "clean", "noise"].map(|kind| format!("wav/{i:05}_{kind}.wav"));
            ManifestRow::from_mixture(i, m, paths)
        })
        .collect();
    let mut manifest = Vec::new();
    mixer::write_manifest(&rows, &mut manifest)?;

    fs::create_dir_all(a.out.join("wav"))?;
    rows.par_iter().zip(&mixtures).try_for_each(|(r, m)| -> crate::Result<()> {
        wav::write_wav(&m.mixture, &a.out.join(&r.mixture), cfg.wav_format)?;
        wav::write_wav(&m.clean, &a.out.join(&r.clean), cfg.wav_format)?;
        wav::write_wav(&m.scaled_noise, &a.out.join(&r.noise_component), cfg.wav_format)
    })?;
    write_text(&a.out.join(MANIFEST_NAME), std::str::from_utf8(&manifest).expect("manifest is UTF-8"))?;
    eprintln!("mixed {} files into {}", rows.len(), a.out.display());
    Ok(())
}

fn read_manifest_file(path: &Path) -> CliResult<(PathBuf, Vec<ManifestRow>)> {
    require_file(path)?;
    let rows = mixer::read_manifest(BufReader::new(fs::File::open(path)?))?;
    if rows.is_empty() {
        return Err(Error::EmptyInput(format!("{}: manifest has no rows", path.display())).into());
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    for r in &rows {
        for p in [&r.mixture, &r.clean, &r.noise_component] {
            require_file(&base.join(p))?;
        }
    }
    Ok((base, rows))
}

fn load_mixture(base: &Path, r: &ManifestRow) -> crate::Result<NoisyMixture> {
    let mixture = wav::read_wav(&base.join(&r.mixture))?;
    let clean = wav::read_wav(&base.join(&r.clean))?;
    let scaled_noise = wav::read_wav(&base.join(&r.noise_component))?;
    let active = mixer::active_region(&clean, mixer::ACTIVE_THRESHOLD_DB)?;
    Ok(NoisyMixture {
        mixture,
        clean,
        scaled_noise,
        achieved_snr_db: r.snr_achieved_db,
        noise_scale: f64::NAN,
        active,
        provenance: Provenance {
            seed: r.seed,
            stream: r.stream,
            noise_start: r.noise_start,
            requested_snr_db: r.snr_requested_db,
        },
        speaker: r.speaker.clone(),
        utterance: r.utterance.clone(),
        noise: r.noise.clone(),
    })
}

fn bank() -> crate::Result<GammatoneBank> {
    GammatoneBank::standard(SAMPLE_RATE)
}

fn cmd_train_fnn(a: &TrainFnnArgs, cfg: &ExperimentConfig) -> CliResult<()> {
    let (base, rows) = read_manifest_file(&a.manifest)?;
    if rows.len() < 2 {
        return Err(Error::EmptyInput("need at least two mixtures (training + validation)".into()).into());
    }
    let mixtures = rows.par_iter().map(|r| load_mixture(&base, r)).collect::<crate::Result<Vec<_>>>()?;

    // held-out validation mixtures, chosen by a seeded permutation
    let mut order: Vec<usize> = (0..mixtures.len()).collect();
    order.shuffle(&mut rng::stream(cfg.seed, 3));
    let n_val = ((mixtures.len() as f64 * cfg.val_fraction).round() as usize).clamp(1, mixtures.len() - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let pick = |idx: &[usize]| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| mixtures[i].clone()).collect::<Vec<_>>()
    };

    let extractor = FeatureExtractor::new(cfg.layout, bank()?)?;
    let tc = cfg.training();
    let train_set = pipeline::build_training_set(&pick(train_idx), &extractor, tc.loss, cfg.mask_beta)?;
    let val_set = pipeline::build_training_set(&pick(val_idx), &extractor, tc.loss, cfg.mask_beta)?;
    let (model, history) =
        neural::train(&train_set, &val_set, &tc, MaskDomain::Gammatone, Some(cfg.layout))?;

    let mut bytes = Vec::new();
    model.write_to(&mut bytes)?;
    create_parent(&a.out)?;
    write_atomic(&a.out, |tmp| Ok(fs::write(tmp, &bytes)?))?;
    eprintln!(
        "trained {} epochs ({} frames); best epoch {} val loss {:.6}{}",
        history.epochs.len(),
        train_set.frames(),
        history.best_epoch,
        history.best_val_loss,
        if history.early_stopped { ", early stop" } else { "" }
    );
    Ok(())
}

fn cmd_train_nmf(a: &TrainNmfArgs, cfg: &ExperimentConfig) -> CliResult<()> {
    for p in &a.input {
        require_file(p)?;
    }
    let mut paths = a.input.clone();
    if let Some(m) = &a.manifest {
        let (base, rows) = read_manifest_file(m)?;
        for r in rows {
            paths.push(base.join(match a.source.as_str() {
                "clean" => &r.clean,
                "noise" => &r.noise_component,
                other => return usage(format!("--source must be clean or noise, got '{other}'")),
            }));
        }
    }
    if paths.is_empty() {
        return usage("train-nmf needs --input or --manifest");
    }
    let signals = paths
        .par_iter()
        .map(|p| wav::read_wav(p).map(|s| s.normalized_rms()))
        .collect::<crate::Result<Vec<_>>>()?;
    let (model, trace) = nmf::train_model(
        &signals,
        &cfg.frame()?,
        cfg.nmf_k,
        &cfg.nmf,
        cfg.nmf_variance_threshold,
        &a.tag,
        &mut rng::stream(cfg.seed, 0),
    )?;
    let mut bytes = Vec::new();
    model.write_to(&mut bytes)?;
    create_parent(&a.out)?;
    write_atomic(&a.out, |tmp| Ok(fs::write(tmp, &bytes)?))?;
    eprintln!(
        "trained {}x{} dictionary in {} iterations (final cost {:.6e})",
        model.bins(),
        model.k(),
        trace.costs.len(),
        trace.costs.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

enum Enhancer {
    Classical(Method, classical::ClassicalConfig),
    Irm(GammatoneBank),
    Fnn(Box<FnnModel>, FeatureExtractor),
    Nmf { speech: NmfModel, noise: NmfModel, frame: crate::FrameConfig, opts: nmf::NmfOptions },
}

fn read_model<T>(path: &Path, read: impl FnOnce(BufReader<fs::File>) -> crate::Result<T>) -> CliResult<T> {
    require_file(path)?;
    Ok(read(BufReader::new(fs::File::open(path)?))?)
}

impl Enhancer {
    fn new(a: &EnhanceArgs, cfg: &ExperimentConfig) -> CliResult<Self> {
        let need = |p: &Option<PathBuf>, flag: &str| -> CliResult<PathBuf> {
            p.clone().ok_or_else(|| Failure::Usage(format!("method {} needs {flag}", cfg.method)))
        };
        Ok(match cfg.method.as_str() {
            "irm" => Enhancer::Irm(bank()?),
            "fnn" => {
                let model = read_model(&need(&a.model, "--model")?, FnnModel::read_from)?;
                let layout = model.layout.unwrap_or(cfg.layout);
                Enhancer::Fnn(Box::new(model), FeatureExtractor::new(layout, bank()?)?)
            }
            "nmf" => Enhancer::Nmf {
                speech: read_model(&need(&a.speech_model, "--speech-model")?, NmfModel::read_from)?,
                noise: read_model(&need(&a.noise_model, "--noise-model")?, NmfModel::read_from)?,
                frame: cfg.frame()?,
                opts: cfg.nmf,
            },
            name => match name.parse::<Method>() {
                Ok(m) => Enhancer::Classical(m, cfg.classical()?),
                Err(_) => {
                    return usage(format!(
                        "unknown method '{name}' (specsub, wiener, mmse, subspace, nmf, fnn, irm)"
                    ))
                }
            },
        })
    }

    fn needs_oracle(&self) -> bool {
        matches!(self, Enhancer::Irm(_))
    }

    fn run(&self, noisy: &AudioBuffer, oracle: &Oracle) -> crate::Result<AudioBuffer> {
        match self {
            Enhancer::Classical(m, c) => classical::enhance(*m, noisy, c, oracle),
            Enhancer::Irm(bank) => {
                let (clean, noise) = (oracle.clean.unwrap(), oracle.noise.unwrap());
                let units = cochlea::unit_config(noisy.sample_rate());
                let mask = masks::oracle_irm(clean, noise, bank, &units, masks::DEFAULT_BETA)?;
                masks::enhance_gammatone(noisy, &mask, bank, &units)
            }
            Enhancer::Fnn(model, ext) => pipeline::enhance_fnn(noisy, model, ext),
            Enhancer::Nmf { speech, noise, frame, opts } => nmf::enhance(noisy, speech, noise, frame, opts),
        }
    }
}

/// Fills in a missing oracle component as `noisy - other`.
fn complete_oracle(
    noisy: &AudioBuffer,
    clean: Option<AudioBuffer>,
    noise: Option<AudioBuffer>,
) -> crate::Result<(Option<AudioBuffer>, Option<AudioBuffer>)> {
    Ok(match (clean, noise) {
        (Some(c), None) => {
            let n = noisy.sub(&c)?;
            (Some(c), Some(n))
        }
        (None, Some(n)) => (Some(noisy.sub(&n)?), Some(n)),
        other => other,
    })
}

fn cmd_enhance(a: &EnhanceArgs, cfg: &ExperimentConfig) -> CliResult<()> {
    if a.manifest.is_some() {
        return enhance_batch(a, cfg);
    }
    let (Some(input), Some(output)) = (&a.input, &a.output) else {
        return usage("enhance needs --input and --output, or --manifest and --out-dir");
    };
    require_file(input)?;
    for p in [&a.clean, &a.noise].into_iter().flatten() {
        require_file(p)?;
    }
    let enhancer = Enhancer::new(a, cfg)?;
    let noisy = wav::read_wav(input)?;
    let clean = a.clean.as_deref().map(wav::read_wav).transpose()?;
    let noise = a.noise.as_deref().map(wav::read_wav).transpose()?;
    let (clean, noise) = complete_oracle(&noisy, clean, noise)?;
    if enhancer.needs_oracle() && clean.is_none() {
        return usage(format!("method {} needs --clean or --noise", cfg.method));
    }
    if a.report.is_some() && clean.is_none() {
        return usage("--report needs a clean reference (--clean or --noise)");
    }
    let oracle = Oracle { clean: clean.as_ref(), noise: noise.as_ref() };
    let out = enhancer.run(&noisy, &oracle)?;
    let report = match (&a.report, &clean) {
        (Some(_), Some(c)) => {
            let tags = Tags { id: stem(input), method: cfg.method.clone(), ..Tags::default() };
            Some(EvalReport { rows: vec![eval::evaluate_file(c, &noisy, &out, &bank()?, tags)?] })
        }
        _ => None,
    };
    create_parent(output)?;
    wav::write_wav(&out, output, cfg.wav_format)?;
    if let (Some(path), Some(rep)) = (&a.report, report) {
        write_text(path, &rep.to_tsv())?;
    }
    Ok(())
}

fn tags_for(r: &ManifestRow, method: &str) -> Tags {
    Tags {
        id: format!("{:05}", r.index),
        noise: r.noise.clone(),
        snr_db: r.snr_requested_db.to_string(),
        method: method.to_string(),
    }
}

/// Name of the enhanced file for manifest row `r`.
pub fn enhanced_name(r: &ManifestRow, method: &str) -> String {
    format!("{:05}_{method}.wav", r.index)
}

fn enhance_batch(a: &EnhanceArgs, cfg: &ExperimentConfig) -> CliResult<()> {
    let Some(out_dir) = &a.out_dir else {
        return usage("--manifest needs --out-dir");
    };
    let (base, rows) = read_manifest_file(a.manifest.as_ref().unwrap())?;
    let enhancer = Enhancer::new(a, cfg)?;
    if enhancer.needs_oracle() && !a.oracle {
        return usage(format!("method {} needs --oracle", cfg.method));
    }
    let bank = bank()?;
    let results = rows
        .par_iter()
        .map(|r| -> crate::Result<(AudioBuffer, Option<FileMetrics>)> {
            let m = load_mixture(&base, r)?;
            let oracle = if a.oracle {
                Oracle { clean: Some(&m.clean), noise: Some(&m.scaled_noise) }
            } else {
                Oracle::none()
            };
            let out = enhancer.run(&m.mixture, &oracle)?;
            let metrics = match a.report {
                Some(_) => Some(eval::evaluate_file(&m.clean, &m.mixture, &out, &bank, tags_for(r, &cfg.method))?),
                None => None,
            };
            Ok((out, metrics))
        })
        .collect::<crate::Result<Vec<_>>>()?;
    fs::create_dir_all(out_dir)?;
    rows.par_iter()
        .zip(&results)
        .try_for_each(|(r, (out, _))| wav::write_wav(out, &out_dir.join(enhanced_name(r, &cfg.method)), cfg.wav_format))?;
    if let Some(path) = &a.report {
        let rep = EvalReport { rows: results.into_iter().filter_map(|(_, m)| m).collect() };
        write_text(path, &rep.to_tsv())?;
    }
    eprintln!("enhanced {} files with {}", rows.len(), cfg.method);
    Ok(())
}

fn cmd_evaluate(a: &EvaluateArgs) -> CliResult<()> {
    let bank = bank()?;
    let report = if let Some(manifest) = &a.manifest {
        let (dir, method) = (a.dir.as_ref().unwrap(), a.method.as_deref().unwrap());
        let (base, rows) = read_manifest_file(manifest)?;
        for r in &rows {
            require_file(&dir.join(enhanced_name(r, method)))?;
        }
        let metrics = rows
            .par_iter()
            .map(|r| {
                let clean = wav::read_wav(&base.join(&r.clean))?;
                let noisy = wav::read_wav(&base.join(&r.mixture))?;
                let processed = wav::read_wav(&dir.join(enhanced_name(r, method)))?;
                eval::evaluate_file(&clean, &noisy, &processed, &bank, tags_for(r, method))
            })
            .collect::<crate::Result<Vec<_>>>()?;
        EvalReport { rows: metrics }
    } else {
        let (Some(c), Some(n), Some(p)) = (&a.clean, &a.noisy, &a.processed) else {
            return usage("evaluate needs --manifest/--dir/--method or --clean/--noisy/--processed");
        };
        for f in [c, n, p] {
            require_file(f)?;
        }
        let tags = Tags { id: stem(p), method: a.method.clone().unwrap_or_default(), ..Tags::default() };
        let m = eval::evaluate_file(&wav::read_wav(c)?, &wav::read_wav(n)?, &wav::read_wav(p)?, &bank, tags)?;
        EvalReport { rows: vec![m] }
    };
    match &a.out {
        Some(p) => write_text(p, &report.to_tsv())?,
        None => {
            let mut out = BufWriter::new(std::io::stdout().lock());
            report.write_to(&mut out)?;
            out.flush()?;
        }
    }
    Ok(())
}
