//! The `nbc` command line.
//!
//! Every subcommand reads an optional JSON config (`--config`) whose keys
//! mirror the flags; a flag given on the command line wins. `NBC_THREADS`
//! caps the worker pool. Exit codes: 0 ok, 1 usage, 2 data error, 3 numeric
//! failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::audio::WaveBuffer;
use crate::dataset::{generate_dataset, DatasetConfig, Manifest, MixtureExample, SourcePool};
use crate::error::{Error, Result};
use crate::model::{
    attention_maps, parameter_count, separate, separate_wave, Checkpoint, ModelConfig, Params,
    Precision,
};
use crate::objective::{evaluate, evaluate_waves, write_metrics, MetricRecord};
use crate::stft::StftConfig;
use crate::trainer::{grad_check_example, gradient_check, train, TrainConfig};

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

/// Tolerance the `grad-check` subcommand reports against.
pub const GRAD_CHECK_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Parser)]
#[command(name = "nbc", version, about = "Narrow-band multichannel speech separation")]
pub struct Cli {
    /// JSON config mirroring the flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a simulated two-speaker dataset.
    Simulate(SimulateArgs),
    /// Train a network on a dataset.
    Train(TrainArgs),
    /// Separate mixtures into one WAV per speaker.
    Separate(SeparateArgs),
    /// Score separations and write a metrics CSV.
    Eval(EvalArgs),
    /// Export frequency-averaged attention maps of one example.
    AttnExport(AttnArgs),
    /// Check gradients of the full pipeline on a tiny network.
    GradCheck(GradCheckArgs),
    /// Measure the real-time factor of a checkpoint.
    Rtf(RtfArgs),
}

#[derive(Debug, Args)]
pub struct StftArgs {
    /// STFT window length in samples.
    #[arg(long)]
    pub window: Option<usize>,
    /// STFT hop in samples.
    #[arg(long)]
    pub hop: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Number of examples.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub duration: Option<f64>,
    #[arg(long)]
    pub mics: Option<usize>,
    #[arg(long)]
    pub sample_rate: Option<u32>,
    /// Directory of mono WAV utterances; synthetic voices when omitted.
    #[arg(long)]
    pub sources: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Validation dataset directory.
    #[arg(long)]
    pub val: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Checkpoint directory to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub precision: Option<PrecisionArg>,
    #[arg(long)]
    pub h1: Option<usize>,
    #[arg(long)]
    pub h2: Option<usize>,
    #[arg(long)]
    pub l1: Option<usize>,
    #[arg(long)]
    pub l2: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[command(flatten)]
    pub stft: StftArgs,
}

#[derive(Debug, Args)]
pub struct SeparateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// A multichannel WAV or a dataset directory.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub precision: Option<PrecisionArg>,
    #[command(flatten)]
    pub stft: StftArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Separate in-process with this checkpoint (measures RTF).
    #[arg(long, conflicts_with = "estimates")]
    pub checkpoint: Option<PathBuf>,
    /// Directory of `<id>/speaker_<n>.wav` estimates.
    #[arg(long)]
    pub estimates: Option<PathBuf>,
    /// Metrics CSV to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub precision: Option<PrecisionArg>,
    #[command(flatten)]
    pub stft: StftArgs,
}

#[derive(Debug, Args)]
pub struct AttnArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Example index within the dataset.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = MapFormat::Both)]
    pub format: MapFormat,
    #[command(flatten)]
    pub stft: StftArgs,
}

#[derive(Debug, Args)]
pub struct GradCheckArgs {
    /// Central-difference step.
    #[arg(long, default_value_t = 1e-5)]
    pub step: f64,
    /// Scale of the random parameters.
    #[arg(long, default_value_t = 0.5)]
    pub scale: f64,
}

#[derive(Debug, Args)]
pub struct RtfArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Seconds of audio to separate.
    #[arg(long, default_value_t = 4.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long)]
    pub sample_rate: Option<u32>,
    #[arg(long)]
    pub precision: Option<PrecisionArg>,
    #[command(flatten)]
    pub stft: StftArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrecisionArg {
    F32,
    F64,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum MapFormat {
    Csv,
    Pgm,
    Both,
}

/// Contents of `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub model: Option<ModelConfig>,
    pub train: Option<TrainConfig>,
    pub dataset: Option<DatasetConfig>,
    pub window: Option<usize>,
    pub hop: Option<usize>,
    pub precision: Option<PrecisionArg>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

struct Ctx {
    file: FileConfig,
    seed: Option<u64>,
}

impl Ctx {
    fn seed(&self) -> u64 {
        self.seed.or(self.file.seed).unwrap_or(0)
    }

    fn precision(&self, flag: Option<PrecisionArg>) -> Precision {
        flag.or(self.file.precision).map_or(Precision::F32, Precision::from)
    }

    /// Flags, then config, then `fallback` (a checkpoint's recorded
    /// transform or the default), at `sample_rate`.
    fn stft(&self, args: &StftArgs, fallback: Option<StftConfig>, sample_rate: u32) -> Result<StftConfig> {
        let base = fallback.unwrap_or_default();
        let window = args.window.or(self.file.window).unwrap_or(base.window_len);
        let hop = args.hop.or(self.file.hop).unwrap_or(base.hop);
        StftConfig::new(window, hop, sample_rate)
    }
}

/// Parse `argv`, run the subcommand and return the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return EXIT_USAGE;
    }
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        e if e.is_numeric() => EXIT_NUMERIC,
        Error::Config(_) => EXIT_USAGE,
        _ => EXIT_DATA,
    }
}

fn configure_threads() -> std::result::Result<(), String> {
    let Ok(v) = std::env::var("NBC_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| format!("NBC_THREADS={v:?} is not a positive integer"))?;
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn execute(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p)?,
        None => FileConfig::default(),
    };
    let ctx = Ctx {
        file,
        seed: cli.seed,
    };
    match cli.command {
        Command::Simulate(a) => simulate(&ctx, a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::Separate(a) => separate_cmd(&ctx, a),
        Command::Eval(a) => eval_cmd(&ctx, a),
        Command::AttnExport(a) => attn_cmd(&ctx, a),
        Command::GradCheck(a) => grad_check_cmd(&ctx, a),
        Command::Rtf(a) => rtf_cmd(&ctx, a),
    }
}

fn simulate(ctx: &Ctx, a: SimulateArgs) -> Result<()> {
    let mut cfg = ctx.file.dataset.clone().unwrap_or_default();
    cfg.seed = ctx.seed();
    if let Some(n) = a.n {
        cfg.n_examples = n;
    }
    if let Some(d) = a.duration {
        cfg.duration_secs = d;
    }
    if let Some(m) = a.mics {
        cfg.sampler.n_mics = m;
    }
    if let Some(sr) = a.sample_rate {
        cfg.sampler.sample_rate = sr;
    }
    if let Some(dir) = a.sources {
        cfg.sources = SourcePool::Directory(dir);
    }
    let manifest = generate_dataset(&a.out, &cfg)?;
    println!(
        "wrote {} examples ({} mics, {} Hz, {:.2} s) to {}",
        manifest.entries.len(),
        cfg.sampler.n_mics,
        cfg.sample_rate(),
        cfg.duration_secs,
        a.out.display()
    );
    Ok(())
}

fn load_set(dir: &Path, stft_args: &StftArgs, ctx: &Ctx, fallback: Option<StftConfig>) -> Result<(Vec<MixtureExample>, StftConfig)> {
    let manifest = Manifest::load(dir)?;
    let stft = ctx.stft(stft_args, fallback, manifest.config.sample_rate())?;
    Ok((manifest.load_all(&stft)?, stft))
}

fn train_cmd(ctx: &Ctx, a: TrainArgs) -> Result<()> {
    let resume = a.resume.as_deref().map(Checkpoint::load).transpose()?;
    let (train_set, stft) = load_set(&a.data, &a.stft, ctx, resume.as_ref().and_then(|c| c.stft))?;
    let val_set = match &a.val {
        Some(dir) => Manifest::load(dir)?.load_all(&stft)?,
        None => Vec::new(),
    };
    let first = train_set
        .first()
        .ok_or_else(|| Error::Data(format!("{} has no examples", a.data.display())))?;

    let mut model = match &resume {
        Some(c) => c.config.clone(),
        None => ctx.file.model.clone().unwrap_or_default(),
    };
    let data_mics = first.mixture.n_channels();
    let configured_mics = ctx.file.model.as_ref().map(|m| m.n_mics);
    if resume.is_none() && configured_mics.is_none() {
        model.n_mics = data_mics;
    }
    for (flag, field) in [
        (a.h1, &mut model.h1),
        (a.h2, &mut model.h2),
        (a.l1, &mut model.l1),
        (a.l2, &mut model.l2),
        (a.heads, &mut model.heads),
    ] {
        if let Some(v) = flag {
            *field = v;
        }
    }
    if let Some(d) = a.dropout {
        model.dropout = d;
    }
    if model.n_mics != data_mics {
        return Err(Error::Config(format!(
            "model expects {} microphones, data has {data_mics}",
            model.n_mics
        )));
    }
    if model.n_speakers != first.n_speakers() {
        return Err(Error::Config(format!(
            "model separates {} speakers, data has {}",
            model.n_speakers,
            first.n_speakers()
        )));
    }
    model.validate()?;

    let mut tcfg = ctx.file.train.clone().unwrap_or_default();
    tcfg.seed = ctx.seed();
    if let Some(e) = a.epochs {
        tcfg.max_epochs = e;
    }
    if let Some(b) = a.batch {
        tcfg.utterances_per_batch = b;
    }
    if let Some(lr) = a.lr {
        tcfg.lr_init = lr;
    }
    tcfg.precision = ctx.precision(a.precision);

    println!(
        "training {} parameters on {} examples ({} validation), F = {}",
        parameter_count(&model),
        train_set.len(),
        val_set.len(),
        stft.n_freqs()
    );
    let summary = train(&model, &tcfg, resume, &train_set, &val_set, &a.out)?;
    println!(
        "{} steps over {} epochs, best validation loss {:.3}, final lr {:.2e}",
        summary.steps, summary.epochs, summary.best_val, summary.final_lr
    );
    Ok(())
}

/// `(name, mixture)` pairs from a WAV file or every example of a dataset.
fn mixtures(input: &Path) -> Result<Vec<(String, WaveBuffer)>> {
    if input.is_dir() {
        let manifest = Manifest::load(input)?;
        let rate = manifest.config.sample_rate();
        manifest
            .entries
            .iter()
            .map(|e| {
                let w = WaveBuffer::read_wav(input.join(&e.id).join("mixture.wav"), Some(rate))?;
                Ok((e.id.clone(), w))
            })
            .collect()
    } else {
        let name = input
            .file_stem()
            .map_or("mixture".into(), |s| s.to_string_lossy().into_owned());
        Ok(vec![(name, WaveBuffer::read_wav(input, None)?)])
    }
}

fn separate_cmd(ctx: &Ctx, a: SeparateArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let precision = ctx.precision(a.precision);
    let inputs = mixtures(&a.input)?;
    for (name, wave) in &inputs {
        let stft = ctx.stft(&a.stft, ckpt.stft, wave.sample_rate)?;
        let est = separate_wave(wave, &ckpt.config, &ckpt.params, &stft, precision)?;
        let dir = a.out.join(name);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (n, s) in est.into_iter().enumerate() {
            WaveBuffer::mono(wave.sample_rate, s).write_wav(dir.join(format!("speaker_{n}.wav")))?;
        }
    }
    println!("separated {} mixture(s) into {}", inputs.len(), a.out.display());
    Ok(())
}

fn summarize(records: &[MetricRecord]) {
    let n = records.len().max(1) as f64;
    let mean = records.iter().map(|r| r.mean).sum::<f64>() / n;
    let imp = records.iter().map(|r| r.improvement).sum::<f64>() / n;
    let rtf = records.iter().map(|r| r.rtf).sum::<f64>() / n;
    println!(
        "{} examples: mean SI-SDR {mean:.3} dB, improvement {imp:.3} dB, RTF {rtf:.4}",
        records.len()
    );
}

fn eval_cmd(ctx: &Ctx, a: EvalArgs) -> Result<()> {
    let manifest = Manifest::load(&a.data)?;
    let records: Vec<MetricRecord> = match (&a.checkpoint, &a.estimates) {
        (Some(ck), None) => {
            let ckpt = Checkpoint::load(ck)?;
            let stft = ctx.stft(&a.stft, ckpt.stft, manifest.config.sample_rate())?;
            let precision = ctx.precision(a.precision);
            manifest
                .load_all(&stft)?
                .iter()
                .zip(&manifest.entries)
                .map(|(ex, entry)| {
                    let started = Instant::now();
                    let sep = separate(&ex.mixture, &ckpt.config, &ckpt.params, precision)?;
                    evaluate(&entry.id, ex, &sep, started.elapsed().as_secs_f64())
                })
                .collect::<Result<_>>()?
        }
        (None, Some(est_dir)) => {
            let stft = ctx.stft(&a.stft, None, manifest.config.sample_rate())?;
            manifest
                .load_all(&stft)?
                .iter()
                .zip(&manifest.entries)
                .map(|(ex, entry)| {
                    let estimates = (0..ex.n_speakers())
                        .map(|n| {
                            let path = est_dir.join(&entry.id).join(format!("speaker_{n}.wav"));
                            let w = WaveBuffer::read_wav(&path, Some(ex.mixture_wave.sample_rate))?;
                            if w.len() != ex.len() {
                                return Err(Error::LengthMismatch(w.len(), ex.len()));
                            }
                            Ok(w.channels.into_iter().next().expect("mono"))
                        })
                        .collect::<Result<Vec<_>>>()?;
                    evaluate_waves(
                        &entry.id,
                        &ex.target_waves,
                        ex.mixture_wave.channel(crate::dataset::REFERENCE_CHANNEL)?,
                        &estimates,
                        0.0,
                    )
                })
                .collect::<Result<_>>()?
        }
        _ => {
            return Err(Error::Config(
                "eval needs exactly one of --checkpoint or --estimates".into(),
            ))
        }
    };
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    write_metrics(&a.out, &records)?;
    summarize(&records);
    Ok(())
}

fn attn_cmd(ctx: &Ctx, a: AttnArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let manifest = Manifest::load(&a.data)?;
    let entry = manifest.entries.get(a.index).ok_or(Error::OutOfRange {
        what: "example index",
        index: a.index,
        limit: manifest.entries.len(),
    })?;
    let stft = ctx.stft(&a.stft, ckpt.stft, manifest.config.sample_rate())?;
    let ex = crate::dataset::load_example(&a.data, entry, &stft)?;
    let maps = attention_maps(&ex, &ckpt.config, &ckpt.params)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    if matches!(a.format, MapFormat::Csv | MapFormat::Both) {
        maps.write_csv(&a.out)?;
    }
    if matches!(a.format, MapFormat::Pgm | MapFormat::Both) {
        maps.write_pgm(&a.out)?;
    }
    let [l, h, t, _] = maps.shape();
    println!("exported {l} x {h} maps of {t} x {t} frames to {}", a.out.display());
    Ok(())
}

fn grad_check_cmd(ctx: &Ctx, a: GradCheckArgs) -> Result<()> {
    let cfg = ModelConfig::tiny();
    let seed = ctx.seed();
    let params = Params::random(&cfg, seed, a.scale)?;
    let example = grad_check_example(seed)?;
    let started = Instant::now();
    let report = gradient_check(&cfg, &params, &example, a.step)?;
    let name = &params.names()[report.worst.0];
    println!(
        "{} coordinates, max relative error {:.3e} at {name}[{}] (analytic {:.6e}, numeric {:.6e}), {:.1} s",
        report.coordinates,
        report.max_rel_error,
        report.worst.1,
        report.analytic,
        report.numeric,
        started.elapsed().as_secs_f64()
    );
    if report.max_rel_error < GRAD_CHECK_TOLERANCE {
        println!("pass (< {GRAD_CHECK_TOLERANCE:e})");
        Ok(())
    } else {
        Err(Error::Tolerance(format!(
            "gradient check relative error {:.3e} exceeds {GRAD_CHECK_TOLERANCE:e}",
            report.max_rel_error
        )))
    }
}

fn rtf_cmd(ctx: &Ctx, a: RtfArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let rate = a
        .sample_rate
        .or(ckpt.stft.map(|s| s.sample_rate))
        .unwrap_or(StftConfig::default().sample_rate);
    let stft = ctx.stft(&a.stft, ckpt.stft, rate)?;
    let len = (a.duration * rate as f64).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed());
    let channels = (0..ckpt.config.n_mics)
        .map(|_| (0..len).map(|_| rng.random_range(-0.5..0.5)).collect())
        .collect();
    let wave = WaveBuffer::new(rate, channels)?;
    let precision = ctx.precision(a.precision);
    let mut best = f64::INFINITY;
    for _ in 0..a.repeats.max(1) {
        let started = Instant::now();
        separate_wave(&wave, &ckpt.config, &ckpt.params, &stft, precision)?;
        best = best.min(started.elapsed().as_secs_f64());
    }
    println!(
        "RTF {:.4} ({:.3} s for {:.2} s of {}-channel audio, best of {})",
        best / a.duration,
        best,
        a.duration,
        ckpt.config.n_mics,
        a.repeats.max(1)
    );
    Ok(())
}
