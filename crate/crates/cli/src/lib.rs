//! Command-line front end: dataset synthesis, feature extraction, training,
//! synthesis, resampling, benchmarking and evaluation.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use msrnv::bench::{band_fractions, bench_rtf, evaluate, ladder_bands, BenchConfig};
use msrnv::checkpoint::Checkpoint;
use msrnv::data::{analysis_audio, make_synthetic_corpus, CorpusSpec, DatasetManifest};
use msrnv::features::{extract_logmel, read_features, write_features, FeatureStats, MelSpectrogram};
use msrnv::generator::GeneratorCascade;
use msrnv::resample::resample_to;
use msrnv::signal::{read_wav, write_wav};
use msrnv::train::{train, MixedRate, TrainConfig, Trainer};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "msrnv", version, about = "Multi-rate cascaded neural vocoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic harmonic corpus with manifests and feature files.
    MakeDataset(MakeDatasetArgs),
    /// Compute log-mel feature files from WAV audio.
    ExtractFeatures(ExtractArgs),
    /// Train the generator cascade and its discriminators.
    Train(TrainArgs),
    /// Synthesize audio from a feature file.
    Synth(SynthArgs),
    /// Resample a WAV file.
    Resample(ResampleArgs),
    /// Measure the real-time factor of synthesis.
    BenchRtf(BenchArgs),
    /// Score synthesized audio against references at every rate.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Preset {
    Paper,
    Desk,
}

impl Preset {
    fn config(self) -> TrainConfig {
        match self {
            Preset::Paper => TrainConfig::paper(),
            Preset::Desk => TrainConfig::desk(),
        }
    }
}

#[derive(Debug, Args)]
struct MakeDatasetArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, value_enum, default_value = "desk")]
    preset: Preset,
    #[arg(long, default_value_t = 20)]
    utterances: usize,
    #[arg(long, default_value_t = 4)]
    heldout: usize,
    #[arg(long, default_value_t = 2.0)]
    seconds: f64,
    #[arg(long, default_value_t = 100.0)]
    f0_min: f64,
    #[arg(long, default_value_t = 400.0)]
    f0_max: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ExtractArgs {
    /// A WAV file or a directory of them.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, value_enum, default_value = "paper")]
    preset: Preset,
    /// Also fit normalization statistics over the inputs.
    #[arg(long)]
    stats_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long, value_enum, default_value = "paper")]
    preset: Preset,
    /// JSON file overriding preset fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    heldout: Option<PathBuf>,
    #[arg(long, default_value = "run")]
    out_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lambda_adv: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long, value_enum)]
    mixed_rate: Option<MixedRateArg>,
    #[arg(long)]
    target_cache: Option<PathBuf>,
    /// Continue from a checkpoint up to the configured step count.
    #[arg(long)]
    resume: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MixedRateArg {
    PerItem,
    PerBatch,
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
    /// Write every intermediate rate, not only the top one.
    #[arg(long)]
    dump_all_rates: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct ResampleArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    rate: u32,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Trained model; without it an untrained model of the preset is timed.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "paper")]
    preset: Preset,
    /// Time the single-stage 30-layer model at the top rate instead.
    #[arg(long)]
    baseline: bool,
    #[arg(long)]
    features_dir: PathBuf,
    #[arg(long)]
    n_utts: Option<usize>,
    #[arg(long, default_value_t = 1)]
    warmup: usize,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Parses `argv` (program name first) and runs the subcommand, returning
/// the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_RUNTIME
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::MakeDataset(a) => make_dataset(a),
        Command::ExtractFeatures(a) => extract_features(a),
        Command::Train(a) => run_train(a),
        Command::Synth(a) => synth(a),
        Command::Resample(a) => {
            let w = read_wav(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
            write_wav(&resample_to(&w, a.rate)?, &a.out)?;
            Ok(())
        }
        Command::BenchRtf(a) => bench(a),
        Command::Evaluate(a) => run_evaluate(a),
    }
}

fn make_dataset(a: MakeDatasetArgs) -> Result<()> {
    let cfg = a.preset.config();
    let spec = CorpusSpec { utterances: a.utterances, heldout: a.heldout, seconds: a.seconds, f0_range: (a.f0_min, a.f0_max), seed: a.seed };
    let files = make_synthetic_corpus(&a.out_dir, &spec, &cfg.ladder, &cfg.features)?;
    println!("train manifest: {}", files.train.display());
    println!("held-out manifest: {}", files.heldout.display());
    println!("feature stats: {}", files.stats.display());
    Ok(())
}

fn wav_inputs(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_file() {
        return Ok(vec![input.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(input)
        .with_context(|| format!("reading {}", input.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no .wav files in {}", input.display());
    }
    Ok(files)
}

fn extract_features(a: ExtractArgs) -> Result<()> {
    let cfg = a.preset.config().features;
    fs::create_dir_all(&a.out_dir)?;
    let mut mels = Vec::new();
    for path in wav_inputs(&a.input)? {
        let w = read_wav(&path).with_context(|| format!("reading {}", path.display()))?;
        let mel = extract_logmel(&analysis_audio(&w, cfg.analysis_rate)?, &cfg)?;
        let stem = path.file_stem().unwrap_or_default().to_string_lossy();
        write_features(&mel, a.out_dir.join(format!("{stem}.feat")))?;
        mels.push(mel);
    }
    if let Some(p) = a.stats_out {
        let stats = FeatureStats::fit(&mels)?;
        let floored = stats.floored.iter().filter(|&&f| f).count();
        if floored > 0 {
            eprintln!("warning: {floored} band(s) had their deviation floored");
        }
        stats.save(p)?;
    }
    println!("wrote {} feature file(s) to {}", mels.len(), a.out_dir.display());
    Ok(())
}

/// Preset, then the JSON file, then individual flags.
fn resolve_train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut cfg = a.preset.config();
    if let Some(p) = &a.config {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let json: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
        cfg = cfg.merge_json(&json)?;
    }
    if let Some(s) = a.steps {
        cfg = cfg.with_total_steps(s);
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lambda_adv {
        cfg.lambda_adv = v;
    }
    if let Some(v) = a.learning_rate {
        cfg.learning_rate = v;
    }
    if let Some(m) = a.mixed_rate {
        cfg.mixed_rate = match m {
            MixedRateArg::PerItem => MixedRate::PerItem,
            MixedRateArg::PerBatch => MixedRate::PerBatch,
        };
    }
    if a.manifest.is_some() {
        cfg.manifest = a.manifest.clone();
    }
    if a.heldout.is_some() {
        cfg.heldout_manifest = a.heldout.clone();
    }
    if a.target_cache.is_some() {
        cfg.target_cache = a.target_cache.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run_train(a: TrainArgs) -> Result<()> {
    let cfg = resolve_train_config(&a)?;
    if a.print_config {
        println!("{}", serde_json::to_string_pretty(&cfg)?);
        return Ok(());
    }
    let out = train(&cfg, &a.out_dir, a.resume.as_deref(), |m| eprintln!("{m}"))?;
    println!("checkpoint: {}", out.checkpoint.display());
    println!("telemetry: {}", out.telemetry.display());
    if let Some(e) = out.eval {
        println!("held-out losses: {}", e.display());
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<Trainer> {
    let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(Trainer::from_checkpoint(ck)?)
}

fn synth(a: SynthArgs) -> Result<()> {
    let model = load_model(&a.checkpoint)?;
    let mel = model.stats.apply(&read_features(&a.features)?)?;
    let outs = model.generator.synthesize(&mel, None, None, a.seed)?;
    fs::create_dir_all(&a.out_dir)?;
    let stem = a.features.file_stem().unwrap_or_default().to_string_lossy().into_owned();
    let mut csv = File::create(a.out_dir.join(format!("{stem}.bands.csv")))?;
    writeln!(csv, "stage,rate,band_lo_hz,band_hi_hz,fraction")?;
    let last = outs.len() - 1;
    for (i, w) in outs.iter().enumerate() {
        if a.dump_all_rates || i == last {
            write_wav(w, a.out_dir.join(format!("{stem}.{}.wav", w.rate)))?;
        }
        let bands = ladder_bands(&model.generator.ladder, i);
        let fractions = if w.energy() > 0.0 { band_fractions(w, &bands)? } else { vec![0.0; bands.len()] };
        for ((lo, hi), f) in bands.iter().zip(fractions) {
            writeln!(csv, "{},{},{lo},{hi},{f}", i + 1, w.rate)?;
        }
    }
    println!("wrote {} rate(s) to {}", if a.dump_all_rates { outs.len() } else { 1 }, a.out_dir.display());
    Ok(())
}

fn feature_inputs(dir: &Path, limit: Option<usize>) -> Result<Vec<(String, MelSpectrogram)>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "feat"))
        .collect();
    paths.sort();
    if let Some(n) = limit {
        paths.truncate(n);
    }
    if paths.is_empty() {
        bail!("no .feat files in {}", dir.display());
    }
    paths
        .iter()
        .map(|p| Ok((p.file_stem().unwrap_or_default().to_string_lossy().into_owned(), read_features(p)?)))
        .collect()
}

fn bench(a: BenchArgs) -> Result<()> {
    let (cascade, stats, name) = match &a.checkpoint {
        Some(p) => {
            let m = load_model(p)?;
            if a.baseline {
                bail!("--baseline times an untrained model and cannot be combined with --checkpoint");
            }
            (m.generator, m.stats, format!("cascade:{}", p.display()))
        }
        None => {
            let cfg = a.preset.config();
            let stats = FeatureStats::identity(cfg.features.bands);
            if a.baseline {
                (GeneratorCascade::baseline(cfg.ladder.top(), cfg.generator, cfg.seed)?, stats, "baseline".to_string())
            } else {
                (GeneratorCascade::new(cfg.ladder, cfg.generator, cfg.seed)?, stats, "cascade".to_string())
            }
        }
    };
    let inputs = feature_inputs(&a.features_dir, a.n_utts)?
        .into_iter()
        .map(|(id, m)| Ok((id, stats.apply(&m)?)))
        .collect::<Result<Vec<_>>>()?;
    let report = bench_rtf(&name, &cascade, &inputs, &BenchConfig { warmup: a.warmup, repeats: a.repeats, seed: 0 })?;
    println!("{}", report.summary());
    if let Some(p) = a.out {
        report.write_csv(p)?;
    }
    Ok(())
}

fn run_evaluate(a: EvaluateArgs) -> Result<()> {
    let model = load_model(&a.checkpoint)?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    let report = evaluate(&model.generator, &model.stats, &manifest, &model.config.resolutions, a.seed)?;
    report.write_csv(&a.out)?;
    for (rate, lsd, mr) in report.means() {
        println!("{rate} Hz: LSD {lsd:.3} dB, MR-STFT {mr:.4}");
    }
    if report.rows.iter().any(|r| r.cropped) {
        eprintln!("warning: some outputs were cropped to the reference length");
    }
    Ok(())
}
