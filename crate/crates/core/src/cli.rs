//! The `nzc` command line: training, coding, dataset evaluation, quality
//! search and report conversion.
//!
//! Exit codes: 0 on success (including `--help`), 1 for usage errors, 2 for
//! runtime errors (one `error:` line on stderr). With `--json`, stdout
//! carries only JSON; logs always go to stderr.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::warn;
use serde::Serialize;

use crate::benchmark::{self, report, CodecEvaluation, DatasetReport, ReportFormat};
use crate::error::{Error, Result};
use crate::image_io;
use crate::metrics::{self, MetricKind};
use crate::models::{ArchitectureConfig, BitstreamContainer, CodecModel, Metric, ModelKind};
use crate::training::{self, Checkpoint, Trainer, TrainingConfig};

/// Default adapter file looked up in the working directory.
pub const DEFAULT_ADAPTERS: &str = "adapters.conf";

#[derive(Parser, Debug)]
#[command(name = "nzc", version, about = "Learned image compression: train, code, evaluate and benchmark")]
pub struct Cli {
    /// More log output on stderr (repeat for debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Train a model; writes best.nzck, last.nzck and metrics.jsonl to --out.
    Train(TrainArgs),
    /// Compress a PNG/PPM image into an .nzb container.
    Compress(CompressArgs),
    /// Decompress an .nzb container into a PNG/PPM image.
    Decompress(DecompressArgs),
    /// Evaluate a learned model on a directory of images.
    EvalModel(EvalModelArgs),
    /// Evaluate an external codec on a directory of images.
    EvalCodec(EvalCodecArgs),
    /// Find the codec quality whose metric on one image is closest to a target.
    FindClose(FindCloseArgs),
    /// Merge JSON reports and emit them as JSON, CSV and/or SVG.
    Report(ReportArgs),
}

#[derive(Args, Debug, Clone)]
pub struct ModelArgs {
    /// Trained model checkpoint (.nzck). Without it a seeded, untrained model is used.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// factorized, scale_hyperprior or mean_scale_hyperprior.
    #[arg(long, default_value = "factorized")]
    pub model: ModelKind,
    /// Quality index 1..=8.
    #[arg(long, default_value_t = 4)]
    pub quality: u8,
    /// Distortion the model was trained for: mse or ms-ssim.
    #[arg(long, default_value = "mse")]
    pub metric: Metric,
    /// Channel override `N,M` for the untrained model.
    #[arg(long)]
    pub channels: Option<String>,
    /// Seed for the untrained model (default 0). Also makes reports byte-reproducible.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training config file (`key = value` lines).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long, conflicts_with = "config")]
    pub resume: Option<PathBuf>,
    /// Model kind; this and the flags below override the config file.
    #[arg(long)]
    pub model: Option<ModelKind>,
    #[arg(long)]
    pub quality: Option<u8>,
    #[arg(long)]
    pub metric: Option<Metric>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Stop after this many steps in total (also extends a resumed run).
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Training images; synthetic patches are used when omitted.
    #[arg(long)]
    pub train_dir: Option<PathBuf>,
    #[arg(long)]
    pub eval_dir: Option<PathBuf>,
    /// Print evaluation records as JSON lines on stdout.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct CompressArgs {
    pub input: PathBuf,
    /// Output container (.nzb).
    #[arg(short, long)]
    pub output: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Print a JSON summary (sizes, bytes, bpp) on stdout.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct DecompressArgs {
    pub input: PathBuf,
    /// Output image (.png or .ppm).
    #[arg(short, long)]
    pub output: PathBuf,
    /// Checkpoint that produced the container; otherwise the untrained model
    /// named in the container header is rebuilt from --seed.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub channels: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct ReportOutput {
    /// Output path stem; files get .json, .csv and -<metric>.svg suffixes.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    /// Comma-separated subset of json,csv,svg.
    #[arg(long, default_value = "json,csv,svg", value_delimiter = ',')]
    pub format: Vec<ReportFormat>,
    /// Print the JSON report on stdout.
    #[arg(long)]
    pub json: bool,
    /// Omit the date and timings so repeated runs give identical bytes
    /// (implied by --seed).
    #[arg(long)]
    pub deterministic: bool,
}

#[derive(Args, Debug)]
pub struct EvalModelArgs {
    /// Directory of PNG/PPM images.
    #[arg(long)]
    pub dir: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[command(flatten)]
    pub report: ReportOutput,
}

#[derive(Args, Debug)]
pub struct EvalCodecArgs {
    /// Adapter name inside the adapter file.
    #[arg(long)]
    pub adapter: String,
    /// Adapter file (default: ./adapters.conf).
    #[arg(long)]
    pub adapters: Option<PathBuf>,
    /// Comma-separated qualities.
    #[arg(long, value_delimiter = ',', required = true)]
    pub qualities: Vec<f64>,
    /// Directory of PNG/PPM images.
    #[arg(long)]
    pub dir: PathBuf,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Accepted for uniformity; external codecs are deterministic by themselves.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub report: ReportOutput,
}

#[derive(Clone, Copy, Debug, clap::ValueEnum)]
pub enum SearchMetric {
    Psnr,
    Bpp,
    MsSsim,
}

impl From<SearchMetric> for MetricKind {
    fn from(m: SearchMetric) -> Self {
        match m {
            SearchMetric::Psnr => MetricKind::Psnr,
            SearchMetric::Bpp => MetricKind::Bpp,
            SearchMetric::MsSsim => MetricKind::MsSsim,
        }
    }
}

#[derive(Args, Debug)]
pub struct FindCloseArgs {
    /// Adapter name.
    pub codec: String,
    /// Image to search on.
    pub image: PathBuf,
    /// Target value of --metric.
    pub target: f64,
    #[arg(long, value_enum, default_value = "psnr")]
    pub metric: SearchMetric,
    /// Adapter file (default: ./adapters.conf).
    #[arg(long)]
    pub adapters: Option<PathBuf>,
    /// Print the result as JSON.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct ReportArgs {
    /// JSON reports to merge.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    #[command(flatten)]
    pub report: ReportOutput,
}

fn parse_channels(s: &str) -> Result<(usize, usize)> {
    let bad = || Error::input(format!("--channels expects N,M, got `{s}`"));
    let (n, m) = s.split_once(',').ok_or_else(bad)?;
    Ok((n.trim().parse().map_err(|_| bad())?, m.trim().parse().map_err(|_| bad())?))
}

fn untrained(kind: ModelKind, quality: u8, metric: Metric, channels: Option<&str>, seed: u64) -> Result<CodecModel<f32>> {
    warn!("no --checkpoint given: using an untrained model (seed {seed})");
    let mut arch = ArchitectureConfig::for_quality(kind, quality, metric)?;
    if let Some(c) = channels {
        let (n, m) = parse_channels(c)?;
        arch = arch.with_channels(n, m)?;
    }
    let mut model = CodecModel::new(arch, seed)?;
    model.eval()?;
    Ok(model)
}

fn load_checkpoint_model(path: &Path) -> Result<CodecModel<f32>> {
    let mut model = Checkpoint::load(path)?.to_model()?;
    if model.tables().is_none() {
        model.eval()?;
    }
    Ok(model)
}

impl ModelArgs {
    pub fn load(&self) -> Result<CodecModel<f32>> {
        match &self.checkpoint {
            Some(p) => load_checkpoint_model(p),
            None => untrained(self.model, self.quality, self.metric, self.channels.as_deref(), self.seed.unwrap_or(0)),
        }
    }
}

fn adapter_file(explicit: &Option<PathBuf>) -> PathBuf {
    explicit.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_ADAPTERS))
}

fn write_json(out: &mut dyn Write, value: &impl Serialize) -> Result<()> {
    let s = serde_json::to_string(value).expect("serializable");
    writeln!(out, "{s}").map_err(|e| Error::io("<stdout>", e))
}

fn say(out: &mut dyn Write, text: std::fmt::Arguments<'_>) -> Result<()> {
    out.write_fmt(text).and_then(|_| out.write_all(b"\n")).map_err(|e| Error::io("<stdout>", e))
}

fn finish_report(mut r: DatasetReport, opts: &ReportOutput, seeded: bool, out: &mut dyn Write) -> Result<()> {
    if opts.deterministic || seeded {
        r.strip_volatile();
    }
    if let Some(stem) = &opts.output {
        for p in report::emit_report(&r, stem, &opts.format)? {
            log::info!("wrote {}", p.display());
        }
    }
    if opts.json {
        out.write_all(report::to_json(&r).as_bytes()).map_err(|e| Error::io("<stdout>", e))?;
    } else {
        for c in &r.codecs {
            say(out, format_args!("{}", c.name))?;
            for p in &c.points {
                let ms = p.ms_ssim.map(|v| format!("{v:.5}")).unwrap_or_else(|| "-".into());
                say(
                    out,
                    format_args!(
                        "  q={:<6} bpp={:.4}  psnr={:.3}  ms-ssim={ms}  images={}",
                        benchmark::adapter::format_quality(p.quality),
                        p.bpp,
                        p.psnr,
                        p.images
                    ),
                )?;
            }
        }
    }
    Ok(())
}

fn dataset_name(dir: &Path) -> String {
    dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| dir.display().to_string())
}

fn train(args: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut trainer = match &args.resume {
        Some(path) => Trainer::from_checkpoint(&Checkpoint::load(path)?)?,
        None => {
            let mut cfg = match &args.config {
                Some(p) => TrainingConfig::parse(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
                None => TrainingConfig::new(
                    args.model.unwrap_or(ModelKind::Factorized),
                    args.quality.unwrap_or(1),
                    args.metric.unwrap_or(Metric::Mse),
                )?,
            };
            if args.config.is_some() && (args.model.is_some() || args.quality.is_some() || args.metric.is_some()) {
                return Err(Error::input("--model/--quality/--metric cannot be combined with --config"));
            }
            if let Some(s) = args.seed {
                cfg.seed = s;
            }
            if let Some(d) = &args.train_dir {
                cfg.train_dir = Some(d.clone());
            }
            if let Some(d) = &args.eval_dir {
                cfg.eval_dir = Some(d.clone());
            }
            Trainer::new(cfg)?
        }
    };
    if let Some(n) = args.max_steps {
        trainer.config.max_steps = n;
    }
    let (train_set, eval_set) = training::prepare_patches(&trainer.config)?;
    let mut failure = None;
    let ck = trainer.run(&train_set, &eval_set, Some(&args.out), |r| {
        let res = if args.json {
            write_json(out, r)
        } else {
            say(
                out,
                format_args!(
                    "step {:>7}  loss {:.5}  distortion {:.6}  bpp {:.4}  aux {:.3}  lr {:e}",
                    r.step, r.total, r.distortion, r.rate_bpp, r.aux, r.lr
                ),
            )
        };
        if let Err(e) = res {
            failure.get_or_insert(e);
        }
    })?;
    if let Some(e) = failure {
        return Err(e);
    }
    if !args.json {
        say(out, format_args!("finished at step {}; best eval loss {:.5}", ck.step, ck.best_eval))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct CodingSummary<'a> {
    input: &'a Path,
    output: &'a Path,
    width: usize,
    height: usize,
    bytes: usize,
    bpp: f64,
}

fn compress(args: &CompressArgs, out: &mut dyn Write) -> Result<()> {
    let model = args.model.load()?;
    let x = image_io::read_image(&args.input)?;
    let (h, w) = (x.shape()[2], x.shape()[3]);
    let bytes = model.compress(&x)?.to_bytes();
    std::fs::write(&args.output, &bytes).map_err(|e| Error::io(&args.output, e))?;
    let s = CodingSummary {
        input: &args.input,
        output: &args.output,
        width: w,
        height: h,
        bytes: bytes.len(),
        bpp: metrics::bpp(8.0 * bytes.len() as f64, h, w),
    };
    if args.json {
        write_json(out, &s)
    } else {
        say(out, format_args!("{}: {}x{} -> {} bytes ({:.4} bpp)", s.output.display(), w, h, s.bytes, s.bpp))
    }
}

fn decompress(args: &DecompressArgs, out: &mut dyn Write) -> Result<()> {
    let bytes = std::fs::read(&args.input).map_err(|e| Error::io(&args.input, e))?;
    let c = BitstreamContainer::from_bytes(&bytes)?;
    let model = match &args.checkpoint {
        Some(p) => load_checkpoint_model(p)?,
        None => untrained(c.model, c.quality, c.metric, args.channels.as_deref(), args.seed)?,
    };
    let x = model.decompress(&c)?;
    image_io::write_image(&args.output, &x)?;
    let (h, w) = (c.orig_h as usize, c.orig_w as usize);
    let s = CodingSummary {
        input: &args.input,
        output: &args.output,
        width: w,
        height: h,
        bytes: bytes.len(),
        bpp: metrics::bpp(8.0 * bytes.len() as f64, h, w),
    };
    if args.json {
        write_json(out, &s)
    } else {
        say(out, format_args!("{}: {}x{}", s.output.display(), w, h))
    }
}

fn eval_model(args: &EvalModelArgs, out: &mut dyn Write) -> Result<()> {
    let model = args.model.load()?;
    let eval = benchmark::eval_model(&model, &args.dir, args.jobs)?;
    finish_report(DatasetReport::new(&dataset_name(&args.dir), vec![eval]), &args.report, args.model.seed.is_some(), out)
}

fn eval_codec(args: &EvalCodecArgs, out: &mut dyn Write) -> Result<()> {
    let adapter = benchmark::load_adapter(&adapter_file(&args.adapters), &args.adapter)?;
    let eval = benchmark::eval_codec(&adapter, &args.dir, &args.qualities, args.jobs)?;
    finish_report(DatasetReport::new(&dataset_name(&args.dir), vec![eval]), &args.report, args.seed.is_some(), out)
}

fn find_close(args: &FindCloseArgs, out: &mut dyn Write) -> Result<()> {
    let adapter = benchmark::load_adapter(&adapter_file(&args.adapters), &args.codec)?;
    let r = benchmark::find_close_codec(&adapter, &args.image, args.target, args.metric.into())?;
    if args.json {
        return write_json(out, &r);
    }
    let flag = if r.out_of_range { " (target out of range, endpoint returned)" } else { "" };
    say(
        out,
        format_args!(
            "quality {} gives {:?} {:.4} (target {}){flag}",
            benchmark::adapter::format_quality(r.quality),
            r.metric,
            r.value,
            r.target
        ),
    )
}

fn report_cmd(args: &ReportArgs, out: &mut dyn Write) -> Result<()> {
    let mut merged: Option<DatasetReport> = None;
    for p in &args.inputs {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        let r = report::validate_report(&text)?;
        match &mut merged {
            None => merged = Some(r),
            Some(m) => m.merge(r),
        }
    }
    let mut r = merged.expect("at least one input");
    let mut names: Vec<&CodecEvaluation> = r.codecs.iter().collect();
    names.dedup_by(|a, b| a.name == b.name);
    if names.len() != r.codecs.len() {
        return Err(Error::input("the same codec appears in more than one input report"));
    }
    if args.report.output.is_none() && !args.report.json {
        return Err(Error::input("report needs --output and/or --json"));
    }
    r.schema = report::REPORT_SCHEMA.into();
    finish_report(r, &args.report, false, out)
}

/// Runs a parsed command.
pub fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Train(a) => train(a, out),
        Command::Compress(a) => compress(a, out),
        Command::Decompress(a) => decompress(a, out),
        Command::EvalModel(a) => eval_model(a, out),
        Command::EvalCodec(a) => eval_codec(a, out),
        Command::FindClose(a) => find_close(a, out),
        Command::Report(a) => report_cmd(a, out),
    }
}

/// Parses `args` (including the program name) and runs the command; returns
/// the process exit code.
pub fn run(args: impl IntoIterator<Item = OsString>, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = out.write_all(text.as_bytes());
                    0
                }
                ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    let _ = err.write_all(text.as_bytes());
                    1
                }
                _ => {
                    let _ = err.write_all(text.as_bytes());
                    1
                }
            };
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_env("NZ_LOG")
        .target(env_logger::Target::Stderr)
        .try_init();
    match dispatch(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {}", e.to_string().replace('\n', " "));
            2
        }
    }
}
