//! Dataset-level rate-distortion evaluation of learned models and external
//! codec executables, quality search, aggregation and reports.
//!
//! Dataset points are the arithmetic mean of per-image metrics (not pooled
//! MSE). Learned-model rates always come from real container bytes; the
//! entropy estimate is recorded next to them.

pub mod adapter;
pub mod report;
pub mod search;

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use log::warn;
use serde::{Deserialize, Serialize};

pub use adapter::{load_adapter, parse_adapters, CodecAdapter, PixelFormat};
pub use report::{emit_report, to_csv, to_json, to_svg, validate_report, ReportFormat, REPORT_SCHEMA};
pub use search::{find_close, probe_budget, FindCloseResult, Probe};

use crate::error::{Error, Result};
use crate::image_io;
use crate::metrics::{self, MetricKind, MS_SSIM_MIN_SIDE};
use crate::models::{BitstreamContainer, CodecModel};
use crate::tensor::Tensor;

/// `+inf` (lossless PSNR) is stored as JSON `null`.
mod inf_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Metrics of one image at one quality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageResult {
    pub image: String,
    pub quality: f64,
    pub bpp: f64,
    /// Entropy-model estimate (learned models only).
    pub estimated_bpp: Option<f64>,
    #[serde(with = "inf_as_null")]
    pub psnr: f64,
    /// `None` when a side is below the five-scale minimum.
    pub ms_ssim: Option<f64>,
    pub enc_seconds: f64,
    pub dec_seconds: f64,
}

/// Dataset mean at one quality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RdPoint {
    pub codec_name: String,
    pub quality: f64,
    pub bpp: f64,
    pub estimated_bpp: Option<f64>,
    #[serde(with = "inf_as_null")]
    pub psnr: f64,
    pub ms_ssim: Option<f64>,
    pub enc_seconds: f64,
    pub dec_seconds: f64,
    pub images: usize,
}

impl RdPoint {
    pub fn metric(&self, kind: MetricKind) -> Option<f64> {
        match kind {
            MetricKind::Psnr => Some(self.psnr),
            MetricKind::MsSsim => self.ms_ssim,
            MetricKind::Bpp => Some(self.bpp),
            MetricKind::Mse => Some(10f64.powf(-self.psnr / 10.0)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkippedImage {
    pub image: String,
    pub reason: String,
}

/// All results of one codec on one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodecEvaluation {
    pub name: String,
    /// Sorted by bpp.
    pub points: Vec<RdPoint>,
    /// Sorted by quality, then image.
    pub images: Vec<ImageResult>,
    pub skipped: Vec<SkippedImage>,
    pub warnings: Vec<String>,
}

impl CodecEvaluation {
    pub fn new(name: &str, mut images: Vec<ImageResult>, skipped: Vec<SkippedImage>) -> Self {
        images.sort_by(|a, b| a.quality.total_cmp(&b.quality).then_with(|| a.image.cmp(&b.image)));
        CodecEvaluation {
            name: name.to_string(),
            points: aggregate(name, &images),
            images,
            skipped,
            warnings: vec![],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportMetadata {
    /// RFC 3339 creation time; `None` in deterministic reports.
    pub date: Option<String>,
    pub platform: String,
    pub tool_version: String,
    pub aggregation: String,
    pub color_conversion: String,
    /// `false` when timings were zeroed for byte-reproducible output.
    pub timings_recorded: bool,
}

impl ReportMetadata {
    pub fn current() -> Self {
        ReportMetadata {
            date: Some(chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)),
            platform: format!("{}-{}", std::env::consts::OS, std::env::consts::ARCH),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            aggregation: "arithmetic mean of per-image metrics".into(),
            color_conversion: "yuv444-8 adapters use BT.601 full-range RGB/YCbCr".into(),
            timings_recorded: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetReport {
    pub schema: String,
    pub dataset: String,
    pub metadata: ReportMetadata,
    pub codecs: Vec<CodecEvaluation>,
}

impl DatasetReport {
    pub fn new(dataset: &str, mut codecs: Vec<CodecEvaluation>) -> Self {
        codecs.sort_by(|a, b| a.name.cmp(&b.name));
        DatasetReport {
            schema: REPORT_SCHEMA.to_string(),
            dataset: dataset.to_string(),
            metadata: ReportMetadata::current(),
            codecs,
        }
    }

    /// Drops the date and zeroes all timings so identical runs give identical bytes.
    pub fn strip_volatile(&mut self) {
        self.metadata.date = None;
        self.metadata.timings_recorded = false;
        for c in &mut self.codecs {
            for p in &mut c.points {
                p.enc_seconds = 0.0;
                p.dec_seconds = 0.0;
            }
            for i in &mut c.images {
                i.enc_seconds = 0.0;
                i.dec_seconds = 0.0;
            }
        }
    }

    /// Merges another report's codecs into this one (same dataset).
    pub fn merge(&mut self, other: DatasetReport) {
        self.codecs.extend(other.codecs);
        self.codecs.sort_by(|a, b| a.name.cmp(&b.name));
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    s / n as f64
}

/// Per-quality dataset means, sorted by bpp. Input order does not matter.
pub fn aggregate(codec_name: &str, images: &[ImageResult]) -> Vec<RdPoint> {
    let mut sorted: Vec<&ImageResult> = images.iter().collect();
    sorted.sort_by(|a, b| a.quality.total_cmp(&b.quality).then_with(|| a.image.cmp(&b.image)));
    let mut points = vec![];
    for group in sorted.chunk_by(|a, b| a.quality == b.quality) {
        let all = |f: fn(&ImageResult) -> Option<f64>| -> Option<f64> {
            group.iter().map(|r| f(r)).collect::<Option<Vec<f64>>>().map(|v| mean(v.into_iter()))
        };
        points.push(RdPoint {
            codec_name: codec_name.to_string(),
            quality: group[0].quality,
            bpp: mean(group.iter().map(|r| r.bpp)),
            estimated_bpp: all(|r| r.estimated_bpp),
            psnr: mean(group.iter().map(|r| r.psnr)),
            ms_ssim: all(|r| r.ms_ssim),
            enc_seconds: mean(group.iter().map(|r| r.enc_seconds)),
            dec_seconds: mean(group.iter().map(|r| r.dec_seconds)),
            images: group.len(),
        });
    }
    points.sort_by(|a, b| a.bpp.total_cmp(&b.bpp).then_with(|| a.quality.total_cmp(&b.quality)));
    points
}

/// Runs `f` over `items` on up to `jobs` threads; results keep input order.
pub fn parallel_map<I: Sync, O: Send>(items: &[I], jobs: usize, f: impl Fn(&I) -> O + Sync) -> Vec<O> {
    let jobs = jobs.clamp(1, items.len().max(1));
    if jobs == 1 {
        return items.iter().map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<O>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= items.len() {
                    break;
                }
                let out = f(&items[i]);
                slots.lock().expect("worker panicked")[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|o| o.expect("every item processed"))
        .collect()
}

fn image_name(dir: &Path, path: &Path) -> String {
    path.strip_prefix(dir).unwrap_or(path).display().to_string()
}

/// Readable images of a directory plus the ones that were skipped.
fn load_dataset(dir: &Path) -> Result<(Vec<(String, Tensor<f32>)>, Vec<SkippedImage>)> {
    let paths = image_io::list_images(dir)?;
    if paths.is_empty() {
        return Err(Error::Dataset(format!("no images in {}", dir.display())));
    }
    let mut images = vec![];
    let mut skipped = vec![];
    for p in paths {
        let name = image_name(dir, &p);
        match image_io::read_image(&p) {
            Ok(x) => images.push((name, x)),
            Err(e) => {
                warn!("skipping {name}: {e}");
                skipped.push(SkippedImage {
                    image: name,
                    reason: e.to_string(),
                });
            }
        }
    }
    if images.is_empty() {
        return Err(Error::Dataset(format!("no readable images in {}", dir.display())));
    }
    Ok((images, skipped))
}

fn ms_ssim_if_large(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<Option<f64>> {
    let s = a.shape();
    if s[2].min(s[3]) < MS_SSIM_MIN_SIDE {
        return Ok(None);
    }
    metrics::ms_ssim(a, b).map(Some)
}

/// Name under which a learned model appears in reports.
pub fn model_label(model: &CodecModel<f32>) -> String {
    format!("{}-{}", model.config.model.name(), model.config.metric.name())
}

/// Compresses, serializes, parses and decompresses one image.
pub fn eval_model_image(model: &CodecModel<f32>, name: &str, x: &Tensor<f32>) -> Result<ImageResult> {
    let (h, w) = (x.shape()[2], x.shape()[3]);
    let started = Instant::now();
    let bytes = model.compress(x)?.to_bytes();
    let enc_seconds = started.elapsed().as_secs_f64();
    let started = Instant::now();
    let x_hat = model.decompress(&BitstreamContainer::from_bytes(&bytes)?)?;
    let dec_seconds = started.elapsed().as_secs_f64();
    Ok(ImageResult {
        image: name.to_string(),
        quality: model.config.quality as f64,
        bpp: metrics::bpp(8.0 * bytes.len() as f64, h, w),
        estimated_bpp: Some(metrics::bpp(model.estimate_bits(x)?, h, w)),
        psnr: metrics::psnr(x, &x_hat)?,
        ms_ssim: ms_ssim_if_large(x, &x_hat)?,
        enc_seconds,
        dec_seconds,
    })
}

/// Evaluates a learned model (in evaluation mode) on every image of `dir`.
pub fn eval_model(model: &CodecModel<f32>, dir: &Path, jobs: usize) -> Result<CodecEvaluation> {
    if model.tables().is_none() {
        return Err(Error::contract("eval_model needs a model in evaluation mode with built tables"));
    }
    let (images, mut skipped) = load_dataset(dir)?;
    let results = parallel_map(&images, jobs, |(name, x)| eval_model_image(model, name, x));
    let mut ok = vec![];
    for ((name, _), r) in images.iter().zip(results) {
        match r {
            Ok(r) => ok.push(r),
            // images the model cannot take (too small) are skipped, the rest is fatal
            Err(Error::Input(reason)) => {
                warn!("skipping {name}: {reason}");
                skipped.push(SkippedImage {
                    image: name.clone(),
                    reason,
                });
            }
            Err(e) => return Err(e),
        }
    }
    if ok.is_empty() {
        return Err(Error::Dataset(format!("no image in {} could be evaluated", dir.display())));
    }
    Ok(CodecEvaluation::new(&model_label(model), ok, skipped))
}

/// Metrics of one image through an external codec at quality `q`.
pub fn eval_codec_image(adapter: &CodecAdapter, name: &str, x: &Tensor<f32>, q: f64) -> Result<ImageResult> {
    let run = adapter.run(x, q)?;
    let (h, w) = (x.shape()[2], x.shape()[3]);
    Ok(ImageResult {
        image: name.to_string(),
        quality: q,
        bpp: metrics::bpp(8.0 * run.bytes as f64, h, w),
        estimated_bpp: None,
        psnr: metrics::psnr(x, &run.decoded)?,
        ms_ssim: ms_ssim_if_large(x, &run.decoded)?,
        enc_seconds: run.enc_seconds,
        dec_seconds: run.dec_seconds,
    })
}

/// Evaluates an external codec at each of `qualities` on every image of `dir`.
pub fn eval_codec(adapter: &CodecAdapter, dir: &Path, qualities: &[f64], jobs: usize) -> Result<CodecEvaluation> {
    if qualities.is_empty() {
        return Err(Error::input("eval_codec needs at least one quality"));
    }
    adapter.check_executables()?;
    let (images, skipped) = load_dataset(dir)?;
    let work: Vec<(usize, f64)> = (0..images.len()).flat_map(|i| qualities.iter().map(move |&q| (i, q))).collect();
    let results = parallel_map(&work, jobs, |&(i, q)| eval_codec_image(adapter, &images[i].0, &images[i].1, q));
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let mut eval = CodecEvaluation::new(&adapter.name, results, skipped);
    let points = &eval.points;
    for w in points.windows(2) {
        if w[1].quality < w[0].quality {
            eval.warnings.push(format!(
                "bpp is not monotone in quality: q={} gives {:.4} bpp, q={} gives {:.4} bpp",
                w[0].quality, w[0].bpp, w[1].quality, w[1].bpp
            ));
        }
    }
    Ok(eval)
}

/// Quality of an external codec whose metric on `image` is closest to `target`.
pub fn find_close_codec(adapter: &CodecAdapter, image: &Path, target: f64, metric: MetricKind) -> Result<FindCloseResult> {
    adapter.check_executables()?;
    let x = image_io::read_image(image)?;
    if metric == MetricKind::Mse {
        return Err(Error::input("find-close metric must be psnr, bpp or ms-ssim"));
    }
    find_close(&adapter.grid(), target, metric, |q| {
        let r = eval_codec_image(adapter, "probe", &x, q)?;
        match metric {
            MetricKind::Psnr => Ok(r.psnr),
            MetricKind::Bpp => Ok(r.bpp),
            _ => r
                .ms_ssim
                .ok_or_else(|| Error::input(format!("ms-ssim needs both sides >= {MS_SSIM_MIN_SIDE}"))),
        }
    })
}
