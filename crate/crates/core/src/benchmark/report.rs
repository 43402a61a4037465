//! Report emission: versioned JSON with full per-image detail, CSV with one
//! row per (codec, quality), and one SVG rate-distortion chart per metric.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::DatasetReport;
use crate::error::{Error, Result};
use crate::metrics::MetricKind;

pub const REPORT_SCHEMA: &str = "nz-report/1";
pub const SVG_WIDTH: f64 = 960.0;
pub const SVG_HEIGHT: f64 = 720.0;
/// Metrics that get an SVG chart, with file suffix.
pub const CHART_METRICS: [(MetricKind, &str); 2] = [(MetricKind::Psnr, "psnr"), (MetricKind::MsSsim, "ms-ssim")];
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Svg,
}

impl FromStr for ReportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "svg" => Ok(ReportFormat::Svg),
            _ => Err(Error::input(format!("unknown report format `{s}` (expected json, csv or svg)"))),
        }
    }
}

pub fn to_json(report: &DatasetReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serializes");
    s.push('\n');
    s
}

/// Parses and checks a JSON report: schema tag, field types (unknown fields
/// are rejected) and per-codec invariants.
pub fn validate_report(json: &str) -> Result<DatasetReport> {
    let report: DatasetReport = serde_json::from_str(json).map_err(|e| Error::Format(format!("report: {e}")))?;
    if report.schema != REPORT_SCHEMA {
        return Err(Error::Format(format!(
            "report schema is `{}`, expected `{REPORT_SCHEMA}`",
            report.schema
        )));
    }
    if report.codecs.is_empty() {
        return Err(Error::Format("report has no codecs".into()));
    }
    for c in &report.codecs {
        if c.points.is_empty() {
            return Err(Error::Format(format!("codec `{}` has no points", c.name)));
        }
        if c.points.windows(2).any(|w| w[1].bpp < w[0].bpp) {
            return Err(Error::Format(format!("points of `{}` are not sorted by bpp", c.name)));
        }
        for p in &c.points {
            if p.codec_name != c.name || !(p.bpp >= 0.0) || p.enc_seconds < 0.0 || p.dec_seconds < 0.0 || p.images == 0 {
                return Err(Error::Format(format!("invalid point in `{}` at quality {}", c.name, p.quality)));
            }
        }
        let per_image: usize = c.points.iter().map(|p| p.images).sum();
        if per_image != c.images.len() {
            return Err(Error::Format(format!("codec `{}`: point image counts do not match the image list", c.name)));
        }
    }
    Ok(report)
}

fn opt(v: Option<f64>) -> String {
    v.filter(|v| v.is_finite()).map(|v| v.to_string()).unwrap_or_default()
}

/// Header plus one row per (codec, quality), codecs in report order.
pub fn to_csv(report: &DatasetReport) -> String {
    let mut w = csv::Writer::from_writer(vec![]);
    w.write_record(["codec", "quality", "bpp", "estimated_bpp", "psnr", "ms_ssim", "enc_seconds", "dec_seconds", "images"])
        .expect("in-memory csv");
    for c in &report.codecs {
        for p in &c.points {
            w.write_record([
                c.name.clone(),
                super::adapter::format_quality(p.quality),
                p.bpp.to_string(),
                opt(p.estimated_bpp),
                if p.psnr.is_finite() { p.psnr.to_string() } else { "inf".into() },
                opt(p.ms_ssim),
                p.enc_seconds.to_string(),
                p.dec_seconds.to_string(),
                p.images.to_string(),
            ])
            .expect("in-memory csv");
        }
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8 csv")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Evenly spaced tick values with a 1/2/5 step covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = vec![];
    while t <= hi + step * 1e-9 {
        out.push(t);
        t += step;
    }
    out
}

fn expand(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        let pad = lo.abs().max(1.0) * 0.05;
        (lo - pad, hi + pad)
    }
}

/// Rate-distortion chart: bpp on x, `metric` on y, one polyline per codec and
/// a legend. Points without a finite value for `metric` are left out.
pub fn to_svg(report: &DatasetReport, metric: MetricKind) -> String {
    let label = match metric {
        MetricKind::Psnr => "PSNR [dB]",
        MetricKind::MsSsim => "MS-SSIM",
        MetricKind::Bpp => "bpp",
        MetricKind::Mse => "MSE",
    };
    let series: Vec<(&str, Vec<(f64, f64)>)> = report
        .codecs
        .iter()
        .map(|c| {
            let pts = c
                .points
                .iter()
                .filter_map(|p| p.metric(metric).filter(|v| v.is_finite()).map(|v| (p.bpp, v)))
                .collect();
            (c.name.as_str(), pts)
        })
        .collect();
    let all: Vec<(f64, f64)> = series.iter().flat_map(|s| s.1.iter().copied()).collect();
    let bounds = |f: fn(&(f64, f64)) -> f64| {
        let lo = all.iter().map(f).fold(f64::INFINITY, f64::min);
        let hi = all.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
        if lo.is_finite() { expand(lo, hi) } else { (0.0, 1.0) }
    };
    let ((x0, x1), (y0, y1)) = (bounds(|p| p.0), bounds(|p| p.1));
    let (left, right, top, bottom) = (90.0, SVG_WIDTH - 30.0, 50.0, SVG_HEIGHT - 70.0);
    let px = |x: f64| left + (x - x0) / (x1 - x0) * (right - left);
    let py = |y: f64| bottom - (y - y0) / (y1 - y0) * (bottom - top);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="2.0" width="{SVG_WIDTH}" height="{SVG_HEIGHT}" viewBox="0 0 {SVG_WIDTH} {SVG_HEIGHT}" font-family="sans-serif" font-size="14">"#
    );
    let _ = writeln!(s, r#"<title>{}: {label} vs bpp</title>"#, escape(&report.dataset));
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r##"<g class="grid" stroke="#dddddd">"##);
    for t in ticks(x0, x1) {
        let _ = writeln!(s, r#"<line x1="{0:.2}" y1="{top}" x2="{0:.2}" y2="{bottom}"/>"#, px(t));
    }
    for t in ticks(y0, y1) {
        let _ = writeln!(s, r#"<line x1="{left}" y1="{0:.2}" x2="{right}" y2="{0:.2}"/>"#, py(t));
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g class="axes" stroke="black"><line x1="{left}" y1="{bottom}" x2="{right}" y2="{bottom}"/><line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}"/></g>"#);
    let _ = writeln!(s, r#"<g class="ticks">"#);
    for t in ticks(x0, x1) {
        let _ = writeln!(s, r#"<text x="{:.2}" y="{}" text-anchor="middle">{}</text>"#, px(t), bottom + 20.0, trim(t));
    }
    for t in ticks(y0, y1) {
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#, left - 8.0, py(t) + 5.0, trim(t));
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">Bit-rate [bpp]</text>"#, (left + right) / 2.0, SVG_HEIGHT - 25.0);
    let _ = writeln!(s, r#"<text transform="translate(25 {}) rotate(-90)" text-anchor="middle">{label}</text>"#, (top + bottom) / 2.0);
    let _ = writeln!(s, r#"<text x="{}" y="30" text-anchor="middle" font-size="18">{}</text>"#, SVG_WIDTH / 2.0, escape(&report.dataset));
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(
            s,
            r#"<polyline class="codec" data-codec="{}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            escape(name),
            coords.join(" ")
        );
        for &(x, y) in pts {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, px(x), py(y));
        }
    }
    let _ = writeln!(s, r#"<g class="legend">"#);
    for (i, (name, _)) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let y = top + 15.0 + 22.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="{color}" stroke-width="3"/><text x="{}" y="{}">{}</text>"#,
            right - 190.0,
            right - 160.0,
            right - 150.0,
            y + 5.0,
            escape(name)
        );
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    s
}

fn trim(v: f64) -> String {
    let s = format!("{v:.4}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// Writes `<stem>.json`, `<stem>.csv` and `<stem>-<metric>.svg` for the
/// requested formats and returns the written paths.
pub fn emit_report(report: &DatasetReport, stem: &Path, formats: &[ReportFormat]) -> Result<Vec<PathBuf>> {
    let with = |suffix: &str| {
        let mut name = stem.file_name().map(|s| s.to_os_string()).unwrap_or_default();
        name.push(suffix);
        stem.with_file_name(name)
    };
    let mut files = vec![];
    for f in formats {
        match f {
            ReportFormat::Json => files.push((with(".json"), to_json(report))),
            ReportFormat::Csv => files.push((with(".csv"), to_csv(report))),
            ReportFormat::Svg => {
                for (m, suffix) in CHART_METRICS {
                    files.push((with(&format!("-{suffix}.svg")), to_svg(report, m)));
                }
            }
        }
    }
    let mut written = vec![];
    for (path, body) in files {
        std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }
    Ok(written)
}
