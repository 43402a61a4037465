//! Sweeps the Pillow JPEG adapter over three qualities on a synthetic
//! photo, adds an untrained learned model for comparison, and writes
//! JSON/CSV/SVG reports into a temporary directory.
//!
//! Needs `python3` with Pillow on PATH.

use std::path::Path;

use nzc::benchmark::{self, emit_report, DatasetReport, ReportFormat};
use nzc::image_io;
use nzc::models::{ArchitectureConfig, CodecModel, Metric, ModelKind};
use nzc::synthetic::photo_like;

fn main() -> nzc::Result<()> {
    let conf = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/adapters/adapters.conf");
    let jpeg = benchmark::load_adapter(&conf, "jpeg")?;
    if let Err(e) = jpeg.check_executables() {
        println!("skipping: {e}");
        return Ok(());
    }
    let work = tempfile::tempdir().map_err(|e| nzc::Error::Io {
        path: std::env::temp_dir(),
        source: e,
    })?;
    let images = work.path().join("images");
    std::fs::create_dir(&images).expect("fresh temp dir");
    image_io::write_image(&images.join("photo.png"), &photo_like(256, 256, 9))?;

    let jpeg_eval = benchmark::eval_codec(&jpeg, &images, &[10.0, 50.0, 90.0], 2)?;
    let arch = ArchitectureConfig::for_quality(ModelKind::Factorized, 1, Metric::Mse)?.with_channels(32, 48)?;
    let mut model = CodecModel::new(arch, 0)?;
    model.eval()?;
    let model_eval = benchmark::eval_model(&model, &images, 1)?;

    let report = DatasetReport::new("synthetic", vec![jpeg_eval, model_eval]);
    for c in &report.codecs {
        for p in &c.points {
            println!("{:<16} q={:<3} {:.3} bpp  {:.2} dB", c.name, p.quality, p.bpp, p.psnr);
        }
    }
    let files = emit_report(&report, &work.path().join("rd"), &[ReportFormat::Json, ReportFormat::Csv, ReportFormat::Svg])?;
    for f in files {
        println!("wrote {} ({} bytes)", f.display(), std::fs::metadata(&f).map(|m| m.len()).unwrap_or(0));
    }
    Ok(())
}
