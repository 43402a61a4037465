//! Compresses an image into an `.nzb` container and decodes it again with
//! each model family. Pass a PNG/PPM path, or a synthetic image is used.
//!
//! The models here are untrained, so the numbers only show the mechanics;
//! pass a checkpoint to `nzc compress` for real results.

use nzc::image_io;
use nzc::metrics;
use nzc::models::{ArchitectureConfig, BitstreamContainer, CodecModel, Metric, ModelKind};
use nzc::synthetic::photo_like;

fn main() -> nzc::Result<()> {
    let x = match std::env::args().nth(1) {
        Some(p) => image_io::read_image(std::path::Path::new(&p))?,
        None => photo_like(120, 200, 5),
    };
    let (h, w) = (x.shape()[2], x.shape()[3]);
    for kind in ModelKind::ALL {
        let arch = ArchitectureConfig::for_quality(kind, 3, Metric::Mse)?.with_channels(32, 48)?;
        let mut model = CodecModel::<f32>::new(arch, 0)?;
        model.eval()?;
        let bytes = model.compress(&x)?.to_bytes();
        let x_hat = model.decompress(&BitstreamContainer::from_bytes(&bytes)?)?;
        assert_eq!(x_hat, model.reconstruct(&x)?);
        println!(
            "{:<24} {h}x{w}: {:6} bytes, {:.3} bpp (estimate {:.3}), PSNR {:.2} dB",
            kind.name(),
            bytes.len(),
            metrics::bpp(8.0 * bytes.len() as f64, h, w),
            metrics::bpp(model.estimate_bits(&x)?, h, w),
            metrics::psnr(&x, &x_hat)?
        );
    }
    Ok(())
}
