//! Reading and writing RGB images as `[1, 3, H, W]` tensors in `[0, 1]`.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// File extensions recognized when listing image directories.
pub const IMAGE_EXTENSIONS: [&str; 4] = ["png", "ppm", "pnm", "pgm"];

fn image_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Loads an image file as RGB.
pub fn read_image(path: &Path) -> Result<Tensor<f32>> {
    let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
    if !ext.as_deref().is_some_and(|e| IMAGE_EXTENSIONS.contains(&e)) {
        return Err(Error::Input(format!(
            "{}: only 8-bit PNG and PPM images are supported; convert first (e.g. `convert in.jpg out.png`)",
            path.display()
        )));
    }
    let img = image::open(path).map_err(|e| image_err(path, e))?.to_rgb8();
    Ok(from_rgb8(img.width() as usize, img.height() as usize, img.as_raw()))
}

/// Planar `[1, 3, H, W]` tensor from interleaved 8-bit RGB.
pub fn from_rgb8(width: usize, height: usize, rgb: &[u8]) -> Tensor<f32> {
    let plane = width * height;
    let mut data = vec![0.0f32; 3 * plane];
    for (i, px) in rgb.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f32 / 255.0;
        }
    }
    Tensor::new(vec![1, 3, height, width], data).expect("rgb shape")
}

/// Interleaved 8-bit RGB of the first image in `x`, rounding to nearest.
pub fn to_rgb8<T: Float>(x: &Tensor<T>) -> (usize, usize, Vec<u8>) {
    let s = x.shape();
    let (h, w) = (s[2], s[3]);
    let plane = h * w;
    let mut out = Vec::with_capacity(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            let v = x.data()[c * plane + i].f64().clamp(0.0, 1.0);
            out.push((v * 255.0).round() as u8);
        }
    }
    (w, h, out)
}

/// Writes the first image of `x`; format follows the extension (png or ppm).
pub fn write_image<T: Float>(path: &Path, x: &Tensor<T>) -> Result<()> {
    let (w, h, rgb) = to_rgb8(x);
    let img = image::RgbImage::from_raw(w as u32, h as u32, rgb).expect("buffer size");
    img.save(path).map_err(|e| image_err(path, e))
}

/// Image files directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = vec![];
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        if path.is_file() && ext.is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.as_str())) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_and_ppm_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let rgb: Vec<u8> = (0..5 * 4 * 3).map(|i| (i * 7 % 256) as u8).collect();
        let t = from_rgb8(5, 4, &rgb);
        assert_eq!(t.shape(), &[1, 3, 4, 5]);
        for name in ["a.png", "b.ppm"] {
            let p = dir.path().join(name);
            write_image(&p, &t).unwrap();
            assert_eq!(read_image(&p).unwrap(), t);
        }
        std::fs::write(dir.path().join("notes.txt"), "x").unwrap();
        let listed = list_images(dir.path()).unwrap();
        assert_eq!(listed.len(), 2);
        assert!(matches!(read_image(&dir.path().join("notes.txt")), Err(Error::Input(_))));
        std::fs::write(dir.path().join("fake.png"), "x").unwrap();
        assert!(matches!(read_image(&dir.path().join("fake.png")), Err(Error::Image { .. })));
    }
}
