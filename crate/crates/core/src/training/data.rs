use std::path::{Path, PathBuf};

use log::warn;
use rand::Rng;

use crate::error::{Error, Result};
use crate::image_io;
use crate::tensor::Tensor;

/// Loads every image in `paths`, skipping (with a warning) those smaller
/// than `min_side` in either dimension.
pub fn load_images(paths: &[PathBuf], min_side: usize) -> Result<Vec<Tensor<f32>>> {
    let mut out = vec![];
    for p in paths {
        let img = image_io::read_image(p)?;
        let s = img.shape();
        if s[2] < min_side || s[3] < min_side {
            warn!("skipping {}: {}x{} is smaller than {min_side}", p.display(), s[2], s[3]);
            continue;
        }
        out.push(img);
    }
    Ok(out)
}

/// All images in a directory that can provide `min_side` patches.
pub fn load_dir(dir: &Path, min_side: usize) -> Result<Vec<Tensor<f32>>> {
    let paths = image_io::list_images(dir)?;
    let images = load_images(&paths, min_side)?;
    if images.is_empty() {
        return Err(Error::Dataset(format!(
            "no image of at least {min_side}x{min_side} pixels in {}",
            dir.display()
        )));
    }
    Ok(images)
}

/// `count` random `patch x patch` crops. Image choice and offsets are drawn
/// from `rng`, so a fixed seed gives fixed patches.
pub fn patches_from_images<R: Rng + ?Sized>(
    images: &[Tensor<f32>],
    count: usize,
    patch: usize,
    rng: &mut R,
) -> Result<Vec<Tensor<f32>>> {
    let eligible: Vec<&Tensor<f32>> = images
        .iter()
        .filter(|t| t.shape()[2] >= patch && t.shape()[3] >= patch)
        .collect();
    if eligible.is_empty() {
        return Err(Error::Dataset(format!("no image can provide a {patch}x{patch} patch")));
    }
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let img = eligible[rng.gen_range(0..eligible.len())];
        let (h, w) = (img.shape()[2], img.shape()[3]);
        let top = rng.gen_range(0..=h - patch);
        let left = rng.gen_range(0..=w - patch);
        out.push(crop_at(img, top, left, patch));
    }
    Ok(out)
}

/// Reads the listed images and extracts `count` patches with a seeded RNG.
pub fn extract_random_patches(paths: &[PathBuf], count: usize, patch: usize, seed: u64) -> Result<Vec<Tensor<f32>>> {
    use rand::SeedableRng;
    let images = load_images(paths, patch)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    patches_from_images(&images, count, patch, &mut rng)
}

fn crop_at(img: &Tensor<f32>, top: usize, left: usize, patch: usize) -> Tensor<f32> {
    let (h, w) = (img.shape()[2], img.shape()[3]);
    let mut data = Vec::with_capacity(3 * patch * patch);
    for c in 0..3 {
        for i in top..top + patch {
            let row = (c * h + i) * w + left;
            data.extend_from_slice(&img.data()[row..row + patch]);
        }
    }
    Tensor::new(vec![1, 3, patch, patch], data).expect("patch shape")
}
