//! PSNR and MS-SSIM of progressively noisier copies of an image.

use nzc::metrics::{ms_ssim, psnr, psnr_from_mse};
use nzc::synthetic::photo_like;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> nzc::Result<()> {
    let x = photo_like(256, 256, 3);
    println!("identical: PSNR {} dB, MS-SSIM {}", psnr(&x, &x)?, ms_ssim(&x, &x)?);
    println!("MSE 0.01 -> {} dB", psnr_from_mse(0.01));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for noise in [0.01, 0.03, 0.1] {
        let mut y = x.clone();
        y.data_mut().iter_mut().for_each(|v| *v = (*v + rng.gen_range(-noise..noise)).clamp(0.0, 1.0));
        println!("noise +-{noise}: PSNR {:.2} dB, MS-SSIM {:.5}", psnr(&x, &y)?, ms_ssim(&x, &y)?);
    }
    Ok(())
}
