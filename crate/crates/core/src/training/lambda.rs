use crate::error::{Error, Result};
use crate::models::Metric;

const MSE_LAMBDAS: [f64; 8] = [0.0018, 0.0035, 0.0067, 0.0130, 0.0250, 0.0483, 0.0932, 0.1800];
const MS_SSIM_LAMBDAS: [f64; 8] = [2.40, 4.58, 8.73, 16.64, 31.73, 60.50, 115.37, 220.00];

/// Rate-distortion trade-off for a quality index 1..=8.
pub fn lambda_for_quality(metric: Metric, quality: u8) -> Result<f64> {
    if !(1..=8).contains(&quality) {
        return Err(Error::input(format!("quality must be in 1..=8, got {quality}")));
    }
    let table = match metric {
        Metric::Mse => &MSE_LAMBDAS,
        Metric::MsSsim => &MS_SSIM_LAMBDAS,
    };
    Ok(table[quality as usize - 1])
}
