//! Distortion and rate metrics: MSE, PSNR over RGB, MS-SSIM and bits per pixel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Float, Graph, Tensor, Var};

/// Per-scale weights of the five-scale MS-SSIM.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
/// Smallest side for which all five scales fit the 11-tap window.
pub const MS_SSIM_MIN_SIDE: usize = 176;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    Psnr,
    MsSsim,
    Bpp,
    Mse,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricValue {
    pub kind: MetricKind,
    pub value: f64,
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            op,
            axis: "rank",
            expected: a.len(),
            actual: b.len(),
        });
    }
    for (i, (&x, &y)) in a.iter().zip(b).enumerate() {
        if x != y {
            return Err(Error::Dimension {
                op,
                axis: ["N", "C", "H", "W"].get(i).copied().unwrap_or("trailing"),
                expected: x,
                actual: y,
            });
        }
    }
    Ok(())
}

/// Mean of `(a - b)^2` over all elements, accumulated in `f64`.
pub fn mse<T: Float>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    same_shape("mse", a.shape(), b.shape())?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = x.f64() - y.f64();
            d * d
        })
        .sum();
    Ok(s / a.numel() as f64)
}

/// PSNR in dB with peak 1 over all channels jointly; `+inf` for identical inputs.
pub fn psnr<T: Float>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

/// Bits per pixel of `total_bits` over an `h x w` image.
pub fn bpp(total_bits: f64, h: usize, w: usize) -> f64 {
    total_bits / (h * w) as f64
}

/// Normalized 1-D Gaussian window.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Differentiable MS-SSIM of `[N, C, H, W]` pairs with values in `[0, 1]`,
/// computed per channel and image, then averaged. Returns a scalar.
pub fn ms_ssim_graph<'g, T: Float>(a: Var<'g, T>, b: Var<'g, T>) -> Result<Var<'g, T>> {
    same_shape("ms_ssim", &a.shape(), &b.shape())?;
    let s = a.shape();
    if s.len() != 4 {
        return Err(Error::input("ms_ssim expects [N, C, H, W] tensors"));
    }
    if s[2].min(s[3]) < MS_SSIM_MIN_SIDE {
        return Err(Error::input(format!(
            "ms_ssim needs images of at least {MS_SSIM_MIN_SIDE}x{MS_SSIM_MIN_SIDE}, got {}x{}",
            s[2], s[3]
        )));
    }
    let window = gaussian_window(SSIM_WINDOW, SSIM_SIGMA);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let (mut x, mut y) = (a, b);
    let mut result: Option<Var<'g, T>> = None;
    for (scale, &w) in MS_SSIM_WEIGHTS.iter().enumerate() {
        let mu_x = x.blur_valid(&window)?;
        let mu_y = y.blur_valid(&window)?;
        let mu_xx = mu_x.square();
        let mu_yy = mu_y.square();
        let mu_xy = mu_x.mul(&mu_y)?;
        let s_xx = x.square().blur_valid(&window)?.sub(&mu_xx)?;
        let s_yy = y.square().blur_valid(&window)?.sub(&mu_yy)?;
        let s_xy = x.mul(&y)?.blur_valid(&window)?.sub(&mu_xy)?;
        let cs = s_xy
            .scale(2.0)
            .add_scalar(c2)
            .div(&s_xx.add(&s_yy)?.add_scalar(c2))?;
        let last = scale + 1 == MS_SSIM_WEIGHTS.len();
        let term = if last {
            let lum = mu_xy
                .scale(2.0)
                .add_scalar(c1)
                .div(&mu_xx.add(&mu_yy)?.add_scalar(c1))?;
            lum.mul(&cs)?
        } else {
            cs
        };
        let factor = term.mean_spatial()?.relu().powf(w);
        result = Some(match result {
            Some(r) => r.mul(&factor)?,
            None => factor,
        });
        if !last {
            x = x.avg_pool2()?;
            y = y.avg_pool2()?;
        }
    }
    Ok(result.expect("five scales").mean())
}

/// MS-SSIM evaluated in 64-bit precision.
pub fn ms_ssim<T: Float>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    let g = Graph::<f64>::new();
    let v = ms_ssim_graph(g.constant(a.cast()), g.constant(b.cast()))?;
    Ok(v.value().item())
}
