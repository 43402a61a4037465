use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// The in-scope model families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    /// Factorized prior on the latent.
    Factorized,
    /// Hyperprior predicting per-element Gaussian scales.
    ScaleHyperprior,
    /// Hyperprior predicting Gaussian means and scales.
    MeanScaleHyperprior,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [
        ModelKind::Factorized,
        ModelKind::ScaleHyperprior,
        ModelKind::MeanScaleHyperprior,
    ];

    pub fn id(self) -> u8 {
        match self {
            ModelKind::Factorized => 0,
            ModelKind::ScaleHyperprior => 1,
            ModelKind::MeanScaleHyperprior => 2,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.id() == id)
            .ok_or_else(|| Error::Format(format!("unknown model id {id}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Factorized => "factorized",
            ModelKind::ScaleHyperprior => "scale_hyperprior",
            ModelKind::MeanScaleHyperprior => "mean_scale_hyperprior",
        }
    }

    pub fn has_hyperprior(self) -> bool {
        self != ModelKind::Factorized
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "factorized" | "bmshj2018-factorized" => Ok(ModelKind::Factorized),
            "scale_hyperprior" | "hyperprior" | "bmshj2018-hyperprior" => Ok(ModelKind::ScaleHyperprior),
            "mean_scale_hyperprior" | "mean_scale" | "mbt2018-mean" => Ok(ModelKind::MeanScaleHyperprior),
            other => Err(Error::input(format!(
                "unknown model `{other}` (expected factorized, scale_hyperprior or mean_scale_hyperprior)"
            ))),
        }
    }
}

/// Distortion the model is optimized for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Metric {
    Mse,
    MsSsim,
}

impl Metric {
    pub fn id(self) -> u8 {
        match self {
            Metric::Mse => 0,
            Metric::MsSsim => 1,
        }
    }

    pub fn from_id(id: u8) -> Result<Self> {
        match id {
            0 => Ok(Metric::Mse),
            1 => Ok(Metric::MsSsim),
            _ => Err(Error::Format(format!("unknown metric id {id}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Metric::Mse => "mse",
            Metric::MsSsim => "ms-ssim",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mse" => Ok(Metric::Mse),
            "ms-ssim" | "ms_ssim" | "msssim" => Ok(Metric::MsSsim),
            other => Err(Error::input(format!("unknown metric `{other}` (expected mse or ms-ssim)"))),
        }
    }
}

pub const MIN_QUALITY: u8 = 1;
pub const MAX_QUALITY: u8 = 8;

/// Downsampling factor of the analysis transform.
pub const STRIDE: usize = 16;

/// Smallest accepted image side.
pub const MIN_SIDE: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ArchitectureConfig {
    pub model: ModelKind,
    /// Internal channels of the transforms.
    pub n: usize,
    /// Latent channels.
    pub m: usize,
    pub quality: u8,
    pub metric: Metric,
}

impl ArchitectureConfig {
    /// Channel widths from the quality: 1-5 use (128, 192), 6-8 use (192, 320).
    pub fn for_quality(model: ModelKind, quality: u8, metric: Metric) -> Result<Self> {
        if !(MIN_QUALITY..=MAX_QUALITY).contains(&quality) {
            return Err(Error::input(format!("quality must be in 1..=8, got {quality}")));
        }
        let (n, m) = if quality <= 5 { (128, 192) } else { (192, 320) };
        Ok(ArchitectureConfig {
            model,
            n,
            m,
            quality,
            metric,
        })
    }

    /// Overrides the channel widths, e.g. for small desk-scale experiments.
    pub fn with_channels(mut self, n: usize, m: usize) -> Result<Self> {
        if n == 0 || m == 0 {
            return Err(Error::input("channel counts must be positive"));
        }
        self.n = n;
        self.m = m;
        Ok(self)
    }

    /// Padding multiple for input images.
    pub fn pad_multiple(&self) -> usize {
        STRIDE
    }
}
