//! Conditional Gaussian entropy model with a fixed log-spaced table of scales.

use statrs::function::erf::{erfc, erfc_inv};

use super::cdf::QuantizedCdfTable;
use crate::error::{Error, Result};
use crate::tensor::{Float, Var};

pub const SCALE_MIN: f64 = 0.11;
pub const SCALE_MAX: f64 = 256.0;
pub const SCALE_LEVELS: usize = 64;

/// `levels` values spaced evenly in log domain on `[min, max]`.
pub fn log_spaced_scales(min: f64, max: f64, levels: usize) -> Vec<f64> {
    let (a, b) = (min.ln(), max.ln());
    (0..levels)
        .map(|i| (a + (b - a) * i as f64 / (levels - 1) as f64).exp())
        .collect()
}

fn phi(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianConditional {
    scale_table: Vec<f64>,
    pub tail_mass: f64,
    pub likelihood_floor: f64,
}

impl Default for GaussianConditional {
    fn default() -> Self {
        GaussianConditional::new(log_spaced_scales(SCALE_MIN, SCALE_MAX, SCALE_LEVELS)).expect("valid default table")
    }
}

impl GaussianConditional {
    pub fn new(scale_table: Vec<f64>) -> Result<Self> {
        if scale_table.is_empty()
            || scale_table[0] <= 0.0
            || scale_table.windows(2).any(|w| !(w[1] > w[0]))
            || scale_table.iter().any(|s| !s.is_finite())
        {
            return Err(Error::contract("scale table must be finite, positive and strictly increasing"));
        }
        Ok(GaussianConditional {
            scale_table,
            tail_mass: 1e-9,
            likelihood_floor: 1e-9,
        })
    }

    pub fn scale_table(&self) -> &[f64] {
        &self.scale_table
    }

    /// Lower bound applied to predicted scales.
    pub fn scale_bound(&self) -> f64 {
        self.scale_table[0]
    }

    /// Half-width multiplier: `-Phi^{-1}(tail_mass / 2)`.
    pub fn tail_multiplier(&self) -> f64 {
        std::f64::consts::SQRT_2 * erfc_inv(self.tail_mass)
    }

    /// Index of the smallest table entry not below `sigma` (rounding up),
    /// clamped to the table.
    pub fn index_for_scale(&self, sigma: f64) -> usize {
        if sigma.is_nan() {
            return self.scale_table.len() - 1;
        }
        self.scale_table
            .partition_point(|&s| s < sigma)
            .min(self.scale_table.len() - 1)
    }

    /// Unfloored bin probability of integer-centred `value` under N(mean, sigma).
    pub fn bin_probability(value: f64, mean: f64, sigma: f64) -> f64 {
        let v = (value - mean).abs();
        phi((0.5 - v) / sigma) - phi((-0.5 - v) / sigma)
    }

    pub fn likelihood_scalar(&self, value: f64, mean: f64, sigma: f64) -> f64 {
        Self::bin_probability(value, mean, sigma.max(self.scale_bound())).max(self.likelihood_floor)
    }

    /// Differentiable per-element bin probabilities of `y` given `scales`
    /// (and optionally `means`), all of one shape.
    pub fn likelihood<'g, T: Float>(
        &self,
        y: Var<'g, T>,
        scales: Var<'g, T>,
        means: Option<Var<'g, T>>,
    ) -> Result<Var<'g, T>> {
        if y.shape() != scales.shape() {
            return Err(Error::contract(format!(
                "gaussian likelihood: values {:?} and scales {:?} differ in shape",
                y.shape(),
                scales.shape()
            )));
        }
        let centred = match means {
            Some(m) => y.sub(&m)?,
            None => y,
        };
        let v = centred.abs();
        let sigma = scales.lower_bound(self.scale_bound());
        let upper = v.neg().add_scalar(0.5).div(&sigma)?.normal_cdf();
        let lower = v.neg().add_scalar(-0.5).div(&sigma)?.normal_cdf();
        Ok(upper.sub(&lower)?.lower_bound(self.likelihood_floor))
    }

    /// One row per table scale, covering `[-ceil(s*m), ceil(s*m)]` with
    /// `m = tail_multiplier()`.
    pub fn build_table(&self, precision: u32) -> Result<QuantizedCdfTable> {
        let mult = self.tail_multiplier();
        let rows = self.scale_table.iter().map(|&sigma| {
            let half = (sigma * mult).ceil() as i32;
            let pmf: Vec<f64> = (-half..=half)
                .map(|k| Self::bin_probability(k as f64, 0.0, sigma))
                .collect();
            let tail = 2.0 * phi(-(half as f64 + 0.5) / sigma);
            (-half, pmf, tail)
        });
        QuantizedCdfTable::from_pmfs(rows, precision)
    }
}
