use serde::{Deserialize, Serialize};

use crate::entropy;
use crate::error::{Error, Result};
use crate::metrics::ms_ssim_graph;
use crate::models::Metric;
use crate::tensor::{Float, Var};

/// Scalar components of one rate-distortion evaluation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RdLossBreakdown {
    pub total: f64,
    /// MSE on `[0, 1]` pixels, or the MS-SSIM value.
    pub distortion: f64,
    pub rate_bpp: f64,
    pub aux: f64,
}

impl RdLossBreakdown {
    /// `lambda * 255^2 * D + R` (mse) or `lambda * (1 - D) + R` (ms-ssim).
    pub fn recompose(&self, lambda: f64, metric: Metric) -> f64 {
        rd_formula(self.distortion, self.rate_bpp, lambda, metric)
    }
}

pub fn rd_formula(distortion: f64, rate_bpp: f64, lambda: f64, metric: Metric) -> f64 {
    match metric {
        Metric::Mse => lambda * 255.0 * 255.0 * distortion + rate_bpp,
        Metric::MsSsim => lambda * (1.0 - distortion) + rate_bpp,
    }
}

/// Differentiable rate-distortion loss. The rate is `sum(-log2 p)` over all
/// likelihood tensors divided by the batch's pixel count `N * H * W`.
pub fn rd_loss<'g, T: Float>(
    x: Var<'g, T>,
    x_hat: Var<'g, T>,
    likelihoods: &[Var<'g, T>],
    lambda: f64,
    metric: Metric,
) -> Result<(Var<'g, T>, RdLossBreakdown)> {
    if likelihoods.is_empty() {
        return Err(Error::contract("rd_loss needs at least one likelihood tensor"));
    }
    let s = x.shape();
    if s.len() != 4 || x_hat.shape() != s {
        return Err(Error::contract(format!(
            "rd_loss: reconstruction {:?} does not match input {s:?}",
            x_hat.shape()
        )));
    }
    let pixels = (s[0] * s[2] * s[3]) as f64;
    let mut bits = entropy::bits(&likelihoods[0]);
    for l in &likelihoods[1..] {
        bits = bits.add(&entropy::bits(l))?;
    }
    let rate = bits.scale(1.0 / pixels);
    let (dist, weighted) = match metric {
        Metric::Mse => {
            let d = x_hat.sub(&x)?.square().mean();
            (d, d.scale(lambda * 255.0 * 255.0))
        }
        Metric::MsSsim => {
            let d = ms_ssim_graph(x_hat, x)?;
            (d, d.neg().add_scalar(1.0).scale(lambda))
        }
    };
    let total = weighted.add(&rate)?;
    let breakdown = RdLossBreakdown {
        total: total.value().item().f64(),
        distortion: dist.value().item().f64(),
        rate_bpp: rate.value().item().f64(),
        aux: 0.0,
    };
    Ok((total, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{gradcheck, Graph, Tensor};

    #[test]
    fn formula_examples() {
        assert!((rd_formula(0.001, 0.5, 0.01, Metric::Mse) - 1.15025).abs() < 1e-12);
        assert_eq!(rd_formula(1.0, 0.7, 16.64, Metric::MsSsim), 0.7);
    }

    #[test]
    fn perfect_reconstruction_costs_only_rate() {
        let g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(vec![2, 3, 4, 4], 0.3));
        let lik = g.constant(Tensor::full(vec![2, 5, 2, 2], 0.5));
        let (total, b) = rd_loss(x, x, &[lik], 0.05, Metric::Mse).unwrap();
        // 40 bits over 2 * 16 pixels
        assert!((total.value().item() - 40.0 / 32.0).abs() < 1e-12);
        assert_eq!(b.distortion, 0.0);
        assert!((b.recompose(0.05, Metric::Mse) - b.total).abs() < 1e-12);

        let xs = g.constant(Tensor::full(vec![1, 3, 176, 176], 0.4));
        let lik = g.constant(Tensor::full(vec![1, 1, 1, 8], 0.25));
        let (_, b) = rd_loss(xs, xs, &[lik], 8.73, Metric::MsSsim).unwrap();
        assert!((b.total - 16.0 / (176.0 * 176.0)).abs() < 1e-12);
        assert!(matches!(rd_loss(x, x, &[], 0.05, Metric::Mse), Err(Error::Contract(_))));
    }

    #[test]
    fn gradient_wrt_reconstruction() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(3);
        let x = Tensor::<f64>::uniform(vec![1, 3, 4, 4], 0.0, 1.0, &mut rng);
        let xh = Tensor::<f64>::uniform(vec![1, 3, 4, 4], 0.0, 1.0, &mut rng);
        let p = Tensor::<f64>::uniform(vec![1, 2, 2, 2], 0.05, 0.9, &mut rng);
        let r = gradcheck::check(&[x, xh, p], 1e-6, |_, v| Ok(rd_loss(v[0], v[1], &[v[2]], 0.0130, Metric::Mse)?.0)).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}
