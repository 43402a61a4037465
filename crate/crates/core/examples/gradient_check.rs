//! Checks hand-written backward rules against central differences in f64:
//! a conv + GDN + transposed-conv stack and the full rate-distortion loss.

use nzc::models::Metric;
use nzc::tensor::{gradcheck, Tensor};
use nzc::training::rd_loss;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> nzc::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x = Tensor::<f64>::uniform(vec![1, 2, 8, 8], -1.0, 1.0, &mut rng);
    let w = Tensor::<f64>::uniform(vec![3, 2, 5, 5], -0.3, 0.3, &mut rng);
    let b = Tensor::<f64>::uniform(vec![3], -0.1, 0.1, &mut rng);
    let beta = Tensor::<f64>::uniform(vec![3], 0.5, 1.5, &mut rng);
    let gamma = Tensor::<f64>::uniform(vec![3, 3], 0.0, 0.2, &mut rng);
    let wt = Tensor::<f64>::uniform(vec![3, 2, 5, 5], -0.3, 0.3, &mut rng);
    let bt = Tensor::<f64>::uniform(vec![2], -0.1, 0.1, &mut rng);
    let report = gradcheck::check(&[x, w, b, beta, gamma, wt, bt], 1e-6, |_, v| {
        let y = v[0].conv2d(&v[1], &v[2], 2, 2)?.gdn(&v[3], &v[4], false)?;
        Ok(y.conv_transpose2d(&v[5], &v[6], 2, 2, 1)?.square().sum())
    })?;
    println!("conv/gdn/deconv: {} entries, max rel error {:.2e}", report.checked, report.max_rel_error);

    let x = Tensor::<f64>::uniform(vec![1, 3, 4, 4], 0.0, 1.0, &mut rng);
    let x_hat = Tensor::<f64>::uniform(vec![1, 3, 4, 4], 0.0, 1.0, &mut rng);
    let lik = Tensor::<f64>::uniform(vec![1, 4, 1, 1], 0.05, 0.95, &mut rng);
    let report = gradcheck::check(&[x, x_hat, lik], 1e-6, |_, v| Ok(rd_loss(v[0], v[1], &[v[2]], 0.0130, Metric::Mse)?.0))?;
    println!("rd_loss (mse):   {} entries, max rel error {:.2e}", report.checked, report.max_rel_error);
    Ok(())
}
