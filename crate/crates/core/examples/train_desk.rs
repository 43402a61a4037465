//! Desk-scale training of a small factorized model on synthetic patches.
//!
//! `cargo run --release --example train_desk -- [steps] [out_dir]` (default
//! 5000 steps). With `out_dir`, checkpoints and `metrics.jsonl` are written
//! there; `nzc compress --checkpoint <out_dir>/best.nzck` then uses the model.

use nzc::models::{Metric, ModelKind};
use nzc::training::{prepare_patches, Trainer, TrainingConfig};

fn main() -> nzc::Result<()> {
    let steps = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5000);
    let mut cfg = TrainingConfig::new(ModelKind::Factorized, 1, Metric::Mse)?;
    cfg.lambda = 0.01;
    cfg.channels = Some((32, 48));
    cfg.patch_size = 64;
    cfg.batch_size = 8;
    cfg.train_patches = 500;
    cfg.eval_patches = 32;
    cfg.max_steps = steps;
    cfg.eval_every = (steps / 10).max(1);
    let (train, eval) = prepare_patches(&cfg)?;
    let start = std::time::Instant::now();
    let mut trainer = Trainer::new(cfg)?;
    let out_dir = std::env::args().nth(2).map(std::path::PathBuf::from);
    trainer.run(&train, &eval, out_dir.as_deref(), |r| {
        println!(
            "step {:5}  loss {:.4}  mse {:.5}  bpp {:.3}  aux {:.2}  lr {:e}  ({:.0?})",
            r.step,
            r.total,
            r.distortion,
            r.rate_bpp,
            r.aux,
            r.lr,
            start.elapsed()
        );
    })?;
    Ok(())
}
