//! Rate-distortion training: loss, lambda table, plateau schedule, patch
//! sampling, checkpoints and the optimization loop.
//!
//! Each step runs one forward pass with additive-noise quantization, then
//! updates the main parameters from the rate-distortion loss (gradient norm
//! clipped) and the bottleneck quantiles from the auxiliary loss with a
//! separate Adam.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod lambda;
pub mod loss;
pub mod schedule;

use std::io::Write;
use std::path::Path;

use log::info;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, RngState, CHECKPOINT_EXTENSION};
pub use config::TrainingConfig;
pub use data::{extract_random_patches, load_dir, load_images, patches_from_images};
pub use lambda::lambda_for_quality;
pub use loss::{rd_formula, rd_loss, RdLossBreakdown};
pub use schedule::LrPlateau;

use crate::error::{Error, Result};
use crate::models::CodecModel;
use crate::synthetic::photo_like;
use crate::tensor::{clip_grad_norm, Adam, AdamConfig, Graph, Tensor};

/// One line of the JSON-lines metrics log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub total: f64,
    pub distortion: f64,
    pub rate_bpp: f64,
    pub aux: f64,
    pub lr: f64,
}

pub struct Trainer {
    pub model: CodecModel<f32>,
    pub config: TrainingConfig,
    main_opt: Adam<f32>,
    aux_opt: Adam<f32>,
    pub scheduler: LrPlateau,
    rng: ChaCha8Rng,
    pub step: u64,
    /// Lowest evaluation loss seen so far.
    pub best_eval: f64,
}

impl Trainer {
    pub fn new(config: TrainingConfig) -> Result<Self> {
        config.validate()?;
        let model = CodecModel::new(config.architecture()?, config.seed)?;
        let main_opt = Adam::new(AdamConfig::default(), &model.store, &model.main_param_ids());
        let aux_opt = Adam::new(AdamConfig::default(), &model.store, &model.aux_param_ids());
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        // keep batch sampling and noise independent of the initializer stream
        rng.set_stream(1);
        Ok(Trainer {
            scheduler: LrPlateau::new(config.initial_lr, config.patience),
            model,
            config,
            main_opt,
            aux_opt,
            rng,
            step: 0,
            best_eval: f64::INFINITY,
        })
    }

    /// Resumes from a checkpoint written by [`Trainer::checkpoint`].
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config = TrainingConfig::parse(&ck.training_config)
            .map_err(|e| Error::Format(format!("checkpoint training config: {e}")))?;
        if config.architecture()? != ck.arch {
            return Err(Error::ModelMismatch("checkpoint architecture does not match its training config".into()));
        }
        let mut t = Trainer::new(config)?;
        t.model = ck.to_model()?;
        t.model.train();
        Checkpoint::restore_adam(&ck.main_adam, &t.model, &mut t.main_opt)?;
        Checkpoint::restore_adam(&ck.aux_adam, &t.model, &mut t.aux_opt)?;
        t.scheduler = ck.scheduler.clone();
        t.step = ck.step;
        t.best_eval = ck.best_eval;
        let r = ck.rng.ok_or_else(|| Error::Format("checkpoint has no training RNG state".into()))?;
        t.rng = ChaCha8Rng::from_seed(r.seed);
        t.rng.set_stream(r.stream);
        t.rng.set_word_pos(r.word_pos);
        Ok(t)
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        Checkpoint::capture(
            &self.model,
            &self.main_opt,
            &self.aux_opt,
            self.config.to_text(),
            self.step,
            self.best_eval,
            &self.scheduler,
            RngState {
                seed: self.rng.get_seed(),
                stream: self.rng.get_stream(),
                word_pos: self.rng.get_word_pos(),
            },
        )
    }

    /// One optimization step on a batch drawn from `pool`.
    pub fn train_step(&mut self, pool: &[Tensor<f32>]) -> Result<RdLossBreakdown> {
        if pool.is_empty() {
            return Err(Error::Dataset("empty training pool".into()));
        }
        let batch: Vec<Tensor<f32>> = (0..self.config.batch_size)
            .map(|_| pool[self.rng.gen_range(0..pool.len())].clone())
            .collect();
        let x = Tensor::stack(&batch)?;
        let g = Graph::new();
        let xv = g.constant(x);
        let out = self.model.forward_train(&g, xv, &mut self.rng)?;
        let (loss, mut breakdown) = rd_loss(xv, out.x_hat, &out.likelihoods, self.config.lambda, self.config.metric)?;
        let aux = self.model.bottleneck.aux_loss(&g, &self.model.store)?;
        breakdown.aux = aux.value().item() as f64;
        if !breakdown.total.is_finite() || !breakdown.aux.is_finite() {
            let (node, op) = g.first_non_finite().unwrap_or((0, "unknown"));
            return Err(Error::NonFinite { op, node });
        }
        // the two losses touch disjoint parameter sets, so one sweep serves both
        let grads = g.backward(loss.add(&aux)?)?;
        let main_ids = self.model.main_param_ids();
        let store = &mut self.model.store;
        store.zero_grad();
        grads.accumulate_into(store);
        clip_grad_norm(store, &main_ids, self.config.clip_norm);
        self.main_opt.step(store, self.scheduler.lr)?;
        self.aux_opt.step(store, self.config.aux_lr)?;
        self.step += 1;
        Ok(breakdown)
    }

    /// Mean loss over `patches` with rounding quantization (no updates).
    pub fn evaluate(&self, patches: &[Tensor<f32>]) -> Result<RdLossBreakdown> {
        evaluate_model(&self.model, patches, self.config.lambda, self.config.metric, self.config.batch_size)
    }

    fn record(&self, b: &RdLossBreakdown) -> EvalRecord {
        EvalRecord {
            step: self.step,
            total: b.total,
            distortion: b.distortion,
            rate_bpp: b.rate_bpp,
            aux: b.aux,
            lr: self.scheduler.lr,
        }
    }

    /// Trains until `max_steps`, evaluating at the start, every `eval_every`
    /// steps and at the end. With `out_dir`, writes `best.nzck` on every
    /// improvement, `last.nzck` at the end and appends to `metrics.jsonl`.
    /// Returns the final checkpoint.
    pub fn run(
        &mut self,
        train: &[Tensor<f32>],
        eval: &[Tensor<f32>],
        out_dir: Option<&Path>,
        mut on_eval: impl FnMut(&EvalRecord),
    ) -> Result<Checkpoint> {
        let mut log = match out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let path = dir.join("metrics.jsonl");
                // a fresh run starts a fresh log, a resumed one continues it
                let file = std::fs::OpenOptions::new()
                    .create(true)
                    .write(true)
                    .append(self.step > 0)
                    .truncate(self.step == 0)
                    .open(&path)
                    .map_err(|e| Error::io(&path, e))?;
                Some((path, file))
            }
            None => None,
        };
        let mut evaluate_and_log = |t: &mut Trainer| -> Result<()> {
            let b = t.evaluate(eval)?;
            let rec = t.record(&b);
            t.scheduler.step(b.total);
            info!(
                "step {} loss {:.5} dist {:.6} bpp {:.4} aux {:.3} lr {:e}",
                rec.step, rec.total, rec.distortion, rec.rate_bpp, rec.aux, rec.lr
            );
            if let Some((path, file)) = &mut log {
                let line = serde_json::to_string(&rec).expect("plain record");
                writeln!(file, "{line}").map_err(|e| Error::io(path.as_path(), e))?;
            }
            on_eval(&rec);
            if b.total < t.best_eval {
                t.best_eval = b.total;
                if let Some(dir) = out_dir {
                    t.checkpoint()?.save(&dir.join(format!("best.{CHECKPOINT_EXTENSION}")))?;
                }
            }
            Ok(())
        };
        if self.step == 0 {
            evaluate_and_log(self)?;
        }
        while self.step < self.config.max_steps {
            self.train_step(train)?;
            if self.step % self.config.eval_every == 0 || self.step == self.config.max_steps {
                evaluate_and_log(self)?;
            }
        }
        let ck = self.checkpoint()?;
        if let Some(dir) = out_dir {
            ck.save(&dir.join(format!("last.{CHECKPOINT_EXTENSION}")))?;
        }
        Ok(ck)
    }
}

/// Mean rate-distortion loss of `model` over `patches` (equal-size tensors
/// `[1, 3, h, w]`), evaluated in batches with rounding quantization.
pub fn evaluate_model(
    model: &CodecModel<f32>,
    patches: &[Tensor<f32>],
    lambda: f64,
    metric: crate::models::Metric,
    batch_size: usize,
) -> Result<RdLossBreakdown> {
    if patches.is_empty() {
        return Err(Error::Dataset("empty evaluation set".into()));
    }
    let mut acc = RdLossBreakdown::default();
    let g0 = Graph::<f32>::new();
    let aux = model.bottleneck.aux_loss(&g0, &model.store)?.value().item() as f64;
    for chunk in patches.chunks(batch_size.max(1)) {
        let g = Graph::new();
        let x = g.constant(Tensor::stack(chunk)?);
        let out = model.forward_eval(&g, x)?;
        let (_, b) = rd_loss(x, out.x_hat, &out.likelihoods, lambda, metric)?;
        let w = chunk.len() as f64 / patches.len() as f64;
        acc.distortion += w * b.distortion;
        acc.rate_bpp += w * b.rate_bpp;
    }
    acc.aux = aux;
    acc.total = acc.recompose(lambda, metric);
    Ok(acc)
}

/// Training and evaluation patches for `config`: crops of the images in
/// `train_dir` / `eval_dir`, or of seeded synthetic photo-like images when
/// no directory is given. The evaluation crops never share a seed with the
/// training crops.
pub fn prepare_patches(config: &TrainingConfig) -> Result<(Vec<Tensor<f32>>, Vec<Tensor<f32>>)> {
    let p = config.patch_size;
    let source = |dir: Option<&Path>, salt: u64| -> Result<Vec<Tensor<f32>>> {
        match dir {
            Some(d) => load_dir(d, p),
            None => {
                let side = (2 * p).max(256);
                Ok((0..8).map(|i| photo_like(side, side, config.seed ^ (salt + i))).collect())
            }
        }
    };
    let train_images = source(config.train_dir.as_deref(), 0x1000)?;
    let eval_images = match (&config.eval_dir, &config.train_dir) {
        (Some(d), _) => source(Some(d), 0)?,
        (None, Some(_)) => train_images.clone(),
        (None, None) => source(None, 0x2000)?,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(2);
    let train = patches_from_images(&train_images, config.train_patches, p, &mut rng)?;
    rng.set_stream(3);
    let eval = patches_from_images(&eval_images, config.eval_patches, p, &mut rng)?;
    Ok((train, eval))
}
