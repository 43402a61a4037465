//! End-to-end codecs: factorized prior, scale hyperprior and mean-scale
//! hyperprior, with a noisy training forward pass and real
//! `compress`/`decompress` through the range coder.

pub mod config;
pub mod container;
pub mod layers;
pub mod padding;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::{ArchitectureConfig, Metric, ModelKind, MIN_SIDE, STRIDE};
pub use container::BitstreamContainer;
use layers::Layer;
pub use padding::{crop, pad_reflect};

use crate::entropy::{self, EntropyBottleneck, GaussianConditional, Mode, QuantizeMode, QuantizedCdfTable, DEFAULT_PRECISION};
use crate::error::{Error, Result};
use crate::range_coder::{self, EncodedChunk};
use crate::tensor::{Float, Graph, ParamId, ParamStore, Tensor, Var};

/// CDF tables used by `compress`/`decompress`.
#[derive(Clone, Debug, PartialEq)]
pub struct CodingTables {
    /// One row per bottleneck channel.
    pub bottleneck: QuantizedCdfTable,
    /// One row per Gaussian scale (hyperprior models only).
    pub gaussian: Option<QuantizedCdfTable>,
}

/// Result of a forward pass.
pub struct ForwardOutput<'g, T: Float> {
    pub x_hat: Var<'g, T>,
    pub y: Var<'g, T>,
    /// Noisy (training) or rounded (evaluation) latent fed to the synthesis.
    pub y_hat: Var<'g, T>,
    pub z_hat: Option<Var<'g, T>>,
    /// Per-element likelihoods: the latent first, then the hyper-latent if any.
    pub likelihoods: Vec<Var<'g, T>>,
}

/// Integer symbols of one image, in the order they are coded.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatentCode {
    pub y: Vec<i32>,
    pub y_shape: [usize; 4],
    pub z: Option<Vec<i32>>,
    pub z_shape: Option<[usize; 4]>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CodecModel<T: Float = f32> {
    pub config: ArchitectureConfig,
    pub store: ParamStore<T>,
    g_a: Vec<Layer>,
    g_s: Vec<Layer>,
    h_a: Vec<Layer>,
    h_s: Vec<Layer>,
    pub bottleneck: EntropyBottleneck,
    pub conditional: Option<GaussianConditional>,
    mode: Mode,
    tables: Option<CodingTables>,
}

fn half_up(x: usize) -> usize {
    x.div_ceil(2)
}

/// Latent and hyper-latent grid for a padded image extent.
fn latent_dims(ph: usize, pw: usize) -> ((usize, usize), (usize, usize)) {
    let y = (ph / STRIDE, pw / STRIDE);
    let z = (half_up(half_up(y.0)), half_up(half_up(y.1)));
    (y, z)
}

fn per_channel<T: Float>(values: &[T], shape: &[usize]) -> Tensor<T> {
    let (c, plane) = (shape[1], shape[2] * shape[3]);
    let mut data = Vec::with_capacity(shape.iter().product());
    for _ in 0..shape[0] {
        for v in values.iter().take(c) {
            data.extend(std::iter::repeat_n(*v, plane));
        }
    }
    Tensor::new(shape.to_vec(), data).expect("per-channel shape")
}

fn channel_rows(shape: [usize; 4]) -> Vec<usize> {
    let plane = shape[2] * shape[3];
    (0..shape[0] * shape[1] * plane).map(|i| (i / plane) % shape[1]).collect()
}

fn to_symbols<T: Float>(y: &Tensor<T>, means: &Tensor<T>) -> Result<Vec<i32>> {
    y.data()
        .iter()
        .zip(means.data())
        .map(|(&v, &m)| {
            let s = entropy::round(v - m).f64();
            if !s.is_finite() || s.abs() > i32::MAX as f64 {
                return Err(Error::Numeric(format!("latent value {} cannot be coded", v.f64())));
            }
            Ok(s as i32)
        })
        .collect()
}

fn from_symbols<T: Float>(symbols: &[i32], means: &Tensor<T>) -> Tensor<T> {
    let data = symbols.iter().zip(means.data()).map(|(&s, &m)| T::of(s as f64) + m).collect();
    Tensor::new(means.shape().to_vec(), data).expect("symbol shape")
}

impl<T: Float> CodecModel<T> {
    /// Freshly initialized model, seeded.
    pub fn new(config: ArchitectureConfig, seed: u64) -> Result<Self> {
        Self::with_rng(config, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn with_rng<R: Rng + ?Sized>(config: ArchitectureConfig, rng: &mut R) -> Result<Self> {
        let (n, m) = (config.n, config.m);
        let mut store = ParamStore::new();
        let g_a = layers::analysis(&mut store, n, m, rng)?;
        let g_s = layers::synthesis(&mut store, n, m, rng)?;
        let (h_a, h_s, conditional) = match config.model {
            ModelKind::Factorized => (vec![], vec![], None),
            ModelKind::ScaleHyperprior => (
                layers::hyper_analysis(&mut store, n, m, true, rng)?,
                layers::hyper_synthesis(&mut store, n, m, m, true, rng)?,
                Some(GaussianConditional::default()),
            ),
            ModelKind::MeanScaleHyperprior => (
                layers::hyper_analysis(&mut store, n, m, false, rng)?,
                layers::hyper_synthesis(&mut store, n, m, 2 * m, false, rng)?,
                Some(GaussianConditional::default()),
            ),
        };
        let bottleneck = EntropyBottleneck::new(&mut store, "entropy_bottleneck", m, entropy::bottleneck::DEFAULT_INIT_SCALE, rng)?;
        Ok(CodecModel {
            config,
            store,
            g_a,
            g_s,
            h_a,
            h_s,
            bottleneck,
            conditional,
            mode: Mode::Train,
            tables: None,
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    /// Switches to training mode and drops the coding tables.
    pub fn train(&mut self) {
        self.mode = Mode::Train;
        self.tables = None;
    }

    /// Switches to evaluation mode and builds the coding tables from the
    /// current parameters.
    pub fn eval(&mut self) -> Result<()> {
        let tables = self.build_tables()?;
        self.mode = Mode::Eval;
        self.tables = Some(tables);
        Ok(())
    }

    pub fn build_tables(&self) -> Result<CodingTables> {
        Ok(CodingTables {
            bottleneck: self.bottleneck.build_table(&self.store, DEFAULT_PRECISION)?,
            gaussian: self
                .conditional
                .as_ref()
                .map(|gc| gc.build_table(DEFAULT_PRECISION))
                .transpose()?,
        })
    }

    /// Evaluation mode with externally supplied tables (e.g. from a checkpoint).
    pub fn eval_with_tables(&mut self, tables: CodingTables) -> Result<()> {
        tables.bottleneck.validate()?;
        if tables.bottleneck.rows.len() != self.bottleneck.channels {
            return Err(Error::ModelMismatch(format!(
                "bottleneck table has {} rows for {} channels",
                tables.bottleneck.rows.len(),
                self.bottleneck.channels
            )));
        }
        match (&self.conditional, &tables.gaussian) {
            (None, None) => {}
            (Some(gc), Some(t)) if t.rows.len() == gc.scale_table().len() => t.validate()?,
            _ => return Err(Error::ModelMismatch("gaussian table does not match the model".into())),
        }
        self.mode = Mode::Eval;
        self.tables = Some(tables);
        Ok(())
    }

    pub fn tables(&self) -> Option<&CodingTables> {
        self.tables.as_ref()
    }

    /// Parameters trained by the main rate-distortion optimizer.
    pub fn main_param_ids(&self) -> Vec<ParamId> {
        let q = self.bottleneck.quantiles_id();
        self.store.ids().filter(|&id| id != q).collect()
    }

    /// Parameters trained by the auxiliary quantile optimizer.
    pub fn aux_param_ids(&self) -> Vec<ParamId> {
        vec![self.bottleneck.quantiles_id()]
    }

    /// The same model with parameters converted to another precision.
    pub fn cast<U: Float>(&self) -> CodecModel<U> {
        CodecModel {
            config: self.config,
            store: self.store.cast(),
            g_a: self.g_a.clone(),
            g_s: self.g_s.clone(),
            h_a: self.h_a.clone(),
            h_s: self.h_s.clone(),
            bottleneck: self.bottleneck.clone(),
            conditional: self.conditional.clone(),
            mode: self.mode,
            tables: self.tables.clone(),
        }
    }

    fn check_image(shape: &[usize], need_multiple: bool) -> Result<()> {
        if shape.len() != 4 || shape[1] != 3 {
            return Err(Error::input(format!("expected an image tensor [N, 3, H, W], got {shape:?}")));
        }
        let (h, w) = (shape[2], shape[3]);
        if h < MIN_SIDE || w < MIN_SIDE {
            return Err(Error::input(format!(
                "image is {h}x{w}; height and width must be at least {MIN_SIDE} pixels"
            )));
        }
        if need_multiple && (h % STRIDE != 0 || w % STRIDE != 0) {
            return Err(Error::input(format!(
                "image is {h}x{w}; height and width must be multiples of {STRIDE}"
            )));
        }
        Ok(())
    }

    /// Hyper-synthesis output cropped to the latent grid, split into
    /// `(scales, means)`.
    fn hyper_params<'g>(
        &self,
        g: &'g Graph<T>,
        z_hat: Var<'g, T>,
        y_shape: &[usize],
        trainable: bool,
    ) -> Result<(Var<'g, T>, Option<Var<'g, T>>)> {
        let mut p = layers::run(&self.h_s, g, &self.store, z_hat, trainable)?;
        let ps = p.shape();
        if ps[2] != y_shape[2] {
            p = p.narrow(2, 0, y_shape[2])?;
        }
        if ps[3] != y_shape[3] {
            p = p.narrow(3, 0, y_shape[3])?;
        }
        let m = self.config.m;
        match self.config.model {
            ModelKind::MeanScaleHyperprior => Ok((p.narrow(1, 0, m)?, Some(p.narrow(1, m, m)?))),
            _ => Ok((p, None)),
        }
    }

    fn forward_with<'g, R: Rng + ?Sized>(
        &self,
        g: &'g Graph<T>,
        x: Var<'g, T>,
        phase: Mode,
        rng: &mut R,
    ) -> Result<ForwardOutput<'g, T>> {
        let trainable = phase == Mode::Train;
        let y = layers::run(&self.g_a, g, &self.store, x, trainable)?;
        let quant = |v: Var<'g, T>, means: Option<&Var<'g, T>>, rng: &mut R| {
            if trainable {
                entropy::quantize(v, None, QuantizeMode::Noise, Mode::Train, rng)
            } else {
                entropy::quantize(v, means, QuantizeMode::Dequantize, Mode::Eval, rng)
            }
        };
        let medians = |v: &Var<'g, T>| g.constant(per_channel(&self.bottleneck.medians(&self.store), &v.shape()));
        match (&self.conditional, self.config.model) {
            (None, _) => {
                let y_hat = quant(y, Some(&medians(&y)), rng)?;
                let lik = self.bottleneck.likelihood(g, &self.store, y_hat)?;
                let x_hat = layers::run(&self.g_s, g, &self.store, y_hat, trainable)?;
                Ok(ForwardOutput {
                    x_hat,
                    y,
                    y_hat,
                    z_hat: None,
                    likelihoods: vec![lik],
                })
            }
            (Some(gc), _) => {
                let z = layers::run(&self.h_a, g, &self.store, y, trainable)?;
                let z_hat = quant(z, Some(&medians(&z)), rng)?;
                let z_lik = self.bottleneck.likelihood(g, &self.store, z_hat)?;
                let (scales, means) = self.hyper_params(g, z_hat, &y.shape(), trainable)?;
                let y_hat = match &means {
                    Some(m) => quant(y, Some(m), rng)?,
                    None => quant(y, None, rng)?,
                };
                let y_lik = gc.likelihood(y_hat, scales, means)?;
                let x_hat = layers::run(&self.g_s, g, &self.store, y_hat, trainable)?;
                Ok(ForwardOutput {
                    x_hat,
                    y,
                    y_hat,
                    z_hat: Some(z_hat),
                    likelihoods: vec![y_lik, z_lik],
                })
            }
        }
    }

    /// Training forward pass with additive-noise quantization. Requires
    /// training mode and sides that are multiples of 16 (at least 64).
    pub fn forward_train<'g, R: Rng + ?Sized>(
        &self,
        g: &'g Graph<T>,
        x: Var<'g, T>,
        rng: &mut R,
    ) -> Result<ForwardOutput<'g, T>> {
        if self.mode != Mode::Train {
            return Err(Error::contract("forward_train called on a model in evaluation mode"));
        }
        Self::check_image(&x.shape(), true)?;
        self.forward_with(g, x, Mode::Train, rng)
    }

    /// Forward pass with rounding, as used for evaluation and coding. The
    /// parameters enter the graph as constants.
    pub fn forward_eval<'g>(&self, g: &'g Graph<T>, x: Var<'g, T>) -> Result<ForwardOutput<'g, T>> {
        Self::check_image(&x.shape(), true)?;
        // rounding never draws random numbers
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        self.forward_with(g, x, Mode::Eval, &mut rng)
    }

    /// Reconstruction from a direct rounded forward pass: pad, forward,
    /// clamp to `[0, 1]`, crop.
    pub fn reconstruct(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Self::check_image(x.shape(), false)?;
        let (xp, (h, w)) = pad_reflect(x, self.config.pad_multiple());
        let g = Graph::new();
        let out = self.forward_eval(&g, g.constant(xp))?;
        Ok(crop(&clamp01(&out.x_hat.value()), h, w))
    }

    /// Estimated bits `sum(-log2 p)` of the rounded latents of one image.
    pub fn estimate_bits(&self, x: &Tensor<T>) -> Result<f64> {
        Self::check_image(x.shape(), false)?;
        let (xp, _) = pad_reflect(x, self.config.pad_multiple());
        let g = Graph::new();
        let out = self.forward_eval(&g, g.constant(xp))?;
        Ok(out.likelihoods.iter().map(|l| entropy::estimate_bits(&l.value())).sum())
    }

    fn require_tables(&self) -> Result<&CodingTables> {
        match (&self.tables, self.mode) {
            (Some(t), Mode::Eval) => Ok(t),
            _ => Err(Error::contract("compress/decompress need evaluation mode with built tables")),
        }
    }

    /// Scale-table row for every predicted scale.
    fn scale_rows(&self, scales: &Tensor<T>) -> Vec<usize> {
        let gc = self.conditional.as_ref().expect("hyperprior model");
        scales.data().iter().map(|s| gc.index_for_scale(s.f64())).collect()
    }

    /// Quantized latent symbols of one image (the values `compress` codes).
    pub fn analyze(&self, x: &Tensor<T>) -> Result<LatentCode> {
        Self::check_image(x.shape(), false)?;
        if x.shape()[0] != 1 {
            return Err(Error::input("compress takes a single image (N = 1)"));
        }
        x.validate()?;
        let (xp, _) = pad_reflect(x, self.config.pad_multiple());
        let g = Graph::new();
        let y = layers::run(&self.g_a, &g, &self.store, g.constant(xp), false)?;
        let yv = y.value();
        let y_shape = yv.dims4()?;
        if self.conditional.is_none() {
            let med = per_channel(&self.bottleneck.medians(&self.store), &y_shape);
            return Ok(LatentCode {
                y: to_symbols(&yv, &med)?,
                y_shape,
                z: None,
                z_shape: None,
            });
        }
        let z = layers::run(&self.h_a, &g, &self.store, y, false)?.value();
        let z_shape = z.dims4()?;
        let med = per_channel(&self.bottleneck.medians(&self.store), &z_shape);
        let z_sym = to_symbols(&z, &med)?;
        let z_hat = g.constant(from_symbols(&z_sym, &med));
        let (_, means) = self.hyper_params(&g, z_hat, &y_shape, false)?;
        let means = means.map(|m| (*m.value()).clone()).unwrap_or_else(|| Tensor::zeros(y_shape.to_vec()));
        Ok(LatentCode {
            y: to_symbols(&yv, &means)?,
            y_shape,
            z: Some(z_sym),
            z_shape: Some(z_shape),
        })
    }

    /// Encodes one image `[1, 3, H, W]` with `H, W >= 64` into a container.
    pub fn compress(&self, x: &Tensor<T>) -> Result<BitstreamContainer> {
        let tables = self.require_tables()?;
        let (h, w) = (x.shape().get(2).copied().unwrap_or(0), x.shape().get(3).copied().unwrap_or(0));
        if h > u16::MAX as usize || w > u16::MAX as usize {
            return Err(Error::input(format!("image is {h}x{w}; sides above 65535 are not supported")));
        }
        let code = self.analyze(x)?;
        let mut streams = vec![];
        let y_rows = match (&code.z, code.z_shape) {
            (Some(z), Some(z_shape)) => {
                let chunk = range_coder::encode(z, &channel_rows(z_shape), &tables.bottleneck)?;
                streams.push(chunk.bytes);
                let g = Graph::new();
                let med = per_channel(&self.bottleneck.medians(&self.store), &z_shape);
                let z_hat = g.constant(from_symbols(z, &med));
                let (scales, _) = self.hyper_params(&g, z_hat, &code.y_shape, false)?;
                self.scale_rows(&scales.value())
            }
            _ => channel_rows(code.y_shape),
        };
        let y_table = tables.gaussian.as_ref().unwrap_or(&tables.bottleneck);
        streams.push(range_coder::encode(&code.y, &y_rows, y_table)?.bytes);
        Ok(BitstreamContainer {
            version: container::VERSION,
            model: self.config.model,
            quality: self.config.quality,
            metric: self.config.metric,
            orig_h: h as u16,
            orig_w: w as u16,
            streams,
        })
    }

    /// Decodes the latent symbols of a container without running the synthesis.
    pub fn decode_symbols(&self, c: &BitstreamContainer) -> Result<LatentCode> {
        Ok(self.decode_latents(c)?.0)
    }

    fn decode_latents(&self, c: &BitstreamContainer) -> Result<(LatentCode, Tensor<T>)> {
        let tables = self.require_tables()?;
        if !c.matches(&self.config) {
            return Err(Error::ModelMismatch(format!(
                "container was produced by ({}, quality {}, {}) but the model is ({}, quality {}, {})",
                c.model, c.quality, c.metric, self.config.model, self.config.quality, self.config.metric
            )));
        }
        let expected = if self.config.model.has_hyperprior() { 2 } else { 1 };
        if c.streams.len() != expected {
            return Err(Error::Format(format!("expected {expected} streams, found {}", c.streams.len())));
        }
        let (h, w) = (c.orig_h as usize, c.orig_w as usize);
        if h < MIN_SIDE || w < MIN_SIDE {
            return Err(Error::Format(format!("stored image size {h}x{w} is below the minimum")));
        }
        let m = self.config.pad_multiple();
        let ((yh, yw), (zh, zw)) = latent_dims(h.div_ceil(m) * m, w.div_ceil(m) * m);
        let y_shape = [1, self.config.m, yh, yw];
        let chunk = |i: usize, count: usize| EncodedChunk {
            bytes: c.streams[i].clone(),
            symbol_count: count,
        };
        let y_count = y_shape.iter().product();
        if self.conditional.is_none() {
            let y = range_coder::decode(&chunk(0, y_count), &channel_rows(y_shape), &tables.bottleneck)?;
            let med = per_channel(&self.bottleneck.medians(&self.store), &y_shape);
            let y_hat = from_symbols(&y, &med);
            let code = LatentCode {
                y,
                y_shape,
                z: None,
                z_shape: None,
            };
            return Ok((code, y_hat));
        }
        let z_shape = [1, self.config.m, zh, zw];
        let z = range_coder::decode(&chunk(0, z_shape.iter().product()), &channel_rows(z_shape), &tables.bottleneck)?;
        let g = Graph::new();
        let med = per_channel(&self.bottleneck.medians(&self.store), &z_shape);
        let z_hat = g.constant(from_symbols(&z, &med));
        let (scales, means) = self.hyper_params(&g, z_hat, &y_shape, false)?;
        let rows = self.scale_rows(&scales.value());
        let gaussian = tables.gaussian.as_ref().expect("hyperprior tables");
        let y = range_coder::decode(&chunk(1, y_count), &rows, gaussian)?;
        let means = means.map(|m| (*m.value()).clone()).unwrap_or_else(|| Tensor::zeros(y_shape.to_vec()));
        let y_hat = from_symbols(&y, &means);
        let code = LatentCode {
            y,
            y_shape,
            z: Some(z),
            z_shape: Some(z_shape),
        };
        Ok((code, y_hat))
    }

    /// Decodes a container into an image `[1, 3, orig_h, orig_w]` in `[0, 1]`.
    pub fn decompress(&self, c: &BitstreamContainer) -> Result<Tensor<T>> {
        let (_, y_hat) = self.decode_latents(c)?;
        let g = Graph::new();
        let x_hat = layers::run(&self.g_s, &g, &self.store, g.constant(y_hat), false)?;
        Ok(crop(&clamp01(&x_hat.value()), c.orig_h as usize, c.orig_w as usize))
    }
}

fn clamp01<T: Float>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()).min(T::one()))
}
