//! Fully factorized entropy bottleneck: one learned univariate density per
//! channel, expressed through a monotone cumulative function
//! `c(t) = sigmoid(f_K(...f_1(t)))` with softplus-positive layer matrices and
//! tanh-gated residual gains.

use rand::Rng;

use super::cdf::QuantizedCdfTable;
use crate::error::{Error, Result};
use crate::tensor::{Float, Graph, ParamId, ParamStore, Tensor, Var};

pub const DEFAULT_FILTERS: [usize; 3] = [3, 3, 3];
pub const DEFAULT_INIT_SCALE: f64 = 10.0;

#[derive(Clone, Debug, PartialEq)]
pub struct EntropyBottleneck {
    pub channels: usize,
    pub filters: Vec<usize>,
    pub tail_mass: f64,
    pub likelihood_floor: f64,
    matrices: Vec<ParamId>,
    biases: Vec<ParamId>,
    factors: Vec<ParamId>,
    quantiles: ParamId,
}

/// Density parameters bound on one graph, already reparameterized.
struct Bound<'g, T: Float> {
    matrices: Vec<Var<'g, T>>,
    biases: Vec<Var<'g, T>>,
    factors: Vec<Var<'g, T>>,
}

/// The density of every channel evaluated in plain `f64`, for table construction.
pub struct Density64 {
    channels: usize,
    dims: Vec<usize>,
    matrices: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
    factors: Vec<Vec<f64>>,
    floor: f64,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Density64 {
    /// Cumulative logit `f(t)` for `channel`.
    pub fn logit(&self, channel: usize, t: f64) -> f64 {
        let mut v = vec![t];
        let layers = self.dims.len() - 1;
        for k in 0..layers {
            let (din, dout) = (self.dims[k], self.dims[k + 1]);
            let m = &self.matrices[k][channel * dout * din..(channel + 1) * dout * din];
            let b = &self.biases[k][channel * dout..(channel + 1) * dout];
            let mut next: Vec<f64> = (0..dout)
                .map(|o| (0..din).map(|i| m[o * din + i] * v[i]).sum::<f64>() + b[o])
                .collect();
            if k + 1 < layers {
                let f = &self.factors[k][channel * dout..(channel + 1) * dout];
                for (x, &a) in next.iter_mut().zip(f) {
                    *x += a * x.tanh();
                }
            }
            v = next;
        }
        v[0]
    }

    pub fn cdf(&self, channel: usize, t: f64) -> f64 {
        sigmoid(self.logit(channel, t))
    }

    /// Unfloored probability of the unit bin centred on `v`.
    pub fn bin_probability(&self, channel: usize, v: f64) -> f64 {
        let lower = self.logit(channel, v - 0.5);
        let upper = self.logit(channel, v + 0.5);
        let s = if lower + upper > 0.0 { -1.0 } else { 1.0 };
        (sigmoid(s * upper) - sigmoid(s * lower)).abs()
    }

    pub fn likelihood(&self, channel: usize, v: f64) -> f64 {
        self.bin_probability(channel, v).max(self.floor)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }
}

impl EntropyBottleneck {
    /// Registers the density parameters under `prefix` in `store`.
    pub fn new<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        channels: usize,
        init_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let filters = DEFAULT_FILTERS.to_vec();
        let mut dims = vec![1];
        dims.extend(&filters);
        dims.push(1);
        let scale = init_scale.powf(1.0 / (filters.len() + 1) as f64);
        let (mut matrices, mut biases, mut factors) = (vec![], vec![], vec![]);
        for k in 0..=filters.len() {
            let (din, dout) = (dims[k], dims[k + 1]);
            let init = (1.0 / scale / dout as f64).exp_m1().ln();
            matrices.push(store.add(
                format!("{prefix}.matrix{k}"),
                Tensor::full(vec![channels, dout, din], T::of(init)),
            )?);
            biases.push(store.add(
                format!("{prefix}.bias{k}"),
                Tensor::uniform(vec![channels, dout, 1], -0.5, 0.5, rng),
            )?);
            if k < filters.len() {
                factors.push(store.add(format!("{prefix}.factor{k}"), Tensor::zeros(vec![channels, dout, 1]))?);
            }
        }
        let q: Vec<T> = (0..channels)
            .flat_map(|_| [-init_scale, 0.0, init_scale])
            .map(T::of)
            .collect();
        let quantiles = store.add(format!("{prefix}.quantiles"), Tensor::new(vec![channels, 3], q)?)?;
        Ok(EntropyBottleneck {
            channels,
            filters,
            tail_mass: 1e-9,
            likelihood_floor: 1e-9,
            matrices,
            biases,
            factors,
            quantiles,
        })
    }

    pub fn quantiles_id(&self) -> ParamId {
        self.quantiles
    }

    /// Every parameter except the quantiles (those belong to the auxiliary optimizer).
    pub fn density_ids(&self) -> Vec<ParamId> {
        self.matrices
            .iter()
            .chain(&self.biases)
            .chain(&self.factors)
            .copied()
            .collect()
    }

    /// Per-channel medians (middle quantile).
    pub fn medians<T: Float>(&self, store: &ParamStore<T>) -> Vec<T> {
        store
            .get(self.quantiles)
            .value
            .data()
            .chunks(3)
            .map(|q| q[1])
            .collect()
    }

    fn bind<'g, T: Float>(&self, g: &'g Graph<T>, store: &ParamStore<T>, trainable: bool) -> Bound<'g, T> {
        let p = |id| {
            if trainable {
                g.param(store, id)
            } else {
                g.param_const(store, id)
            }
        };
        Bound {
            matrices: self.matrices.iter().map(|&id| p(id).softplus()).collect(),
            biases: self.biases.iter().map(|&id| p(id)).collect(),
            factors: self.factors.iter().map(|&id| p(id).tanh()).collect(),
        }
    }

    fn logits<'g, T: Float>(&self, b: &Bound<'g, T>, v: Var<'g, T>) -> Result<Var<'g, T>> {
        let mut x = v;
        for k in 0..b.matrices.len() {
            x = x.channel_matmul(&b.matrices[k])?.add_bcast(&b.biases[k])?;
            if k < b.factors.len() {
                x = x.add(&x.tanh().mul_bcast(&b.factors[k])?)?;
            }
        }
        Ok(x)
    }

    /// Cumulative logits for `v: [C, 1, L]`, differentiable in `v` and the density.
    pub fn logits_cumulative<'g, T: Float>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        v: Var<'g, T>,
    ) -> Result<Var<'g, T>> {
        let b = self.bind(g, store, true);
        self.logits(&b, v)
    }

    /// Per-element bin probabilities `c(v+1/2) - c(v-1/2)` for `y: [N, C, H, W]`,
    /// floored at `likelihood_floor`.
    pub fn likelihood<'g, T: Float>(&self, g: &'g Graph<T>, store: &ParamStore<T>, y: Var<'g, T>) -> Result<Var<'g, T>> {
        let shape = y.shape();
        let [n, c, h, w] = <[usize; 4]>::try_from(shape.as_slice()).map_err(|_| Error::Dimension {
            op: "bottleneck_likelihood",
            axis: "rank",
            expected: 4,
            actual: shape.len(),
        })?;
        if c != self.channels {
            return Err(Error::Dimension {
                op: "bottleneck_likelihood",
                axis: "C",
                expected: self.channels,
                actual: c,
            });
        }
        let b = self.bind(g, store, true);
        let v = y.permute(&[1, 0, 2, 3])?.reshape(&[c, 1, n * h * w])?;
        let lower = self.logits(&b, v.add_scalar(-0.5))?;
        let upper = self.logits(&b, v.add_scalar(0.5))?;
        let sign: Vec<T> = lower
            .value()
            .data()
            .iter()
            .zip(upper.value().data())
            .map(|(&l, &u)| if l + u > T::zero() { -T::one() } else { T::one() })
            .collect();
        let sign = g.constant(Tensor::new(lower.shape(), sign)?);
        let lik = upper
            .mul(&sign)?
            .sigmoid()
            .sub(&lower.mul(&sign)?.sigmoid())?
            .abs()
            .lower_bound(self.likelihood_floor);
        lik.reshape(&[c, n, h, w])?.permute(&[1, 0, 2, 3])
    }

    /// Sum over channels of the distances between the cumulative function at
    /// the three quantiles and their targets `(tail_mass, 1/2, 1 - tail_mass)`.
    /// Differentiable with respect to the quantiles only.
    pub fn aux_loss<'g, T: Float>(&self, g: &'g Graph<T>, store: &ParamStore<T>) -> Result<Var<'g, T>> {
        let b = self.bind(g, store, false);
        let q = g.param(store, self.quantiles).reshape(&[self.channels, 1, 3])?;
        let logits = self.logits(&b, q)?;
        // upper tail is measured as 1 - c(q) = sigmoid(-logit) to keep precision
        let signs = g.constant(Tensor::new(vec![1, 1, 3], vec![T::one(), T::one(), -T::one()])?);
        let targets = g.constant(Tensor::new(
            vec![1, 1, 3],
            vec![T::of(self.tail_mass), T::of(0.5), T::of(self.tail_mass)],
        )?);
        let cum = logits.mul_bcast(&signs)?.sigmoid();
        Ok(cum.sub(&g.constant(broadcast_to(&targets.value(), &cum.shape())))?.abs().sum())
    }

    /// Snapshot of the density in `f64`.
    pub fn density<T: Float>(&self, store: &ParamStore<T>) -> Density64 {
        let get = |id: ParamId| -> Vec<f64> { store.get(id).value.data().iter().map(|v| v.f64()).collect() };
        let mut dims = vec![1];
        dims.extend(&self.filters);
        dims.push(1);
        Density64 {
            channels: self.channels,
            dims,
            matrices: self
                .matrices
                .iter()
                .map(|&id| get(id).into_iter().map(softplus).collect())
                .collect(),
            biases: self.biases.iter().map(|&id| get(id)).collect(),
            factors: self
                .factors
                .iter()
                .map(|&id| get(id).into_iter().map(f64::tanh).collect())
                .collect(),
            floor: self.likelihood_floor,
        }
    }

    /// One CDF row per channel. Row `c` covers integer offsets from the
    /// channel median between the fitted lower and upper tail quantiles.
    pub fn build_table<T: Float>(&self, store: &ParamStore<T>, precision: u32) -> Result<QuantizedCdfTable> {
        let density = self.density(store);
        let q = store.get(self.quantiles).value.data();
        let mut rows = Vec::with_capacity(self.channels);
        for c in 0..self.channels {
            let (low, med, high) = (q[3 * c].f64(), q[3 * c + 1].f64(), q[3 * c + 2].f64());
            if !(low.is_finite() && med.is_finite() && high.is_finite()) {
                return Err(Error::Numeric(format!("channel {c} has non-finite quantiles")));
            }
            let below = (med - low).ceil().max(0.0);
            let above = (high - med).ceil().max(0.0);
            let support = below + above + 1.0;
            if support + 2.0 > (1u64 << precision) as f64 || support + 2.0 > u16::MAX as f64 {
                return Err(Error::TableCapacity {
                    support: support.min(usize::MAX as f64) as usize,
                    precision,
                });
            }
            let (below, above) = (below as i32, above as i32);
            // medians are stored at the model precision; evaluate there too
            let m = T::of(med).f64();
            let pmf: Vec<f64> = (-below..=above)
                .map(|k| density.bin_probability(c, m + k as f64))
                .collect();
            let tail = (1.0 - pmf.iter().sum::<f64>()).max(0.0);
            rows.push((-below, pmf, tail));
        }
        QuantizedCdfTable::from_pmfs(rows, precision)
    }
}

fn broadcast_to<T: Float>(t: &Tensor<T>, shape: &[usize]) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = t.data().iter().copied().cycle().take(n).collect();
    Tensor::new(shape.to_vec(), data).expect("shape")
}
