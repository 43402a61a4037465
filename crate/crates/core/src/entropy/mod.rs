//! Entropy models: quantization, the factorized entropy bottleneck, the
//! conditional Gaussian model, and integer CDF tables for the range coder.

pub mod bottleneck;
pub mod cdf;
pub mod gaussian;

use rand::Rng;

pub use bottleneck::{Density64, EntropyBottleneck};
pub use cdf::{CdfRow, QuantizedCdfTable, DEFAULT_PRECISION};
pub use gaussian::GaussianConditional;

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor, Var};

/// Training or evaluation phase of a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// How latents are quantized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QuantizeMode {
    /// Additive uniform noise on `[-1/2, 1/2)`; only valid while training.
    Noise,
    /// Integer symbols `round(y - mean)`, not differentiable.
    Symbols,
    /// `round(y - mean) + mean`, a constant in the graph.
    Dequantize,
}

/// Round half away from zero, matching the decoder's symbol reconstruction.
pub fn round<T: Float>(x: T) -> T {
    x.round()
}

/// Quantizes `y` (optionally relative to `means`) according to `mode`.
pub fn quantize<'g, T: Float, R: Rng + ?Sized>(
    y: Var<'g, T>,
    means: Option<&Var<'g, T>>,
    mode: QuantizeMode,
    phase: Mode,
    rng: &mut R,
) -> Result<Var<'g, T>> {
    let g = y.graph();
    match mode {
        QuantizeMode::Noise => {
            if phase != Mode::Train {
                return Err(Error::contract("noise quantization is only allowed in training mode"));
            }
            let noise = Tensor::uniform(y.shape(), -0.5, 0.5, rng);
            y.add(&g.constant(noise))
        }
        QuantizeMode::Symbols | QuantizeMode::Dequantize => {
            let yv = y.value();
            let data: Vec<T> = match means {
                Some(m) => {
                    let mv = m.value();
                    if mv.shape() != yv.shape() {
                        return Err(Error::contract("quantize: means and values differ in shape"));
                    }
                    yv.data()
                        .iter()
                        .zip(mv.data())
                        .map(|(&a, &b)| {
                            let s = round(a - b);
                            if mode == QuantizeMode::Dequantize {
                                s + b
                            } else {
                                s
                            }
                        })
                        .collect()
                }
                None => yv.data().iter().map(|&a| round(a)).collect(),
            };
            Ok(g.constant(Tensor::new(yv.shape().to_vec(), data)?))
        }
    }
}

/// Total information `sum(-log2 p)` in bits of a likelihood tensor.
pub fn estimate_bits<T: Float>(likelihoods: &Tensor<T>) -> f64 {
    likelihoods.data().iter().map(|p| -p.f64().log2()).sum()
}

/// Differentiable `sum(-log2 p)`.
pub fn bits<'g, T: Float>(likelihoods: &Var<'g, T>) -> Var<'g, T> {
    likelihoods.ln().sum().scale(-1.0 / std::f64::consts::LN_2)
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::tensor::Graph;

    #[test]
    fn noise_is_rejected_in_eval() {
        let g = Graph::<f32>::new();
        let y = g.constant(Tensor::zeros(vec![4]));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = quantize(y, None, QuantizeMode::Noise, Mode::Eval, &mut rng);
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn estimate_bits_of_known_probabilities() {
        let t = Tensor::new(vec![3], vec![0.5f64, 0.25, 1.0]).unwrap();
        assert!((estimate_bits(&t) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn quantize_examples() {
        let g = Graph::<f64>::new();
        let y = g.constant(Tensor::scalar(1.2));
        let m = g.constant(Tensor::scalar(0.4));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sym = quantize(y, None, QuantizeMode::Symbols, Mode::Eval, &mut rng).unwrap();
        assert_eq!(sym.value().item(), 1.0);
        let deq = quantize(y, Some(&m), QuantizeMode::Dequantize, Mode::Eval, &mut rng).unwrap();
        assert!((deq.value().item() - 1.4).abs() < 1e-12);
        let bad = g.constant(Tensor::zeros(vec![2]));
        assert!(quantize(y, Some(&bad), QuantizeMode::Symbols, Mode::Eval, &mut rng).is_err());
    }

    #[test]
    fn estimate_bits_examples() {
        assert_eq!(estimate_bits(&Tensor::full(vec![1000], 0.5f64)), 1000.0);
        assert_eq!(estimate_bits(&Tensor::<f64>::ones(vec![10])), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = Tensor::<f64>::uniform(vec![5000], 1e-6, 1.0, &mut rng);
        // pairwise-free oracle: Kahan-compensated natural-log sum
        let (mut s, mut c) = (0.0f64, 0.0f64);
        for p in t.data() {
            let y = -p.ln() / std::f64::consts::LN_2 - c;
            let t2 = s + y;
            c = (t2 - s) - y;
            s = t2;
        }
        assert!((estimate_bits(&t) - s).abs() <= 1e-6 * s);
        let g = Graph::<f64>::new();
        assert!((bits(&g.constant(t.clone())).value().item() - s).abs() <= 1e-6 * s);
    }

    proptest! {
        #[test]
        fn noise_stays_within_half(vals in prop::collection::vec(-100.0f64..100.0, 1..64), seed in any::<u64>()) {
            let g = Graph::<f64>::new();
            let y = g.constant(Tensor::new(vec![vals.len()], vals.clone()).unwrap());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = quantize(y, None, QuantizeMode::Noise, Mode::Train, &mut rng).unwrap().value();
            for (a, b) in q.data().iter().zip(&vals) {
                prop_assert!((a - b).abs() <= 0.5);
            }
        }

        #[test]
        fn dequantize_is_within_half_of_input(
            pairs in prop::collection::vec((-50.0f64..50.0, -5.0f64..5.0), 1..64),
        ) {
            let g = Graph::<f64>::new();
            let n = pairs.len();
            let y = g.constant(Tensor::new(vec![n], pairs.iter().map(|p| p.0).collect()).unwrap());
            let m = g.constant(Tensor::new(vec![n], pairs.iter().map(|p| p.1).collect()).unwrap());
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let sym = quantize(y, Some(&m), QuantizeMode::Symbols, Mode::Eval, &mut rng).unwrap().value();
            let deq = quantize(y, Some(&m), QuantizeMode::Dequantize, Mode::Eval, &mut rng).unwrap().value();
            for i in 0..n {
                prop_assert_eq!(sym.data()[i].fract(), 0.0);
                prop_assert_eq!(deq.data()[i], sym.data()[i] + pairs[i].1);
                prop_assert!((deq.data()[i] - pairs[i].0).abs() <= 0.5 + 1e-9);
            }
        }
    }
}
