//! Parameterized layers of the analysis and synthesis transforms.

use rand::Rng;

use crate::error::Result;
use crate::tensor::{Float, Graph, ParamId, ParamStore, Tensor, Var};

/// Floor added to the squared GDN `beta` so it stays positive.
pub const GDN_BETA_MIN: f64 = 1e-6;
/// Initial raw value of off-diagonal GDN `gamma` entries. Nonzero so they
/// receive gradient through the squaring reparameterization.
const GDN_GAMMA_OFF_INIT: f64 = 1.0 / 262_144.0;
const GDN_GAMMA_INIT: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv {
        weight: ParamId,
        bias: ParamId,
        stride: usize,
        pad: usize,
    },
    ConvT {
        weight: ParamId,
        bias: ParamId,
        stride: usize,
        pad: usize,
        out_pad: usize,
    },
    Gdn {
        beta: ParamId,
        gamma: ParamId,
        inverse: bool,
    },
    Relu,
    Abs,
}

/// Uniform init with bound `1/sqrt(fan_in)` for weights and biases.
fn conv_params<T: Float, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    name: &str,
    shape: [usize; 4],
    fan_in: usize,
    bias_len: usize,
    rng: &mut R,
) -> Result<(ParamId, ParamId)> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let w = store.add(format!("{name}.weight"), Tensor::uniform(shape.to_vec(), -bound, bound, rng))?;
    let b = store.add(format!("{name}.bias"), Tensor::uniform(vec![bias_len], -bound, bound, rng))?;
    Ok((w, b))
}

impl Layer {
    pub fn conv<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Result<Layer> {
        let (weight, bias) = conv_params(store, name, [cout, cin, kernel, kernel], cin * kernel * kernel, cout, rng)?;
        Ok(Layer::Conv {
            weight,
            bias,
            stride,
            pad: kernel / 2,
        })
    }

    /// Stride-2 transposed convolution doubling the spatial extent.
    pub fn deconv<T: Float, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        kernel: usize,
        rng: &mut R,
    ) -> Result<Layer> {
        let (weight, bias) = conv_params(store, name, [cin, cout, kernel, kernel], cout * kernel * kernel, cout, rng)?;
        Ok(Layer::ConvT {
            weight,
            bias,
            stride: 2,
            pad: kernel / 2,
            out_pad: 1,
        })
    }

    pub fn gdn<T: Float>(store: &mut ParamStore<T>, name: &str, channels: usize, inverse: bool) -> Result<Layer> {
        let beta = store.add(
            format!("{name}.beta"),
            Tensor::full(vec![channels], T::of((1.0 - GDN_BETA_MIN).sqrt())),
        )?;
        let gamma: Vec<T> = (0..channels * channels)
            .map(|i| {
                T::of(if i / channels == i % channels {
                    GDN_GAMMA_INIT.sqrt()
                } else {
                    GDN_GAMMA_OFF_INIT
                })
            })
            .collect();
        let gamma = store.add(format!("{name}.gamma"), Tensor::new(vec![channels, channels], gamma)?)?;
        Ok(Layer::Gdn { beta, gamma, inverse })
    }

    pub fn forward<'g, T: Float>(
        &self,
        g: &'g Graph<T>,
        store: &ParamStore<T>,
        x: Var<'g, T>,
        trainable: bool,
    ) -> Result<Var<'g, T>> {
        let p = |id| if trainable { g.param(store, id) } else { g.param_const(store, id) };
        match *self {
            Layer::Conv {
                weight,
                bias,
                stride,
                pad,
            } => x.conv2d(&p(weight), &p(bias), stride, pad),
            Layer::ConvT {
                weight,
                bias,
                stride,
                pad,
                out_pad,
            } => x.conv_transpose2d(&p(weight), &p(bias), stride, pad, out_pad),
            Layer::Gdn { beta, gamma, inverse } => {
                let beta = p(beta).square().add_scalar(GDN_BETA_MIN);
                let gamma = p(gamma).square();
                x.gdn(&beta, &gamma, inverse)
            }
            Layer::Relu => Ok(x.relu()),
            Layer::Abs => Ok(x.abs()),
        }
    }
}

/// Runs `layers` in order.
pub fn run<'g, T: Float>(
    layers: &[Layer],
    g: &'g Graph<T>,
    store: &ParamStore<T>,
    mut x: Var<'g, T>,
    trainable: bool,
) -> Result<Var<'g, T>> {
    for layer in layers {
        x = layer.forward(g, store, x, trainable)?;
    }
    Ok(x)
}

/// Four stride-2 convolutions with GDN between them.
pub fn analysis<T: Float, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    n: usize,
    m: usize,
    rng: &mut R,
) -> Result<Vec<Layer>> {
    let mut layers = vec![];
    for i in 0..4 {
        let cin = if i == 0 { 3 } else { n };
        let cout = if i == 3 { m } else { n };
        layers.push(Layer::conv(store, &format!("g_a.conv{i}"), cin, cout, 5, 2, rng)?);
        if i < 3 {
            layers.push(Layer::gdn(store, &format!("g_a.gdn{i}"), cout, false)?);
        }
    }
    Ok(layers)
}

/// Mirror of [`analysis`] with transposed convolutions and inverse GDN.
pub fn synthesis<T: Float, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    n: usize,
    m: usize,
    rng: &mut R,
) -> Result<Vec<Layer>> {
    let mut layers = vec![];
    for i in 0..4 {
        let cin = if i == 0 { m } else { n };
        let cout = if i == 3 { 3 } else { n };
        layers.push(Layer::deconv(store, &format!("g_s.deconv{i}"), cin, cout, 5, rng)?);
        if i < 3 {
            layers.push(Layer::gdn(store, &format!("g_s.igdn{i}"), cout, true)?);
        }
    }
    Ok(layers)
}

/// `|y|` (scale-only variant) then conv k3 s1, ReLU, conv k5 s2, ReLU, conv k5 s2.
pub fn hyper_analysis<T: Float, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    n: usize,
    m: usize,
    abs_input: bool,
    rng: &mut R,
) -> Result<Vec<Layer>> {
    let mut layers = vec![];
    if abs_input {
        layers.push(Layer::Abs);
    }
    layers.extend([
        Layer::conv(store, "h_a.conv0", m, n, 3, 1, rng)?,
        Layer::Relu,
        Layer::conv(store, "h_a.conv1", n, n, 5, 2, rng)?,
        Layer::Relu,
        Layer::conv(store, "h_a.conv2", n, m, 5, 2, rng)?,
    ]);
    Ok(layers)
}

/// Two stride-2 transposed convolutions and a k3 conv to `out` channels.
/// The final ReLU is applied only when the output is purely scales.
pub fn hyper_synthesis<T: Float, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    n: usize,
    m: usize,
    out: usize,
    relu_out: bool,
    rng: &mut R,
) -> Result<Vec<Layer>> {
    let mut layers = vec![
        Layer::deconv(store, "h_s.deconv0", m, n, 5, rng)?,
        Layer::Relu,
        Layer::deconv(store, "h_s.deconv1", n, n, 5, rng)?,
        Layer::Relu,
        Layer::conv(store, "h_s.conv2", n, out, 3, 1, rng)?,
    ];
    if relu_out {
        layers.push(Layer::Relu);
    }
    Ok(layers)
}
