use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use super::kernels::{self, ConvGeom};
use super::optim::{ParamId, ParamStore};
use super::{Float, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddBcast(usize, usize),
    MulBcast(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    AddScalar(usize),
    Square(usize),
    Sqrt(usize),
    Abs(usize),
    Relu(usize),
    Exp(usize),
    Log(usize),
    Softplus(usize),
    Tanh(usize),
    Sigmoid(usize),
    NormalCdf(usize),
    LowerBound(usize, f64),
    Powf(usize, f64),
    Sum(usize),
    Mean(usize),
    MeanSpatial(usize),
    Reshape(usize),
    Permute(usize, Vec<usize>),
    Narrow { x: usize, axis: usize, start: usize },
    Conv2d { x: usize, w: usize, b: usize, geom: ConvGeom },
    ConvT { x: usize, w: usize, b: usize, geom: ConvGeom },
    Gdn { x: usize, beta: usize, gamma: usize, inverse: bool },
    ChannelMatmul { w: usize, x: usize },
    Blur { x: usize, kernel: Vec<f64> },
    AvgPool2(usize),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::AddBcast(..) => "add_bcast",
            Op::MulBcast(..) => "mul_bcast",
            Op::Neg(_) => "neg",
            Op::Scale(..) => "scale",
            Op::AddScalar(_) => "add_scalar",
            Op::Square(_) => "square",
            Op::Sqrt(_) => "sqrt",
            Op::Abs(_) => "abs",
            Op::Relu(_) => "relu",
            Op::Exp(_) => "exp",
            Op::Log(_) => "log",
            Op::Softplus(_) => "softplus",
            Op::Tanh(_) => "tanh",
            Op::Sigmoid(_) => "sigmoid",
            Op::NormalCdf(_) => "normal_cdf",
            Op::LowerBound(..) => "lower_bound",
            Op::Powf(..) => "powf",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::MeanSpatial(_) => "mean_spatial",
            Op::Reshape(_) => "reshape",
            Op::Permute(..) => "permute",
            Op::Narrow { .. } => "narrow",
            Op::Conv2d { .. } => "conv2d",
            Op::ConvT { .. } => "conv_transpose2d",
            Op::Gdn { inverse: false, .. } => "gdn",
            Op::Gdn { inverse: true, .. } => "inverse_gdn",
            Op::ChannelMatmul { .. } => "channel_matmul",
            Op::Blur { .. } => "blur",
            Op::AvgPool2(_) => "avg_pool2",
        }
    }
}

struct Node<T> {
    value: Rc<Tensor<T>>,
    op: Op,
    needs_grad: bool,
}

/// A recording of one forward computation. Build a fresh graph per step.
pub struct Graph<T: Float = f32> {
    nodes: RefCell<Vec<Node<T>>>,
    params: RefCell<HashMap<ParamId, usize>>,
}

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g, T: Float = f32> {
    graph: &'g Graph<T>,
    id: usize,
}

impl<T: Float> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

pub(crate) fn normal_cdf(x: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-x / std::f64::consts::SQRT_2)
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

impl<T: Float> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: RefCell::new(Vec::new()),
            params: RefCell::new(HashMap::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor<T>, op: Op, needs_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            needs_grad,
        });
        Var {
            graph: self,
            id: nodes.len() - 1,
        }
    }

    fn value_of(&self, id: usize) -> Rc<Tensor<T>> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    /// Constant input; gradients are never propagated into it.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf whose gradient is reported by [`Graph::backward`].
    pub fn input(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, true)
    }

    /// Binds a trainable parameter. Binding the same parameter twice returns the same node.
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var<'_, T> {
        if let Some(&node) = self.params.borrow().get(&id) {
            return Var { graph: self, id: node };
        }
        let v = self.input(store.get(id).value.clone());
        self.params.borrow_mut().insert(id, v.id);
        v
    }

    /// Binds a parameter's current value as a constant (no gradient).
    pub fn param_const(&self, store: &ParamStore<T>, id: ParamId) -> Var<'_, T> {
        self.constant(store.get(id).value.clone())
    }

    /// First node (in recording order) holding a NaN or infinity, with its op name.
    pub fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        self.nodes
            .borrow()
            .iter()
            .enumerate()
            .find(|(_, n)| n.value.data().iter().any(|v| !v.is_finite()))
            .map(|(i, n)| (i, n.op.name()))
    }

    /// Reverse-mode sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let n = nodes.len();
        if nodes[loss.id].value.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; n];
        grads[loss.id] = Some(vec![T::one()]);
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(g);
                continue;
            }
            let mut acc = |target: usize, contrib: Vec<T>| {
                if !nodes[target].needs_grad {
                    return;
                }
                match &mut grads[target] {
                    Some(existing) => {
                        for (e, c) in existing.iter_mut().zip(contrib) {
                            *e += c;
                        }
                    }
                    slot @ None => *slot = Some(contrib),
                }
            };
            let val = |i: usize| &nodes[i].value;
            let out = &node.value;
            let unary = |a: usize, f: &dyn Fn(T, T, T) -> T| -> Vec<T> {
                // f(grad, input, output)
                g.iter()
                    .zip(val(a).data())
                    .zip(out.data())
                    .map(|((&g, &x), &y)| f(g, x, y))
                    .collect()
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                &Op::Add(a, b) => {
                    acc(b, g.clone());
                    acc(a, g);
                }
                &Op::Sub(a, b) => {
                    acc(b, g.iter().map(|&v| -v).collect());
                    acc(a, g);
                }
                &Op::Mul(a, b) => {
                    let (av, bv) = (val(a).data(), val(b).data());
                    if nodes[a].needs_grad {
                        acc(a, g.iter().zip(bv).map(|(&g, &b)| g * b).collect());
                    }
                    if nodes[b].needs_grad {
                        acc(b, g.iter().zip(av).map(|(&g, &a)| g * a).collect());
                    }
                }
                &Op::Div(a, b) => {
                    let (av, bv) = (val(a).data(), val(b).data());
                    if nodes[a].needs_grad {
                        acc(a, g.iter().zip(bv).map(|(&g, &b)| g / b).collect());
                    }
                    if nodes[b].needs_grad {
                        acc(
                            b,
                            g.iter().zip(av).zip(bv).map(|((&g, &a), &b)| -g * a / (b * b)).collect(),
                        );
                    }
                }
                &Op::AddBcast(a, b) | &Op::MulBcast(a, b) => {
                    let is_mul = matches!(node.op, Op::MulBcast(..));
                    let bshape = val(b).shape();
                    let index = kernels::gather_index(out.shape(), &kernels::bcast_strides(bshape));
                    if nodes[b].needs_grad {
                        let mut gb = vec![T::zero(); val(b).numel()];
                        let av = val(a).data();
                        for (k, (&gi, &bi)) in g.iter().zip(&index).enumerate() {
                            gb[bi] += if is_mul { gi * av[k] } else { gi };
                        }
                        acc(b, gb);
                    }
                    if nodes[a].needs_grad {
                        if is_mul {
                            let bv = val(b).data();
                            acc(a, g.iter().zip(&index).map(|(&gi, &bi)| gi * bv[bi]).collect());
                        } else {
                            acc(a, g);
                        }
                    }
                }
                &Op::Neg(a) => acc(a, g.iter().map(|&v| -v).collect()),
                &Op::Scale(a, k) => {
                    let k = T::of(k);
                    acc(a, g.iter().map(|&v| v * k).collect())
                }
                &Op::AddScalar(a) => acc(a, g),
                &Op::Square(a) => acc(a, unary(a, &|g, x, _| g * (x + x))),
                &Op::Sqrt(a) => acc(a, unary(a, &|g, _, y| g / (y + y))),
                &Op::Abs(a) => acc(
                    a,
                    unary(a, &|g, x, _| {
                        if x > T::zero() {
                            g
                        } else if x < T::zero() {
                            -g
                        } else {
                            T::zero()
                        }
                    }),
                ),
                &Op::Relu(a) => acc(a, unary(a, &|g, x, _| if x > T::zero() { g } else { T::zero() })),
                &Op::Exp(a) => acc(a, unary(a, &|g, _, y| g * y)),
                &Op::Log(a) => acc(a, unary(a, &|g, x, _| g / x)),
                &Op::Softplus(a) => acc(a, unary(a, &|g, x, _| g * T::of(sigmoid(x.f64())))),
                &Op::Tanh(a) => acc(a, unary(a, &|g, _, y| g * (T::one() - y * y))),
                &Op::Sigmoid(a) => acc(a, unary(a, &|g, _, y| g * y * (T::one() - y))),
                &Op::NormalCdf(a) => acc(a, unary(a, &|g, x, _| g * T::of(normal_pdf(x.f64())))),
                &Op::LowerBound(a, bound) => {
                    let bound = T::of(bound);
                    acc(
                        a,
                        unary(a, &|g, x, _| if x >= bound || g < T::zero() { g } else { T::zero() }),
                    )
                }
                &Op::Powf(a, p) => {
                    let pt = T::of(p);
                    acc(
                        a,
                        unary(a, &|g, x, _| {
                            if x > T::zero() {
                                g * pt * x.powf(pt - T::one())
                            } else {
                                T::zero()
                            }
                        }),
                    )
                }
                &Op::Sum(a) => acc(a, vec![g[0]; val(a).numel()]),
                &Op::Mean(a) => {
                    let n = val(a).numel();
                    acc(a, vec![g[0] / T::of(n as f64); n])
                }
                &Op::MeanSpatial(a) => {
                    let [_, _, h, w] = val(a).dims4().expect("validated at construction");
                    let scale = T::one() / T::of((h * w) as f64);
                    let mut ga = Vec::with_capacity(val(a).numel());
                    for &gv in &g {
                        ga.extend(std::iter::repeat_n(gv * scale, h * w));
                    }
                    acc(a, ga)
                }
                &Op::Reshape(a) => acc(a, g),
                Op::Permute(a, perm) => {
                    let mut inverse = vec![0; perm.len()];
                    for (i, &p) in perm.iter().enumerate() {
                        inverse[p] = i;
                    }
                    let (_, ga) = kernels::permute(&g, out.shape(), &inverse);
                    acc(*a, ga)
                }
                &Op::Narrow { x, axis, start } => {
                    let xs = val(x).shape();
                    let outer: usize = xs[..axis].iter().product();
                    let inner: usize = xs[axis + 1..].iter().product();
                    let (full, len) = (xs[axis], out.shape()[axis]);
                    let mut gx = vec![T::zero(); val(x).numel()];
                    for o in 0..outer {
                        let dst = (o * full + start) * inner;
                        gx[dst..dst + len * inner].copy_from_slice(&g[o * len * inner..(o + 1) * len * inner]);
                    }
                    acc(x, gx)
                }
                &Op::Conv2d { x, w, b, geom } => {
                    let xv = val(x);
                    let wv = val(w);
                    let cout = wv.shape()[0];
                    let r = kernels::conv2d_backward(
                        xv.data(),
                        xv.shape()[0],
                        &geom,
                        wv.data(),
                        cout,
                        &g,
                        (nodes[x].needs_grad, nodes[w].needs_grad, nodes[b].needs_grad),
                    );
                    if let Some(v) = r.x {
                        acc(x, v);
                    }
                    if let Some(v) = r.w {
                        acc(w, v);
                    }
                    if let Some(v) = r.b {
                        acc(b, v);
                    }
                }
                &Op::ConvT { x, w, b, geom } => {
                    let xv = val(x);
                    let wv = val(w);
                    let r = kernels::conv_t_backward(
                        xv.data(),
                        xv.shape()[0],
                        &geom,
                        wv.data(),
                        wv.shape()[0],
                        &g,
                        (nodes[x].needs_grad, nodes[w].needs_grad, nodes[b].needs_grad),
                    );
                    if let Some(v) = r.x {
                        acc(x, v);
                    }
                    if let Some(v) = r.w {
                        acc(w, v);
                    }
                    if let Some(v) = r.b {
                        acc(b, v);
                    }
                }
                &Op::Gdn { x, beta, gamma, inverse } => {
                    let xv = val(x);
                    let [n, c, h, w] = xv.dims4().expect("validated at construction");
                    let (gx, gb, gg) = kernels::gdn_backward(
                        xv.data(),
                        n,
                        c,
                        h * w,
                        val(beta).data(),
                        val(gamma).data(),
                        inverse,
                        &g,
                    );
                    acc(x, gx);
                    acc(beta, gb);
                    acc(gamma, gg);
                }
                &Op::ChannelMatmul { w, x } => {
                    let (ws, xs) = (val(w).shape(), val(x).shape());
                    let (gw, gx) = kernels::channel_matmul_backward(
                        val(w).data(),
                        val(x).data(),
                        &g,
                        ws[0],
                        ws[1],
                        ws[2],
                        xs[2],
                    );
                    acc(w, gw);
                    acc(x, gx);
                }
                Op::Blur { x, kernel } => {
                    let [n, c, h, w] = val(*x).dims4().expect("validated at construction");
                    let k: Vec<T> = kernel.iter().map(|&v| T::of(v)).collect();
                    acc(*x, kernels::blur_backward(&g, n * c, h, w, &k))
                }
                &Op::AvgPool2(x) => {
                    let [n, c, h, w] = val(x).dims4().expect("validated at construction");
                    acc(x, kernels::avg_pool2_backward(&g, n * c, h, w))
                }
            }
        }
        let params = self
            .params
            .borrow()
            .iter()
            .map(|(&p, &node)| (p, node))
            .collect();
        Ok(Gradients { grads, params })
    }
}

/// Gradients of one backward sweep, keyed by graph node.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    params: Vec<(ParamId, usize)>,
}

impl<T: Float> Gradients<T> {
    /// Gradient w.r.t. a leaf created with [`Graph::input`] or [`Graph::param`].
    pub fn get(&self, var: Var<'_, T>) -> Option<Tensor<T>> {
        let shape = var.shape();
        self.grads[var.id]
            .as_ref()
            .map(|g| Tensor::new(shape, g.clone()).expect("gradient matches value shape"))
    }

    /// Adds parameter gradients into `store` (accumulating across calls).
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) {
        for &(pid, node) in &self.params {
            let Some(g) = &self.grads[node] else { continue };
            let param = store.get_mut(pid);
            match &mut param.grad {
                Some(existing) => {
                    for (e, &v) in existing.data_mut().iter_mut().zip(g) {
                        *e += v;
                    }
                }
                slot @ None => {
                    *slot = Some(Tensor::new(param.value.shape().to_vec(), g.clone()).expect("shape"));
                }
            }
        }
    }
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Dimension {
            op,
            axis: "rank",
            expected: a.len(),
            actual: b.len(),
        });
    }
    for (i, (&x, &y)) in a.iter().zip(b).enumerate() {
        if x != y {
            return Err(Error::Dimension {
                op,
                axis: AXES.get(i).copied().unwrap_or("trailing"),
                expected: x,
                actual: y,
            });
        }
    }
    Ok(())
}

const AXES: [&str; 4] = ["N", "C", "H", "W"];

impl<'g, T: Float> Var<'g, T> {
    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.graph.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    fn check_graph(&self, other: &Var<'_, T>) {
        assert!(
            std::ptr::eq(self.graph, other.graph),
            "variables recorded on different graphs"
        );
    }

    fn map(&self, op: Op, f: impl Fn(f64) -> f64) -> Var<'g, T> {
        let v = self.value();
        let out = v.map(|x| T::of(f(x.f64())));
        self.graph.push(out, op, self.graph.needs(self.id))
    }

    fn map_t(&self, op: Op, f: impl Fn(T) -> T) -> Var<'g, T> {
        let out = self.value().map(f);
        self.graph.push(out, op, self.graph.needs(self.id))
    }

    fn zip(&self, other: &Var<'g, T>, name: &'static str, op: Op, f: impl Fn(T, T) -> T) -> Result<Var<'g, T>> {
        self.check_graph(other);
        let (a, b) = (self.value(), other.value());
        same_shape(name, a.shape(), b.shape())?;
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(a.shape().to_vec(), data)?;
        let needs = self.graph.needs(self.id) || self.graph.needs(other.id);
        Ok(self.graph.push(out, op, needs))
    }

    pub fn add(&self, other: &Var<'g, T>) -> Result<Var<'g, T>> {
        self.zip(other, "add", Op::Add(self.id, other.id), |a, b| a + b)
    }

    pub fn sub(&self, other: &Var<'g, T>) -> Result<Var<'g, T>> {
        self.zip(other, "sub", Op::Sub(self.id, other.id), |a, b| a - b)
    }

    pub fn mul(&self, other: &Var<'g, T>) -> Result<Var<'g, T>> {
        self.zip(other, "mul", Op::Mul(self.id, other.id), |a, b| a * b)
    }

    pub fn div(&self, other: &Var<'g, T>) -> Result<Var<'g, T>> {
        self.zip(other, "div", Op::Div(self.id, other.id), |a, b| a / b)
    }

    fn bcast(&self, other: &Var<'g, T>, name: &'static str, is_mul: bool) -> Result<Var<'g, T>> {
        self.check_graph(other);
        let (a, b) = (self.value(), other.value());
        if a.shape().len() != b.shape().len() {
            return Err(Error::Dimension {
                op: name,
                axis: "rank",
                expected: a.shape().len(),
                actual: b.shape().len(),
            });
        }
        for (i, (&x, &y)) in a.shape().iter().zip(b.shape()).enumerate() {
            if y != 1 && y != x {
                return Err(Error::Dimension {
                    op: name,
                    axis: AXES.get(i).copied().unwrap_or("trailing"),
                    expected: x,
                    actual: y,
                });
            }
        }
        let index = kernels::gather_index(a.shape(), &kernels::bcast_strides(b.shape()));
        let bd = b.data();
        let data = a
            .data()
            .iter()
            .zip(&index)
            .map(|(&x, &i)| if is_mul { x * bd[i] } else { x + bd[i] })
            .collect();
        let op = if is_mul {
            Op::MulBcast(self.id, other.id)
        } else {
            Op::AddBcast(self.id, other.id)
        };
        let needs = self.graph.needs(self.id) || self.graph.needs(other.id);
        Ok(self.graph.push(Tensor::new(a.shape().to_vec(), data)?, op, needs))
    }

    /// `self + b` where every axis of `b` is either 1 or equal to `self`'s.
    pub fn add_bcast(&self, b: &Var<'g, T>) -> Result<Var<'g, T>> {
        self.bcast(b, "add_bcast", false)
    }

    pub fn mul_bcast(&self, b: &Var<'g, T>) -> Result<Var<'g, T>> {
        self.bcast(b, "mul_bcast", true)
    }

    pub fn neg(&self) -> Var<'g, T> {
        self.map_t(Op::Neg(self.id), |x| -x)
    }

    pub fn scale(&self, k: f64) -> Var<'g, T> {
        let kt = T::of(k);
        self.map_t(Op::Scale(self.id, k), |x| x * kt)
    }

    pub fn add_scalar(&self, k: f64) -> Var<'g, T> {
        let kt = T::of(k);
        self.map_t(Op::AddScalar(self.id), |x| x + kt)
    }

    pub fn square(&self) -> Var<'g, T> {
        self.map_t(Op::Square(self.id), |x| x * x)
    }

    pub fn sqrt(&self) -> Var<'g, T> {
        self.map_t(Op::Sqrt(self.id), |x| x.sqrt())
    }

    pub fn abs(&self) -> Var<'g, T> {
        self.map_t(Op::Abs(self.id), |x| x.abs())
    }

    pub fn relu(&self) -> Var<'g, T> {
        self.map_t(Op::Relu(self.id), |x| x.max(T::zero()))
    }

    pub fn exp(&self) -> Var<'g, T> {
        self.map_t(Op::Exp(self.id), |x| x.exp())
    }

    pub fn ln(&self) -> Var<'g, T> {
        self.map_t(Op::Log(self.id), |x| x.ln())
    }

    pub fn softplus(&self) -> Var<'g, T> {
        self.map(Op::Softplus(self.id), softplus)
    }

    pub fn tanh(&self) -> Var<'g, T> {
        self.map_t(Op::Tanh(self.id), |x| x.tanh())
    }

    pub fn sigmoid(&self) -> Var<'g, T> {
        self.map(Op::Sigmoid(self.id), sigmoid)
    }

    /// Standard normal CDF.
    pub fn normal_cdf(&self) -> Var<'g, T> {
        self.map(Op::NormalCdf(self.id), normal_cdf)
    }

    /// `max(x, bound)`; the gradient still flows below the bound when it
    /// points upward, so bounded values can recover.
    pub fn lower_bound(&self, bound: f64) -> Var<'g, T> {
        let b = T::of(bound);
        self.map_t(Op::LowerBound(self.id, bound), |x| x.max(b))
    }

    /// `x^p` for nonnegative `x` (zero gradient at `x <= 0`).
    pub fn powf(&self, p: f64) -> Var<'g, T> {
        let pt = T::of(p);
        self.map_t(Op::Powf(self.id, p), |x| if x > T::zero() { x.powf(pt) } else { T::zero() })
    }

    pub fn sum(&self) -> Var<'g, T> {
        let s: T = self.value().data().iter().copied().sum();
        self.graph.push(Tensor::scalar(s), Op::Sum(self.id), self.graph.needs(self.id))
    }

    pub fn mean(&self) -> Var<'g, T> {
        let v = self.value();
        let s: T = v.data().iter().copied().sum::<T>() / T::of(v.numel() as f64);
        self.graph.push(Tensor::scalar(s), Op::Mean(self.id), self.graph.needs(self.id))
    }

    /// `[N, C, H, W]` -> `[N, C]` mean over the spatial axes.
    pub fn mean_spatial(&self) -> Result<Var<'g, T>> {
        let v = self.value();
        let [n, c, h, w] = v.dims4()?;
        let data = v
            .data()
            .chunks(h * w)
            .map(|ch| ch.iter().copied().sum::<T>() / T::of((h * w) as f64))
            .collect();
        Ok(self.graph.push(
            Tensor::new(vec![n, c], data)?,
            Op::MeanSpatial(self.id),
            self.graph.needs(self.id),
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Var<'g, T>> {
        let v = self.value();
        let out = Tensor::new(shape.to_vec(), v.data().to_vec())?;
        Ok(self.graph.push(out, Op::Reshape(self.id), self.graph.needs(self.id)))
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Var<'g, T>> {
        let v = self.value();
        let mut seen = vec![false; perm.len()];
        if perm.len() != v.shape().len() || perm.iter().any(|&p| p >= perm.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::contract(format!("invalid permutation {perm:?} for rank {}", v.shape().len())));
        }
        let (shape, data) = kernels::permute(v.data(), v.shape(), perm);
        Ok(self.graph.push(
            Tensor::new(shape, data)?,
            Op::Permute(self.id, perm.to_vec()),
            self.graph.needs(self.id),
        ))
    }

    /// Slice `start..start+len` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Var<'g, T>> {
        let v = self.value();
        let xs = v.shape();
        if axis >= xs.len() || start + len > xs[axis] {
            return Err(Error::Dimension {
                op: "narrow",
                axis: AXES.get(axis).copied().unwrap_or("trailing"),
                expected: xs.get(axis).copied().unwrap_or(0),
                actual: start + len,
            });
        }
        let outer: usize = xs[..axis].iter().product();
        let inner: usize = xs[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let src = (o * xs[axis] + start) * inner;
            data.extend_from_slice(&v.data()[src..src + len * inner]);
        }
        let mut shape = xs.to_vec();
        shape[axis] = len;
        Ok(self.graph.push(
            Tensor::new(shape, data)?,
            Op::Narrow {
                x: self.id,
                axis,
                start,
            },
            self.graph.needs(self.id),
        ))
    }

    fn conv_operands(&self, w: &Var<'g, T>, b: &Var<'g, T>, stride: usize, op: &'static str) -> Result<([usize; 4], [usize; 4])> {
        self.check_graph(w);
        self.check_graph(b);
        let xd = self.value().dims4()?;
        let wd = w.value().dims4()?;
        let k = wd[2];
        if wd[3] != k || k % 2 == 0 {
            return Err(Error::Dimension {
                op,
                axis: "kernel",
                expected: k | 1,
                actual: wd[3],
            });
        }
        if stride != 1 && stride != 2 {
            return Err(Error::contract(format!("{op}: stride must be 1 or 2, got {stride}")));
        }
        Ok((xd, wd))
    }

    /// Zero-padded strided 2-D correlation. `w: [C_out, C_in, k, k]`, `b: [C_out]`.
    pub fn conv2d(&self, w: &Var<'g, T>, b: &Var<'g, T>, stride: usize, pad: usize) -> Result<Var<'g, T>> {
        let ([n, cin, h, wd], [cout, wcin, k, _]) = self.conv_operands(w, b, stride, "conv2d")?;
        if wcin != cin {
            return Err(Error::Dimension {
                op: "conv2d",
                axis: "C_in",
                expected: cin,
                actual: wcin,
            });
        }
        if b.value().numel() != cout {
            return Err(Error::Dimension {
                op: "conv2d",
                axis: "bias",
                expected: cout,
                actual: b.value().numel(),
            });
        }
        for (axis, ext) in [("H", h), ("W", wd)] {
            if ext + 2 * pad < k {
                return Err(Error::Dimension {
                    op: "conv2d",
                    axis,
                    expected: k,
                    actual: ext + 2 * pad,
                });
            }
        }
        let geom = ConvGeom {
            channels: cin,
            height: h,
            width: wd,
            kernel: k,
            stride,
            pad,
            out_h: (h + 2 * pad - k) / stride + 1,
            out_w: (wd + 2 * pad - k) / stride + 1,
        };
        let data = kernels::conv2d_forward(self.value().data(), n, &geom, w.value().data(), b.value().data(), cout);
        let out = Tensor::new(vec![n, cout, geom.out_h, geom.out_w], data)?;
        let needs = [self.id, w.id, b.id].iter().any(|&i| self.graph.needs(i));
        Ok(self.graph.push(
            out,
            Op::Conv2d {
                x: self.id,
                w: w.id,
                b: b.id,
                geom,
            },
            needs,
        ))
    }

    /// Transposed convolution (adjoint of [`Var::conv2d`] on the data path).
    /// `w: [C_in, C_out, k, k]`, output extent `(H-1)*stride - 2*pad + k + out_pad`.
    pub fn conv_transpose2d(
        &self,
        w: &Var<'g, T>,
        b: &Var<'g, T>,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Result<Var<'g, T>> {
        let ([n, cin, h, wd], [wcin, cout, k, _]) = self.conv_operands(w, b, stride, "conv_transpose2d")?;
        if wcin != cin {
            return Err(Error::Dimension {
                op: "conv_transpose2d",
                axis: "C_in",
                expected: cin,
                actual: wcin,
            });
        }
        if b.value().numel() != cout {
            return Err(Error::Dimension {
                op: "conv_transpose2d",
                axis: "bias",
                expected: cout,
                actual: b.value().numel(),
            });
        }
        if out_pad >= stride {
            return Err(Error::contract(format!(
                "conv_transpose2d: out_pad {out_pad} must be smaller than stride {stride}"
            )));
        }
        let extent = |x: usize, axis| {
            ((x - 1) * stride + k + out_pad)
                .checked_sub(2 * pad)
                .filter(|&e| e > 0)
                .ok_or(Error::Dimension {
                    op: "conv_transpose2d",
                    axis,
                    expected: 2 * pad + 1,
                    actual: (x - 1) * stride + k + out_pad,
                })
        };
        let geom = ConvGeom {
            channels: cout,
            height: extent(h, "H")?,
            width: extent(wd, "W")?,
            kernel: k,
            stride,
            pad,
            out_h: h,
            out_w: wd,
        };
        let data = kernels::conv_t_forward(self.value().data(), n, &geom, w.value().data(), b.value().data(), cin);
        let out = Tensor::new(vec![n, cout, geom.height, geom.width], data)?;
        let needs = [self.id, w.id, b.id].iter().any(|&i| self.graph.needs(i));
        Ok(self.graph.push(
            out,
            Op::ConvT {
                x: self.id,
                w: w.id,
                b: b.id,
                geom,
            },
            needs,
        ))
    }

    /// Generalized divisive normalization with effective (already
    /// reparameterized) `beta: [C]` and `gamma: [C, C]`.
    pub fn gdn(&self, beta: &Var<'g, T>, gamma: &Var<'g, T>, inverse: bool) -> Result<Var<'g, T>> {
        self.check_graph(beta);
        self.check_graph(gamma);
        let x = self.value();
        let [n, c, h, w] = x.dims4()?;
        let (bv, gv) = (beta.value(), gamma.value());
        if bv.numel() != c {
            return Err(Error::Dimension {
                op: "gdn",
                axis: "beta",
                expected: c,
                actual: bv.numel(),
            });
        }
        if gv.shape() != [c, c] {
            return Err(Error::Dimension {
                op: "gdn",
                axis: "gamma",
                expected: c * c,
                actual: gv.numel(),
            });
        }
        if let Some(b) = bv.data().iter().find(|&&b| !(b > T::zero())) {
            return Err(Error::Parameterization(format!("gdn: effective beta must be positive, got {b}")));
        }
        if let Some(g) = gv.data().iter().find(|&&g| g < T::zero()) {
            return Err(Error::Parameterization(format!("gdn: effective gamma must be nonnegative, got {g}")));
        }
        let data = kernels::gdn_forward(x.data(), n, c, h * w, bv.data(), gv.data(), inverse);
        let needs = [self.id, beta.id, gamma.id].iter().any(|&i| self.graph.needs(i));
        Ok(self.graph.push(
            Tensor::new(x.shape().to_vec(), data)?,
            Op::Gdn {
                x: self.id,
                beta: beta.id,
                gamma: gamma.id,
                inverse,
            },
            needs,
        ))
    }

    /// Batched small matmul: `w: [B, O, I]` applied to `self: [B, I, L]`.
    pub fn channel_matmul(&self, w: &Var<'g, T>) -> Result<Var<'g, T>> {
        self.check_graph(w);
        let (wv, xv) = (w.value(), self.value());
        let (&[b, o, i], &[xb, xi, l]) = (wv.shape(), xv.shape()) else {
            return Err(Error::Dimension {
                op: "channel_matmul",
                axis: "rank",
                expected: 3,
                actual: xv.shape().len(),
            });
        };
        if b != xb || i != xi {
            return Err(Error::Dimension {
                op: "channel_matmul",
                axis: if b != xb { "C" } else { "inner" },
                expected: if b != xb { b } else { i },
                actual: if b != xb { xb } else { xi },
            });
        }
        let data = kernels::channel_matmul(wv.data(), xv.data(), b, o, i, l);
        let needs = self.graph.needs(self.id) || self.graph.needs(w.id);
        Ok(self.graph.push(
            Tensor::new(vec![b, o, l], data)?,
            Op::ChannelMatmul { w: w.id, x: self.id },
            needs,
        ))
    }

    /// Per-plane separable filtering with a 1-D `kernel` along both axes, no padding.
    pub fn blur_valid(&self, kernel: &[f64]) -> Result<Var<'g, T>> {
        let v = self.value();
        let [n, c, h, w] = v.dims4()?;
        let k = kernel.len();
        if h < k || w < k {
            return Err(Error::Dimension {
                op: "blur_valid",
                axis: if h < k { "H" } else { "W" },
                expected: k,
                actual: h.min(w),
            });
        }
        let kt: Vec<T> = kernel.iter().map(|&x| T::of(x)).collect();
        let data = kernels::blur_forward(v.data(), n * c, h, w, &kt);
        Ok(self.graph.push(
            Tensor::new(vec![n, c, h + 1 - k, w + 1 - k], data)?,
            Op::Blur {
                x: self.id,
                kernel: kernel.to_vec(),
            },
            self.graph.needs(self.id),
        ))
    }

    /// 2x2 mean pooling (floor on odd extents).
    pub fn avg_pool2(&self) -> Result<Var<'g, T>> {
        let v = self.value();
        let [n, c, h, w] = v.dims4()?;
        let data = kernels::avg_pool2_forward(v.data(), n * c, h, w);
        Ok(self.graph.push(
            Tensor::new(vec![n, c, h / 2, w / 2], data)?,
            Op::AvgPool2(self.id),
            self.graph.needs(self.id),
        ))
    }
}
