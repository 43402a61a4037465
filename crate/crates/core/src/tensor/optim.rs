use std::collections::HashMap;

use super::{Float, Tensor};
use crate::error::{Error, Result};

/// Index of a [`Parameter`] inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// A named trainable tensor with an optional accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameter<T = f32> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Option<Tensor<T>>,
}

/// Owns all parameters of a model. Names are unique.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T = f32> {
    params: Vec<Parameter<T>>,
    by_name: HashMap<String, ParamId>,
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::contract(format!("duplicate parameter name `{name}`")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Parameter {
            name,
            value,
            grad: None,
        });
        Ok(id)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Same parameters converted to another element type (gradients dropped).
    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: None,
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }

    /// Number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }
}

/// Rescales the gradients of `ids` so their joint L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm<T: Float>(store: &mut ParamStore<T>, ids: &[ParamId], max_norm: f64) -> f64 {
    let total: f64 = ids
        .iter()
        .filter_map(|&id| store.get(id).grad.as_ref())
        .flat_map(|g| g.data().iter())
        .map(|v| v.f64() * v.f64())
        .sum::<f64>()
        .sqrt();
    if total > max_norm {
        let k = T::of(max_norm / (total + 1e-6));
        for &id in ids {
            if let Some(g) = store.get_mut(id).grad.as_mut() {
                g.data_mut().iter_mut().for_each(|v| *v *= k);
            }
        }
    }
    total
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment estimates for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T = f32> {
    pub step: u64,
    pub m: Tensor<T>,
    pub v: Tensor<T>,
}

/// Adam with bias correction over a fixed set of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T = f32> {
    pub config: AdamConfig,
    pub(crate) entries: Vec<(ParamId, AdamState<T>)>,
}

impl<T: Float> Adam<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>, ids: &[ParamId]) -> Self {
        let entries = ids
            .iter()
            .map(|&id| {
                let shape = store.get(id).value.shape().to_vec();
                (
                    id,
                    AdamState {
                        step: 0,
                        m: Tensor::zeros(shape.clone()),
                        v: Tensor::zeros(shape),
                    },
                )
            })
            .collect();
        Adam { config, entries }
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.entries.iter().map(|(id, _)| *id)
    }

    pub fn state(&self, id: ParamId) -> Option<&AdamState<T>> {
        self.entries.iter().find(|(i, _)| *i == id).map(|(_, s)| s)
    }

    pub fn state_mut(&mut self, id: ParamId) -> Option<&mut AdamState<T>> {
        self.entries.iter_mut().find(|(i, _)| *i == id).map(|(_, s)| s)
    }

    /// One update of every tracked parameter from its accumulated gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>, lr: f64) -> Result<()> {
        for (id, _) in &self.entries {
            let p = store.get(*id);
            match &p.grad {
                None => {
                    return Err(Error::contract(format!("missing gradient for parameter `{}`", p.name)));
                }
                Some(g) if g.shape() != p.value.shape() => {
                    return Err(Error::contract(format!("gradient shape mismatch for `{}`", p.name)));
                }
                Some(_) => {}
            }
        }
        let AdamConfig { beta1, beta2, eps } = self.config;
        for (id, state) in &mut self.entries {
            let param = store.get_mut(*id);
            let grad = param.grad.as_ref().expect("checked above");
            state.step += 1;
            let bc1 = 1.0 - beta1.powi(state.step as i32);
            let bc2 = 1.0 - beta2.powi(state.step as i32);
            let (b1, b2) = (T::of(beta1), T::of(beta2));
            let step_size = T::of(lr / bc1);
            let bc2_sqrt = T::of(bc2.sqrt());
            let eps = T::of(eps);
            for (((p, &g), m), v) in param
                .value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(state.m.data_mut())
                .zip(state.v.data_mut())
            {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let denom = v.sqrt() / bc2_sqrt + eps;
                *p -= step_size * *m / denom;
            }
        }
        Ok(())
    }
}
