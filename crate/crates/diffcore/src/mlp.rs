//! Multilayer perceptrons over a [`ParamStore`].

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, DiffError, Result};
use crate::exec::Exec;
use crate::kernels::Activation;
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Epsilon used by group normalization inside networks.
pub const GROUP_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Registers an `in x out` layer with uniform fan-in scaled init.
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = (6.0 / fan_in.max(1) as f64).sqrt() * 0.5;
        let weight = store.add(format!("{name}.w"), Tensor::uniform(fan_in, fan_out, bound, rng));
        let bias = store.add(format!("{name}.b"), Tensor::zeros(1, fan_out));
        Self { weight, bias, fan_in, fan_out }
    }

    pub fn forward<E: Exec>(&self, exec: &mut E, store: &ParamStore, x: &E::V) -> Result<E::V> {
        let w = exec.param(store, self.weight);
        let b = exec.param(store, self.bias);
        exec.linear(x, &w, &b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub groups: usize,
}

impl NormParams {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize, groups: usize) -> Result<Self> {
        if groups == 0 || channels % groups != 0 {
            return Err(DiffError::InvalidArgument(format!(
                "{channels} channels not divisible into {groups} groups"
            )));
        }
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(1, channels, 1.0));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(1, channels));
        Ok(Self { gamma, beta, groups })
    }

    pub fn forward<E: Exec>(&self, exec: &mut E, store: &ParamStore, x: &E::V) -> Result<E::V> {
        let g = exec.param(store, self.gamma);
        let b = exec.param(store, self.beta);
        exec.group_norm(x, &g, &b, self.groups, GROUP_NORM_EPS)
    }
}

/// Shape of an MLP: `hidden_layers` hidden layers of `hidden` units each.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub input: usize,
    pub hidden: usize,
    pub hidden_layers: usize,
    pub output: usize,
}

/// Handles to the layers of one MLP. Hidden layers apply the activation (and
/// group norm before it, when enabled); the output layer is linear.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Linear>,
    pub activation: Activation,
    pub norms: Option<Vec<NormParams>>,
}

impl MlpParams {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        shape: MlpShape,
        activation: Activation,
        norm_groups: Option<usize>,
        rng: &mut R,
    ) -> Result<Self> {
        let mut dims = vec![shape.input];
        dims.extend(std::iter::repeat_n(shape.hidden, shape.hidden_layers));
        dims.push(shape.output);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, &format!("{name}.l{i}"), w[0], w[1], rng))
            .collect::<Vec<_>>();
        let norms = match norm_groups {
            Some(groups) => Some(
                (0..shape.hidden_layers)
                    .map(|i| NormParams::new(store, &format!("{name}.gn{i}"), shape.hidden, groups))
                    .collect::<Result<Vec<_>>>()?,
            ),
            None => None,
        };
        Ok(Self { layers, activation, norms })
    }

    /// Builds an MLP from existing layers, checking that shapes chain.
    pub fn from_layers(layers: Vec<Linear>, activation: Activation, norms: Option<Vec<NormParams>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(DiffError::InvalidArgument("an MLP needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].fan_out != w[1].fan_in {
                return Err(shape_err("MlpParams", format!("layer {} -> {} does not chain", w[0].fan_out, w[1].fan_in)));
            }
        }
        if let Some(n) = &norms {
            if n.len() != layers.len() - 1 {
                return Err(shape_err("MlpParams", "one norm per hidden layer"));
            }
        }
        Ok(Self { layers, activation, norms })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map(|l| l.fan_out).unwrap_or(0)
    }

    /// Zeroes the output layer so the network emits exactly zero.
    pub fn zero_output(&self, store: &mut ParamStore) {
        let last = self.layers.last().expect("non-empty");
        store.get_mut(last.weight).data_mut().fill(0.0);
        store.get_mut(last.bias).data_mut().fill(0.0);
    }

    /// Runs the hidden stack on an already-computed first-layer pre-activation.
    pub fn forward_from_first<E: Exec>(&self, exec: &mut E, store: &ParamStore, pre: E::V) -> Result<E::V> {
        let mut h = pre;
        for (i, layer) in self.layers.iter().enumerate().skip(1) {
            h = self.hidden_act(exec, store, i - 1, h)?;
            h = layer.forward(exec, store, &h)?;
        }
        Ok(h)
    }

    fn hidden_act<E: Exec>(&self, exec: &mut E, store: &ParamStore, i: usize, h: E::V) -> Result<E::V> {
        let h = match &self.norms {
            Some(norms) => norms[i].forward(exec, store, &h)?,
            None => h,
        };
        exec.activation_owned(h, self.activation)
    }
}

pub fn mlp_forward<E: Exec>(exec: &mut E, store: &ParamStore, mlp: &MlpParams, x: &E::V) -> Result<E::V> {
    let cols = exec.value(x).cols();
    if cols != mlp.input_dim() {
        return Err(shape_err("mlp_forward", format!("input has {cols} features, MLP expects {}", mlp.input_dim())));
    }
    let first = mlp.layers[0].forward(exec, store, x)?;
    mlp.forward_from_first(exec, store, first)
}
