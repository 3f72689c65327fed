//! The op vocabulary shared by training (taped) and inference (eager) code.
//!
//! Model code is written once against [`Exec`]; running it on a [`crate::Tape`]
//! records the graph for [`crate::Tape::backward`], running it on [`Eager`]
//! computes values only and frees intermediates as soon as they are dropped.

use crate::error::Result;
use crate::kernels::{self, Activation, Index, Reduce};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

pub trait Exec {
    type V: Clone;

    fn constant(&mut self, t: Tensor) -> Self::V;
    fn param(&mut self, store: &ParamStore, id: ParamId) -> Self::V;
    fn value<'a>(&'a self, v: &'a Self::V) -> &'a Tensor;

    fn matmul(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    /// Adds a `1 x cols` bias row to every row of `a`.
    fn add_bias(&mut self, a: &Self::V, bias: &Self::V) -> Result<Self::V>;
    fn add(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn sub(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn mul(&mut self, a: &Self::V, b: &Self::V) -> Result<Self::V>;
    fn scale(&mut self, a: &Self::V, s: f64) -> Result<Self::V>;
    fn activation(&mut self, a: &Self::V, act: Activation) -> Result<Self::V>;
    fn gather_rows(&mut self, a: &Self::V, idx: &Index) -> Result<Self::V>;
    fn scatter_rows(&mut self, a: &Self::V, idx: &Index, n_out: usize, reduce: Reduce) -> Result<Self::V>;
    fn concat_cols(&mut self, parts: &[Self::V]) -> Result<Self::V>;
    fn slice_rows(&mut self, a: &Self::V, start: usize, len: usize) -> Result<Self::V>;
    fn group_norm(
        &mut self,
        x: &Self::V,
        gamma: &Self::V,
        beta: &Self::V,
        groups: usize,
        eps: f64,
    ) -> Result<Self::V>;
    /// Scalar `sum(w2 * (x - target)^2 + w1 * |x - target|)`.
    fn weighted_loss(&mut self, x: &Self::V, target: &Tensor, w2: &Tensor, w1: &Tensor) -> Result<Self::V>;
    fn sum(&mut self, a: &Self::V) -> Result<Self::V>;

    /// `x * w + bias`.
    fn linear(&mut self, x: &Self::V, w: &Self::V, bias: &Self::V) -> Result<Self::V> {
        let h = self.matmul(x, w)?;
        self.add_bias(&h, bias)
    }

    /// [`Exec::activation`] on a value the caller no longer needs.
    fn activation_owned(&mut self, a: Self::V, act: Activation) -> Result<Self::V> {
        self.activation(&a, act)
    }
}

/// Value-only executor.
#[derive(Debug, Default, Clone, Copy)]
pub struct Eager;

impl Exec for Eager {
    type V = Tensor;

    fn constant(&mut self, t: Tensor) -> Tensor {
        t
    }

    fn param(&mut self, store: &ParamStore, id: ParamId) -> Tensor {
        store.get(id).clone()
    }

    fn value<'a>(&'a self, v: &'a Tensor) -> &'a Tensor {
        v
    }

    fn matmul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        kernels::matmul(a, b)
    }

    fn add_bias(&mut self, a: &Tensor, bias: &Tensor) -> Result<Tensor> {
        kernels::add_bias(a, bias)
    }

    fn linear(&mut self, x: &Tensor, w: &Tensor, bias: &Tensor) -> Result<Tensor> {
        kernels::linear(x, w, bias)
    }

    fn activation_owned(&mut self, mut a: Tensor, act: Activation) -> Result<Tensor> {
        for v in a.data_mut() {
            *v = act.apply(*v);
        }
        Ok(a)
    }

    fn add(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        kernels::zip_with("add", a, b, |x, y| x + y)
    }

    fn sub(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        kernels::zip_with("sub", a, b, |x, y| x - y)
    }

    fn mul(&mut self, a: &Tensor, b: &Tensor) -> Result<Tensor> {
        kernels::zip_with("mul", a, b, |x, y| x * y)
    }

    fn scale(&mut self, a: &Tensor, s: f64) -> Result<Tensor> {
        Ok(a.map(|x| x * s))
    }

    fn activation(&mut self, a: &Tensor, act: Activation) -> Result<Tensor> {
        Ok(kernels::activation(a, act))
    }

    fn gather_rows(&mut self, a: &Tensor, idx: &Index) -> Result<Tensor> {
        kernels::gather_rows(a, idx)
    }

    fn scatter_rows(&mut self, a: &Tensor, idx: &Index, n_out: usize, reduce: Reduce) -> Result<Tensor> {
        Ok(kernels::scatter_rows(a, idx, n_out, reduce)?.out)
    }

    fn concat_cols(&mut self, parts: &[Tensor]) -> Result<Tensor> {
        let refs: Vec<&Tensor> = parts.iter().collect();
        kernels::concat_cols(&refs)
    }

    fn slice_rows(&mut self, a: &Tensor, start: usize, len: usize) -> Result<Tensor> {
        kernels::slice_rows(a, start, len)
    }

    fn group_norm(&mut self, x: &Tensor, gamma: &Tensor, beta: &Tensor, groups: usize, eps: f64) -> Result<Tensor> {
        kernels::group_norm_value(x, gamma, beta, groups, eps)
    }

    fn weighted_loss(&mut self, x: &Tensor, target: &Tensor, w2: &Tensor, w1: &Tensor) -> Result<Tensor> {
        Ok(Tensor::scalar(kernels::weighted_loss(x, target, w2, w1)?))
    }

    fn sum(&mut self, a: &Tensor) -> Result<Tensor> {
        Ok(Tensor::scalar(a.sum()))
    }
}
