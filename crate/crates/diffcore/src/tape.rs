//! Tape-based reverse mode.
//!
//! A [`Tape`] records one forward pass. [`Tape::backward`] walks the records in
//! reverse, accumulating gradients for parameters and for leaves created with
//! [`Tape::input`]. A tape supports exactly one backward pass; call
//! [`Tape::reset`] (or build a new tape) before the next forward pass.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{shape_err, DiffError, Result};
use crate::exec::Exec;
use crate::kernels::{self, Activation, GroupNormCache, Index, Reduce};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    id: usize,
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    AddBias(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Act(usize, Activation),
    Gather(usize, Index),
    Scatter { src: usize, idx: Index, reduce: Reduce, argmax: Option<Vec<usize>> },
    Concat(Vec<usize>),
    SliceRows { src: usize, start: usize },
    GroupNorm { x: usize, gamma: usize, beta: usize, cache: GroupNormCache },
    WeightedLoss { x: usize, target: Tensor, w2: Tensor, w1: Tensor },
    Sum(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by one backward pass.
#[derive(Debug, Default)]
pub struct Gradients {
    params: HashMap<(u64, ParamId), Tensor>,
    inputs: HashMap<usize, Tensor>,
    tape: u64,
}

impl Gradients {
    /// Gradient for a parameter of `store`; `None` if it did not reach the loss.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Option<&Tensor> {
        self.params.get(&(store.uid(), id))
    }

    /// One gradient per parameter of `store`, zero-filled where unreachable.
    pub fn for_store(&self, store: &ParamStore) -> Vec<Tensor> {
        store
            .iter()
            .map(|(id, _, t)| match self.param(store, id) {
                Some(g) => g.clone(),
                None => Tensor::zeros(t.rows(), t.cols()).reshape(t.shape().to_vec()).expect("same numel"),
            })
            .collect()
    }

    /// Gradient for a leaf created with [`Tape::input`].
    pub fn input(&self, v: Var) -> Option<&Tensor> {
        if v.tape != self.tape {
            return None;
        }
        self.inputs.get(&v.id)
    }
}

pub struct Tape {
    uid: u64,
    nodes: Vec<Node>,
    param_leaves: HashMap<(u64, ParamId), usize>,
    leaf_params: HashMap<usize, (u64, ParamId)>,
    inputs: Vec<usize>,
    consumed: bool,
    check_finite: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self {
            uid: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            param_leaves: HashMap::new(),
            leaf_params: HashMap::new(),
            inputs: Vec::new(),
            consumed: false,
            check_finite: true,
        }
    }

    /// Disables the per-op finiteness check (on by default).
    pub fn without_nan_guard(mut self) -> Self {
        self.check_finite = false;
        self
    }

    /// Clears all records so the tape can be reused for a new forward pass.
    pub fn reset(&mut self) {
        self.uid = NEXT_TAPE.fetch_add(1, Ordering::Relaxed);
        self.nodes.clear();
        self.param_leaves.clear();
        self.leaf_params.clear();
        self.inputs.clear();
        self.consumed = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf whose gradient is reported by [`Gradients::input`].
    pub fn input(&mut self, t: Tensor) -> Var {
        let v = self.push(t, Op::Leaf, true);
        self.inputs.push(v.id);
        v
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var { tape: self.uid, id: self.nodes.len() - 1 }
    }

    fn idx(&self, v: &Var) -> Result<usize> {
        if v.tape != self.uid || v.id >= self.nodes.len() {
            return Err(DiffError::DetachedGraph);
        }
        Ok(v.id)
    }

    fn val(&self, i: usize) -> &Tensor {
        &self.nodes[i].value
    }

    fn needs(&self, i: usize) -> bool {
        self.nodes[i].needs_grad
    }

    fn record(&mut self, op_name: &'static str, value: Tensor, op: Op, needs_grad: bool) -> Result<Var> {
        if self.consumed {
            return Err(DiffError::BackwardTwice);
        }
        if self.check_finite && !value.is_finite() {
            return Err(DiffError::NonFinite { op: op_name });
        }
        Ok(self.push(value, op, needs_grad))
    }

    /// Runs reverse accumulation from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(DiffError::BackwardTwice);
        }
        let root = self.idx(&loss)?;
        if !self.nodes[root].value.is_scalar() {
            return Err(DiffError::NonScalarLoss(self.nodes[root].value.shape().to_vec()));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root] = Some(Tensor::scalar(1.0));
        let mut out = Gradients { tape: self.uid, ..Default::default() };

        for i in (0..=root).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {
                    if let Some(key) = self.leaf_params.get(&i) {
                        accumulate_map(&mut out.params, *key, g);
                    } else if self.inputs.contains(&i) {
                        out.inputs.insert(i, g);
                    }
                }
                Op::MatMul(a, b) => {
                    let (ga, gb) = kernels::matmul_backward(self.val(*a), self.val(*b), &g, (self.needs(*a), self.needs(*b)));
                    if let Some(ga) = ga {
                        self.acc(&mut grads, *a, ga);
                    }
                    if let Some(gb) = gb {
                        self.acc(&mut grads, *b, gb);
                    }
                }
                Op::AddBias(a, b) => {
                    self.acc(&mut grads, *b, kernels::column_sums(&g));
                    self.acc(&mut grads, *a, g);
                }
                Op::Add(a, b) => {
                    self.acc(&mut grads, *b, g.clone());
                    self.acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    self.acc(&mut grads, *b, g.map(|v| -v));
                    self.acc(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    if self.needs(*a) {
                        let ga = kernels::zip_with("mul", &g, self.val(*b), |x, y| x * y)?;
                        self.acc(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let gb = kernels::zip_with("mul", &g, self.val(*a), |x, y| x * y)?;
                        self.acc(&mut grads, *b, gb);
                    }
                }
                Op::Scale(a, s) => {
                    let s = *s;
                    self.acc(&mut grads, *a, g.map(|v| v * s));
                }
                Op::Act(a, act) => {
                    let ga = kernels::activation_backward(self.val(*a), &g, *act);
                    self.acc(&mut grads, *a, ga);
                }
                Op::Gather(a, idx) => {
                    if self.needs(*a) {
                        let src = self.val(*a);
                        let mut ga = Tensor::zeros(src.rows(), src.cols());
                        kernels::scatter_add_into(&mut ga, &g, idx);
                        self.acc(&mut grads, *a, ga);
                    }
                }
                Op::Scatter { src, idx, reduce, argmax } => {
                    if self.needs(*src) {
                        let rows = self.val(*src).rows();
                        let ga = kernels::scatter_rows_backward(&g, idx, rows, *reduce, argmax.as_deref());
                        self.acc(&mut grads, *src, ga);
                    }
                }
                Op::Concat(parts) => {
                    let widths: Vec<usize> = parts.iter().map(|&p| self.val(p).cols()).collect();
                    let pieces = kernels::split_cols(&g, &widths);
                    for (&p, piece) in parts.iter().zip(pieces) {
                        self.acc(&mut grads, p, piece);
                    }
                }
                Op::SliceRows { src, start } => {
                    let rows = self.val(*src).rows();
                    let ga = kernels::slice_rows_backward(&g, *start, rows);
                    self.acc(&mut grads, *src, ga);
                }
                Op::GroupNorm { x, gamma, beta, cache } => {
                    let (dx, dg, db) = kernels::group_norm_backward(cache, self.val(*gamma), &g);
                    self.acc(&mut grads, *x, dx);
                    self.acc(&mut grads, *gamma, dg);
                    self.acc(&mut grads, *beta, db);
                }
                Op::WeightedLoss { x, target, w2, w1 } => {
                    let gx = kernels::weighted_loss_backward(self.val(*x), target, w2, w1, g.item());
                    self.acc(&mut grads, *x, gx);
                }
                Op::Sum(a) => {
                    let src = self.val(*a);
                    let gx = Tensor::full(src.rows(), src.cols(), g.item());
                    self.acc(&mut grads, *a, gx);
                }
            }
        }
        Ok(out)
    }

    fn acc(&self, grads: &mut [Option<Tensor>], i: usize, g: Tensor) {
        if !self.nodes[i].needs_grad {
            return;
        }
        // Parameter leaves keep their own shape (biases may be stored as rank 1).
        let g = if g.shape() != self.nodes[i].value.shape() {
            g.reshape(self.nodes[i].value.shape().to_vec()).expect("gradient numel matches value")
        } else {
            g
        };
        match &mut grads[i] {
            Some(existing) => existing.axpy(1.0, &g).expect("gradient shapes agree"),
            slot @ None => *slot = Some(g),
        }
    }
}

fn accumulate_map(map: &mut HashMap<(u64, ParamId), Tensor>, key: (u64, ParamId), g: Tensor) {
    match map.get_mut(&key) {
        Some(existing) => existing.axpy(1.0, &g).expect("gradient shapes agree"),
        None => {
            map.insert(key, g);
        }
    }
}

impl Exec for Tape {
    type V = Var;

    fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let key = (store.uid(), id);
        if let Some(&i) = self.param_leaves.get(&key) {
            return Var { tape: self.uid, id: i };
        }
        let v = self.push(store.get(id).clone(), Op::Leaf, true);
        self.param_leaves.insert(key, v.id);
        self.leaf_params.insert(v.id, key);
        v
    }

    fn value<'a>(&'a self, v: &'a Var) -> &'a Tensor {
        &self.nodes[v.id].value
    }

    fn matmul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let out = kernels::matmul(self.val(ia), self.val(ib))?;
        let ng = self.needs(ia) || self.needs(ib);
        self.record("matmul", out, Op::MatMul(ia, ib), ng)
    }

    fn add_bias(&mut self, a: &Var, bias: &Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(bias)?);
        let out = kernels::add_bias(self.val(ia), self.val(ib))?;
        let ng = self.needs(ia) || self.needs(ib);
        self.record("add_bias", out, Op::AddBias(ia, ib), ng)
    }

    fn add(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let out = kernels::zip_with("add", self.val(ia), self.val(ib), |x, y| x + y)?;
        let ng = self.needs(ia) || self.needs(ib);
        self.record("add", out, Op::Add(ia, ib), ng)
    }

    fn sub(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let out = kernels::zip_with("sub", self.val(ia), self.val(ib), |x, y| x - y)?;
        let ng = self.needs(ia) || self.needs(ib);
        self.record("sub", out, Op::Sub(ia, ib), ng)
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Result<Var> {
        let (ia, ib) = (self.idx(a)?, self.idx(b)?);
        let out = kernels::zip_with("mul", self.val(ia), self.val(ib), |x, y| x * y)?;
        let ng = self.needs(ia) || self.needs(ib);
        self.record("mul", out, Op::Mul(ia, ib), ng)
    }

    fn scale(&mut self, a: &Var, s: f64) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = self.val(ia).map(|x| x * s);
        let ng = self.needs(ia);
        self.record("scale", out, Op::Scale(ia, s), ng)
    }

    fn activation(&mut self, a: &Var, act: Activation) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = kernels::activation(self.val(ia), act);
        let ng = self.needs(ia);
        self.record("activation", out, Op::Act(ia, act), ng)
    }

    fn gather_rows(&mut self, a: &Var, idx: &Index) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = kernels::gather_rows(self.val(ia), idx)?;
        let ng = self.needs(ia);
        self.record("gather_rows", out, Op::Gather(ia, idx.clone()), ng)
    }

    fn scatter_rows(&mut self, a: &Var, idx: &Index, n_out: usize, reduce: Reduce) -> Result<Var> {
        let ia = self.idx(a)?;
        let s = kernels::scatter_rows(self.val(ia), idx, n_out, reduce)?;
        let ng = self.needs(ia);
        self.record("scatter_rows", s.out, Op::Scatter { src: ia, idx: idx.clone(), reduce, argmax: s.argmax }, ng)
    }

    fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let ids = parts.iter().map(|p| self.idx(p)).collect::<Result<Vec<_>>>()?;
        let refs: Vec<&Tensor> = ids.iter().map(|&i| self.val(i)).collect();
        let out = kernels::concat_cols(&refs)?;
        let ng = ids.iter().any(|&i| self.needs(i));
        self.record("concat_cols", out, Op::Concat(ids), ng)
    }

    fn slice_rows(&mut self, a: &Var, start: usize, len: usize) -> Result<Var> {
        let ia = self.idx(a)?;
        let out = kernels::slice_rows(self.val(ia), start, len)?;
        let ng = self.needs(ia);
        self.record("slice_rows", out, Op::SliceRows { src: ia, start }, ng)
    }

    fn group_norm(&mut self, x: &Var, gamma: &Var, beta: &Var, groups: usize, eps: f64) -> Result<Var> {
        let (ix, ig, ib) = (self.idx(x)?, self.idx(gamma)?, self.idx(beta)?);
        let (out, cache) = kernels::group_norm(self.val(ix), self.val(ig), self.val(ib), groups, eps)?;
        let ng = self.needs(ix) || self.needs(ig) || self.needs(ib);
        self.record("group_norm", out, Op::GroupNorm { x: ix, gamma: ig, beta: ib, cache }, ng)
    }

    fn weighted_loss(&mut self, x: &Var, target: &Tensor, w2: &Tensor, w1: &Tensor) -> Result<Var> {
        let ix = self.idx(x)?;
        let v = kernels::weighted_loss(self.val(ix), target, w2, w1)?;
        let ng = self.needs(ix);
        let op = Op::WeightedLoss { x: ix, target: target.clone(), w2: w2.clone(), w1: w1.clone() };
        self.record("weighted_loss", Tensor::scalar(v), op, ng)
    }

    fn sum(&mut self, a: &Var) -> Result<Var> {
        let ia = self.idx(a)?;
        let v = self.val(ia).sum();
        let ng = self.needs(ia);
        self.record("sum", Tensor::scalar(v), Op::Sum(ia), ng)
    }
}

/// Sums scalar vars on a tape; errors on an empty list.
pub fn sum_scalars<E: Exec>(exec: &mut E, terms: &[E::V]) -> Result<E::V> {
    let mut iter = terms.iter();
    let first = iter.next().ok_or_else(|| shape_err("sum_scalars", "no terms"))?.clone();
    iter.try_fold(first, |acc, t| exec.add(&acc, t))
}
