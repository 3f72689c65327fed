//! Forward and backward kernels shared by the taped and eager executors.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, DiffError, Result};
use crate::tensor::Tensor;

/// Slope used by [`Activation::LeakyRelu`] for negative inputs.
pub const LEAKY_SLOPE: f64 = 0.01;
/// Scale used by [`Activation::Elu`] for negative inputs.
pub const ELU_ALPHA: f64 = 1.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Activation {
    #[serde(rename = "relu")]
    Relu,
    #[serde(rename = "leaky_relu")]
    LeakyRelu,
    #[serde(rename = "elu")]
    Elu,
}

impl Activation {
    pub const ALL: [Activation; 3] = [Activation::Relu, Activation::LeakyRelu, Activation::Elu];

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
            Activation::Elu => {
                if x > 0.0 {
                    x
                } else {
                    ELU_ALPHA * x.exp_m1()
                }
            }
        }
    }

    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Elu => {
                if x > 0.0 {
                    1.0
                } else {
                    ELU_ALPHA * x.exp()
                }
            }
        }
    }
}

/// Reduction used when scattering edge rows onto node rows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Reduce {
    #[serde(rename = "sum")]
    Sum,
    #[serde(rename = "mean")]
    Mean,
    #[serde(rename = "max")]
    Max,
}

/// Row-major `c = a * b + beta * c` on raw slices with explicit strides.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(c.len() >= m * n);
    // SAFETY: callers pass slices whose extents cover every (row, col) index
    // addressed through the given strides; `c` is a dense m x n block.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn require_2d_match(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if !a.same_shape(b) {
        return Err(shape_err(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = (a.rows(), a.cols());
    let (k2, n) = (b.rows(), b.cols());
    if k != k2 {
        return Err(shape_err("matmul", format!("{m}x{k} * {k2}x{n}")));
    }
    let mut out = Tensor::zeros(m, n);
    gemm(m, k, n, a.data(), k as isize, 1, b.data(), n as isize, 1, 0.0, out.data_mut());
    Ok(out)
}

/// `x * w + bias` with the bias broadcast over rows, in one pass over the output.
pub fn linear(x: &Tensor, w: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (m, k) = (x.rows(), x.cols());
    let (k2, n) = (w.rows(), w.cols());
    if k != k2 {
        return Err(shape_err("linear", format!("{m}x{k} * {k2}x{n}")));
    }
    if bias.numel() != n {
        return Err(shape_err("linear", format!("{m}x{n} + bias {:?}", bias.shape())));
    }
    let mut data = Vec::with_capacity(m * n);
    for _ in 0..m {
        data.extend_from_slice(bias.data());
    }
    gemm(m, k, n, x.data(), k as isize, 1, w.data(), n as isize, 1, 1.0, &mut data);
    Tensor::from_rows(m, n, data)
}

/// Gradients of `a * b` given the upstream gradient.
/// Gradients of `C = A B`; a side is computed only when `want` asks for it.
pub fn matmul_backward(a: &Tensor, b: &Tensor, grad: &Tensor, want: (bool, bool)) -> (Option<Tensor>, Option<Tensor>) {
    let (m, k, n) = (a.rows(), a.cols(), b.cols());
    let ga = want.0.then(|| {
        let mut ga = Tensor::zeros(m, k);
        // dA = dC * B^T
        gemm(m, n, k, grad.data(), n as isize, 1, b.data(), 1, n as isize, 0.0, ga.data_mut());
        ga
    });
    let gb = want.1.then(|| {
        let mut gb = Tensor::zeros(k, n);
        // dB = A^T * dC
        gemm(k, m, n, a.data(), 1, k as isize, grad.data(), n as isize, 1, 0.0, gb.data_mut());
        gb
    });
    (ga, gb)
}

pub fn add_bias(a: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let cols = a.cols();
    if bias.numel() != cols {
        return Err(shape_err("add_bias", format!("{:?} + bias {:?}", a.shape(), bias.shape())));
    }
    let mut out = a.clone();
    let b = bias.data();
    for row in out.data_mut().chunks_exact_mut(cols.max(1)) {
        for (v, bb) in row.iter_mut().zip(b) {
            *v += bb;
        }
    }
    Ok(out)
}

/// Column sums, used for the bias gradient.
pub fn column_sums(grad: &Tensor) -> Tensor {
    let cols = grad.cols();
    let mut out = vec![0.0; cols];
    for row in grad.data().chunks_exact(cols.max(1)) {
        for (o, g) in out.iter_mut().zip(row) {
            *o += g;
        }
    }
    Tensor::row(out)
}

pub fn zip_with(op: &'static str, a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    require_2d_match(op, a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_rows(a.rows(), a.cols(), data)
}

pub fn activation(a: &Tensor, act: Activation) -> Tensor {
    a.map(|x| act.apply(x))
}

pub fn activation_backward(input: &Tensor, grad: &Tensor, act: Activation) -> Tensor {
    let data = input.data().iter().zip(grad.data()).map(|(&x, &g)| g * act.derivative(x)).collect();
    Tensor::from_rows(input.rows(), input.cols(), data).expect("shapes agree")
}

pub fn gather_rows(a: &Tensor, idx: &[usize]) -> Result<Tensor> {
    let cols = a.cols();
    let rows = a.rows();
    let mut out = Vec::with_capacity(idx.len() * cols);
    for &i in idx {
        if i >= rows {
            return Err(shape_err("gather_rows", format!("index {i} out of {rows} rows")));
        }
        out.extend_from_slice(a.row_slice(i));
    }
    Tensor::from_rows(idx.len(), cols, out)
}

/// Adds row `r` of `src` into row `idx[r]` of `dst`.
pub fn scatter_add_into(dst: &mut Tensor, src: &Tensor, idx: &[usize]) {
    let cols = src.cols();
    let d = dst.data_mut();
    for (r, &i) in idx.iter().enumerate() {
        let s = &src.data()[r * cols..(r + 1) * cols];
        let o = &mut d[i * cols..(i + 1) * cols];
        for (a, b) in o.iter_mut().zip(s) {
            *a += b;
        }
    }
}

/// Per-target in-degree counts for a scatter index.
pub fn degrees(idx: &[usize], n_out: usize) -> Vec<usize> {
    let mut deg = vec![0usize; n_out];
    for &i in idx {
        deg[i] += 1;
    }
    deg
}

/// Result of a scatter: the reduced rows plus, for `max`, the source row that
/// won each output entry (`usize::MAX` where no row was scattered).
pub struct Scattered {
    pub out: Tensor,
    pub argmax: Option<Vec<usize>>,
}

pub fn scatter_rows(src: &Tensor, idx: &[usize], n_out: usize, reduce: Reduce) -> Result<Scattered> {
    if idx.len() != src.rows() {
        return Err(shape_err("scatter_rows", format!("{} indices for {} rows", idx.len(), src.rows())));
    }
    if let Some(&bad) = idx.iter().find(|&&i| i >= n_out) {
        return Err(shape_err("scatter_rows", format!("index {bad} out of {n_out} targets")));
    }
    let cols = src.cols();
    match reduce {
        Reduce::Sum => {
            let mut out = Tensor::zeros(n_out, cols);
            scatter_add_into(&mut out, src, idx);
            Ok(Scattered { out, argmax: None })
        }
        Reduce::Mean => {
            let mut out = Tensor::zeros(n_out, cols);
            scatter_add_into(&mut out, src, idx);
            let deg = degrees(idx, n_out);
            for (r, &d) in deg.iter().enumerate() {
                if d > 1 {
                    let inv = 1.0 / d as f64;
                    for v in &mut out.data_mut()[r * cols..(r + 1) * cols] {
                        *v *= inv;
                    }
                }
            }
            Ok(Scattered { out, argmax: None })
        }
        Reduce::Max => {
            let mut out = Tensor::full(n_out, cols, f64::NEG_INFINITY);
            let mut arg = vec![usize::MAX; n_out * cols];
            for (r, &i) in idx.iter().enumerate() {
                for c in 0..cols {
                    let v = src.data()[r * cols + c];
                    let slot = i * cols + c;
                    if v > out.data()[slot] {
                        out.data_mut()[slot] = v;
                        arg[slot] = r;
                    }
                }
            }
            for (v, a) in out.data_mut().iter_mut().zip(&arg) {
                if *a == usize::MAX {
                    *v = 0.0;
                }
            }
            Ok(Scattered { out, argmax: Some(arg) })
        }
    }
}

pub fn scatter_rows_backward(
    grad: &Tensor,
    idx: &[usize],
    src_rows: usize,
    reduce: Reduce,
    argmax: Option<&[usize]>,
) -> Tensor {
    let cols = grad.cols();
    match reduce {
        Reduce::Sum => gather_rows(grad, idx).expect("indices validated in forward"),
        Reduce::Mean => {
            let deg = degrees(idx, grad.rows());
            let mut g = gather_rows(grad, idx).expect("indices validated in forward");
            for (r, &i) in idx.iter().enumerate() {
                let inv = 1.0 / deg[i] as f64;
                for v in &mut g.data_mut()[r * cols..(r + 1) * cols] {
                    *v *= inv;
                }
            }
            g
        }
        Reduce::Max => {
            let arg = argmax.expect("max scatter keeps argmax");
            let mut g = Tensor::zeros(src_rows, cols);
            for (slot, &r) in arg.iter().enumerate() {
                if r != usize::MAX {
                    let c = slot % cols;
                    g.data_mut()[r * cols + c] += grad.data()[slot];
                }
            }
            g
        }
    }
}

/// Rows `start..start + len` of `a`.
pub fn slice_rows(a: &Tensor, start: usize, len: usize) -> Result<Tensor> {
    if start + len > a.rows() {
        return Err(shape_err("slice_rows", format!("rows {start}..{} of {}", start + len, a.rows())));
    }
    let cols = a.cols();
    Tensor::from_rows(len, cols, a.data()[start * cols..(start + len) * cols].to_vec())
}

/// Embeds `grad` at row offset `start` of a zero `rows x cols` tensor.
pub fn slice_rows_backward(grad: &Tensor, start: usize, rows: usize) -> Tensor {
    let cols = grad.cols();
    let mut out = Tensor::zeros(rows, cols);
    out.data_mut()[start * cols..start * cols + grad.numel()].copy_from_slice(grad.data());
    out
}

pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
    let rows = parts.first().map(|t| t.rows()).unwrap_or(0);
    if parts.iter().any(|t| t.rows() != rows) {
        let shapes: Vec<_> = parts.iter().map(|t| t.shape().to_vec()).collect();
        return Err(shape_err("concat_cols", format!("row counts differ: {shapes:?}")));
    }
    let total: usize = parts.iter().map(|t| t.cols()).sum();
    let mut out = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for t in parts {
            out.extend_from_slice(t.row_slice(r));
        }
    }
    Tensor::from_rows(rows, total, out)
}

pub fn split_cols(grad: &Tensor, widths: &[usize]) -> Vec<Tensor> {
    let rows = grad.rows();
    let total = grad.cols();
    let mut outs: Vec<Vec<f64>> = widths.iter().map(|w| Vec::with_capacity(rows * w)).collect();
    for r in 0..rows {
        let row = &grad.data()[r * total..(r + 1) * total];
        let mut off = 0;
        for (o, &w) in outs.iter_mut().zip(widths) {
            o.extend_from_slice(&row[off..off + w]);
            off += w;
        }
    }
    outs.into_iter()
        .zip(widths)
        .map(|(d, &w)| Tensor::from_rows(rows, w, d).expect("split widths sum to cols"))
        .collect()
}

/// Cached intermediates of a group-norm forward pass.
#[derive(Clone, Debug)]
pub struct GroupNormCache {
    pub xhat: Tensor,
    /// One inverse standard deviation per (row, group).
    pub inv_std: Vec<f64>,
    pub groups: usize,
}

pub fn group_norm(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    groups: usize,
    eps: f64,
) -> Result<(Tensor, GroupNormCache)> {
    let mut xhat = Tensor::zeros(x.rows(), x.cols());
    let (out, inv_std) = group_norm_into(x, gamma, beta, groups, eps, Some(xhat.data_mut()))?;
    Ok((out, GroupNormCache { xhat, inv_std, groups }))
}

/// Forward group norm without the cache needed for the backward pass.
pub fn group_norm_value(x: &Tensor, gamma: &Tensor, beta: &Tensor, groups: usize, eps: f64) -> Result<Tensor> {
    Ok(group_norm_into(x, gamma, beta, groups, eps, None)?.0)
}

fn group_norm_into(
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    groups: usize,
    eps: f64,
    mut xhat: Option<&mut [f64]>,
) -> Result<(Tensor, Vec<f64>)> {
    let (rows, cols) = (x.rows(), x.cols());
    if groups == 0 || cols % groups != 0 {
        return Err(DiffError::InvalidArgument(format!(
            "group_norm: {cols} channels not divisible into {groups} groups"
        )));
    }
    if gamma.numel() != cols || beta.numel() != cols {
        return Err(shape_err(
            "group_norm",
            format!("gamma {:?} / beta {:?} for {cols} channels", gamma.shape(), beta.shape()),
        ));
    }
    if eps < 0.0 {
        return Err(DiffError::InvalidArgument("group_norm: eps must be >= 0".into()));
    }
    let gsize = cols / groups;
    let mut out = vec![0.0; rows * cols];
    let mut inv_std = vec![0.0; rows * groups];
    for r in 0..rows {
        for g in 0..groups {
            let lo = r * cols + g * gsize;
            let seg = &x.data()[lo..lo + gsize];
            let mean = seg.iter().sum::<f64>() / gsize as f64;
            let var = seg.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / gsize as f64;
            let denom = (var + eps).sqrt();
            let inv = if denom > 0.0 { 1.0 / denom } else { 0.0 };
            inv_std[r * groups + g] = inv;
            let gam = &gamma.data()[g * gsize..(g + 1) * gsize];
            let bet = &beta.data()[g * gsize..(g + 1) * gsize];
            let o = &mut out[lo..lo + gsize];
            for j in 0..gsize {
                o[j] = gam[j] * ((seg[j] - mean) * inv) + bet[j];
            }
            if let Some(xh) = xhat.as_deref_mut() {
                for (h, v) in xh[lo..lo + gsize].iter_mut().zip(seg) {
                    *h = (v - mean) * inv;
                }
            }
        }
    }
    Ok((Tensor::from_rows(rows, cols, out)?, inv_std))
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn group_norm_backward(cache: &GroupNormCache, gamma: &Tensor, grad: &Tensor) -> (Tensor, Tensor, Tensor) {
    let (rows, cols) = (grad.rows(), grad.cols());
    let groups = cache.groups;
    let gsize = cols / groups;
    let mut dx = Tensor::zeros(rows, cols);
    let mut dgamma = vec![0.0; cols];
    let mut dbeta = vec![0.0; cols];
    let m = gsize as f64;
    for r in 0..rows {
        for g in 0..groups {
            let lo = r * cols + g * gsize;
            let inv = cache.inv_std[r * groups + g];
            let mut sum_d = 0.0;
            let mut sum_dx = 0.0;
            for j in 0..gsize {
                let c = g * gsize + j;
                let dy = grad.data()[lo + j];
                let h = cache.xhat.data()[lo + j];
                dgamma[c] += dy * h;
                dbeta[c] += dy;
                let dh = dy * gamma.data()[c];
                sum_d += dh;
                sum_dx += dh * h;
            }
            for j in 0..gsize {
                let c = g * gsize + j;
                let dh = grad.data()[lo + j] * gamma.data()[c];
                let h = cache.xhat.data()[lo + j];
                dx.data_mut()[lo + j] = inv * (dh - sum_d / m - h * sum_dx / m);
            }
        }
    }
    (dx, Tensor::row(dgamma), Tensor::row(dbeta))
}

/// `sum(w2 * d^2 + w1 * |d|)` with `d = x - target`.
pub fn weighted_loss(x: &Tensor, target: &Tensor, w2: &Tensor, w1: &Tensor) -> Result<f64> {
    require_2d_match("weighted_loss", x, target)?;
    require_2d_match("weighted_loss", x, w2)?;
    require_2d_match("weighted_loss", x, w1)?;
    let mut acc = 0.0;
    for i in 0..x.numel() {
        let d = x.data()[i] - target.data()[i];
        acc += w2.data()[i] * d * d + w1.data()[i] * d.abs();
    }
    Ok(acc)
}

pub fn weighted_loss_backward(x: &Tensor, target: &Tensor, w2: &Tensor, w1: &Tensor, upstream: f64) -> Tensor {
    let data = (0..x.numel())
        .map(|i| {
            let d = x.data()[i] - target.data()[i];
            let s = if d > 0.0 {
                1.0
            } else if d < 0.0 {
                -1.0
            } else {
                0.0
            };
            upstream * (2.0 * w2.data()[i] * d + w1.data()[i] * s)
        })
        .collect();
    Tensor::from_rows(x.rows(), x.cols(), data).expect("shapes agree")
}

pub type Index = Arc<[usize]>;
