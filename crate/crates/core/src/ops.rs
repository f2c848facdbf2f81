//! Differentiable primitives. Each forward has an explicit backward;
//! composites chain them in reverse call order. No tape, no graph.
//!
//! Accumulation order inside every kernel is fixed (ascending contraction
//! index, ascending batch), so results are bit-identical however the work
//! is scheduled by callers.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{Param, Tensor};

pub const LAYER_NORM_EPS: f64 = 1e-5;

const INV_SQRT_2: f64 = core::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// out += a (m x k) * b (k x n)
pub(crate) fn mm_nn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (l, &av) in a_row.iter().enumerate() {
            let b_row = &b[l * n..(l + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

/// out += a (m x k) * b^T, with b stored (n x k)
pub(crate) fn mm_nt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let out_row = &mut out[i * n..(i + 1) * n];
        for (j, o) in out_row.iter_mut().enumerate() {
            let b_row = &b[j * k..(j + 1) * k];
            let mut acc = 0.0;
            for (av, bv) in a_row.iter().zip(b_row) {
                acc += av * bv;
            }
            *o += acc;
        }
    }
}

/// out += a^T * b, with a stored (m x k), b stored (m x n); out is (k x n)
pub(crate) fn mm_tn(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (l, &av) in a_row.iter().enumerate() {
            let out_row = &mut out[l * n..(l + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
}

struct MatmulDims {
    batch: usize,
    m: usize,
    k: usize,
    n: usize,
    b_batched: bool,
}

fn matmul_dims(a: &Tensor, b: &Tensor) -> Result<MatmulDims> {
    let (ra, rb) = (a.rank(), b.rank());
    if ra < 2 || rb < 2 {
        return Err(Error::ShapeMismatch(alloc::format!(
            "matmul needs rank >= 2 operands, got {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, k) = (a.shape()[ra - 2], a.shape()[ra - 1]);
    let (kb, n) = (b.shape()[rb - 2], b.shape()[rb - 1]);
    if k != kb {
        return Err(Error::ShapeMismatch(alloc::format!(
            "matmul inner extents {k} vs {kb} ({:?} x {:?})",
            a.shape(),
            b.shape()
        )));
    }
    let b_batched = rb > 2;
    if b_batched && (ra != rb || a.shape()[..ra - 2] != b.shape()[..rb - 2]) {
        return Err(Error::ShapeMismatch(alloc::format!(
            "matmul batch extents differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let batch = a.numel() / (m * k);
    Ok(MatmulDims {
        batch,
        m,
        k,
        n,
        b_batched,
    })
}

/// Batched matrix product over the two trailing dimensions. Leading batch
/// extents must match exactly; as the one documented broadcast, a rank-2
/// right operand is applied to every batch of the left.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let d = matmul_dims(a, b)?;
    let mut shape: Vec<usize> = a.shape()[..a.rank() - 2].to_vec();
    shape.push(d.m);
    shape.push(d.n);
    let mut out = Tensor::zeros(&shape);
    for bi in 0..d.batch {
        let a_slice = &a.data()[bi * d.m * d.k..(bi + 1) * d.m * d.k];
        let b_slice = if d.b_batched {
            &b.data()[bi * d.k * d.n..(bi + 1) * d.k * d.n]
        } else {
            b.data()
        };
        mm_nn(
            a_slice,
            b_slice,
            d.m,
            d.k,
            d.n,
            &mut out.data_mut()[bi * d.m * d.n..(bi + 1) * d.m * d.n],
        );
    }
    Ok(out)
}

/// Gradients of `matmul`: dA = dC B^T per batch, dB = A^T dC summed over
/// broadcast batches.
pub fn matmul_backward(a: &Tensor, b: &Tensor, grad: &Tensor) -> Result<(Tensor, Tensor)> {
    let d = matmul_dims(a, b)?;
    let mut da = Tensor::zeros(a.shape());
    let mut db = Tensor::zeros(b.shape());
    for bi in 0..d.batch {
        let a_slice = &a.data()[bi * d.m * d.k..(bi + 1) * d.m * d.k];
        let b_slice = if d.b_batched {
            &b.data()[bi * d.k * d.n..(bi + 1) * d.k * d.n]
        } else {
            b.data()
        };
        let g_slice = &grad.data()[bi * d.m * d.n..(bi + 1) * d.m * d.n];
        mm_nt(
            g_slice,
            b_slice,
            d.m,
            d.n,
            d.k,
            &mut da.data_mut()[bi * d.m * d.k..(bi + 1) * d.m * d.k],
        );
        let db_slice = if d.b_batched {
            &mut db.data_mut()[bi * d.k * d.n..(bi + 1) * d.k * d.n]
        } else {
            db.data_mut()
        };
        mm_tn(a_slice, g_slice, d.m, d.k, d.n, db_slice);
    }
    Ok((da, db))
}

/// Max-subtracted softmax along the last dimension.
pub fn softmax_lastdim(x: &Tensor) -> Tensor {
    let n = *x.shape().last().expect("softmax needs rank >= 1");
    let mut out = x.clone();
    for row in out.data_mut().chunks_exact_mut(n) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = libm::exp(*v - max);
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// dx_i = y_i (g_i - sum_j g_j y_j), rows independent.
pub fn softmax_lastdim_backward(y: &Tensor, grad: &Tensor) -> Tensor {
    let n = *y.shape().last().expect("softmax needs rank >= 1");
    let mut out = Tensor::zeros(y.shape());
    let rows = y.numel() / n;
    for r in 0..rows {
        let y_row = &y.data()[r * n..(r + 1) * n];
        let g_row = &grad.data()[r * n..(r + 1) * n];
        let mut dot = 0.0;
        for (yv, gv) in y_row.iter().zip(g_row) {
            dot += yv * gv;
        }
        let o_row = &mut out.data_mut()[r * n..(r + 1) * n];
        for i in 0..n {
            o_row[i] = y_row[i] * (g_row[i] - dot);
        }
    }
    out
}

/// Saved activations of a layer-norm forward, enough to run its backward.
pub struct LayerNormCache {
    /// Normalized activations, same shape as the input.
    x_hat: Tensor,
    /// Per-token 1 / sqrt(var + eps).
    inv_std: Vec<f64>,
}

/// Per-token normalization over the last dimension, then affine scale/shift.
pub fn layer_norm(x: &Tensor, scale: &Tensor, shift: &Tensor) -> Result<(Tensor, LayerNormCache)> {
    let c = *x.shape().last().ok_or_else(|| {
        Error::ShapeMismatch(alloc::string::String::from("layer_norm needs rank >= 1"))
    })?;
    if scale.shape() != [c] || shift.shape() != [c] {
        return Err(Error::ShapeMismatch(alloc::format!(
            "layer_norm affine shapes {:?}/{:?} do not match channels {c}",
            scale.shape(),
            shift.shape()
        )));
    }
    let tokens = x.numel() / c;
    let mut x_hat = Tensor::zeros(x.shape());
    let mut out = Tensor::zeros(x.shape());
    let mut inv_std = vec![0.0; tokens];
    for t in 0..tokens {
        let row = &x.data()[t * c..(t + 1) * c];
        let mean = row.iter().sum::<f64>() / c as f64;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
        let istd = 1.0 / libm::sqrt(var + LAYER_NORM_EPS);
        inv_std[t] = istd;
        let hat_row = &mut x_hat.data_mut()[t * c..(t + 1) * c];
        for (h, &v) in hat_row.iter_mut().zip(row) {
            *h = (v - mean) * istd;
        }
        let out_row = &mut out.data_mut()[t * c..(t + 1) * c];
        for i in 0..c {
            out_row[i] = hat_row[i] * scale.data()[i] + shift.data()[i];
        }
    }
    Ok((out, LayerNormCache { x_hat, inv_std }))
}

/// Returns (dx, dscale, dshift).
pub fn layer_norm_backward(
    cache: &LayerNormCache,
    scale: &Tensor,
    grad: &Tensor,
) -> (Tensor, Tensor, Tensor) {
    let c = *grad.shape().last().expect("layer_norm grad rank");
    let tokens = grad.numel() / c;
    let mut dx = Tensor::zeros(grad.shape());
    let mut dscale = Tensor::zeros(&[c]);
    let mut dshift = Tensor::zeros(&[c]);
    for t in 0..tokens {
        let g_row = &grad.data()[t * c..(t + 1) * c];
        let hat_row = &cache.x_hat.data()[t * c..(t + 1) * c];
        for i in 0..c {
            dscale.data_mut()[i] += g_row[i] * hat_row[i];
            dshift.data_mut()[i] += g_row[i];
        }
        // dx = istd * (dxhat - mean(dxhat) - xhat * mean(dxhat . xhat))
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for i in 0..c {
            let dxhat = g_row[i] * scale.data()[i];
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * hat_row[i];
        }
        mean_dxhat /= c as f64;
        mean_dxhat_xhat /= c as f64;
        let istd = cache.inv_std[t];
        let dx_row = &mut dx.data_mut()[t * c..(t + 1) * c];
        for i in 0..c {
            let dxhat = g_row[i] * scale.data()[i];
            dx_row[i] = istd * (dxhat - mean_dxhat - hat_row[i] * mean_dxhat_xhat);
        }
    }
    (dx, dscale, dshift)
}

fn gelu_scalar(x: f64) -> f64 {
    x * 0.5 * (1.0 + libm::erf(x * INV_SQRT_2))
}

fn gelu_grad_scalar(x: f64) -> f64 {
    let phi_big = 0.5 * (1.0 + libm::erf(x * INV_SQRT_2));
    let phi_small = INV_SQRT_2PI * libm::exp(-0.5 * x * x);
    phi_big + x * phi_small
}

/// Exact Gaussian-error-function GELU, x * Phi(x).
pub fn gelu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for v in out.data_mut() {
        *v = gelu_scalar(*v);
    }
    out
}

pub fn gelu_backward(x: &Tensor, grad: &Tensor) -> Tensor {
    debug_assert_eq!(x.shape(), grad.shape());
    let mut out = Tensor::zeros(x.shape());
    for ((o, &xv), &gv) in out.data_mut().iter_mut().zip(x.data()).zip(grad.data()) {
        *o = gelu_grad_scalar(xv) * gv;
    }
    out
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Numerically stable logistic function.
pub fn sigmoid(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for v in out.data_mut() {
        *v = sigmoid_scalar(*v);
    }
    out
}

/// Backward takes the forward output y: dx = y (1 - y) g.
pub fn sigmoid_backward(y: &Tensor, grad: &Tensor) -> Tensor {
    debug_assert_eq!(y.shape(), grad.shape());
    let mut out = Tensor::zeros(y.shape());
    for ((o, &yv), &gv) in out.data_mut().iter_mut().zip(y.data()).zip(grad.data()) {
        *o = yv * (1.0 - yv) * gv;
    }
    out
}

/// Token-wise affine map: `y = x W (+ b)`. The building block behind the
/// patch embedding, the MLPs, patch merging, and the fusion gates.
pub struct Linear {
    pub weight: Param,
    pub bias: Option<Param>,
}

impl Linear {
    pub fn zeros(inp: usize, out: usize, bias: bool) -> Self {
        Self {
            weight: Param::zeros(&[inp, out]),
            bias: bias.then(|| Param::zeros(&[out])),
        }
    }

    /// Truncated-normal weight (std 0.02, clipped at +/-2), zero bias.
    pub fn init(inp: usize, out: usize, bias: bool, rng: &mut Rng) -> Self {
        let mut linear = Self::zeros(inp, out, bias);
        for v in linear.weight.value.data_mut() {
            *v = rng.trunc_normal(0.02, 2.0);
        }
        linear
    }

    pub fn in_features(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn out_features(&self) -> usize {
        self.weight.value.shape()[1]
    }

    /// `x` is (tokens x in_features).
    pub fn forward2d(&self, x: &Tensor) -> Result<Tensor> {
        let mut y = matmul(x, &self.weight.value)?;
        if let Some(bias) = &self.bias {
            let out = self.out_features();
            for row in y.data_mut().chunks_exact_mut(out) {
                for (v, b) in row.iter_mut().zip(bias.value.data()) {
                    *v += b;
                }
            }
        }
        Ok(y)
    }

    /// Accumulates parameter grads and returns the input grad.
    pub fn backward2d(&mut self, x: &Tensor, grad: &Tensor) -> Result<Tensor> {
        let (dx, dw) = matmul_backward(x, &self.weight.value, grad)?;
        self.weight.accumulate(&dw);
        if let Some(bias) = &mut self.bias {
            let out = bias.value.numel();
            let mut db = Tensor::zeros(&[out]);
            for row in grad.data().chunks_exact(out) {
                for (d, g) in db.data_mut().iter_mut().zip(row) {
                    *d += g;
                }
            }
            bias.accumulate(&db);
        }
        Ok(dx)
    }

    pub fn zero_grads(&mut self) {
        self.weight.zero_grad();
        if let Some(bias) = &mut self.bias {
            bias.zero_grad();
        }
    }
}

/// Layer-norm affine parameters: scale starts at one, shift at zero.
pub struct LayerNormParams {
    pub scale: Param,
    pub shift: Param,
}

impl LayerNormParams {
    pub fn new(channels: usize) -> Self {
        Self {
            scale: Param::new(Tensor::filled(&[channels], 1.0)),
            shift: Param::zeros(&[channels]),
        }
    }

    pub fn zeros(channels: usize) -> Self {
        Self {
            scale: Param::zeros(&[channels]),
            shift: Param::zeros(&[channels]),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<(Tensor, LayerNormCache)> {
        layer_norm(x, &self.scale.value, &self.shift.value)
    }

    pub fn backward(&mut self, cache: &LayerNormCache, grad: &Tensor) -> Tensor {
        let (dx, dscale, dshift) = layer_norm_backward(cache, &self.scale.value, grad);
        self.scale.accumulate(&dscale);
        self.shift.accumulate(&dshift);
        dx
    }

    pub fn zero_grads(&mut self) {
        self.scale.zero_grad();
        self.shift.zero_grad();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_identity() {
        let eye = Tensor::from_vec(&[3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        let a = Tensor::from_vec(&[3, 3], (1..=9).map(|v| v as f64).collect()).unwrap();
        assert_eq!(matmul(&eye, &a).unwrap(), a);
    }

    #[test]
    fn matmul_hand_example() {
        let a = Tensor::from_vec(&[2, 2], vec![1., 2., 3., 4.]).unwrap();
        let b = Tensor::from_vec(&[2, 1], vec![1., 1.]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_rejects_mismatches() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 2]);
        assert!(matmul(&a, &b).is_err());
        let a = Tensor::zeros(&[2, 2, 3]);
        let b = Tensor::zeros(&[3, 3, 4]);
        assert!(matmul(&a, &b).is_err());
        let v = Tensor::zeros(&[3]);
        assert!(matmul(&a, &v).is_err());
    }

    #[test]
    fn matmul_broadcasts_rank2_rhs() {
        let a = Tensor::from_vec(&[2, 1, 2], vec![1., 2., 3., 4.]).unwrap();
        let b = Tensor::from_vec(&[2, 2], vec![1., 0., 0., 1.]).unwrap();
        let c = matmul(&a, &b).unwrap();
        assert_eq!(c.shape(), &[2, 1, 2]);
        assert_eq!(c.data(), a.data());
    }

    #[test]
    fn softmax_uniform_and_extreme() {
        let x = Tensor::zeros(&[1, 5]);
        let y = softmax_lastdim(&x);
        for &v in y.data() {
            assert!((v - 0.2).abs() < 1e-15);
        }
        let x = Tensor::from_vec(&[2], vec![0.0, 1000.0]).unwrap();
        let y = softmax_lastdim(&x);
        assert_eq!(y.data()[0], 0.0);
        assert_eq!(y.data()[1], 1.0);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = crate::rng::Rng::new(2);
        let x = Tensor::from_vec(&[3, 7], (0..21).map(|_| rng.uniform(-4.0, 4.0)).collect())
            .unwrap();
        let y = softmax_lastdim(&x);
        for row in y.data().chunks_exact(7) {
            let sum: f64 = row.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn layer_norm_normalizes_rows() {
        let mut rng = crate::rng::Rng::new(4);
        let x = Tensor::from_vec(&[5, 8], (0..40).map(|_| rng.uniform(-2.0, 2.0)).collect())
            .unwrap();
        let scale = Tensor::filled(&[8], 1.0);
        let shift = Tensor::zeros(&[8]);
        let (y, _) = layer_norm(&x, &scale, &shift).unwrap();
        for row in y.data().chunks_exact(8) {
            let mean = row.iter().sum::<f64>() / 8.0;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / 8.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn layer_norm_constant_token_is_zeroed() {
        let x = Tensor::filled(&[1, 6], 3.5);
        let scale = Tensor::filled(&[6], 1.0);
        let shift = Tensor::zeros(&[6]);
        let (y, _) = layer_norm(&x, &scale, &shift).unwrap();
        for &v in y.data() {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn gelu_fixed_points() {
        assert_eq!(gelu_scalar(0.0), 0.0);
        assert!((gelu_scalar(10.0) - 10.0).abs() < 1e-6);
        assert!(gelu_scalar(-10.0).abs() < 1e-6);
    }

    #[test]
    fn sigmoid_symmetry() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        let mut rng = crate::rng::Rng::new(6);
        for _ in 0..100 {
            let x = rng.uniform(-30.0, 30.0);
            let s = sigmoid_scalar(x) + sigmoid_scalar(-x);
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
