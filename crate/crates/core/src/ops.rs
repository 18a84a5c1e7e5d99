//! Forward kernels for the neural primitives.
//!
//! These work on plain [`Tensor`] values. The differentiable versions in
//! [`crate::autodiff`] call into the same kernels.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

const SQRT_2: f64 = core::f64::consts::SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// `C = A·B` on raw row-major buffers, `A` is `m×k`, `B` is `k×n`.
pub(crate) fn matmul_raw(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    out
}

/// `dA = dC·Bᵀ`.
pub(crate) fn matmul_grad_lhs(dc: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * k];
    for i in 0..m {
        let drow = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            out[i * k + p] = drow.iter().zip(brow).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `dB = Aᵀ·dC`.
pub(crate) fn matmul_grad_rhs(a: &[f64], dc: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let drow = &dc[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, d) in orow.iter_mut().zip(drow) {
                *o += aip * d;
            }
        }
    }
    out
}

/// Matrix product. A rank-1 left operand is read as a single row and the
/// result is then rank 1 as well.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = (a.rows(), a.cols());
    if a.rank() > 2 || b.rank() != 2 || b.shape()[0] != k {
        return Err(Error::shape(
            "matmul",
            format!("{:?} x {:?}", a.shape(), b.shape()),
        ));
    }
    let n = b.cols();
    let data = matmul_raw(a.data(), b.data(), m, k, n);
    if a.rank() == 1 {
        Tensor::new(&[n], data)
    } else {
        Tensor::new(&[m, n], data)
    }
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    if a.rank() != 2 {
        return Err(Error::shape("transpose", format!("{:?}", a.shape())));
    }
    let (m, n) = (a.rows(), a.cols());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data()[i * n + j];
        }
    }
    Tensor::new(&[n, m], out)
}

/// Row-wise softmax with max subtraction. Masked entries (`false`) get
/// exactly zero probability.
pub fn softmax_rows(x: &Tensor, mask: Option<&[bool]>) -> Result<Tensor> {
    let (m, n) = (x.rows(), x.cols());
    if let Some(mask) = mask {
        if mask.len() != m * n {
            return Err(Error::shape(
                "softmax_rows",
                format!("mask of {} for {:?}", mask.len(), x.shape()),
            ));
        }
    }
    let keep = |i: usize, j: usize| mask.is_none_or(|mk| mk[i * n + j]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = x.row(i);
        let max = (0..n)
            .filter(|&j| keep(i, j))
            .map(|j| row[j])
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::MaskedRow { row: i });
        }
        let mut total = 0.0;
        for j in 0..n {
            if keep(i, j) {
                let e = libm::exp(row[j] - max);
                out[i * n + j] = e;
                total += e;
            }
        }
        for v in &mut out[i * n..(i + 1) * n] {
            *v /= total;
        }
    }
    Tensor::new(x.shape(), out)
}

/// Row statistics kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) struct LayerNormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub(crate) fn layer_norm_forward(
    x: &Tensor,
    gain: &Tensor,
    bias: &Tensor,
    eps: f64,
) -> Result<(Tensor, LayerNormCache)> {
    let (m, n) = (x.rows(), x.cols());
    if gain.numel() != n || bias.numel() != n {
        return Err(Error::shape(
            "layer_norm",
            format!("x {:?}, gain {:?}, bias {:?}", x.shape(), gain.shape(), bias.shape()),
        ));
    }
    if !(eps > 0.0) {
        return Err(Error::shape("layer_norm", "eps must be positive"));
    }
    let mut out = vec![0.0; m * n];
    let mut xhat = vec![0.0; m * n];
    let mut inv_std = vec![0.0; m];
    for i in 0..m {
        let row = x.row(i);
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        let is = 1.0 / libm::sqrt(var + eps);
        inv_std[i] = is;
        for j in 0..n {
            let h = (row[j] - mean) * is;
            xhat[i * n + j] = h;
            out[i * n + j] = h * gain.data()[j] + bias.data()[j];
        }
    }
    Ok((Tensor::new(x.shape(), out)?, LayerNormCache { xhat, inv_std }))
}

/// Per-row normalization to zero mean and unit (population) variance,
/// then `gain ⊙ x̂ + bias`.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor, eps: f64) -> Result<Tensor> {
    layer_norm_forward(x, gain, bias, eps).map(|(y, _)| y)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / SQRT_2))
}

/// Exact GELU, `x·Φ(x)`.
pub fn gelu(x: f64) -> f64 {
    x * normal_cdf(x)
}

pub(crate) fn gelu_grad(x: f64) -> f64 {
    normal_cdf(x) + x * INV_SQRT_2PI * libm::exp(-0.5 * x * x)
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

pub fn tanh(x: f64) -> f64 {
    libm::tanh(x)
}

/// Elementwise map.
pub fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let mut out = x.clone();
    out.zero_grad();
    for v in out.data_mut() {
        *v = f(*v);
    }
    out
}

/// Zero padding on the left for a same-length convolution of width `w`;
/// the right side gets the remainder.
pub fn same_padding(w: usize) -> (usize, usize) {
    ((w - 1) / 2, w / 2)
}

/// Same-length 1-D convolution over time.
///
/// `x` is `T×d_in`, `kernels` is `w×d_in×c`, `bias` has `c` entries and the
/// result is `T×c`.
pub fn conv1d_same(x: &Tensor, kernels: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (t_len, d_in) = (x.rows(), x.cols());
    if kernels.rank() != 3 || kernels.shape()[1] != d_in || bias.numel() != kernels.shape()[2] {
        return Err(Error::shape(
            "conv1d_same",
            format!("x {:?}, kernels {:?}, bias {:?}", x.shape(), kernels.shape(), bias.shape()),
        ));
    }
    let (w, c) = (kernels.shape()[0], kernels.shape()[2]);
    let (left, _) = same_padding(w);
    let kd = kernels.data();
    let mut out = vec![0.0; t_len * c];
    for t in 0..t_len {
        let orow = &mut out[t * c..(t + 1) * c];
        orow.copy_from_slice(bias.data());
        for o in 0..w {
            let Some(s) = (t + o).checked_sub(left).filter(|&s| s < t_len) else {
                continue;
            };
            for (i, &xv) in x.row(s).iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                let krow = &kd[(o * d_in + i) * c..(o * d_in + i + 1) * c];
                for (ov, kv) in orow.iter_mut().zip(krow) {
                    *ov += xv * kv;
                }
            }
        }
    }
    Tensor::new(&[t_len, c], out)
}

/// Column-wise maximum and the first row attaining it.
pub(crate) fn max_over_time_with_index(x: &Tensor) -> (Tensor, Vec<usize>) {
    let (t_len, c) = (x.rows(), x.cols());
    let mut best = x.row(0).to_vec();
    let mut arg = vec![0usize; c];
    for t in 1..t_len {
        for (j, &v) in x.row(t).iter().enumerate() {
            if v > best[j] {
                best[j] = v;
                arg[j] = t;
            }
        }
    }
    (Tensor::vector(best), arg)
}

pub fn max_over_time(x: &Tensor) -> Tensor {
    max_over_time_with_index(x).0
}

/// Per-entry multipliers for inverted dropout: `0` for dropped entries,
/// `1/(1-rate)` for kept ones.
pub fn dropout_scale(len: usize, rate: f64, rng: &mut Rng) -> Vec<f64> {
    let keep = 1.0 / (1.0 - rate);
    (0..len)
        .map(|_| if rng.uniform() < rate { 0.0 } else { keep })
        .collect()
}

/// Inverted dropout; identity outside training or at rate 0.
pub fn dropout(x: &Tensor, rate: f64, rng: &mut Rng, training: bool) -> Tensor {
    if !training || rate == 0.0 {
        return x.clone();
    }
    let scale = dropout_scale(x.numel(), rate, rng);
    let mut out = x.clone();
    for (v, s) in out.data_mut().iter_mut().zip(scale) {
        *v *= s;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    fn t(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let b = t(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(matmul(&Tensor::identity(2), &b).unwrap(), b);
        let z = matmul(&t(&[&[1.0, 2.0]]), &t(&[&[0.0], &[0.0]])).unwrap();
        assert_eq!(z.data(), &[0.0]);
        let c = matmul(&t(&[&[1.0, 2.0], &[3.0, 4.0]]), &t(&[&[5.0], &[6.0]])).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_rejects_mismatch() {
        let err = matmul(&Tensor::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        assert!(matches!(err, Error::Shape { op: "matmul", .. }));
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_rows(&t(&[&[2.5, 2.5, 2.5]]), None).unwrap();
        for v in s.data() {
            assert!(close(*v, 1.0 / 3.0, 1e-15));
        }
        let s = softmax_rows(&t(&[&[0.0, libm::log(3.0)]]), None).unwrap();
        assert!(close(s.data()[0], 0.25, 1e-15));
        assert!(close(s.data()[1], 0.75, 1e-15));
        let s = softmax_rows(&t(&[&[5.0, 5.0]]), Some(&[true, false])).unwrap();
        assert_eq!(s.data(), &[1.0, 0.0]);
    }

    #[test]
    fn softmax_fully_masked_row_is_error() {
        let err = softmax_rows(&t(&[&[1.0, 2.0], &[3.0, 4.0]]), Some(&[true, false, false, false]))
            .unwrap_err();
        assert_eq!(err, Error::MaskedRow { row: 1 });
    }

    #[test]
    fn softmax_survives_large_logits() {
        let s = softmax_rows(&t(&[&[1000.0, 999.0]]), None).unwrap();
        assert!(s.all_finite());
        assert!(close(s.data().iter().sum::<f64>(), 1.0, 1e-12));
    }

    #[test]
    fn layer_norm_examples() {
        let ones = Tensor::filled(&[2], 1.0);
        let zeros = Tensor::zeros(&[2]);
        let y = layer_norm(&t(&[&[4.0, 4.0]]), &ones, &zeros, 1e-5).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0]);
        let y = layer_norm(&t(&[&[1.0, 3.0]]), &ones, &zeros, 1e-12).unwrap();
        assert!(close(y.data()[0], -1.0, 1e-9));
        assert!(close(y.data()[1], 1.0, 1e-9));
        assert!(layer_norm(&t(&[&[1.0, 3.0]]), &ones, &zeros, 0.0).is_err());
    }

    #[test]
    fn activation_values() {
        assert_eq!(gelu(0.0), 0.0);
        assert_eq!(relu(-1.0), 0.0);
        assert_eq!(sigmoid(0.0), 0.5);
        assert_eq!(tanh(0.0), 0.0);
        assert!(close(gelu(1.0), 0.841_344_746_068_542_9, 1e-12));
        let r = map(&Tensor::vector(alloc::vec![-2.0, 3.0]), relu);
        assert_eq!(r.data(), &[0.0, 3.0]);
    }

    #[test]
    fn conv_examples() {
        let x = Tensor::new(&[3, 1], alloc::vec![1.0, 1.0, 1.0]).unwrap();
        let k = Tensor::filled(&[2, 1, 1], 1.0);
        let y = conv1d_same(&x, &k, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(y.data(), &[2.0, 2.0, 1.0]);

        let z = conv1d_same(&x, &Tensor::zeros(&[3, 1, 4]), &Tensor::zeros(&[4])).unwrap();
        assert_eq!(z.shape(), &[3, 4]);
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_interior_translation_equivariance() {
        let k = Tensor::new(&[3, 1, 1], alloc::vec![0.5, -1.0, 2.0]).unwrap();
        let b = Tensor::vector(alloc::vec![0.25]);
        let mut a = alloc::vec![0.0; 9];
        a[3] = 1.0;
        let mut s = alloc::vec![0.0; 9];
        s[4] = 1.0;
        let ya = conv1d_same(&Tensor::new(&[9, 1], a).unwrap(), &k, &b).unwrap();
        let ys = conv1d_same(&Tensor::new(&[9, 1], s).unwrap(), &k, &b).unwrap();
        for i in 1..7 {
            assert_eq!(ya.data()[i], ys.data()[i + 1]);
        }
    }

    #[test]
    fn max_over_time_examples() {
        let x = t(&[&[1.0, 5.0], &[3.0, 2.0]]);
        assert_eq!(max_over_time(&x).data(), &[3.0, 5.0]);
        let single = t(&[&[7.0, -1.0]]);
        assert_eq!(max_over_time(&single).data(), &[7.0, -1.0]);
        let (_, arg) = max_over_time_with_index(&t(&[&[2.0], &[2.0]]));
        assert_eq!(arg, alloc::vec![0]);
    }

    #[test]
    fn dropout_identity_cases() {
        let x = Tensor::vector(alloc::vec![1.0, -2.0, 3.0]);
        let mut rng = Rng::new(1);
        assert_eq!(dropout(&x, 0.5, &mut rng, false), x);
        assert_eq!(dropout(&x, 0.0, &mut rng, true), x);
        let y = dropout(&x, 0.5, &mut rng, true);
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!(*a == 0.0 || *a == 2.0 * b);
        }
    }

    #[test]
    fn dropout_is_unbiased() {
        // Each output is 0 or 2x with equal odds: mean x, std |x|.
        let x = Tensor::vector(alloc::vec![1.5]);
        let n = 10_000;
        let mean = (0..n)
            .map(|seed| dropout(&x, 0.5, &mut Rng::new(seed), true).data()[0])
            .sum::<f64>()
            / n as f64;
        let sigma = 1.5 / libm::sqrt(n as f64);
        assert!((mean - 1.5).abs() < 3.0 * sigma, "mean {mean}");
    }
}
