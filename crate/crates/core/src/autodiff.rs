//! Reverse-mode differentiation over a per-pass tape.
//!
//! A [`Graph`] records every forward operation as a node. Parameters enter
//! through [`Graph::param`], which copies the current value out of a
//! [`ParamStore`]; [`Graph::backward_into`] walks the tape in reverse and
//! adds the gradients back into the store. A graph is built per batch and
//! dropped afterwards.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::loss;
use crate::ops::{self, LayerNormCache};
use crate::params::{ParamId, ParamStore};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    Relu(Var),
    Sigmoid(Var),
    Tanh(Var),
    Log(Var),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        cache: LayerNormCache,
        bias: Var,
    },
    Conv1d {
        x: Var,
        kernels: Var,
        bias: Var,
    },
    MaxOverTime {
        x: Var,
        argmax: Vec<usize>,
    },
    WeightedRowSum {
        x: Var,
        weights: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows {
        x: Var,
        start: usize,
    },
    SliceCols {
        x: Var,
        start: usize,
    },
    Reshape(Var),
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Dropout {
        x: Var,
        scale: Vec<f64>,
    },
    SumSquares {
        x: Var,
        row_mask: Option<Vec<bool>>,
    },
    AddN(Vec<Var>),
    Select {
        x: Var,
        index: usize,
    },
    Focal {
        p: Var,
        label: bool,
        cfg: loss::LossConfig,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<ParamId, Var>,
}

/// Gradients of one backward pass, indexed by node.
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Vec<f64>>>,
}

impl Grads {
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads[var.0].as_deref()
    }
}

fn as_matrix(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        self.nodes[var.0].value.shape()
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, var: Var) -> f64 {
        self.nodes[var.0].value.data()[0]
    }

    /// Constant input.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn zeros(&mut self, shape: &[usize]) -> Var {
        self.input(Tensor::zeros(shape))
    }

    /// The node for a stored parameter; repeated calls share one node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let mut value = store.get(id).clone();
        value.zero_grad();
        let v = self.push(value, Op::Param);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = ops::transpose(self.value(a))?;
        Ok(self.push(out, Op::Transpose(a)))
    }

    fn zip_same(&self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape(op, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Tensor::new(ta.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("add", a, b, |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("sub", a, b, |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_same("mul", a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Adds a bias vector to every row.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        let n = tx.cols();
        if tb.numel() != n {
            return Err(Error::shape(
                "add_bias",
                format!("{:?} + {:?}", tx.shape(), tb.shape()),
            ));
        }
        let mut out = tx.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            *v += tb.data()[i % n];
        }
        Ok(self.push(out, Op::AddBias(x, bias)))
    }

    /// `x·w + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let xw = self.matmul(x, w)?;
        self.add_bias(xw, b)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out = ops::map(self.value(x), |v| v * c);
        self.push(out, Op::Scale(x, c))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let out = ops::map(self.value(x), ops::gelu);
        self.push(out, Op::Gelu(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = ops::map(self.value(x), ops::relu);
        self.push(out, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = ops::map(self.value(x), ops::sigmoid);
        self.push(out, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = ops::map(self.value(x), ops::tanh);
        self.push(out, Op::Tanh(x))
    }

    /// Natural log; the caller keeps inputs positive.
    pub fn log(&mut self, x: Var) -> Var {
        let out = ops::map(self.value(x), libm::log);
        self.push(out, Op::Log(x))
    }

    pub fn softmax_rows(&mut self, x: Var, mask: Option<&[bool]>) -> Result<Var> {
        let out = ops::softmax_rows(self.value(x), mask)?;
        Ok(self.push(out, Op::Softmax(x)))
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (out, cache) =
            ops::layer_norm_forward(self.value(x), self.value(gain), self.value(bias), eps)?;
        Ok(self.push(out, Op::LayerNorm { x, gain, cache, bias }))
    }

    pub fn conv1d_same(&mut self, x: Var, kernels: Var, bias: Var) -> Result<Var> {
        let out = ops::conv1d_same(self.value(x), self.value(kernels), self.value(bias))?;
        Ok(self.push(out, Op::Conv1d { x, kernels, bias }))
    }

    /// Column-wise max over rows. Ties route the gradient to the first
    /// maximal row.
    pub fn max_over_time(&mut self, x: Var) -> Var {
        let (out, argmax) = ops::max_over_time_with_index(self.value(x));
        self.push(out, Op::MaxOverTime { x, argmax })
    }

    /// `Σ_t weights[t] · x[t, :]`, a rank-1 result.
    pub fn weighted_row_sum(&mut self, x: Var, weights: Vec<f64>) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = as_matrix(tx);
        if weights.len() != m {
            return Err(Error::shape(
                "weighted_row_sum",
                format!("{} weights for {m} rows", weights.len()),
            ));
        }
        let mut out = vec![0.0; n];
        for (t, w) in weights.iter().enumerate() {
            if *w == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(tx.row(t)) {
                *o += w * v;
            }
        }
        Ok(self.push(Tensor::vector(out), Op::WeightedRowSum { x, weights }))
    }

    pub fn sum_rows(&mut self, x: Var) -> Var {
        let m = self.value(x).rows();
        self.weighted_row_sum(x, vec![1.0; m])
            .expect("weights match row count")
    }

    /// Mean over the rows whose mask entry is `true`.
    pub fn masked_mean_rows(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let count = mask.iter().filter(|&&k| k).count();
        if count == 0 {
            return Err(Error::Empty("pooling mask"));
        }
        let w = 1.0 / count as f64;
        let weights = mask.iter().map(|&k| if k { w } else { 0.0 }).collect();
        self.weighted_row_sum(x, weights)
    }

    /// Concatenates along the trailing axis. All-vector inputs give a vector.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::Empty("concat_cols input"))?;
        let m = self.value(*first).rows();
        let all_vectors = parts.iter().all(|&p| self.value(p).rank() == 1);
        if parts.iter().any(|&p| self.value(p).rows() != m) {
            return Err(Error::shape("concat_cols", "row counts differ"));
        }
        let total: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                data.extend_from_slice(self.value(p).row(i));
            }
        }
        let out = if all_vectors {
            Tensor::new(&[total], data)?
        } else {
            Tensor::new(&[m, total], data)?
        };
        Ok(self.push(out, Op::ConcatCols(parts.to_vec())))
    }

    /// Stacks rows; vectors count as single rows.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::Empty("concat_rows input"))?;
        let n = self.value(*first).cols();
        if parts.iter().any(|&p| self.value(p).cols() != n) {
            return Err(Error::shape("concat_rows", "column counts differ"));
        }
        let mut data = Vec::new();
        let mut m = 0;
        for &p in parts {
            m += self.value(p).rows();
            data.extend_from_slice(self.value(p).data());
        }
        Ok(self.push(Tensor::new(&[m, n], data)?, Op::ConcatRows(parts.to_vec())))
    }

    /// Rows `start..end` as a matrix.
    pub fn slice_rows(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = as_matrix(tx);
        if start >= end || end > m {
            return Err(Error::shape("slice_rows", format!("{start}..{end} of {m} rows")));
        }
        let out = Tensor::new(&[end - start, n], tx.data()[start * n..end * n].to_vec())?;
        Ok(self.push(out, Op::SliceRows { x, start }))
    }

    /// Columns `start..end`; keeps the input rank.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let tx = self.value(x);
        let (m, n) = as_matrix(tx);
        if start >= end || end > n {
            return Err(Error::shape("slice_cols", format!("{start}..{end} of {n} cols")));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(m * w);
        for i in 0..m {
            data.extend_from_slice(&tx.row(i)[start..end]);
        }
        let out = if tx.rank() == 1 {
            Tensor::new(&[w], data)?
        } else {
            Tensor::new(&[m, w], data)?
        };
        Ok(self.push(out, Op::SliceCols { x, start }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    /// Row lookup: `out[t] = table[ids[t]]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let tt = self.value(table);
        let (v, d) = as_matrix(tt);
        if ids.is_empty() {
            return Err(Error::Empty("gather ids"));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id >= v {
                return Err(Error::OutOfRange {
                    what: "embedding table",
                    index: id,
                    len: v,
                });
            }
            data.extend_from_slice(tt.row(id));
        }
        let out = Tensor::new(&[ids.len(), d], data)?;
        Ok(self.push(
            out,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        ))
    }

    /// Inverted dropout; returns `x` itself when inactive.
    pub fn dropout(&mut self, x: Var, rate: f64, rng: &mut Rng, training: bool) -> Var {
        if !training || rate == 0.0 {
            return x;
        }
        let scale = ops::dropout_scale(self.value(x).numel(), rate, rng);
        let mut out = self.value(x).clone();
        for (v, s) in out.data_mut().iter_mut().zip(&scale) {
            *v *= s;
        }
        self.push(out, Op::Dropout { x, scale })
    }

    /// `Σ x²` over the rows allowed by `row_mask`.
    pub fn sum_squares(&mut self, x: Var, row_mask: Option<Vec<bool>>) -> Var {
        let tx = self.value(x);
        let n = tx.cols();
        let total = tx
            .data()
            .iter()
            .enumerate()
            .filter(|(i, _)| row_mask.as_ref().is_none_or(|m| m[i / n]))
            .map(|(_, v)| v * v)
            .sum();
        self.push(Tensor::scalar(total), Op::SumSquares { x, row_mask })
    }

    /// Sum of same-shaped nodes.
    pub fn add_n(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::Empty("add_n input"))?;
        let mut out = self.value(*first).clone();
        for &p in &parts[1..] {
            let tp = self.value(p);
            if tp.shape() != out.shape() {
                return Err(Error::shape("add_n", format!("{:?} vs {:?}", tp.shape(), out.shape())));
            }
            for (o, v) in out.data_mut().iter_mut().zip(tp.data()) {
                *o += v;
            }
        }
        Ok(self.push(out, Op::AddN(parts.to_vec())))
    }

    pub fn mean(&mut self, parts: &[Var]) -> Result<Var> {
        let total = self.add_n(parts)?;
        Ok(self.scale(total, 1.0 / parts.len() as f64))
    }

    /// Single element as a scalar node.
    pub fn select(&mut self, x: Var, index: usize) -> Result<Var> {
        let tx = self.value(x);
        let v = *tx.data().get(index).ok_or(Error::OutOfRange {
            what: "select",
            index,
            len: tx.numel(),
        })?;
        Ok(self.push(Tensor::scalar(v), Op::Select { x, index }))
    }

    /// Focal loss of a scalar causal probability node.
    pub fn focal_loss(&mut self, p: Var, label: bool, cfg: loss::LossConfig) -> Result<Var> {
        let tp = self.value(p);
        if tp.numel() != 1 {
            return Err(Error::shape("focal_loss", format!("{:?}", tp.shape())));
        }
        let value = loss::focal_loss(tp.data()[0], label, &cfg);
        Ok(self.push(Tensor::scalar(value), Op::Focal { p, label, cfg }))
    }

    /// Exact gradients of a scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        let lv = self.value(loss);
        if lv.numel() != 1 {
            return Err(Error::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(dy) = grads[idx].take() else {
                continue;
            };
            self.backprop_node(idx, &dy, &mut grads);
            grads[idx] = Some(dy);
        }
        grads.resize(self.nodes.len(), None);
        Ok(Grads { grads })
    }

    /// Runs [`Graph::backward`] and accumulates parameter gradients into
    /// `store`. Calling it again without zeroing adds to the totals.
    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.backward(loss)?;
        for (&id, &var) in &self.params {
            if let Some(g) = grads.get(var) {
                store.accumulate_grad(id, g);
            }
        }
        Ok(())
    }

    fn backprop_node(&self, idx: usize, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let y = node.value.data();
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, delta: Vec<f64>| match &mut grads[v.0] {
            Some(g) => {
                for (a, d) in g.iter_mut().zip(&delta) {
                    *a += d;
                }
            }
            slot @ None => *slot = Some(delta),
        };
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                let da = ops::matmul_grad_lhs(dy, tb.data(), m, k, n);
                let db = ops::matmul_grad_rhs(ta.data(), dy, m, k, n);
                acc(*a, da);
                acc(*b, db);
            }
            Op::Transpose(a) => {
                let (m, n) = as_matrix(val(*a));
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        da[i * n + j] = dy[j * m + i];
                    }
                }
                acc(*a, da);
            }
            Op::Add(a, b) => {
                acc(*a, dy.to_vec());
                acc(*b, dy.to_vec());
            }
            Op::Sub(a, b) => {
                acc(*a, dy.to_vec());
                acc(*b, dy.iter().map(|d| -d).collect());
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                acc(*a, dy.iter().zip(tb.data()).map(|(d, v)| d * v).collect());
                acc(*b, dy.iter().zip(ta.data()).map(|(d, v)| d * v).collect());
            }
            Op::AddBias(x, b) => {
                let n = val(*b).numel();
                let mut db = vec![0.0; n];
                for (i, d) in dy.iter().enumerate() {
                    db[i % n] += d;
                }
                acc(*x, dy.to_vec());
                acc(*b, db);
            }
            Op::Scale(x, c) => acc(*x, dy.iter().map(|d| d * c).collect()),
            Op::Gelu(x) => {
                let dx = dy
                    .iter()
                    .zip(val(*x).data())
                    .map(|(d, v)| d * ops::gelu_grad(*v))
                    .collect();
                acc(*x, dx);
            }
            Op::Relu(x) => {
                let dx = dy
                    .iter()
                    .zip(val(*x).data())
                    .map(|(d, v)| if *v > 0.0 { *d } else { 0.0 })
                    .collect();
                acc(*x, dx);
            }
            Op::Sigmoid(x) => acc(*x, dy.iter().zip(y).map(|(d, s)| d * s * (1.0 - s)).collect()),
            Op::Tanh(x) => acc(*x, dy.iter().zip(y).map(|(d, t)| d * (1.0 - t * t)).collect()),
            Op::Log(x) => {
                // zero upstream gradient stays zero even where the input is 0
                let dx = dy
                    .iter()
                    .zip(val(*x).data())
                    .map(|(d, v)| if *d == 0.0 { 0.0 } else { d / v })
                    .collect();
                acc(*x, dx);
            }
            Op::Softmax(x) => {
                let n = node.value.cols();
                let mut dx = vec![0.0; y.len()];
                for (r, (yr, dr)) in y.chunks(n).zip(dy.chunks(n)).enumerate() {
                    let s: f64 = yr.iter().zip(dr).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        dx[r * n + j] = yr[j] * (dr[j] - s);
                    }
                }
                acc(*x, dx);
            }
            Op::LayerNorm { x, gain, cache, bias } => {
                let g = val(*gain).data();
                let n = g.len();
                let m = y.len() / n;
                let mut dx = vec![0.0; m * n];
                let mut dg = vec![0.0; n];
                let mut db = vec![0.0; n];
                for i in 0..m {
                    let xh = &cache.xhat[i * n..(i + 1) * n];
                    let dr = &dy[i * n..(i + 1) * n];
                    let mut mean_g = 0.0;
                    let mut mean_gx = 0.0;
                    for j in 0..n {
                        let gh = dr[j] * g[j];
                        mean_g += gh;
                        mean_gx += gh * xh[j];
                        dg[j] += dr[j] * xh[j];
                        db[j] += dr[j];
                    }
                    mean_g /= n as f64;
                    mean_gx /= n as f64;
                    let is = cache.inv_std[i];
                    for j in 0..n {
                        dx[i * n + j] = is * (dr[j] * g[j] - mean_g - xh[j] * mean_gx);
                    }
                }
                acc(*x, dx);
                acc(*gain, dg);
                acc(*bias, db);
            }
            Op::Conv1d { x, kernels, bias } => {
                let (tx, tk) = (val(*x), val(*kernels));
                let (t_len, d_in) = (tx.rows(), tx.cols());
                let (w, c) = (tk.shape()[0], tk.shape()[2]);
                let (left, _) = ops::same_padding(w);
                let kd = tk.data();
                let mut dx = vec![0.0; t_len * d_in];
                let mut dk = vec![0.0; kd.len()];
                let mut db = vec![0.0; c];
                for t in 0..t_len {
                    let drow = &dy[t * c..(t + 1) * c];
                    for (b, d) in db.iter_mut().zip(drow) {
                        *b += d;
                    }
                    for o in 0..w {
                        let Some(s) = (t + o).checked_sub(left).filter(|&s| s < t_len) else {
                            continue;
                        };
                        let xrow = tx.row(s);
                        for i in 0..d_in {
                            let base = (o * d_in + i) * c;
                            let krow = &kd[base..base + c];
                            dx[s * d_in + i] += krow.iter().zip(drow).map(|(k, d)| k * d).sum::<f64>();
                            let xv = xrow[i];
                            if xv != 0.0 {
                                for (g, d) in dk[base..base + c].iter_mut().zip(drow) {
                                    *g += xv * d;
                                }
                            }
                        }
                    }
                }
                acc(*x, dx);
                acc(*kernels, dk);
                acc(*bias, db);
            }
            Op::MaxOverTime { x, argmax } => {
                let tx = val(*x);
                let c = tx.cols();
                let mut dx = vec![0.0; tx.numel()];
                for (j, &t) in argmax.iter().enumerate() {
                    dx[t * c + j] += dy[j];
                }
                acc(*x, dx);
            }
            Op::WeightedRowSum { x, weights } => {
                let n = dy.len();
                let mut dx = vec![0.0; weights.len() * n];
                for (t, w) in weights.iter().enumerate() {
                    for j in 0..n {
                        dx[t * n + j] = w * dy[j];
                    }
                }
                acc(*x, dx);
            }
            Op::ConcatCols(parts) => {
                let total = node.value.cols();
                let m = node.value.rows();
                let mut offset = 0;
                for &p in parts {
                    let w = val(p).cols();
                    let mut dp = Vec::with_capacity(m * w);
                    for i in 0..m {
                        dp.extend_from_slice(&dy[i * total + offset..i * total + offset + w]);
                    }
                    offset += w;
                    acc(p, dp);
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let len = val(p).numel();
                    acc(p, dy[offset..offset + len].to_vec());
                    offset += len;
                }
            }
            Op::SliceRows { x, start } => {
                let tx = val(*x);
                let n = tx.cols();
                let mut dx = vec![0.0; tx.numel()];
                dx[start * n..start * n + dy.len()].copy_from_slice(dy);
                acc(*x, dx);
            }
            Op::SliceCols { x, start } => {
                let tx = val(*x);
                let (m, n) = as_matrix(tx);
                let w = node.value.cols();
                let mut dx = vec![0.0; m * n];
                for i in 0..m {
                    dx[i * n + start..i * n + start + w].copy_from_slice(&dy[i * w..(i + 1) * w]);
                }
                acc(*x, dx);
            }
            Op::Reshape(x) => acc(*x, dy.to_vec()),
            Op::Gather { table, ids } => {
                let tt = val(*table);
                let d = tt.cols();
                let mut dt = vec![0.0; tt.numel()];
                for (t, &id) in ids.iter().enumerate() {
                    for j in 0..d {
                        dt[id * d + j] += dy[t * d + j];
                    }
                }
                acc(*table, dt);
            }
            Op::Dropout { x, scale } => acc(*x, dy.iter().zip(scale).map(|(d, s)| d * s).collect()),
            Op::SumSquares { x, row_mask } => {
                let tx = val(*x);
                let n = tx.cols();
                let dx = tx
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, v)| {
                        if row_mask.as_ref().is_none_or(|m| m[i / n]) {
                            2.0 * v * dy[0]
                        } else {
                            0.0
                        }
                    })
                    .collect();
                acc(*x, dx);
            }
            Op::AddN(parts) => {
                for &p in parts {
                    acc(p, dy.to_vec());
                }
            }
            Op::Select { x, index } => {
                let mut dx = vec![0.0; val(*x).numel()];
                dx[*index] = dy[0];
                acc(*x, dx);
            }
            Op::Focal { p, label, cfg } => {
                let pv = val(*p).data()[0];
                acc(*p, vec![dy[0] * loss::focal_loss_grad(pv, *label, cfg)]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{finite_diff, relative_error};

    fn grad_of(g: &Graph, loss: Var, x: Var) -> Vec<f64> {
        g.backward(loss).unwrap().get(x).unwrap().to_vec()
    }

    #[test]
    fn product_rule() {
        let mut g = Graph::new();
        let x = g.input(Tensor::scalar(3.0));
        let y = g.input(Tensor::scalar(-2.5));
        let z = g.mul(x, y).unwrap();
        let grads = g.backward(z).unwrap();
        assert_eq!(grads.get(x).unwrap(), &[-2.5]);
        assert_eq!(grads.get(y).unwrap(), &[3.0]);
    }

    #[test]
    fn non_scalar_loss_is_error() {
        let mut g = Graph::new();
        let x = g.input(Tensor::zeros(&[2]));
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss { .. })));
    }

    #[test]
    fn backward_accumulates_into_store() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::vector(vec![2.0]));
        let mut g = Graph::new();
        let w = g.param(&store, id);
        let l = g.sum_squares(w, None);
        g.backward_into(l, &mut store).unwrap();
        g.backward_into(l, &mut store).unwrap();
        assert_eq!(store.get(id).grad().unwrap(), &[8.0]);
    }

    /// Builds `sum(a·b ⊙ c)` as a function of `a`, checked against central
    /// differences.
    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let a0 = Tensor::new(&[2, 3], vec![0.3, -1.2, 0.5, 2.0, 0.1, -0.7]).unwrap();
        let b = Tensor::new(&[3, 2], vec![1.1, -0.4, 0.2, 0.9, -1.5, 0.6]).unwrap();
        let c = Tensor::new(&[2, 2], vec![0.5, -1.0, 2.0, 0.25]).unwrap();
        let f = |a: &Tensor| {
            let mut g = Graph::new();
            let (va, vb, vc) = (g.input(a.clone()), g.input(b.clone()), g.input(c.clone()));
            let p = g.matmul(va, vb).unwrap();
            let q = g.mul(p, vc).unwrap();
            let s = g.reshape(q, &[4, 1]).unwrap();
            let r = g.sum_rows(s);
            (g, va, r)
        };
        let (g, va, r) = f(&a0);
        let analytic = grad_of(&g, r, va);
        let numeric = finite_diff(|a| { let (g, _, r) = f(a); g.scalar(r) }, &a0, 1e-4);
        for (x, y) in analytic.iter().zip(numeric.data()) {
            assert!(relative_error(*x, *y) <= 1e-5, "{x} vs {y}");
        }
    }

    #[test]
    fn softmax_log_gradient_matches_finite_differences() {
        let x0 = Tensor::new(&[2, 3], vec![0.2, -0.3, 1.1, 0.0, 0.5, -2.0]).unwrap();
        let mask = [true, true, true, true, false, true];
        let build = |x: &Tensor| {
            let mut g = Graph::new();
            let vx = g.input(x.clone());
            let s = g.softmax_rows(vx, Some(&mask)).unwrap();
            let ls = g.log(s);
            let a = g.select(ls, 1).unwrap();
            let b = g.select(ls, 3).unwrap();
            let l = g.add(a, b).unwrap();
            (g, vx, l)
        };
        let (g, vx, l) = build(&x0);
        let analytic = grad_of(&g, l, vx);
        let numeric = finite_diff(|x| { let (g, _, l) = build(x); g.scalar(l) }, &x0, 1e-4);
        for (i, (x, y)) in analytic.iter().zip(numeric.data()).enumerate() {
            assert!(relative_error(*x, *y) <= 1e-5, "coord {i}: {x} vs {y}");
        }
        assert_eq!(analytic[4], 0.0);
    }
}
