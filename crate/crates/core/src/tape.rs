//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! Every forward operation appends a node holding its output value and the
//! ids of its inputs. Nodes are only ever appended, so inputs always precede
//! the nodes that consume them and [`Tape::backward`] can walk the tape in
//! reverse without a topological sort.
//!
//! Broadcasting is limited to a row vector (`[C]` or `[1, C]`) applied over a
//! `[B, C]` batch on the right-hand side of `add`, `sub` and `mul`.

use crate::tensor::{Result, Tensor, TensorError};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Index of a trainable tensor inside a parameter store.
pub type ParamId = usize;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Concat(Var, Var),
    Slice(Var, usize),
    Sum(Var),
    Mean(Var),
    Square(Var),
    Abs(Var),
    MaxConst(Var, f64),
    RowSqNorm(Var),
    RowL1Norm(Var),
    RowNormalize(Var),
    Affine(Var, f64),
    // Records no input: nothing flows back through it.
    StopGrad,
    TopKMask(Var, Vec<bool>),
    GatherRows(Var, Vec<usize>),
    PairwiseSqDist(Var, Var),
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    param: Option<ParamId>,
}

/// Records forward operations for a single backward pass.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to every node on a tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(ParamId, Var)>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `var`, or `None` if the loss does not depend on it.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads[var.0].as_ref()
    }

    /// Gradient for `var`, materialising zeros for unreachable nodes.
    pub fn get_or_zeros(&self, var: Var) -> Tensor {
        self.grads[var.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[var.0]))
    }

    /// One gradient per parameter node in recording order. Parameters the
    /// loss does not reach receive zeros of matching shape.
    pub fn param_grads(&self) -> Vec<(ParamId, Tensor)> {
        self.params
            .iter()
            .map(|&(id, var)| (id, self.get_or_zeros(var)))
            .collect()
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Bcast {
    Same,
    Row,
}

fn broadcast_kind(op: &'static str, a: &Tensor, b: &Tensor) -> Result<Bcast> {
    if a.shape() == b.shape() {
        return Ok(Bcast::Same);
    }
    let row_like = match b.shape() {
        [c] => Some(*c),
        [1, c] => Some(*c),
        _ => None,
    };
    match (a.shape(), row_like) {
        ([_, c], Some(rc)) if *c == rc => Ok(Bcast::Row),
        _ => Err(TensorError::ShapeMismatch {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        }),
    }
}

fn require_2d(op: &'static str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(TensorError::Invalid {
            op,
            msg: format!("expected a 2-D tensor, got shape {s:?}"),
        }),
    }
}

/// `c = a · b (+ beta · c)` for row-major buffers with arbitrary strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_strides: (usize, usize),
    b: &[f64],
    b_strides: (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(c.len() >= m * n);
    // SAFETY: the caller passes buffers whose extents cover the strided
    // m×k, k×n and m×n views; `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            a_strides.0 as isize,
            a_strides.1 as isize,
            b.as_ptr(),
            b_strides.0 as isize,
            b_strides.1 as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Dense matrix product of two 2-D tensors outside any tape.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = require_2d("matmul", a)?;
    let (k2, n) = require_2d("matmul", b)?;
    if k != k2 {
        return Err(TensorError::ShapeMismatch {
            op: "matmul",
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; m * n];
    gemm(m, k, n, a.data(), (k, 1), b.data(), (n, 1), 0.0, &mut out);
    Tensor::checked("matmul", vec![m, n], out)
}

fn map(t: &Tensor, op: &'static str, f: impl Fn(f64) -> f64) -> Result<Tensor> {
    Tensor::checked(op, t.shape().to_vec(), t.data().iter().map(|&v| f(v)).collect())
}

fn zip_bcast(
    op: &'static str,
    a: &Tensor,
    b: &Tensor,
    f: impl Fn(f64, f64) -> f64,
) -> Result<Tensor> {
    let data = match broadcast_kind(op, a, b)? {
        Bcast::Same => a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
        Bcast::Row => {
            let c = b.numel();
            a.data()
                .iter()
                .enumerate()
                .map(|(i, &x)| f(x, b.data()[i % c]))
                .collect()
        }
    };
    Tensor::checked(op, a.shape().to_vec(), data)
}

/// Guard added under the square root of [`Tape::row_normalize`].
pub const NORMALIZE_EPS: f64 = 1e-12;

fn row_scale(row: &[f64]) -> f64 {
    (row.iter().map(|v| v * v).sum::<f64>() + NORMALIZE_EPS).sqrt()
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Keep mask of the `k` largest-magnitude entries of each row. Ties go to
/// the lower column index.
fn topk_mask(t: &Tensor, k: usize) -> Vec<bool> {
    let cols = t.cols();
    let mut mask = vec![false; t.numel()];
    let mut order: Vec<usize> = Vec::with_capacity(cols);
    for r in 0..t.rows() {
        let row = t.row(r);
        order.clear();
        order.extend(0..cols);
        order.sort_by(|&i, &j| row[j].abs().total_cmp(&row[i].abs()).then(i.cmp(&j)));
        for &c in order.iter().take(k) {
            mask[r * cols + c] = true;
        }
    }
    mask
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            op,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Records a non-trainable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Records a trainable input; its gradient is reported by
    /// [`Gradients::param_grads`].
    pub fn param(&mut self, value: Tensor, id: ParamId) -> Var {
        let v = self.push(value, Op::Leaf);
        self.nodes[v.0].param = Some(id);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = zip_bcast("add", self.value(a), self.value(b), |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = zip_bcast("sub", self.value(a), self.value(b), |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = zip_bcast("mul", self.value(a), self.value(b), |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = map(self.value(a), "relu", |x| x.max(0.0))?;
        Ok(self.push(out, Op::Relu(a)))
    }

    /// Concatenates two 2-D tensors with equal row counts along the last axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (ra, ca) = require_2d("concat", ta)?;
        let (rb, cb) = require_2d("concat", tb)?;
        if ra != rb {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let mut data = Vec::with_capacity(ra * (ca + cb));
        for r in 0..ra {
            data.extend_from_slice(ta.row(r));
            data.extend_from_slice(tb.row(r));
        }
        let out = Tensor::checked("concat", vec![ra, ca + cb], data)?;
        Ok(self.push(out, Op::Concat(a, b)))
    }

    /// Columns `start..end` of a 2-D tensor.
    pub fn slice(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = require_2d("slice", t)?;
        if start >= end || end > c {
            return Err(TensorError::Invalid {
                op: "slice",
                msg: format!("range {start}..{end} invalid for shape {:?}", t.shape()),
            });
        }
        let mut data = Vec::with_capacity(r * (end - start));
        for i in 0..r {
            data.extend_from_slice(&t.row(i)[start..end]);
        }
        let out = Tensor::checked("slice", vec![r, end - start], data)?;
        Ok(self.push(out, Op::Slice(a, start)))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        let out = Tensor::checked("sum", vec![1], vec![s])?;
        Ok(self.push(out, Op::Sum(a)))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.numel() as f64;
        let out = Tensor::checked("mean", vec![1], vec![s])?;
        Ok(self.push(out, Op::Mean(a)))
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let out = map(self.value(a), "square", |x| x * x)?;
        Ok(self.push(out, Op::Square(a)))
    }

    pub fn abs(&mut self, a: Var) -> Result<Var> {
        let out = map(self.value(a), "abs", f64::abs)?;
        Ok(self.push(out, Op::Abs(a)))
    }

    /// Elementwise `max(x, c)`.
    pub fn max_const(&mut self, a: Var, c: f64) -> Result<Var> {
        let out = map(self.value(a), "max_const", |x| x.max(c))?;
        Ok(self.push(out, Op::MaxConst(a, c)))
    }

    /// Elementwise `scale * x + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Result<Var> {
        let out = map(self.value(a), "affine", |x| scale * x + shift)?;
        Ok(self.push(out, Op::Affine(a, scale)))
    }

    /// Squared L2 norm of each row of a 2-D tensor; output shape `[rows]`.
    pub fn row_sqnorm(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (r, _) = require_2d("row_sqnorm", t)?;
        let data = (0..r).map(|i| t.row(i).iter().map(|v| v * v).sum()).collect();
        let out = Tensor::checked("row_sqnorm", vec![r], data)?;
        Ok(self.push(out, Op::RowSqNorm(a)))
    }

    /// L1 norm of each row of a 2-D tensor; output shape `[rows]`.
    pub fn row_l1norm(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (r, _) = require_2d("row_l1norm", t)?;
        let data = (0..r).map(|i| t.row(i).iter().map(|v| v.abs()).sum()).collect();
        let out = Tensor::checked("row_l1norm", vec![r], data)?;
        Ok(self.push(out, Op::RowL1Norm(a)))
    }

    /// Each row of a 2-D tensor divided by `sqrt(||row||² + ε)`. The `ε`
    /// keeps an all-zero row finite (it maps to zero).
    pub fn row_normalize(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (r, c) = require_2d("row_normalize", t)?;
        let mut data = Vec::with_capacity(r * c);
        for i in 0..r {
            let n = row_scale(t.row(i));
            data.extend(t.row(i).iter().map(|v| v / n));
        }
        let out = Tensor::checked("row_normalize", t.shape().to_vec(), data)?;
        Ok(self.push(out, Op::RowNormalize(a)))
    }

    /// Identity in the forward pass; blocks all gradient flow backward.
    pub fn stop_grad(&mut self, a: Var) -> Var {
        let out = self.value(a).clone();
        self.push(out, Op::StopGrad)
    }

    /// Zeroes all but the `k` largest-magnitude entries of each row.
    /// Gradients pass only through the kept entries.
    pub fn topk(&mut self, a: Var, k: usize) -> Result<Var> {
        let t = self.value(a);
        let (_, c) = require_2d("topk", t)?;
        if k == 0 || k > c {
            return Err(TensorError::Invalid {
                op: "topk",
                msg: format!("k = {k} outside 1..={c}"),
            });
        }
        let mask = topk_mask(t, k);
        let data = t
            .data()
            .iter()
            .zip(&mask)
            .map(|(&v, &keep)| if keep { v } else { 0.0 })
            .collect();
        let out = Tensor::checked("topk", t.shape().to_vec(), data)?;
        Ok(self.push(out, Op::TopKMask(a, mask)))
    }

    /// Selects rows `idx` of a 2-D tensor (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(a);
        let (r, _) = require_2d("gather_rows", t)?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(TensorError::Invalid {
                op: "gather_rows",
                msg: format!("row {bad} out of range for {r} rows"),
            });
        }
        let out = t.select_rows(idx);
        Ok(self.push(out, Op::GatherRows(a, idx.to_vec())))
    }

    /// `D[i, j] = ||a_i − b_j||²` for `a: [B, C]`, `b: [M, C]`.
    pub fn pairwise_sqdist(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (ra, ca) = require_2d("pairwise_sqdist", ta)?;
        let (rb, cb) = require_2d("pairwise_sqdist", tb)?;
        if ca != cb {
            return Err(TensorError::ShapeMismatch {
                op: "pairwise_sqdist",
                left: ta.shape().to_vec(),
                right: tb.shape().to_vec(),
            });
        }
        let mut data = Vec::with_capacity(ra * rb);
        for i in 0..ra {
            let x = ta.row(i);
            for j in 0..rb {
                data.push(x.iter().zip(tb.row(j)).map(|(p, q)| (p - q) * (p - q)).sum());
            }
        }
        let out = Tensor::checked("pairwise_sqdist", vec![ra, rb], data)?;
        Ok(self.push(out, Op::PairwiseSqDist(a, b)))
    }

    /// Reverse pass from a scalar `loss` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(TensorError::NotScalar {
                op: "backward",
                shape: lv.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Tensor::full(lv.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::StopGrad => {}
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k) = (ta.shape()[0], ta.shape()[1]);
                    let n = tb.shape()[1];
                    // dA = G · Bᵀ
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), (n, 1), tb.data(), (1, n), 0.0, &mut da);
                    // dB = Aᵀ · G
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, ta.data(), (1, k), g.data(), (n, 1), 0.0, &mut db);
                    accumulate(&mut grads, *a, ta.shape(), da);
                    accumulate(&mut grads, *b, tb.shape(), db);
                }
                Op::Add(a, b) | Op::Sub(a, b) => {
                    let sgn = if matches!(node.op, Op::Add(..)) { 1.0 } else { -1.0 };
                    let tb = self.value(*b);
                    let gb = reduce_to(&g, tb, |x| sgn * x);
                    accumulate(&mut grads, *a, g.shape(), g.data().to_vec());
                    accumulate(&mut grads, *b, tb.shape(), gb);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let c = tb.numel();
                    let row = broadcast_kind("mul", ta, tb)? == Bcast::Row;
                    let bval = |j: usize| if row { tb.data()[j % c] } else { tb.data()[j] };
                    let ga: Vec<f64> = g.data().iter().enumerate().map(|(j, &x)| x * bval(j)).collect();
                    let prod: Vec<f64> = g.data().iter().zip(ta.data()).map(|(x, y)| x * y).collect();
                    let gb = if row { fold_rows(&prod, c) } else { prod };
                    accumulate(&mut grads, *a, ta.shape(), ga);
                    accumulate(&mut grads, *b, tb.shape(), gb);
                }
                Op::Relu(a) => {
                    let ta = self.value(*a);
                    let ga = g.data().iter().zip(ta.data()).map(|(x, &v)| if v > 0.0 { *x } else { 0.0 }).collect();
                    accumulate(&mut grads, *a, ta.shape(), ga);
                }
                Op::MaxConst(a, c) => {
                    let ta = self.value(*a);
                    let ga = g.data().iter().zip(ta.data()).map(|(x, &v)| if v > *c { *x } else { 0.0 }).collect();
                    accumulate(&mut grads, *a, ta.shape(), ga);
                }
                Op::Concat(a, b) => {
                    let (ca, cb) = (self.value(*a).cols(), self.value(*b).cols());
                    let rows = g.rows();
                    let mut ga = Vec::with_capacity(rows * ca);
                    let mut gb = Vec::with_capacity(rows * cb);
                    for r in 0..rows {
                        let gr = g.row(r);
                        ga.extend_from_slice(&gr[..ca]);
                        gb.extend_from_slice(&gr[ca..]);
                    }
                    accumulate(&mut grads, *a, &[rows, ca], ga);
                    accumulate(&mut grads, *b, &[rows, cb], gb);
                }
                Op::Slice(a, start) => {
                    let ta = self.value(*a);
                    let (rows, c) = (ta.shape()[0], ta.shape()[1]);
                    let w = g.cols();
                    let mut ga = vec![0.0; rows * c];
                    for r in 0..rows {
                        ga[r * c + start..r * c + start + w].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *a, ta.shape(), ga);
                }
                Op::Sum(a) | Op::Mean(a) => {
                    let ta = self.value(*a);
                    let scale = if matches!(node.op, Op::Mean(_)) { 1.0 / ta.numel() as f64 } else { 1.0 };
                    let gv = g.data()[0] * scale;
                    accumulate(&mut grads, *a, ta.shape(), vec![gv; ta.numel()]);
                }
                Op::Square(a) => {
                    let ta = self.value(*a);
                    let ga = g.data().iter().zip(ta.data()).map(|(x, v)| 2.0 * v * x).collect();
                    accumulate(&mut grads, *a, ta.shape(), ga);
                }
                Op::Abs(a) => {
                    let ta = self.value(*a);
                    let ga = g.data().iter().zip(ta.data()).map(|(x, &v)| sign(v) * x).collect();
                    accumulate(&mut grads, *a, ta.shape(), ga);
                }
                Op::Affine(a, scale) => {
                    let ga = g.data().iter().map(|x| scale * x).collect();
                    accumulate(&mut grads, *a, g.shape(), ga);
                }
                Op::RowSqNorm(a) | Op::RowL1Norm(a) => {
                    let ta = self.value(*a);
                    let c = ta.cols();
                    let sq = matches!(node.op, Op::RowSqNorm(_));
                    let ga = ta
                        .data()
                        .iter()
                        .enumerate()
                        .map(|(j, &v)| {
                            let d = if sq { 2.0 * v } else { sign(v) };
                            d * g.data()[j / c]
                        })
                        .collect();
                    accumulate(&mut grads, *a, ta.shape(), ga);
                }
                Op::RowNormalize(a) => {
                    // d(x/n) = dx/n − x (x·dx)/n³.
                    let ta = self.value(*a);
                    let c = ta.cols();
                    let mut ga = Vec::with_capacity(ta.numel());
                    for i in 0..ta.rows() {
                        let (x, gr) = (ta.row(i), &g.data()[i * c..(i + 1) * c]);
                        let n = row_scale(x);
                        let xg: f64 = x.iter().zip(gr).map(|(p, q)| p * q).sum();
                        ga.extend(x.iter().zip(gr).map(|(p, q)| q / n - p * xg / (n * n * n)));
                    }
                    accumulate(&mut grads, *a, ta.shape(), ga);
                }
                Op::TopKMask(a, mask) => {
                    let ga = g.data().iter().zip(mask).map(|(x, &keep)| if keep { *x } else { 0.0 }).collect();
                    accumulate(&mut grads, *a, g.shape(), ga);
                }
                Op::GatherRows(a, idx) => {
                    let ta = self.value(*a);
                    let c = ta.cols();
                    let mut ga = vec![0.0; ta.numel()];
                    for (r, &src) in idx.iter().enumerate() {
                        for (dst, x) in ga[src * c..(src + 1) * c].iter_mut().zip(g.row(r)) {
                            *dst += x;
                        }
                    }
                    accumulate(&mut grads, *a, ta.shape(), ga);
                }
                Op::PairwiseSqDist(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (ra, c) = (ta.shape()[0], ta.shape()[1]);
                    let rb = tb.shape()[0];
                    let mut ga = vec![0.0; ra * c];
                    let mut gb = vec![0.0; rb * c];
                    for i in 0..ra {
                        for j in 0..rb {
                            let gij = 2.0 * g.data()[i * rb + j];
                            if gij == 0.0 {
                                continue;
                            }
                            for d in 0..c {
                                let diff = ta.data()[i * c + d] - tb.data()[j * c + d];
                                ga[i * c + d] += gij * diff;
                                gb[j * c + d] -= gij * diff;
                            }
                        }
                    }
                    accumulate(&mut grads, *a, ta.shape(), ga);
                    accumulate(&mut grads, *b, tb.shape(), gb);
                }
            }
            grads[i] = Some(g);
        }

        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.data().iter().any(|v| !v.is_finite()) {
                    return Err(TensorError::NonFinite { op: "backward" });
                }
                debug_assert_eq!(g.shape(), self.nodes[i].value.shape());
            }
        }

        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|id| (id, Var(i))))
            .collect();
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients {
            grads,
            params,
            shapes,
        })
    }
}

fn fold_rows(data: &[f64], c: usize) -> Vec<f64> {
    let mut out = vec![0.0; c];
    for (j, v) in data.iter().enumerate() {
        out[j % c] += v;
    }
    out
}

/// Reduces an upstream gradient onto `target`'s shape (summing over the
/// batch when `target` was row-broadcast).
fn reduce_to(g: &Tensor, target: &Tensor, f: impl Fn(f64) -> f64) -> Vec<f64> {
    let mapped: Vec<f64> = g.data().iter().map(|&x| f(x)).collect();
    if target.numel() == g.numel() {
        mapped
    } else {
        fold_rows(&mapped, target.numel())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, shape: &[usize], data: Vec<f64>) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, d) in existing.data_mut().iter_mut().zip(&data) {
                *e += d;
            }
        }
        slot @ None => *slot = Some(Tensor::raw(shape.to_vec(), data)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn matmul_identity() {
        let m = t(&[3, 3], &[1.0, -2.0, 3.0, 0.5, 4.0, -1.0, 7.0, 8.0, 9.0]);
        let mut tape = Tape::new();
        let i = tape.constant(Tensor::eye(3));
        let mv = tape.constant(m.clone());
        let out = tape.matmul(i, mv).unwrap();
        assert_eq!(tape.value(out), &m);
    }

    #[test]
    fn relu_definition() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[3], &[-1.0, 0.0, 2.0]));
        let y = tape.relu(x).unwrap();
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn row_sqnorm_three_four() {
        let mut tape = Tape::new();
        let x = tape.constant(t(&[1, 2], &[3.0, 4.0]));
        let y = tape.row_sqnorm(x).unwrap();
        assert_eq!(tape.value(y).data(), &[25.0]);
    }

    #[test]
    fn sum_of_squares_gradient() {
        let mut tape = Tape::new();
        let w = tape.param(t(&[2], &[1.0, 2.0]), 0);
        let sq = tape.square(w).unwrap();
        let loss = tape.sum(sq).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn relu_flat_region_has_zero_gradient() {
        let mut tape = Tape::new();
        let w = tape.param(t(&[1], &[-1.0]), 0);
        let r = tape.relu(w).unwrap();
        let loss = tape.sum(r).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(w).unwrap().data(), &[0.0]);
    }

    #[test]
    fn relu_at_zero_has_zero_gradient() {
        let mut tape = Tape::new();
        let w = tape.param(t(&[1], &[0.0]), 0);
        let r = tape.relu(w).unwrap();
        let loss = tape.sum(r).unwrap();
        assert_eq!(tape.backward(loss).unwrap().get(w).unwrap().data(), &[0.0]);
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]"), "{msg}");
        let c = tape.constant(Tensor::zeros(&[3, 2]));
        assert!(tape.add(a, c).unwrap_err().to_string().contains("add"));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::zeros(&[2]), 0);
        assert!(matches!(tape.backward(a), Err(TensorError::NotScalar { .. })));
    }

    #[test]
    fn row_broadcast_add_sums_bias_gradient() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[4, 2]));
        let b = tape.param(t(&[2], &[1.0, 2.0]), 0);
        let y = tape.add(x, b).unwrap();
        let loss = tape.sum(y).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(b).unwrap().data(), &[4.0, 4.0]);
    }

    #[test]
    fn stop_grad_blocks_gradient() {
        let mut tape = Tape::new();
        let w = tape.param(t(&[2], &[1.0, 2.0]), 0);
        let s = tape.stop_grad(w);
        let sq = tape.square(s).unwrap();
        let loss = tape.sum(sq).unwrap();
        let g = tape.backward(loss).unwrap();
        assert!(g.get(w).is_none());
        assert_eq!(g.param_grads()[0].1.data(), &[0.0, 0.0]);
    }

    #[test]
    fn topk_keeps_largest_magnitudes() {
        let mut tape = Tape::new();
        let h = tape.param(t(&[1, 4], &[0.1, -3.0, 2.0, 0.5]), 0);
        let k = tape.topk(h, 2).unwrap();
        assert_eq!(tape.value(k).data(), &[0.0, -3.0, 2.0, 0.0]);
        let loss = tape.sum(k).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(h).unwrap().data(), &[0.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn every_param_gets_a_gradient_of_its_shape() {
        let mut tape = Tape::new();
        let used = tape.param(Tensor::full(&[2, 2], 1.0), 0);
        let unused = tape.param(Tensor::full(&[3], 1.0), 1);
        let loss = tape.sum(used).unwrap();
        let grads = tape.backward(loss).unwrap().param_grads();
        assert_eq!(grads.len(), 2);
        assert_eq!(grads[0].1.shape(), &[2, 2]);
        assert_eq!(grads[1].1.shape(), &[3]);
        let _ = unused;
    }
}
