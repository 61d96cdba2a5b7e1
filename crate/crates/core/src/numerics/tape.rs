//! Wengert-list reverse-mode differentiation over [`Tensor`] values.
//!
//! Each node stores its forward value and the operation that produced it.
//! Nodes created from [`Tape::var`] are tracked; anything computed from a
//! tracked node is tracked as well. [`Tape::backward`] walks the list in
//! reverse and accumulates vector-Jacobian products into tracked nodes.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicUsize, Ordering};

use super::ops;
use super::{NumericsError, Scalar, Tensor};

static NEXT_TAPE_ID: AtomicUsize = AtomicUsize::new(1);

/// Handle to a node on a particular [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var {
    tape: usize,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Minimum(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    Scale(usize, T),
    AddScalar(usize, T),
    Clamp(usize, T, T),
    Exp(usize),
    Ln(usize),
    Tanh(usize),
    Gelu(usize),
    Sum(usize),
    Mean(usize),
    MaskedSoftmax(usize, Arc<Tensor<bool>>),
    LogSoftmax(usize),
    LayerNorm { x: usize, gain: usize, bias: usize, eps: T },
    Gather(usize, Arc<[usize]>, Vec<usize>),
    Concat(Vec<usize>, usize),
    Reshape(usize, Vec<usize>),
}

#[derive(Clone, Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    tracked: bool,
}

/// Gradients of one scalar output, indexed by [`Var`].
#[derive(Clone, Debug)]
pub struct Gradients<T> {
    tape: usize,
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient for `v`; `None` when `v` does not influence the output
    /// or is a constant.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        if v.tape != self.tape {
            return None;
        }
        self.grads.get(v.index).and_then(Option::as_ref)
    }

    /// Gradient for `v`, zero-filled when absent.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let shape = self
                    .shapes
                    .get(v.index)
                    .cloned()
                    .unwrap_or_else(|| vec![1]);
                Tensor::zeros(shape).expect("recorded shapes are valid")
            }
        }
    }
}

/// Single-owner record of forward operations.
#[derive(Debug)]
pub struct Tape<T> {
    id: usize,
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable input.
    pub fn var(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push_node(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        assert_eq!(v.tape, self.id, "variable belongs to another tape");
        &self.nodes[v.index].value
    }

    pub fn is_tracked(&self, v: Var) -> bool {
        self.nodes[v.index].tracked
    }

    fn push_node(&mut self, value: Tensor<T>, op: Op<T>, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn check(&self, v: Var) -> Result<usize, NumericsError> {
        if v.tape == self.id && v.index < self.nodes.len() {
            Ok(v.index)
        } else {
            Err(NumericsError::NotOnTape)
        }
    }

    fn record(&mut self, op: Op<T>) -> Result<Var, NumericsError> {
        let value = eval(&op, |i| &self.nodes[i].value)?;
        let tracked = parents(&op).iter().any(|&p| self.nodes[p].tracked);
        Ok(self.push_node(value, op, tracked))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let op = Op::MatMul(self.check(a)?, self.check(b)?);
        self.record(op)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumericsError> {
        let op = Op::Transpose(self.check(a)?);
        self.record(op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let op = Op::Add(self.check(a)?, self.check(b)?);
        self.record(op)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let op = Op::Sub(self.check(a)?, self.check(b)?);
        self.record(op)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let op = Op::Mul(self.check(a)?, self.check(b)?);
        self.record(op)
    }

    /// Elementwise minimum; on ties the gradient flows to `a`.
    pub fn minimum(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        let op = Op::Minimum(self.check(a)?, self.check(b)?);
        self.record(op)
    }

    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var, NumericsError> {
        let op = Op::AddRow(self.check(x)?, self.check(bias)?);
        self.record(op)
    }

    pub fn mul_row(&mut self, x: Var, gain: Var) -> Result<Var, NumericsError> {
        let op = Op::MulRow(self.check(x)?, self.check(gain)?);
        self.record(op)
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var, NumericsError> {
        let op = Op::Scale(self.check(x)?, s);
        self.record(op)
    }

    pub fn add_scalar(&mut self, x: Var, s: T) -> Result<Var, NumericsError> {
        let op = Op::AddScalar(self.check(x)?, s);
        self.record(op)
    }

    /// Clamp into `[lo, hi]`; the gradient is zero strictly outside.
    pub fn clamp(&mut self, x: Var, lo: T, hi: T) -> Result<Var, NumericsError> {
        let op = Op::Clamp(self.check(x)?, lo, hi);
        self.record(op)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, NumericsError> {
        let op = Op::Exp(self.check(x)?);
        self.record(op)
    }

    pub fn ln(&mut self, x: Var) -> Result<Var, NumericsError> {
        let op = Op::Ln(self.check(x)?);
        self.record(op)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, NumericsError> {
        let op = Op::Tanh(self.check(x)?);
        self.record(op)
    }

    pub fn gelu(&mut self, x: Var) -> Result<Var, NumericsError> {
        let op = Op::Gelu(self.check(x)?);
        self.record(op)
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, NumericsError> {
        let op = Op::Sum(self.check(x)?);
        self.record(op)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var, NumericsError> {
        let op = Op::Mean(self.check(x)?);
        self.record(op)
    }

    pub fn masked_softmax(&mut self, x: Var, mask: Arc<Tensor<bool>>) -> Result<Var, NumericsError> {
        let op = Op::MaskedSoftmax(self.check(x)?, mask);
        self.record(op)
    }

    pub fn log_softmax(&mut self, x: Var) -> Result<Var, NumericsError> {
        let op = Op::LogSoftmax(self.check(x)?);
        self.record(op)
    }

    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: T) -> Result<Var, NumericsError> {
        let op = Op::LayerNorm {
            x: self.check(x)?,
            gain: self.check(gain)?,
            bias: self.check(bias)?,
            eps,
        };
        self.record(op)
    }

    /// Flat gather: output element `i` is input element `indices[i]`.
    pub fn gather(
        &mut self,
        x: Var,
        indices: Arc<[usize]>,
        shape: impl Into<Vec<usize>>,
    ) -> Result<Var, NumericsError> {
        let op = Op::Gather(self.check(x)?, indices, shape.into());
        self.record(op)
    }

    /// Rows `start..start + len` of a rank-2 value.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let cols = self.value(x).cols();
        let idx: Arc<[usize]> = (start * cols..(start + len) * cols).collect();
        self.gather(x, idx, [len, cols])
    }

    /// Columns `start..start + len` of a rank-2 value.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let (rows, cols) = (self.value(x).rows(), self.value(x).cols());
        let idx: Arc<[usize]> = (0..rows)
            .flat_map(|r| (start..start + len).map(move |c| r * cols + c))
            .collect();
        self.gather(x, idx, [rows, len])
    }

    /// Row `picks[i]`-th column of each row `i`.
    pub fn pick(&mut self, x: Var, picks: &[usize]) -> Result<Var, NumericsError> {
        let cols = self.value(x).cols();
        let rows = self.value(x).rows();
        if picks.len() != rows {
            return Err(NumericsError::LengthMismatch {
                op: "pick",
                expected: rows,
                found: picks.len(),
            });
        }
        let idx: Arc<[usize]> = picks.iter().enumerate().map(|(r, &c)| r * cols + c).collect();
        self.gather(x, idx, [rows])
    }

    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var, NumericsError> {
        let idx = parts.iter().map(|&p| self.check(p)).collect::<Result<Vec<_>, _>>()?;
        self.record(Op::Concat(idx, axis))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var, NumericsError> {
        let op = Op::Reshape(self.check(x)?, shape.into());
        self.record(op)
    }

    /// Recomputes every node from the stored leaves.
    pub fn replay(&self) -> Result<Vec<Tensor<T>>, NumericsError> {
        let mut values: Vec<Tensor<T>> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node.op {
                Op::Leaf => node.value.clone(),
                ref op => eval(op, |i| &values[i])?,
            };
            values.push(v);
        }
        Ok(values)
    }

    /// Gradients of the scalar `output` with respect to every tracked node.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>, NumericsError> {
        let out = self.check(output)?;
        let out_value = &self.nodes[out].value;
        if out_value.numel() != 1 {
            return Err(NumericsError::NotScalar {
                shape: out_value.shape().to_vec(),
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; out + 1];
        if self.nodes[out].tracked {
            grads[out] = Some(Tensor::ones(out_value.shape().to_vec())?);
        }
        for i in (0..=out).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            for (p, pg) in self.vjp(node, &g)? {
                if !self.nodes[p].tracked {
                    continue;
                }
                grads[p] = Some(match grads[p].take() {
                    Some(acc) => ops::add(&acc, &pg)?,
                    None => pg,
                });
            }
            grads[i] = Some(g);
        }
        grads.resize(self.nodes.len(), None);
        Ok(Gradients {
            tape: self.id,
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn val(&self, i: usize) -> &Tensor<T> {
        &self.nodes[i].value
    }

    fn vjp(&self, node: &Node<T>, g: &Tensor<T>) -> Result<Vec<(usize, Tensor<T>)>, NumericsError> {
        let y = &node.value;
        Ok(match node.op {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) => {
                let ga = ops::matmul(g, &ops::transpose(self.val(b))?)?;
                let gb = ops::matmul(&ops::transpose(self.val(a))?, g)?;
                vec![(a, ga), (b, gb)]
            }
            Op::Transpose(a) => vec![(a, ops::transpose(g)?)],
            Op::Add(a, b) => vec![(a, g.clone()), (b, g.clone())],
            Op::Sub(a, b) => vec![(a, g.clone()), (b, g.map(|v| -v))],
            Op::Mul(a, b) => vec![
                (a, ops::mul(g, self.val(b))?),
                (b, ops::mul(g, self.val(a))?),
            ],
            Op::Minimum(a, b) => {
                let (av, bv) = (self.val(a).data(), self.val(b).data());
                let mut ga = Vec::with_capacity(g.numel());
                let mut gb = Vec::with_capacity(g.numel());
                for ((&gi, &x), &z) in g.data().iter().zip(av).zip(bv) {
                    if x <= z {
                        ga.push(gi);
                        gb.push(T::zero());
                    } else {
                        ga.push(T::zero());
                        gb.push(gi);
                    }
                }
                vec![
                    (a, Tensor::new(g.shape().to_vec(), ga)?),
                    (b, Tensor::new(g.shape().to_vec(), gb)?),
                ]
            }
            Op::AddRow(x, bias) => vec![
                (x, g.clone()),
                (bias, column_sums(g, self.val(bias).shape())?),
            ],
            Op::MulRow(x, gain) => vec![
                (x, ops::mul_row(g, self.val(gain))?),
                (gain, column_sums(&ops::mul(g, self.val(x))?, self.val(gain).shape())?),
            ],
            Op::Scale(x, s) => vec![(x, ops::scale(g, s))],
            Op::AddScalar(x, _) => vec![(x, g.clone())],
            Op::Clamp(x, lo, hi) => {
                let xv = self.val(x).data();
                let data = g
                    .data()
                    .iter()
                    .zip(xv)
                    .map(|(&gi, &v)| if v >= lo && v <= hi { gi } else { T::zero() })
                    .collect();
                vec![(x, Tensor::new(g.shape().to_vec(), data)?)]
            }
            Op::Exp(x) => vec![(x, ops::mul(g, y)?)],
            Op::Ln(x) => vec![(x, ops::zip_with("ln_grad", g, self.val(x), |gi, v| gi / v)?)],
            Op::Tanh(x) => vec![(x, ops::zip_with("tanh_grad", g, y, |gi, t| gi * (T::one() - t * t))?)],
            Op::Gelu(x) => vec![(
                x,
                ops::zip_with("gelu_grad", g, self.val(x), |gi, v| gi * ops::gelu_grad(v))?,
            )],
            Op::Sum(x) => {
                let s = g.data()[0];
                vec![(x, Tensor::filled(self.val(x).shape().to_vec(), s)?)]
            }
            Op::Mean(x) => {
                let xv = self.val(x);
                let s = g.data()[0] / T::of(xv.numel() as f64);
                vec![(x, Tensor::filled(xv.shape().to_vec(), s)?)]
            }
            Op::MaskedSoftmax(x, _) => {
                let n = y.cols();
                let mut out = Vec::with_capacity(y.numel());
                for (yr, gr) in y.data().chunks(n).zip(g.data().chunks(n)) {
                    let dot = yr.iter().zip(gr).fold(T::zero(), |a, (&p, &q)| a + p * q);
                    out.extend(yr.iter().zip(gr).map(|(&p, &q)| p * (q - dot)));
                }
                vec![(x, Tensor::new(y.shape().to_vec(), out)?)]
            }
            Op::LogSoftmax(x) => {
                let n = y.cols();
                let mut out = Vec::with_capacity(y.numel());
                for (yr, gr) in y.data().chunks(n).zip(g.data().chunks(n)) {
                    let total = gr.iter().fold(T::zero(), |a, &q| a + q);
                    out.extend(yr.iter().zip(gr).map(|(&ly, &q)| q - ly.exp() * total));
                }
                vec![(x, Tensor::new(y.shape().to_vec(), out)?)]
            }
            Op::LayerNorm { x, gain, bias, eps } => {
                let xv = self.val(x);
                let gv = self.val(gain).data();
                let d = xv.cols();
                let dn = T::of(d as f64);
                let (xhat, inv) = ops::normalize_rows(xv, eps);
                let mut gx = Vec::with_capacity(xv.numel());
                for ((xr, gr), &is) in xhat.data().chunks(d).zip(g.data().chunks(d)).zip(&inv) {
                    let dxhat: Vec<T> = gr.iter().zip(gv).map(|(&a, &b)| a * b).collect();
                    let s1 = dxhat.iter().fold(T::zero(), |a, &v| a + v);
                    let s2 = dxhat.iter().zip(xr).fold(T::zero(), |a, (&p, &q)| a + p * q);
                    gx.extend(
                        dxhat
                            .iter()
                            .zip(xr)
                            .map(|(&dh, &xh)| is / dn * (dn * dh - s1 - xh * s2)),
                    );
                }
                vec![
                    (x, Tensor::new(xv.shape().to_vec(), gx)?),
                    (gain, column_sums(&ops::mul(g, &xhat)?, self.val(gain).shape())?),
                    (bias, column_sums(g, self.val(bias).shape())?),
                ]
            }
            Op::Gather(x, ref idx, _) => {
                let xv = self.val(x);
                let mut out = vec![T::zero(); xv.numel()];
                for (&i, &gi) in idx.iter().zip(g.data()) {
                    out[i] = out[i] + gi;
                }
                vec![(x, Tensor::new(xv.shape().to_vec(), out)?)]
            }
            Op::Concat(ref parts, axis) => {
                let mut res = Vec::with_capacity(parts.len());
                let mut offset = 0;
                let gcols = g.cols();
                for &p in parts {
                    let pv = self.val(p);
                    let (r, c) = (pv.rows(), pv.cols());
                    let idx: Vec<usize> = if axis == 0 {
                        (offset * gcols..(offset + r) * gcols).collect()
                    } else {
                        (0..r)
                            .flat_map(|row| (offset..offset + c).map(move |col| row * gcols + col))
                            .collect()
                    };
                    res.push((p, ops::gather(g, &idx, pv.shape())?));
                    offset += if axis == 0 { r } else { c };
                }
                res
            }
            Op::Reshape(x, _) => vec![(x, g.reshape(self.val(x).shape().to_vec())?)],
        })
    }
}

fn column_sums<T: Scalar>(g: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>, NumericsError> {
    let d = g.cols();
    let mut out = vec![T::zero(); d];
    for row in g.data().chunks(d) {
        for (o, &v) in out.iter_mut().zip(row) {
            *o = *o + v;
        }
    }
    Tensor::new(shape.to_vec(), out)
}

fn parents<T>(op: &Op<T>) -> Vec<usize> {
    match *op {
        Op::Leaf => Vec::new(),
        Op::MatMul(a, b)
        | Op::Add(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::Minimum(a, b)
        | Op::AddRow(a, b)
        | Op::MulRow(a, b) => vec![a, b],
        Op::Transpose(a)
        | Op::Scale(a, _)
        | Op::AddScalar(a, _)
        | Op::Clamp(a, _, _)
        | Op::Exp(a)
        | Op::Ln(a)
        | Op::Tanh(a)
        | Op::Gelu(a)
        | Op::Sum(a)
        | Op::Mean(a)
        | Op::MaskedSoftmax(a, _)
        | Op::LogSoftmax(a)
        | Op::Gather(a, _, _)
        | Op::Reshape(a, _) => vec![a],
        Op::LayerNorm { x, gain, bias, .. } => vec![x, gain, bias],
        Op::Concat(ref parts, _) => parts.clone(),
    }
}

fn eval<'a, T: Scalar>(
    op: &Op<T>,
    get: impl Fn(usize) -> &'a Tensor<T>,
) -> Result<Tensor<T>, NumericsError> {
    match *op {
        Op::Leaf => unreachable!("leaves carry their own value"),
        Op::MatMul(a, b) => ops::matmul(get(a), get(b)),
        Op::Transpose(a) => ops::transpose(get(a)),
        Op::Add(a, b) => ops::add(get(a), get(b)),
        Op::Sub(a, b) => ops::sub(get(a), get(b)),
        Op::Mul(a, b) => ops::mul(get(a), get(b)),
        Op::Minimum(a, b) => ops::minimum(get(a), get(b)),
        Op::AddRow(x, b) => ops::add_row(get(x), get(b)),
        Op::MulRow(x, g) => ops::mul_row(get(x), get(g)),
        Op::Scale(x, s) => Ok(ops::scale(get(x), s)),
        Op::AddScalar(x, s) => Ok(get(x).map(|v| v + s)),
        Op::Clamp(x, lo, hi) => Ok(ops::clamp(get(x), lo, hi)),
        Op::Exp(x) => Ok(get(x).map(T::exp)),
        Op::Ln(x) => Ok(get(x).map(T::ln)),
        Op::Tanh(x) => Ok(get(x).map(T::tanh)),
        Op::Gelu(x) => Ok(ops::gelu(get(x))),
        Op::Sum(x) => Ok(ops::sum(get(x))),
        Op::Mean(x) => Ok(ops::mean(get(x))),
        Op::MaskedSoftmax(x, ref m) => ops::masked_softmax(get(x), m),
        Op::LogSoftmax(x) => Ok(ops::log_softmax(get(x))),
        Op::LayerNorm { x, gain, bias, eps } => ops::layer_norm(get(x), get(gain), get(bias), eps),
        Op::Gather(x, ref idx, ref shape) => ops::gather(get(x), idx, shape),
        Op::Concat(ref parts, axis) => {
            let refs: Vec<&Tensor<T>> = parts.iter().map(|&p| get(p)).collect();
            ops::concat(&refs, axis)
        }
        Op::Reshape(x, ref shape) => get(x).reshape(shape.clone()),
    }
}
