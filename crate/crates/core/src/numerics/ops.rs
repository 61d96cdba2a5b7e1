//! Forward kernels over [`Tensor`] values.
//!
//! Every reduction walks its operands left to right so results are
//! bit-identical between runs. Row-wise kernels treat a tensor of shape
//! `[..., n]` as a `[rows, n]` matrix.

use alloc::vec;
use alloc::vec::Vec;

use super::{NumericsError, Scalar, Tensor};

fn require_rank2<T: Clone>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize), NumericsError> {
    match *t.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(NumericsError::RankMismatch {
            op,
            expected: 2,
            shape: t.shape().to_vec(),
        }),
    }
}

fn require_same<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<(), NumericsError> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(NumericsError::shape_mismatch(op, a.shape(), b.shape()))
    }
}

/// Standard matrix product of `[m, k] x [k, n]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, NumericsError> {
    let (m, k) = require_rank2("matmul", a)?;
    let (k2, n) = require_rank2("matmul", b)?;
    if k != k2 {
        return Err(NumericsError::shape_mismatch("matmul", a.shape(), b.shape()));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    Tensor::new([m, n], out)
}

pub fn transpose<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>, NumericsError> {
    let (m, n) = require_rank2("transpose", a)?;
    let d = a.data();
    let mut out = Vec::with_capacity(m * n);
    for j in 0..n {
        for i in 0..m {
            out.push(d[i * n + j]);
        }
    }
    Tensor::new([n, m], out)
}

pub fn zip_with<T: Scalar>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>, NumericsError> {
    require_same(op, a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.shape().to_vec(), data)
}

pub fn add<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, NumericsError> {
    zip_with("add", a, b, |x, y| x + y)
}

pub fn sub<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, NumericsError> {
    zip_with("sub", a, b, |x, y| x - y)
}

pub fn mul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, NumericsError> {
    zip_with("mul", a, b, |x, y| x * y)
}

/// Elementwise `min(a, b)`; ties resolve to `a`.
pub fn minimum<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>, NumericsError> {
    zip_with("minimum", a, b, |x, y| if x <= y { x } else { y })
}

fn row_affine<T: Scalar>(
    op: &'static str,
    x: &Tensor<T>,
    v: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>, NumericsError> {
    let d = x.cols();
    if v.numel() != d {
        return Err(NumericsError::shape_mismatch(op, x.shape(), v.shape()));
    }
    let vd = v.data();
    let data = x
        .data()
        .chunks(d)
        .flat_map(|row| row.iter().zip(vd).map(|(&a, &b)| f(a, b)))
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// Adds a `[d]` vector to every row of `[..., d]`.
pub fn add_row<T: Scalar>(x: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>, NumericsError> {
    row_affine("add_row", x, bias, |a, b| a + b)
}

/// Multiplies every row of `[..., d]` by a `[d]` vector.
pub fn mul_row<T: Scalar>(x: &Tensor<T>, gain: &Tensor<T>) -> Result<Tensor<T>, NumericsError> {
    row_affine("mul_row", x, gain, |a, b| a * b)
}

pub fn scale<T: Scalar>(x: &Tensor<T>, s: T) -> Tensor<T> {
    x.map(|v| v * s)
}

pub fn clamp<T: Scalar>(x: &Tensor<T>, lo: T, hi: T) -> Tensor<T> {
    x.map(|v| v.max(lo).min(hi))
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

/// GELU, tanh approximation.
pub fn gelu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (c, k, half) = (T::of(GELU_C), T::of(GELU_K), T::of(0.5));
    x.map(|v| half * v * (T::one() + (c * (v + k * v * v * v)).tanh()))
}

pub(crate) fn gelu_grad<T: Scalar>(v: T) -> T {
    let (c, k, half) = (T::of(GELU_C), T::of(GELU_K), T::of(0.5));
    let three = T::of(3.0);
    let u = c * (v + k * v * v * v);
    let t = u.tanh();
    let du = c * (T::one() + three * k * v * v);
    half * (T::one() + t) + half * v * (T::one() - t * t) * du
}

pub fn sum<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    Tensor::scalar(x.data().iter().fold(T::zero(), |acc, &v| acc + v))
}

pub fn mean<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let s = sum(x).data()[0];
    Tensor::scalar(s / T::of(x.numel() as f64))
}

/// Row-wise softmax restricted to entries where `mask` is true.
///
/// Masked entries come out exactly zero. Each row is shifted by its
/// maximum unmasked logit before exponentiation.
pub fn masked_softmax<T: Scalar>(
    logits: &Tensor<T>,
    mask: &Tensor<bool>,
) -> Result<Tensor<T>, NumericsError> {
    if logits.shape() != mask.shape() {
        return Err(NumericsError::shape_mismatch(
            "masked_softmax",
            logits.shape(),
            mask.shape(),
        ));
    }
    let n = logits.cols();
    let mut out = vec![T::zero(); logits.numel()];
    for (r, ((lrow, mrow), orow)) in logits
        .data()
        .chunks(n)
        .zip(mask.data().chunks(n))
        .zip(out.chunks_mut(n))
        .enumerate()
    {
        let mut max: Option<T> = None;
        for (&l, &m) in lrow.iter().zip(mrow) {
            if m {
                max = Some(match max {
                    Some(cur) if cur >= l => cur,
                    _ => l,
                });
            }
        }
        let max = max.ok_or(NumericsError::FullyMaskedRow { row: r })?;
        let mut total = T::zero();
        for ((&l, &m), o) in lrow.iter().zip(mrow).zip(orow.iter_mut()) {
            if m {
                *o = (l - max).exp();
                total = total + *o;
            }
        }
        for (o, &m) in orow.iter_mut().zip(mrow) {
            if m {
                *o = *o / total;
            }
        }
    }
    Tensor::new(logits.shape().to_vec(), out)
}

/// Row-wise `log(softmax(x))`.
pub fn log_softmax<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let n = x.cols();
    let mut out = Vec::with_capacity(x.numel());
    for row in x.data().chunks(n) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let total = row.iter().fold(T::zero(), |acc, &v| acc + (v - max).exp());
        let lse = max + total.ln();
        out.extend(row.iter().map(|&v| v - lse));
    }
    Tensor::new(x.shape().to_vec(), out).expect("shape preserved")
}

/// Normalized rows `(x - mean) / sqrt(var + eps)` and the per-row `1/sqrt(var + eps)`.
pub(crate) fn normalize_rows<T: Scalar>(x: &Tensor<T>, eps: T) -> (Tensor<T>, Vec<T>) {
    let d = x.cols();
    let dn = T::of(d as f64);
    let mut xhat = Vec::with_capacity(x.numel());
    let mut inv = Vec::with_capacity(x.rows());
    for row in x.data().chunks(d) {
        let mean = row.iter().fold(T::zero(), |a, &v| a + v) / dn;
        let var = row
            .iter()
            .fold(T::zero(), |a, &v| a + (v - mean) * (v - mean))
            / dn;
        let is = T::one() / (var + eps).sqrt();
        xhat.extend(row.iter().map(|&v| (v - mean) * is));
        inv.push(is);
    }
    (
        Tensor::new(x.shape().to_vec(), xhat).expect("shape preserved"),
        inv,
    )
}

/// Layer normalization over the last axis followed by a per-feature affine map.
pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>, NumericsError> {
    let d = x.cols();
    if gain.numel() != d {
        return Err(NumericsError::shape_mismatch("layer_norm", x.shape(), gain.shape()));
    }
    if bias.numel() != d {
        return Err(NumericsError::shape_mismatch("layer_norm", x.shape(), bias.shape()));
    }
    let (xhat, _) = normalize_rows(x, eps);
    add_row(&mul_row(&xhat, gain)?, bias)
}

/// Picks `x.data()[indices[i]]` into a new tensor of the given shape.
pub fn gather<T: Scalar>(
    x: &Tensor<T>,
    indices: &[usize],
    shape: &[usize],
) -> Result<Tensor<T>, NumericsError> {
    let src = x.data();
    let mut out = Vec::with_capacity(indices.len());
    for &i in indices {
        out.push(*src.get(i).ok_or(NumericsError::IndexOutOfRange {
            index: i,
            len: src.len(),
        })?);
    }
    Tensor::new(shape.to_vec(), out)
}

/// Concatenates rank-2 tensors along `axis` (0 = rows, 1 = columns).
pub fn concat<T: Scalar>(parts: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>, NumericsError> {
    let first = parts.first().ok_or(NumericsError::EmptyConcat)?;
    let (r0, c0) = require_rank2("concat", first)?;
    match axis {
        0 => {
            let mut rows = 0;
            let mut data = Vec::new();
            for p in parts {
                let (r, c) = require_rank2("concat", p)?;
                if c != c0 {
                    return Err(NumericsError::shape_mismatch("concat", first.shape(), p.shape()));
                }
                rows += r;
                data.extend_from_slice(p.data());
            }
            Tensor::new([rows, c0], data)
        }
        1 => {
            let mut cols = 0;
            for p in parts {
                let (r, c) = require_rank2("concat", p)?;
                if r != r0 {
                    return Err(NumericsError::shape_mismatch("concat", first.shape(), p.shape()));
                }
                cols += c;
            }
            let mut data = Vec::with_capacity(r0 * cols);
            for i in 0..r0 {
                for p in parts {
                    data.extend_from_slice(p.row(i));
                }
            }
            Tensor::new([r0, cols], data)
        }
        _ => Err(NumericsError::InvalidAxis { axis }),
    }
}

/// Selects `x[i, picks[i]]` for every row, giving a `[rows]` tensor.
pub fn pick<T: Scalar>(x: &Tensor<T>, picks: &[usize]) -> Result<Tensor<T>, NumericsError> {
    let n = x.cols();
    if picks.len() != x.rows() {
        return Err(NumericsError::LengthMismatch {
            op: "pick",
            expected: x.rows(),
            found: picks.len(),
        });
    }
    let idx: Vec<usize> = picks.iter().enumerate().map(|(r, &c)| r * n + c).collect();
    if let Some(&bad) = picks.iter().find(|&&c| c >= n) {
        return Err(NumericsError::IndexOutOfRange { index: bad, len: n });
    }
    gather(x, &idx, &[picks.len()])
}
