//! Central finite-difference oracle for tape gradients.

use alloc::vec::Vec;

use super::{NumericsError, Tape, Tensor, Var};

/// Central-difference estimate of `d f / d x`, one coordinate at a time.
pub fn numeric_gradient<F>(f: &F, x: &Tensor<f64>, h: f64) -> Result<Tensor<f64>, NumericsError>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var, NumericsError>,
{
    let eval = |point: Tensor<f64>| -> Result<f64, NumericsError> {
        let mut tape = Tape::new();
        let v = tape.var(point);
        let out = f(&mut tape, v)?;
        let y = tape.value(out).item()?;
        if y.is_finite() {
            Ok(y)
        } else {
            Err(NumericsError::NonFinite)
        }
    };
    let mut grad = Vec::with_capacity(x.numel());
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data_mut()[i] += h;
        let mut minus = x.clone();
        minus.data_mut()[i] -= h;
        grad.push((eval(plus)? - eval(minus)?) / (2.0 * h));
    }
    Tensor::new(x.shape().to_vec(), grad)
}

/// Reverse-mode gradient of `f` at `x`.
pub fn analytic_gradient<F>(f: &F, x: &Tensor<f64>) -> Result<Tensor<f64>, NumericsError>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var, NumericsError>,
{
    let mut tape = Tape::new();
    let v = tape.var(x.clone());
    let out = f(&mut tape, v)?;
    if !tape.value(out).all_finite() {
        return Err(NumericsError::NonFinite);
    }
    Ok(tape.backward(out)?.wrt(v))
}

/// `max_i |a_i - n_i| / max(1, |n_i|)`.
pub fn max_relative_error(analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> Result<f64, NumericsError> {
    if analytic.shape() != numeric.shape() {
        return Err(NumericsError::shape_mismatch(
            "max_relative_error",
            analytic.shape(),
            numeric.shape(),
        ));
    }
    Ok(analytic
        .data()
        .iter()
        .zip(numeric.data())
        .map(|(&a, &n)| (a - n).abs() / n.abs().max(1.0))
        .fold(0.0, f64::max))
}

/// Compares [`analytic_gradient`] against [`numeric_gradient`] and returns
/// the worst relative discrepancy.
pub fn finite_difference_check<F>(f: F, x: &Tensor<f64>, h: f64) -> Result<f64, NumericsError>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var, NumericsError>,
{
    let ad = analytic_gradient(&f, x)?;
    let fd = numeric_gradient(&f, x, h)?;
    max_relative_error(&ad, &fd)
}
