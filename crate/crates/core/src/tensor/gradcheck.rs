//! Central finite-difference check of tape gradients.

use crate::error::{contract_err, Result};
use crate::scalar::Scalar;

use super::{Tape, Tensor, Var};

fn eval<T: Scalar, F>(f: &F, x: Tensor<T>) -> Result<T>
where
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let v = tape.constant(x);
    let out = f(&mut tape, v)?;
    let val = tape.value(out);
    if val.numel() != 1 {
        return Err(contract_err!("gradcheck function must return a scalar"));
    }
    Ok(val.data()[0])
}

/// Analytic gradient of `f` at `input` and the scalar value.
pub fn analytic_grad<T: Scalar, F>(f: &F, input: &Tensor<T>) -> Result<(T, Tensor<T>)>
where
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let x = tape.param(input.clone());
    let out = f(&mut tape, x)?;
    let grads = tape.backward(out)?;
    let g = grads.get(x).cloned().unwrap_or(Tensor::zeros(input.dims())?);
    Ok((tape.value(out).data()[0], g))
}

/// Max over all coordinates of `|analytic - numeric| / max(1, |analytic|)`,
/// with the numeric derivative from central differences of step `eps`.
pub fn gradcheck<T: Scalar, F>(f: F, input: &Tensor<T>, eps: T) -> Result<T>
where
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let coords: Vec<usize> = (0..input.numel()).collect();
    gradcheck_coords(f, input, eps, &coords)
}

/// [`gradcheck`] restricted to the listed flat coordinates.
pub fn gradcheck_coords<T: Scalar, F>(f: F, input: &Tensor<T>, eps: T, coords: &[usize]) -> Result<T>
where
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    if eps <= T::zero() {
        return Err(contract_err!("gradcheck step must be positive"));
    }
    let (_, analytic) = analytic_grad(&f, input)?;
    let two_eps = eps + eps;
    let mut worst = T::zero();
    for &i in coords {
        let mut plus = input.data().to_vec();
        plus[i] += eps;
        let mut minus = input.data().to_vec();
        minus[i] -= eps;
        let fp = eval(&f, Tensor::new(input.dims().to_vec(), plus)?)?;
        let fm = eval(&f, Tensor::new(input.dims().to_vec(), minus)?)?;
        let numeric = (fp - fm) / two_eps;
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / a.abs().max(T::one());
        worst = worst.max(err);
    }
    Ok(worst)
}
