use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[inline]
pub(crate) fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[inline]
pub(crate) fn silu_scalar<T: Scalar>(x: T) -> T {
    x * sigmoid_scalar(x)
}

#[inline]
pub(crate) fn softplus_scalar<T: Scalar>(x: T) -> T {
    // log(1 + e^x) = max(x, 0) + log1p(e^{-|x|})
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

pub fn silu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(silu_scalar)
}

pub fn tanh<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.tanh())
}

pub fn softplus<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(softplus_scalar)
}

/// Numerically stable softmax along `axis`.
pub fn softmax<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return Err(Error::dim(format!(
            "softmax axis {axis} out of range for {:?}",
            x.shape()
        )));
    }
    let n = x.dim(axis);
    let inner: usize = x.shape()[axis + 1..].iter().product();
    let outer = x.len() / (n * inner);
    let mut out = x.data().to_vec();
    for o in 0..outer {
        for i in 0..inner {
            let at = |k: usize| o * n * inner + k * inner + i;
            let m = (0..n).fold(T::neg_infinity(), |m, k| m.max(out[at(k)]));
            let mut s = T::zero();
            for k in 0..n {
                let e = (out[at(k)] - m).exp();
                out[at(k)] = e;
                s += e;
            }
            for k in 0..n {
                out[at(k)] /= s;
            }
        }
    }
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}
