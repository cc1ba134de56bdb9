use super::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::par;

/// Matrix product of `[M, K]` and `[K, P]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0) {
        return Err(Error::dim(format!(
            "matmul: cannot multiply {:?} by {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, k, p) = (a.dim(0), a.dim(1), b.dim(1));
    let mut out = vec![T::zero(); m * p];
    matmul_into(a.data(), b.data(), &mut out, k, p);
    Ok(Tensor::from_parts(vec![m, p], out))
}

/// `out[M, P] = a[M, K] · b[K, P]` over raw row-major slices.
pub(crate) fn matmul_into<T: Scalar>(a: &[T], b: &[T], out: &mut [T], k: usize, p: usize) {
    par::for_each_chunk(out, p, |i, row| {
        let a_row = &a[i * k..(i + 1) * k];
        for (kk, &av) in a_row.iter().enumerate() {
            if av == T::zero() {
                continue;
            }
            let b_row = &b[kk * p..(kk + 1) * p];
            for (o, &bv) in row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    });
}

/// Affine map over the last axis: `x[..., in] · weight[in, out] + bias[out]`.
pub fn linear<T: Scalar>(x: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let d_in = *x.shape().last().unwrap();
    if weight.rank() != 2 || weight.dim(0) != d_in || bias.shape() != [weight.dim(1)] {
        return Err(Error::dim(format!(
            "linear: input {:?}, weight {:?}, bias {:?}",
            x.shape(),
            weight.shape(),
            bias.shape()
        )));
    }
    let d_out = weight.dim(1);
    let rows = x.len() / d_in;
    let mut out: Vec<T> = bias
        .data()
        .iter()
        .copied()
        .cycle()
        .take(rows * d_out)
        .collect();
    matmul_into(x.data(), weight.data(), &mut out, d_in, d_out);
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = d_out;
    Ok(Tensor::from_parts(shape, out))
}
