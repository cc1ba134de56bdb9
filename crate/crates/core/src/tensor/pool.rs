use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Average-pools the last `axes` axes by a factor of two (floor on odd
/// extents; the trailing row/column is dropped).
pub fn avg_pool<T: Scalar>(x: &Tensor<T>, axes: usize) -> Result<Tensor<T>> {
    if axes == 0 || axes > x.rank() || axes > 2 {
        return Err(Error::dim(format!(
            "avg_pool supports 1 or 2 trailing axes, got {axes} for {:?}",
            x.shape()
        )));
    }
    let r = x.rank();
    let mut shape = x.shape().to_vec();
    for e in &mut shape[r - axes..] {
        if *e < 2 {
            return Err(Error::dim(format!(
                "avg_pool would reduce an extent of {:?} to zero",
                x.shape()
            )));
        }
        *e /= 2;
    }
    let src = x.data();
    let data = if axes == 1 {
        let w = x.dim(r - 1);
        let wo = w / 2;
        let half = T::lit(0.5);
        src.chunks(w)
            .flat_map(|row| (0..wo).map(move |k| (row[2 * k] + row[2 * k + 1]) * half))
            .collect()
    } else {
        let (h, w) = (x.dim(r - 2), x.dim(r - 1));
        let (ho, wo) = (h / 2, w / 2);
        let quarter = T::lit(0.25);
        let mut out = Vec::with_capacity(x.len() / (h * w) * ho * wo);
        for plane in src.chunks(h * w) {
            for i in 0..ho {
                let r0 = &plane[2 * i * w..2 * i * w + w];
                let r1 = &plane[(2 * i + 1) * w..(2 * i + 1) * w + w];
                for j in 0..wo {
                    out.push((r0[2 * j] + r0[2 * j + 1] + r1[2 * j] + r1[2 * j + 1]) * quarter);
                }
            }
        }
        out
    };
    Ok(Tensor::from_parts(shape, data))
}

/// Replicates each element of the last two axes into a `factor × factor` block.
pub fn upsample_nearest<T: Scalar>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if x.rank() < 2 || factor == 0 {
        return Err(Error::dim(format!(
            "upsample_nearest needs rank >= 2 and factor >= 1, got {:?} / {factor}",
            x.shape()
        )));
    }
    let r = x.rank();
    let (h, w) = (x.dim(r - 2), x.dim(r - 1));
    let mut shape = x.shape().to_vec();
    shape[r - 2] *= factor;
    shape[r - 1] *= factor;
    let mut out = Vec::with_capacity(x.len() * factor * factor);
    for plane in x.data().chunks(h * w) {
        for i in 0..h * factor {
            let row = &plane[(i / factor) * w..(i / factor + 1) * w];
            for j in 0..w * factor {
                out.push(row[j / factor]);
            }
        }
    }
    Ok(Tensor::from_parts(shape, out))
}
