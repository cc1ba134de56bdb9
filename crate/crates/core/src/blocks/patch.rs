use crate::error::{Error, Result};
use crate::params::Params;
use crate::tensor::{Scalar, Tensor};

/// Cuts `img: [3, H, W]` into non-overlapping `p × p` patches and projects
/// each with `patch.weight: [3·p·p, D]`, `patch.bias: [D]`.
///
/// Tokens come out in row-major grid order as `[(H/p)·(W/p), D]`. Within a
/// patch the input vector is ordered channel, then row, then column.
pub fn patch_embed<T: Scalar>(img: &Tensor<T>, p: usize, params: &Params<T>) -> Result<Tensor<T>> {
    if img.rank() != 3 || img.dim(0) != 3 {
        return Err(Error::dim(format!(
            "patch_embed expects [3, H, W], got {:?}",
            img.shape()
        )));
    }
    let (h, w) = (img.dim(1), img.dim(2));
    if p == 0 || h % p != 0 || w % p != 0 {
        return Err(Error::dim(format!(
            "image {h}x{w} not divisible into {p}x{p} patches"
        )));
    }
    let (gh, gw) = (h / p, w / p);
    let k = 3 * p * p;
    let src = img.data();
    let mut patches = Vec::with_capacity(gh * gw * k);
    for gy in 0..gh {
        for gx in 0..gw {
            for c in 0..3 {
                for dy in 0..p {
                    let row = (c * h + gy * p + dy) * w + gx * p;
                    patches.extend_from_slice(&src[row..row + p]);
                }
            }
        }
    }
    let patches = Tensor::new([gh * gw, k], patches)?;
    params.linear(&patches, "patch")
}
