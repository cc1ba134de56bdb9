use super::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::par;

/// 2-D cross-correlation with zero padding and per-channel bias.
///
/// `input` is `[Cin, H, W]`, `weight` is `[Cout, Cin, kh, kw]` with odd kernel
/// extents. Output extents are `floor((H + 2·padding − kh) / stride) + 1`.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    conv2d_grouped(input, weight, bias, stride, padding, 1)
}

/// Grouped convolution; `groups == Cin == Cout` gives a depthwise convolution.
/// `weight` is `[Cout, Cin / groups, kh, kw]`.
pub fn conv2d_grouped<T: Scalar>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    padding: usize,
    groups: usize,
) -> Result<Tensor<T>> {
    let bad = |why: &str| {
        Error::dim(format!(
            "conv2d: {why} (input {:?}, weight {:?}, bias {:?}, stride {stride}, padding {padding}, groups {groups})",
            input.shape(),
            weight.shape(),
            bias.shape()
        ))
    };
    if input.rank() != 3 || weight.rank() != 4 {
        return Err(bad("expected [C,H,W] input and [Cout,Cin,kh,kw] weight"));
    }
    let (cin, h, w) = (input.dim(0), input.dim(1), input.dim(2));
    let (cout, cin_g, kh, kw) = (weight.dim(0), weight.dim(1), weight.dim(2), weight.dim(3));
    if stride == 0 || groups == 0 {
        return Err(bad("stride and groups must be positive"));
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(bad("kernel extents must be odd"));
    }
    if cin % groups != 0 || cout % groups != 0 || cin / groups != cin_g {
        return Err(bad("channel counts incompatible with groups"));
    }
    if bias.shape() != [cout] {
        return Err(bad("bias must be [Cout]"));
    }
    let (hp, wp) = (h + 2 * padding, w + 2 * padding);
    if hp < kh || wp < kw {
        return Err(bad("output extent would be < 1"));
    }
    let ho = (hp - kh) / stride + 1;
    let wo = (wp - kw) / stride + 1;
    let cout_g = cout / groups;

    let x = input.data();
    let wt = weight.data();
    let b = bias.data();
    let mut out = vec![T::zero(); cout * ho * wo];
    par::for_each_chunk(&mut out, ho * wo, |co, plane| {
        plane.fill(b[co]);
        let g = co / cout_g;
        for ci_local in 0..cin_g {
            let ci = g * cin_g + ci_local;
            let src = &x[ci * h * w..(ci + 1) * h * w];
            for ky in 0..kh {
                for kx in 0..kw {
                    let wv = wt[((co * cin_g + ci_local) * kh + ky) * kw + kx];
                    if wv == T::zero() {
                        continue;
                    }
                    accumulate_tap(plane, src, (h, w), (ho, wo), (ky, kx), stride, padding, wv);
                }
            }
        }
    });
    Ok(Tensor::from_parts(vec![cout, ho, wo], out))
}

/// Adds `wv · src` shifted by one kernel tap into the output plane.
#[allow(clippy::too_many_arguments)]
#[inline]
fn accumulate_tap<T: Scalar>(
    plane: &mut [T],
    src: &[T],
    (h, w): (usize, usize),
    (ho, wo): (usize, usize),
    (ky, kx): (usize, usize),
    stride: usize,
    padding: usize,
    wv: T,
) {
    // valid output columns satisfy 0 <= x*stride + kx - padding < w
    let x_lo = padding.saturating_sub(kx).div_ceil(stride);
    let x_hi = if w + padding > kx {
        ((w + padding - kx - 1) / stride + 1).min(wo)
    } else {
        0
    };
    if x_lo >= x_hi {
        return;
    }
    for y in 0..ho {
        let iy = y * stride + ky;
        if iy < padding || iy - padding >= h {
            continue;
        }
        let row = &src[(iy - padding) * w..(iy - padding + 1) * w];
        let dst = &mut plane[y * wo..(y + 1) * wo];
        if stride == 1 {
            let ix0 = x_lo + kx - padding;
            let n = x_hi - x_lo;
            for (o, &v) in dst[x_lo..x_hi].iter_mut().zip(&row[ix0..ix0 + n]) {
                *o += wv * v;
            }
        } else {
            for (x, o) in dst.iter_mut().enumerate().take(x_hi).skip(x_lo) {
                *o += wv * row[x * stride + kx - padding];
            }
        }
    }
}
