use super::{CorrelationPyramid, FieldEstimate, FieldKind};
use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{sample_bilinear_2d, sample_linear_1d, Scalar, Tensor};

fn check_estimate<T: Scalar>(
    pyr: &CorrelationPyramid<T>,
    est: &FieldEstimate<T>,
    kind: FieldKind,
) -> Result<()> {
    if pyr.kind() != kind || est.kind() != kind {
        return Err(Error::dim(format!(
            "{} lookup given a {} pyramid and a {} estimate",
            kind.name(),
            pyr.kind().name(),
            est.kind().name()
        )));
    }
    if (est.height(), est.width()) != pyr.grid() {
        return Err(Error::dim(format!(
            "estimate grid {}x{} does not match pyramid grid {:?}",
            est.height(),
            est.width(),
            pyr.grid()
        )));
    }
    Ok(())
}

/// Samples a `(2r+1)²` window of every flow level around the displaced
/// position `((i + v) / 2ᵏ, (j + u) / 2ᵏ)`. Returns `[H, W, levels·(2r+1)²]`,
/// levels ascending, offsets row-major (vertical offset outer).
pub fn lookup_flow<T: Scalar>(
    pyr: &CorrelationPyramid<T>,
    est: &FieldEstimate<T>,
    radius: usize,
) -> Result<Tensor<T>> {
    check_estimate(pyr, est, FieldKind::Flow)?;
    let (h, w) = pyr.grid();
    let side = 2 * radius + 1;
    let per_level = side * side;
    let channels = pyr.num_levels() * per_level;
    let flow = est.values().data();
    let r = radius as f64;
    let mut out = vec![T::zero(); h * w * channels];
    par::for_each_chunk(&mut out, channels, |p, feats| {
        let (i, j) = (p / w, p % w);
        let u = flow[p];
        let v = flow[h * w + p];
        for (k, level) in pyr.levels().iter().enumerate() {
            let (lh, lw) = (level.dim(2), level.dim(3));
            let plane = &level.data()[p * lh * lw..(p + 1) * lh * lw];
            let inv = T::lit(1.0 / (1u64 << k) as f64);
            let cy = (T::lit(i as f64) + v) * inv;
            let cx = (T::lit(j as f64) + u) * inv;
            let dst = &mut feats[k * per_level..(k + 1) * per_level];
            for a in 0..side {
                let y = cy + T::lit(a as f64 - r);
                for b in 0..side {
                    let x = cx + T::lit(b as f64 - r);
                    dst[a * side + b] = sample_bilinear_2d(plane, lh, lw, y, x);
                }
            }
        }
    });
    Tensor::new([h, w, channels], out)
}

/// Samples `2r+1` positions of every disparity level around `(j - d) / 2ᵏ`.
/// Returns `[H, W, levels·(2r+1)]`, levels ascending, offsets ascending.
pub fn lookup_disparity<T: Scalar>(
    pyr: &CorrelationPyramid<T>,
    est: &FieldEstimate<T>,
    radius: usize,
) -> Result<Tensor<T>> {
    check_estimate(pyr, est, FieldKind::Disparity)?;
    let (h, w) = pyr.grid();
    let side = 2 * radius + 1;
    let channels = pyr.num_levels() * side;
    let disp = est.values().data();
    let r = radius as f64;
    let mut out = vec![T::zero(); h * w * channels];
    par::for_each_chunk(&mut out, channels, |p, feats| {
        let j = p % w;
        let d = disp[p];
        for (k, level) in pyr.levels().iter().enumerate() {
            let lw = level.dim(2);
            let row = &level.data()[p * lw..(p + 1) * lw];
            let c = (T::lit(j as f64) - d) * T::lit(1.0 / (1u64 << k) as f64);
            for b in 0..side {
                feats[k * side + b] = sample_linear_1d(row, c + T::lit(b as f64 - r));
            }
        }
    });
    Tensor::new([h, w, channels], out)
}

/// Dispatches on the pyramid kind.
pub fn lookup<T: Scalar>(
    pyr: &CorrelationPyramid<T>,
    est: &FieldEstimate<T>,
    radius: usize,
) -> Result<Tensor<T>> {
    match pyr.kind() {
        FieldKind::Flow => lookup_flow(pyr, est, radius),
        FieldKind::Disparity => lookup_disparity(pyr, est, radius),
    }
}

/// Reads the best-scoring offset of the level-0 window out of lookup
/// features, as a field relative to the estimate the lookup was taken at.
/// Ties go to the first offset in lookup order.
pub fn decode_lookup_argmax<T: Scalar>(
    feats: &Tensor<T>,
    kind: FieldKind,
    radius: usize,
    scale: usize,
) -> Result<FieldEstimate<T>> {
    let side = 2 * radius + 1;
    let window = match kind {
        FieldKind::Flow => side * side,
        FieldKind::Disparity => side,
    };
    if feats.rank() != 3 || feats.dim(2) < window || !feats.dim(2).is_multiple_of(window) {
        return Err(Error::dim(format!(
            "lookup features {:?} do not hold {} windows of {window}",
            feats.shape(),
            kind.name()
        )));
    }
    let (h, w, c) = (feats.dim(0), feats.dim(1), feats.dim(2));
    let r = radius as f64;
    let mut values = Tensor::zeros([kind.channels(), h, w])?;
    for p in 0..h * w {
        let best = argmax(&feats.data()[p * c..p * c + window]);
        match kind {
            FieldKind::Flow => {
                values.data_mut()[p] = T::lit((best % side) as f64 - r);
                values.data_mut()[h * w + p] = T::lit((best / side) as f64 - r);
            }
            // offset +b moves the sample to column j - d + b, i.e. d decreases
            FieldKind::Disparity => values.data_mut()[p] = T::lit(r - best as f64),
        }
    }
    FieldEstimate::new(kind, values, scale)
}

/// Per-pixel argmax of the raw (level-0) volume, decoded as a field. Ties go
/// to the first position in row-major order.
pub fn volume_argmax<T: Scalar>(pyr: &CorrelationPyramid<T>, scale: usize) -> Result<FieldEstimate<T>> {
    let (h, w) = pyr.grid();
    let level = &pyr.levels()[0];
    let kind = pyr.kind();
    let mut values = Tensor::zeros([kind.channels(), h, w])?;
    match kind {
        FieldKind::Flow => {
            let n = h * w;
            for p in 0..n {
                let best = argmax(&level.data()[p * n..(p + 1) * n]);
                let (i, j) = (p / w, p % w);
                values.data_mut()[p] = T::lit((best % w) as f64 - j as f64);
                values.data_mut()[n + p] = T::lit((best / w) as f64 - i as f64);
            }
        }
        FieldKind::Disparity => {
            for p in 0..h * w {
                let best = argmax(&level.data()[p * w..(p + 1) * w]);
                values.data_mut()[p] = T::lit((p % w) as f64 - best as f64);
            }
        }
    }
    FieldEstimate::new(kind, values, scale)
}

fn argmax<T: Scalar>(xs: &[T]) -> usize {
    let mut best = 0;
    for (k, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = k;
        }
    }
    best
}
