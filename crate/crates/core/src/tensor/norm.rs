use super::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::par;

/// Normalizes each vector along the last axis to zero mean and unit variance,
/// then applies `gamma · x̂ + beta`.
pub fn layer_norm<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    let d = *x.shape().last().unwrap();
    if gamma.shape() != [d] || beta.shape() != [d] {
        return Err(Error::dim(format!(
            "layer_norm: input {:?} with gamma {:?}, beta {:?}",
            x.shape(),
            gamma.shape(),
            beta.shape()
        )));
    }
    if !(eps > T::zero()) {
        return Err(Error::domain("layer_norm: eps must be positive"));
    }
    let mut out = x.data().to_vec();
    let (g, b) = (gamma.data(), beta.data());
    par::for_each_chunk(&mut out, d, |_, row| {
        normalize(row, eps);
        for ((v, &gv), &bv) in row.iter_mut().zip(g).zip(b) {
            *v = *v * gv + bv;
        }
    });
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

/// Group normalization of a `[C, H, W]` map: statistics over each group of
/// `C / groups` channels and all pixels, then a per-channel affine.
pub fn group_norm<T: Scalar>(
    x: &Tensor<T>,
    groups: usize,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    if x.rank() != 3 || groups == 0 || !x.dim(0).is_multiple_of(groups) {
        return Err(Error::dim(format!(
            "group_norm: {groups} groups do not divide input {:?}",
            x.shape()
        )));
    }
    let c = x.dim(0);
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::dim(format!(
            "group_norm: gamma {:?} / beta {:?} for {c} channels",
            gamma.shape(),
            beta.shape()
        )));
    }
    if !(eps > T::zero()) {
        return Err(Error::domain("group_norm: eps must be positive"));
    }
    let plane = x.dim(1) * x.dim(2);
    let per_group = c / groups * plane;
    let mut out = x.data().to_vec();
    let (g, b) = (gamma.data(), beta.data());
    par::for_each_chunk(&mut out, per_group, |gi, chunk| {
        normalize(chunk, eps);
        for (k, ch) in chunk.chunks_mut(plane).enumerate() {
            let ci = gi * (c / groups) + k;
            for v in ch.iter_mut() {
                *v = *v * g[ci] + b[ci];
            }
        }
    });
    Ok(Tensor::from_parts(x.shape().to_vec(), out))
}

fn normalize<T: Scalar>(v: &mut [T], eps: T) {
    let n = T::lit(v.len() as f64);
    let mean = v.iter().copied().sum::<T>() / n;
    let var = v.iter().map(|&x| (x - mean) * (x - mean)).sum::<T>() / n;
    let inv = (var + eps).sqrt().recip();
    for x in v.iter_mut() {
        *x = (*x - mean) * inv;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn unit(d: usize) -> (Tensor<f64>, Tensor<f64>) {
        (Tensor::ones([d]).unwrap(), Tensor::zeros([d]).unwrap())
    }

    #[test]
    fn constant_vector_maps_to_zero() {
        let x = Tensor::<f64>::full([1, 5], 3.5).unwrap();
        let (g, b) = unit(5);
        let y = layer_norm(&x, &g, &b, 1e-5).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_point_symmetry() {
        let x = Tensor::<f64>::from_f64([2], &[1.0, 3.0]).unwrap();
        let (g, b) = unit(2);
        let y = layer_norm(&x, &g, &b, 1e-12).unwrap();
        assert!((y.data()[0] + 1.0).abs() < 1e-9 && (y.data()[1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rows_are_standardized() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(2);
        let x = Tensor::<f64>::from_fn([4, 16], |_| rng.random_range(-3.0..5.0)).unwrap();
        let (g, b) = unit(16);
        let y = layer_norm(&x, &g, &b, 1e-5).unwrap();
        for row in y.data().chunks(16) {
            let mean = row.iter().sum::<f64>() / 16.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-7);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn rejects_nonpositive_eps() {
        let x = Tensor::<f64>::ones([3]).unwrap();
        let (g, b) = unit(3);
        assert!(matches!(layer_norm(&x, &g, &b, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn group_norm_per_group_stats() {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(4);
        let x = Tensor::<f64>::from_fn([4, 3, 3], |_| rng.random_range(-1.0..1.0)).unwrap();
        let (g, b) = unit(4);
        let y = group_norm(&x, 2, &g, &b, 1e-9).unwrap();
        for grp in y.data().chunks(18) {
            let mean = grp.iter().sum::<f64>() / 18.0;
            assert!(mean.abs() < 1e-12);
        }
        assert!(group_norm(&x, 3, &g, &b, 1e-5).is_err());
    }
}
