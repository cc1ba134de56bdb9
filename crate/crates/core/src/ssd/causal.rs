use super::{ScanInputs, ScanOutput};
use crate::error::Result;
use crate::par;
use crate::tensor::{matmul, Scalar, Tensor};

/// Recurrent form: `h_t = A_t·h_{t-1} + B_t ⊗ x_t`, `y_t = C_tᵀ h_t`, `h_0 = 0`.
pub fn causal_ssd_linear<T: Scalar>(s: &ScanInputs<T>) -> Result<ScanOutput<T>> {
    let (l, d, n) = (s.len(), s.width(), s.state_dim());
    let (x, a, b, c) = (s.x().data(), s.a().data(), s.b().data(), s.c().data());
    let mut h = vec![T::zero(); n * d];
    let mut y = vec![T::zero(); l * d];
    for t in 0..l {
        let xt = &x[t * d..(t + 1) * d];
        let bt = &b[t * n..(t + 1) * n];
        let ct = &c[t * n..(t + 1) * n];
        let yt = &mut y[t * d..(t + 1) * d];
        for (k, hrow) in h.chunks_mut(d).enumerate() {
            for (hv, &xv) in hrow.iter_mut().zip(xt) {
                *hv = a[t] * *hv + bt[k] * xv;
            }
            for (yv, &hv) in yt.iter_mut().zip(hrow.iter()) {
                *yv += ct[k] * hv;
            }
        }
    }
    Ok(ScanOutput {
        y: Tensor::from_parts(vec![l, d], y),
        h: Tensor::from_parts(vec![n, d], h),
    })
}

#[inline]
fn flush<T: Scalar>(v: T) -> T {
    if v.abs() < T::min_positive_value() {
        T::zero()
    } else {
        v
    }
}

/// Materializes the `[L, L]` causal transfer matrix
/// `F_ij = C_iᵀB_j · Π_{k=j+1..i} A_k` for `i ≥ j`, zero above the diagonal.
/// Decay products that fall below the smallest normal value are flushed to
/// zero, which keeps long sequences off the slow subnormal path.
pub fn causal_transfer_matrix<T: Scalar>(s: &ScanInputs<T>) -> Result<Tensor<T>> {
    let (l, n) = (s.len(), s.state_dim());
    let (a, b, c) = (s.a().data(), s.b().data(), s.c().data());
    let mut f = vec![T::zero(); l * l];
    par::for_each_chunk(&mut f, l, |i, row| {
        let ci = &c[i * n..(i + 1) * n];
        let mut decay = T::one();
        for j in (0..=i).rev() {
            let bj = &b[j * n..(j + 1) * n];
            let cb: T = ci.iter().zip(bj).map(|(&p, &q)| p * q).sum();
            row[j] = cb * decay;
            decay = flush(decay * a[j]);
        }
    });
    Ok(Tensor::from_parts(vec![l, l], f))
}

/// Quadratic (masked matrix) form `Y = F X`; the final state is assembled from
/// the same decay products so it matches the recurrent form.
pub fn causal_ssd_quadratic<T: Scalar>(s: &ScanInputs<T>) -> Result<ScanOutput<T>> {
    let (l, d, n) = (s.len(), s.width(), s.state_dim());
    let f = causal_transfer_matrix(s)?;
    let y = matmul(&f, s.x())?;

    let (x, a, b) = (s.x().data(), s.a().data(), s.b().data());
    let mut h = vec![T::zero(); n * d];
    let mut decay = T::one();
    for j in (0..l).rev() {
        let xj = &x[j * d..(j + 1) * d];
        for (k, hrow) in h.chunks_mut(d).enumerate() {
            let w = decay * b[j * n + k];
            for (hv, &xv) in hrow.iter_mut().zip(xj) {
                *hv += w * xv;
            }
        }
        decay = flush(decay * a[j]);
    }
    Ok(ScanOutput {
        y,
        h: Tensor::from_parts(vec![n, d], h),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ssd::ScanInputs;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn random_inputs(l: usize, d: usize, n: usize, seed: u64) -> ScanInputs<f64> {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let mut r = |shape: Vec<usize>, lo: f64, hi: f64| {
            Tensor::from_fn(shape, |_| rng.random_range(lo..hi)).unwrap()
        };
        let x = r(vec![l, d], -1.0, 1.0);
        let a = r(vec![l], 0.5, 1.0);
        let b = r(vec![l, n], -1.0, 1.0);
        let c = r(vec![l, n], -1.0, 1.0);
        ScanInputs::new(x, a, b, c).unwrap()
    }

    #[test]
    fn single_token_ignores_transition() {
        let x = Tensor::from_f64([1, 2], &[2.0, -1.0]).unwrap();
        let b = Tensor::from_f64([1, 2], &[0.5, 3.0]).unwrap();
        let c = Tensor::from_f64([1, 2], &[1.0, 2.0]).unwrap();
        for a in [0.1, 7.0] {
            let s = ScanInputs::new(x.clone(), Tensor::vector(vec![a]).unwrap(), b.clone(), c.clone())
                .unwrap();
            let out = causal_ssd_linear(&s).unwrap();
            // C·B = 0.5 + 6 = 6.5
            assert_eq!(out.y.data(), &[13.0, -6.5]);
        }
    }

    #[test]
    fn unit_transition_is_prefix_sum() {
        let mut s = random_inputs(6, 3, 2, 1).into_parts();
        s.1 = Tensor::ones([6]).unwrap();
        let s = ScanInputs::new(s.0, s.1, s.2, s.3).unwrap();
        let out = causal_ssd_linear(&s).unwrap();
        let mut h = vec![0.0; 6];
        for t in 0..6 {
            for k in 0..2 {
                for dd in 0..3 {
                    h[k * 3 + dd] += s.b().get(&[t, k]) * s.x().get(&[t, dd]);
                }
            }
        }
        let ht = Tensor::new([2, 3], h).unwrap();
        assert!(out.h.max_abs_diff(&ht).unwrap() < 1e-12);
    }

    #[test]
    fn transfer_matrix_entries() {
        let s = random_inputs(2, 1, 3, 2).into_parts();
        let a = Tensor::from_f64([2], &[0.9, 0.5]).unwrap();
        let s = ScanInputs::new(s.0, a, s.2, s.3).unwrap();
        let f = causal_transfer_matrix(&s).unwrap();
        let cb = |i: usize, j: usize| -> f64 {
            (0..3).map(|k| s.c().get(&[i, k]) * s.b().get(&[j, k])).sum()
        };
        assert!((f.get(&[1, 0]) - 0.5 * cb(1, 0)).abs() < 1e-15);
        assert!((f.get(&[0, 0]) - cb(0, 0)).abs() < 1e-15);
        assert!((f.get(&[1, 1]) - cb(1, 1)).abs() < 1e-15);
        assert_eq!(f.get(&[0, 1]), 0.0);
    }

    #[test]
    fn linear_and_quadratic_agree() {
        let s = random_inputs(16, 4, 3, 3);
        let lin = causal_ssd_linear(&s).unwrap();
        let quad = causal_ssd_quadratic(&s).unwrap();
        assert!(lin.y.max_abs_diff(&quad.y).unwrap() < 1e-10);
        assert!(lin.h.max_abs_diff(&quad.h).unwrap() < 1e-10);
    }

    #[test]
    fn rejects_nonpositive_transition() {
        let (x, _, b, c) = random_inputs(3, 2, 2, 4).into_parts();
        let a = Tensor::from_f64([3], &[1.0, 0.0, 1.0]).unwrap();
        assert!(matches!(
            ScanInputs::new(x, a, b, c),
            Err(crate::Error::Domain(_))
        ));
    }
}
