use super::{ScanInputs, ScanOutput};
use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{concat, matmul, Scalar, Tensor};

fn inverse_transitions<T: Scalar>(s: &ScanInputs<T>) -> Vec<T> {
    s.a().data().iter().map(|&a| a.recip()).collect()
}

/// Expands each token into its state contribution: `Z[j] = B_j ⊗ x_j`,
/// laid out `[L, N, D]`.
fn expand_tokens<T: Scalar>(s: &ScanInputs<T>) -> Vec<T> {
    let (l, d, n) = (s.len(), s.width(), s.state_dim());
    let (x, b) = (s.x().data(), s.b().data());
    let mut z = vec![T::zero(); l * n * d];
    par::for_each_chunk(&mut z, n * d, |j, zj| {
        let xj = &x[j * d..(j + 1) * d];
        for (k, zrow) in zj.chunks_mut(d).enumerate() {
            let bk = b[j * n + k];
            for (zv, &xv) in zrow.iter_mut().zip(xj) {
                *zv = bk * xv;
            }
        }
    });
    z
}

/// Shared state `H[k] = Σ_j m_j·B_jk·x_j`, `[N, D]`, accumulated in ascending
/// token order without materializing the `[L, N, D]` contributions.
fn shared_state<T: Scalar>(s: &ScanInputs<T>, m: &[T]) -> Vec<T> {
    let (d, n) = (s.width(), s.state_dim());
    let (x, b) = (s.x().data(), s.b().data());
    let mut h = vec![T::zero(); n * d];
    par::for_each_chunk(&mut h, d, |k, hrow| {
        for (j, &mj) in m.iter().enumerate() {
            let w = mj * b[j * n + k];
            for (hv, &xv) in hrow.iter_mut().zip(&x[j * d..(j + 1) * d]) {
                *hv += w * xv;
            }
        }
    });
    h
}

/// Non-causal scan: all tokens read the shared state `H = Σ_j (1/A_j) Z_j`.
///
/// Evaluated as three contractions:
///
/// ```text
///   Z = contract(LD, LN -> LND)(X, B)
///   H = contract(L, LND -> ND)(m, Z)      m_j = 1 / A_j
///   Y = contract(LN, ND -> LD)(C, H)
/// ```
///
/// With `include_diag_bias` each token additionally reads its own
/// contribution once more, `Y_i = C_iᵀ(H + m_i Z_i)`, which is exactly the sum
/// of a forward and a backward prefix scan.
pub fn ncssd_forward<T: Scalar>(s: &ScanInputs<T>, include_diag_bias: bool) -> Result<ScanOutput<T>> {
    let (d, n) = (s.width(), s.state_dim());
    let m = inverse_transitions(s);
    let h = Tensor::from_parts(vec![n, d], shared_state(s, &m));
    let mut y = matmul(s.c(), &h)?;
    if include_diag_bias {
        let (x, b, c) = (s.x().data(), s.b().data(), s.c().data());
        par::for_each_chunk(y.data_mut(), d, |i, yi| {
            let cb: T = c[i * n..(i + 1) * n].iter().zip(&b[i * n..(i + 1) * n]).map(|(&p, &q)| p * q).sum();
            let w = m[i] * cb;
            for (yv, &xv) in yi.iter_mut().zip(&x[i * d..(i + 1) * d]) {
                *yv += w * xv;
            }
        });
    }
    Ok(ScanOutput { y, h })
}

/// Quadratic form of the non-causal kernel: `Y = F X` with
/// `F_ij = (1/A_j)·C_iᵀB_j` for every pair (no mask), plus `(1/A_i)·C_iᵀB_i`
/// on the diagonal when `include_diag_bias` is set.
pub fn ncssd_quadratic<T: Scalar>(s: &ScanInputs<T>, include_diag_bias: bool) -> Result<ScanOutput<T>> {
    let (l, d, n) = (s.len(), s.width(), s.state_dim());
    let m = inverse_transitions(s);
    let (b, c) = (s.b().data(), s.c().data());
    let mut f = vec![T::zero(); l * l];
    par::for_each_chunk(&mut f, l, |i, row| {
        let ci = &c[i * n..(i + 1) * n];
        for (j, fv) in row.iter_mut().enumerate() {
            let bj = &b[j * n..(j + 1) * n];
            let cb: T = ci.iter().zip(bj).map(|(&p, &q)| p * q).sum();
            *fv = m[j] * cb;
        }
        if include_diag_bias {
            row[i] = row[i] + row[i];
        }
    });
    let y = matmul(&Tensor::from_parts(vec![l, l], f), s.x())?;
    let h = Tensor::from_parts(vec![n, d], shared_state(s, &m));
    Ok(ScanOutput { y, h })
}

/// Evaluates both sides of the bidirectional-scan identity
///
/// ```text
///   Σ_{j≤i} m_j Z_j + Σ_{j≥i} m_j Z_j  =  Σ_j m_j Z_j + m_i Z_i
/// ```
///
/// and returns the largest absolute discrepancy over all tokens and entries.
pub fn bidirectional_identity_check<T: Scalar>(s: &ScanInputs<T>) -> T {
    let (l, d, n) = (s.len(), s.width(), s.state_dim());
    let nd = n * d;
    let m = inverse_transitions(s);
    let z = expand_tokens(s);
    let term = |j: usize, e: usize| m[j] * z[j * nd + e];

    // backward prefix: suffix[i] = Σ_{j ≥ i} m_j Z_j
    let mut suffix = vec![T::zero(); l * nd];
    for i in (0..l).rev() {
        for e in 0..nd {
            let next = if i + 1 < l { suffix[(i + 1) * nd + e] } else { T::zero() };
            suffix[i * nd + e] = next + term(i, e);
        }
    }
    let mut total = vec![T::zero(); nd];
    for j in 0..l {
        for (e, t) in total.iter_mut().enumerate() {
            *t += term(j, e);
        }
    }
    let mut forward = vec![T::zero(); nd];
    let mut worst = T::zero();
    for i in 0..l {
        for e in 0..nd {
            forward[e] += term(i, e);
            let lhs = forward[e] + suffix[i * nd + e];
            let rhs = total[e] + term(i, e);
            worst = worst.max((lhs - rhs).abs());
        }
    }
    worst
}

/// Gradients of `ncssd_forward` (diagonal bias off) with respect to its inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct NcssdGrads<T> {
    pub dx: Tensor<T>,
    pub da: Tensor<T>,
    pub db: Tensor<T>,
    pub dc: Tensor<T>,
}

/// Backward pass of the non-causal kernel given the output cotangent `dy`.
///
/// With `m_j = 1/A_j`, `H = Σ_j m_j B_j ⊗ x_j` and `Y_i = C_iᵀ H`:
///
/// ```text
///   dC_i = H · dY_i
///   dH   = Σ_i C_i ⊗ dY_i
///   dB_j = m_j · dH · x_j
///   dx_j = m_j · dHᵀ · B_j
///   dA_j = −(1/A_j²) · ⟨B_j ⊗ x_j, dH⟩
/// ```
pub fn ncssd_backward<T: Scalar>(s: &ScanInputs<T>, dy: &Tensor<T>) -> Result<NcssdGrads<T>> {
    let (l, d, n) = (s.len(), s.width(), s.state_dim());
    if dy.shape() != [l, d] {
        return Err(Error::dim(format!(
            "ncssd_backward: dY {:?} does not match output [{l}, {d}]",
            dy.shape()
        )));
    }
    let fwd = ncssd_forward(s, false)?;
    let h = &fwd.h;

    // dC = dY · Hᵀ   ([L,D]·[D,N])
    let dc = matmul(dy, &h.t()?)?;
    // dH = Cᵀ · dY   ([N,L]·[L,D])
    let dh = matmul(&s.c().t()?, dy)?;

    let (x, a, b) = (s.x().data(), s.a().data(), s.b().data());
    let dhd = dh.data();
    let mut dx = vec![T::zero(); l * d];
    let mut db = vec![T::zero(); l * n];
    let mut da = vec![T::zero(); l];
    for j in 0..l {
        let mj = a[j].recip();
        let xj = &x[j * d..(j + 1) * d];
        let bj = &b[j * n..(j + 1) * n];
        let dxj = &mut dx[j * d..(j + 1) * d];
        let mut inner = T::zero();
        for k in 0..n {
            let dhk = &dhd[k * d..(k + 1) * d];
            let proj: T = dhk.iter().zip(xj).map(|(&g, &v)| g * v).sum();
            db[j * n + k] = mj * proj;
            inner += bj[k] * proj;
            for (o, &g) in dxj.iter_mut().zip(dhk) {
                *o += mj * bj[k] * g;
            }
        }
        da[j] = -(mj * mj) * inner;
    }
    Ok(NcssdGrads {
        dx: Tensor::from_parts(vec![l, d], dx),
        da: Tensor::from_parts(vec![l], da),
        db: Tensor::from_parts(vec![l, n], db),
        dc,
    })
}

/// Runs an independent non-causal scan per head on consecutive column slices
/// of `x: [L, heads·Dh]` and concatenates the results.
///
/// `params[h]` holds the `(a [L], b [L,N], c [L,N])` of head `h`.
pub fn multihead_ncssd<T: Scalar>(
    x: &Tensor<T>,
    params: &[(Tensor<T>, Tensor<T>, Tensor<T>)],
    include_diag_bias: bool,
) -> Result<Tensor<T>> {
    if x.rank() != 2 {
        return Err(Error::dim(format!(
            "multihead_ncssd: x must be [L, D], got {:?}",
            x.shape()
        )));
    }
    let heads = params.len();
    if heads == 0 || !x.dim(1).is_multiple_of(heads) {
        return Err(Error::dim(format!(
            "multihead_ncssd: width {} not divisible into {heads} heads",
            x.dim(1)
        )));
    }
    let dh = x.dim(1) / heads;
    let slices = x.split(1, &vec![dh; heads])?;
    let outs: Vec<Result<Tensor<T>>> = par::map_indices(heads, |hd| {
        let (a, b, c) = &params[hd];
        let s = ScanInputs::new(slices[hd].clone(), a.clone(), b.clone(), c.clone())?;
        Ok(ncssd_forward(&s, include_diag_bias)?.y)
    });
    let outs = outs.into_iter().collect::<Result<Vec<_>>>()?;
    concat(&outs.iter().collect::<Vec<_>>(), 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn random_inputs(l: usize, d: usize, n: usize, seed: u64) -> ScanInputs<f64> {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let mut r = |shape: Vec<usize>, lo: f64, hi: f64| {
            Tensor::from_fn(shape, |_| rng.random_range(lo..hi)).unwrap()
        };
        let x = r(vec![l, d], -1.0, 1.0);
        let a = r(vec![l], 0.25, 4.0);
        let b = r(vec![l, n], -1.0, 1.0);
        let c = r(vec![l, n], -1.0, 1.0);
        ScanInputs::new(x, a, b, c).unwrap()
    }

    // Y_i = Σ_j (1/A_j)(C_i·B_j) x_j, straight from the definition
    fn double_loop(s: &ScanInputs<f64>, bias: bool) -> Tensor<f64> {
        let (l, d, n) = (s.len(), s.width(), s.state_dim());
        let mut y = Tensor::zeros([l, d]).unwrap();
        for i in 0..l {
            for j in 0..l {
                let cb: f64 = (0..n).map(|k| s.c().get(&[i, k]) * s.b().get(&[j, k])).sum();
                let mut w = cb / s.a().get(&[j]);
                if bias && i == j {
                    w *= 2.0;
                }
                for dd in 0..d {
                    let v = y.get(&[i, dd]) + w * s.x().get(&[j, dd]);
                    y.set(&[i, dd], v);
                }
            }
        }
        y
    }

    #[test]
    fn single_token() {
        let s = ScanInputs::new(
            Tensor::<f64>::from_f64([1, 1], &[3.0]).unwrap(),
            Tensor::from_f64([1], &[2.0]).unwrap(),
            Tensor::from_f64([1, 1], &[5.0]).unwrap(),
            Tensor::from_f64([1, 1], &[7.0]).unwrap(),
        )
        .unwrap();
        let y = ncssd_forward(&s, false).unwrap().y;
        assert_eq!(y.data(), &[0.5 * 7.0 * 5.0 * 3.0]);
    }

    #[test]
    fn shared_state_gives_identical_rows() {
        let (l, d, n) = (5, 3, 4);
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(8);
        let x = Tensor::from_fn([l, d], |_| rng.random_range(-1.0..1.0)).unwrap();
        let s = ScanInputs::new(
            x.clone(),
            Tensor::ones([l]).unwrap(),
            Tensor::ones([l, n]).unwrap(),
            Tensor::ones([l, n]).unwrap(),
        )
        .unwrap();
        let y = ncssd_forward(&s, false).unwrap().y;
        for dd in 0..d {
            let col: f64 = (0..l).map(|j| x.get(&[j, dd])).sum();
            for i in 0..l {
                assert!((y.get(&[i, dd]) - n as f64 * col).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn matches_double_loop_with_and_without_bias() {
        for seed in 0..5 {
            let s = random_inputs(32, 5, 4, seed);
            for bias in [false, true] {
                let y = ncssd_forward(&s, bias).unwrap().y;
                assert!(y.max_abs_diff(&double_loop(&s, bias)).unwrap() < 1e-10);
                let q = ncssd_quadratic(&s, bias).unwrap().y;
                assert!(q.max_abs_diff(&y).unwrap() < 1e-10);
            }
        }
    }

    #[test]
    fn bias_difference_is_diagonal_term() {
        let s = random_inputs(9, 3, 2, 77);
        let off = ncssd_forward(&s, false).unwrap().y;
        let on = ncssd_forward(&s, true).unwrap().y;
        for i in 0..9 {
            let cb: f64 = (0..2).map(|k| s.c().get(&[i, k]) * s.b().get(&[i, k])).sum();
            for dd in 0..3 {
                let expect = cb * s.x().get(&[i, dd]) / s.a().get(&[i]);
                let got = on.get(&[i, dd]) - off.get(&[i, dd]);
                assert!((got - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_check_single_token_is_exact() {
        let s = random_inputs(1, 3, 2, 5);
        assert_eq!(bidirectional_identity_check(&s), 0.0);
        let s = random_inputs(64, 8, 8, 6);
        assert!(bidirectional_identity_check(&s) < 1e-9);
    }

    #[test]
    fn zero_cotangent_gives_zero_grads() {
        let s = random_inputs(4, 3, 2, 9);
        let g = ncssd_backward(&s, &Tensor::zeros([4, 3]).unwrap()).unwrap();
        for t in [&g.dx, &g.da, &g.db, &g.dc] {
            assert!(t.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn scalar_transition_gradient() {
        let (a, b, c, x, dy): (f64, f64, f64, f64, f64) = (1.5, -0.7, 2.0, 0.3, 1.1);
        let s = ScanInputs::new(
            Tensor::<f64>::from_f64([1, 1], &[x]).unwrap(),
            Tensor::from_f64([1], &[a]).unwrap(),
            Tensor::from_f64([1, 1], &[b]).unwrap(),
            Tensor::from_f64([1, 1], &[c]).unwrap(),
        )
        .unwrap();
        let g = ncssd_backward(&s, &Tensor::from_f64([1, 1], &[dy]).unwrap()).unwrap();
        let expect = -c * b * x * dy / (a * a);
        assert!((g.da.data()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn single_head_matches_plain_kernel() {
        let s = random_inputs(10, 6, 3, 12);
        let y = ncssd_forward(&s, false).unwrap().y;
        let p = vec![(s.a().clone(), s.b().clone(), s.c().clone())];
        let mh = multihead_ncssd(s.x(), &p, false).unwrap();
        assert_eq!(mh, y);
    }

    #[test]
    fn indivisible_heads_is_dimension_error() {
        let s = random_inputs(4, 5, 2, 13);
        let p = vec![(s.a().clone(), s.b().clone(), s.c().clone()); 2];
        assert!(matches!(
            multihead_ncssd(s.x(), &p, false),
            Err(Error::Dimension(_))
        ));
    }
}
