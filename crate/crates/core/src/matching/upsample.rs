use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{Scalar, Tensor};

/// Upsamples `field: [c, h, w]` by `s` using learned convex weights.
///
/// Each fine pixel `(y·s + sy, x·s + sx)` is a softmax-weighted combination of
/// the 3×3 coarse neighbourhood of `(y, x)` (border-clamped). Logit channel
/// `k·s² + sy·s + sx` weights neighbour `k` (row-major over the 3×3 offsets).
/// With `scale_values` the result is multiplied by `s`, converting pixel
/// displacements to the finer grid.
pub fn convex_upsample<T: Scalar>(
    field: &Tensor<T>,
    mask_logits: &Tensor<T>,
    s: usize,
    scale_values: bool,
) -> Result<Tensor<T>> {
    if field.rank() != 3 || s == 0 {
        return Err(Error::dim(format!(
            "convex_upsample: field {:?} with factor {s}",
            field.shape()
        )));
    }
    let (c, h, w) = (field.dim(0), field.dim(1), field.dim(2));
    let ss = s * s;
    if mask_logits.shape() != [9 * ss, h, w] {
        return Err(Error::dim(format!(
            "convex_upsample: mask {:?}, expected [{}, {h}, {w}]",
            mask_logits.shape(),
            9 * ss
        )));
    }
    let (fw, hw) = (w * s, h * w);
    let gain = if scale_values { T::lit(s as f64) } else { T::one() };
    let fd = field.data();
    let md = mask_logits.data();
    // one chunk per fine row of one channel
    let mut out = vec![T::zero(); c * h * s * fw];
    par::for_each_chunk(&mut out, fw, |row_idx, row| {
        let ch = row_idx / (h * s);
        let fy = row_idx % (h * s);
        let (y, sy) = (fy / s, fy % s);
        let plane = &fd[ch * hw..(ch + 1) * hw];
        let rows = [y.saturating_sub(1), y, (y + 1).min(h - 1)];
        for x in 0..w {
            let cols = [x.saturating_sub(1), x, (x + 1).min(w - 1)];
            for sx in 0..s {
                let sub = sy * s + sx;
                let logit = |k: usize| md[(k * ss + sub) * hw + y * w + x];
                let mut mx = logit(0);
                for k in 1..9 {
                    mx = mx.max(logit(k));
                }
                let mut num = T::zero();
                let mut den = T::zero();
                for k in 0..9 {
                    let e = (logit(k) - mx).exp();
                    den += e;
                    num += e * plane[rows[k / 3] * w + cols[k % 3]];
                }
                row[x * s + sx] = num / den * gain;
            }
        }
    });
    Tensor::new([c, h * s, w * s], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_xoshiro::Xoshiro256PlusPlus;

    fn random(shape: &[usize], scale: f64, seed: u64) -> Tensor<f64> {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        Tensor::from_fn(shape.to_vec(), |_| rng.random_range(-scale..scale)).unwrap()
    }

    #[test]
    fn matches_per_subpixel_oracle() {
        let (c, h, w, s) = (2, 4, 5, 2);
        let field = random(&[c, h, w], 3.0, 1);
        let mask = random(&[9 * s * s, h, w], 4.0, 2);
        let got = convex_upsample(&field, &mask, s, true).unwrap();
        assert_eq!(got.shape(), &[c, h * s, w * s]);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    for sy in 0..s {
                        for sx in 0..s {
                            let logits: Vec<f64> =
                                (0..9).map(|k| mask.get(&[k * s * s + sy * s + sx, y, x])).collect();
                            let z: f64 = logits.iter().map(|l| l.exp()).sum();
                            let mut e = 0.0;
                            for k in 0..9 {
                                let ny = (y as i64 + k as i64 / 3 - 1).clamp(0, h as i64 - 1) as usize;
                                let nx = (x as i64 + k as i64 % 3 - 1).clamp(0, w as i64 - 1) as usize;
                                e += logits[k].exp() / z * field.get(&[ch, ny, nx]);
                            }
                            let v = got.get(&[ch, y * s + sy, x * s + sx]);
                            assert!((v - s as f64 * e).abs() < 1e-12);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn constant_field_is_preserved() {
        let field = Tensor::full([1, 3, 3], 2.5).unwrap();
        let mask = random(&[9 * 16, 3, 3], 10.0, 3);
        let got = convex_upsample(&field, &mask, 4, false).unwrap();
        assert!(got.data().iter().all(|&v| (v - 2.5).abs() < 1e-14));
    }

    #[test]
    fn equal_logits_give_clamped_box_average() {
        let field = random(&[1, 3, 4], 1.0, 4);
        let mask = Tensor::zeros([36, 3, 4]).unwrap();
        let got = convex_upsample(&field, &mask, 2, false).unwrap();
        for y in 0..3 {
            for x in 0..4 {
                let mut e = 0.0;
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let ny = (y as i64 + dy).clamp(0, 2) as usize;
                        let nx = (x as i64 + dx).clamp(0, 3) as usize;
                        e += field.get(&[0, ny, nx]) / 9.0;
                    }
                }
                for sub in 0..4 {
                    let v = got.get(&[0, 2 * y + sub / 2, 2 * x + sub % 2]);
                    assert!((v - e).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn shift_of_logits_changes_nothing() {
        let field = random(&[2, 3, 3], 1.0, 5);
        let mask = random(&[36, 3, 3], 2.0, 6);
        let shifted = mask.map(|v| v + 17.0);
        let a = convex_upsample(&field, &mask, 2, true).unwrap();
        let b = convex_upsample(&field, &shifted, 2, true).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() < 1e-7);
    }

    #[test]
    fn wrong_mask_channels_is_error() {
        let field = Tensor::<f64>::zeros([1, 2, 2]).unwrap();
        let mask = Tensor::zeros([9, 2, 2]).unwrap();
        assert!(convex_upsample(&field, &mask, 2, false).is_err());
    }
}
