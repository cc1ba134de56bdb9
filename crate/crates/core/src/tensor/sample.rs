use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Bilinear read of an `h × w` row-major plane at `(y, x)`.
///
/// Coordinates are clamped to the plane first, so samples outside the map
/// take border values.
#[inline]
pub fn sample_bilinear_2d<T: Scalar>(plane: &[T], h: usize, w: usize, y: T, x: T) -> T {
    let (y0, y1, fy) = bracket(y, h);
    let (x0, x1, fx) = bracket(x, w);
    let top = plane[y0 * w + x0] + (plane[y0 * w + x1] - plane[y0 * w + x0]) * fx;
    let bot = plane[y1 * w + x0] + (plane[y1 * w + x1] - plane[y1 * w + x0]) * fx;
    top + (bot - top) * fy
}

/// Linear read of a row at fractional position `x`, clamped to the ends.
#[inline]
pub fn sample_linear_1d<T: Scalar>(row: &[T], x: T) -> T {
    let (x0, x1, fx) = bracket(x, row.len());
    row[x0] + (row[x1] - row[x0]) * fx
}

/// Clamps `c` into `[0, n-1]` and returns the two neighbouring indices and the
/// interpolation weight of the upper one.
#[inline]
fn bracket<T: Scalar>(c: T, n: usize) -> (usize, usize, T) {
    let hi = T::lit((n - 1) as f64);
    // NaN coordinates collapse onto index 0
    let c = if c.is_nan() { T::zero() } else { c.max(T::zero()).min(hi) };
    let i0 = c.floor().to_usize().unwrap_or(0).min(n - 1);
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, c - T::lit(i0 as f64))
}

/// Samples every channel of `map: [C, H, W]` at `coords: [P, 2]` holding
/// `(row, col)` pairs; returns `[P, C]`.
pub fn bilinear_sample<T: Scalar>(map: &Tensor<T>, coords: &Tensor<T>) -> Result<Tensor<T>> {
    if map.rank() != 3 || coords.rank() != 2 || coords.dim(1) != 2 {
        return Err(Error::dim(format!(
            "bilinear_sample: map {:?}, coords {:?}",
            map.shape(),
            coords.shape()
        )));
    }
    let (c, h, w) = (map.dim(0), map.dim(1), map.dim(2));
    let p = coords.dim(0);
    let mut out = Vec::with_capacity(p * c);
    for yx in coords.data().chunks(2) {
        for plane in map.data().chunks(h * w) {
            out.push(sample_bilinear_2d(plane, h, w, yx[0], yx[1]));
        }
    }
    Ok(Tensor::from_parts(vec![p, c], out))
}

/// Bilinear resize of `[C, h, w]` to `[C, out_h, out_w]` using pixel-centre
/// alignment with border clamping.
pub fn resize_bilinear<T: Scalar>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    if x.rank() != 3 || out_h == 0 || out_w == 0 {
        return Err(Error::dim(format!(
            "resize_bilinear: input {:?} to {out_h}x{out_w}",
            x.shape()
        )));
    }
    let (c, h, w) = (x.dim(0), x.dim(1), x.dim(2));
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let mut out = Vec::with_capacity(c * out_h * out_w);
    for plane in x.data().chunks(h * w) {
        for i in 0..out_h {
            let y = T::lit((i as f64 + 0.5) * sy - 0.5);
            for j in 0..out_w {
                let xx = T::lit((j as f64 + 0.5) * sx - 0.5);
                out.push(sample_bilinear_2d(plane, h, w, y, xx));
            }
        }
    }
    Ok(Tensor::from_parts(vec![c, out_h, out_w], out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Tensor<f64> {
        Tensor::from_f64([1, 2, 3], &[1.0, 2.0, 4.0, 8.0, 16.0, 32.0]).unwrap()
    }

    #[test]
    fn integer_coordinates_are_exact() {
        let m = grid();
        let c = Tensor::from_f64([2, 2], &[1.0, 2.0, 0.0, 1.0]).unwrap();
        assert_eq!(bilinear_sample(&m, &c).unwrap().data(), &[32.0, 2.0]);
    }

    #[test]
    fn midpoint_is_mean() {
        let m = grid();
        let c = Tensor::from_f64([2, 2], &[0.0, 0.5, 0.5, 2.0]).unwrap();
        assert_eq!(bilinear_sample(&m, &c).unwrap().data(), &[1.5, 18.0]);
    }

    #[test]
    fn out_of_range_clamps_to_edge() {
        let m = grid();
        let c = Tensor::from_f64([3, 2], &[-5.0, -5.0, 9.0, 9.0, 0.0, 7.5]).unwrap();
        assert_eq!(bilinear_sample(&m, &c).unwrap().data(), &[1.0, 32.0, 4.0]);
    }

    #[test]
    fn linear_1d() {
        let row = [0.0f64, 10.0, 20.0];
        assert_eq!(sample_linear_1d(&row, 1.25), 12.5);
        assert_eq!(sample_linear_1d(&row, -1.0), 0.0);
        assert_eq!(sample_linear_1d(&row, 3.0), 20.0);
        assert_eq!(sample_linear_1d(&[7.0f64], 0.3), 7.0);
    }

    #[test]
    fn resize_preserves_constants() {
        let x = Tensor::<f64>::full([2, 3, 4], 1.25).unwrap();
        let y = resize_bilinear(&x, 6, 8).unwrap();
        assert!(y.data().iter().all(|&v| v == 1.25));
    }
}
