use crate::error::{Error, Result};
use crate::par;
use crate::tensor::{Scalar, Tensor};

fn check_pair<T: Scalar>(op: &str, f: &Tensor<T>, g: &Tensor<T>) -> Result<()> {
    if f.rank() != 3 || f.shape() != g.shape() {
        return Err(Error::dim(format!(
            "{op}: need two [D, H, W] maps of equal shape, got {:?} and {:?}",
            f.shape(),
            g.shape()
        )));
    }
    Ok(())
}

/// All-pairs correlation `C[i, j, k, l] = Σ_h f[h, i, j] · g[h, k, l]`,
/// shaped `[H, W, H, W]`.
pub fn build_flow_volume<T: Scalar>(f: &Tensor<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
    check_pair("build_flow_volume", f, g)?;
    let (d, h, w) = (f.dim(0), f.dim(1), f.dim(2));
    let hw = h * w;
    // pixel-major copy of f so each output row reads contiguous features
    let ft = f.clone().reshape([d, hw])?.t()?;
    let (fd, gd) = (ft.data(), g.data());
    let mut out = vec![T::zero(); hw * hw];
    par::for_each_chunk(&mut out, hw, |p, row| {
        for (c, &fv) in fd[p * d..(p + 1) * d].iter().enumerate() {
            for (o, &gv) in row.iter_mut().zip(&gd[c * hw..(c + 1) * hw]) {
                *o += fv * gv;
            }
        }
    });
    Tensor::new([h, w, h, w], out)
}

/// Same-row correlation `C[i, j, k] = Σ_h f[h, i, j] · g[h, i, k]`, shaped
/// `[H, W, W]`.
pub fn build_disparity_volume<T: Scalar>(f: &Tensor<T>, g: &Tensor<T>) -> Result<Tensor<T>> {
    check_pair("build_disparity_volume", f, g)?;
    let (d, h, w) = (f.dim(0), f.dim(1), f.dim(2));
    let (fd, gd) = (f.data(), g.data());
    let mut out = vec![T::zero(); h * w * w];
    par::for_each_chunk(&mut out, w, |p, row| {
        let (i, j) = (p / w, p % w);
        for c in 0..d {
            let fv = fd[(c * h + i) * w + j];
            let g_row = &gd[(c * h + i) * w..(c * h + i + 1) * w];
            for (o, &gv) in row.iter_mut().zip(g_row) {
                *o += fv * gv;
            }
        }
    });
    Tensor::new([h, w, w], out)
}
