use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::params::{context_plan, Params};
use crate::tensor::{silu, Scalar, Tensor};

/// Residual block `skip(x) + norm2(conv2(silu(norm1(conv1(x)))))`, where
/// `skip` is a 1×1 conv when `prefix.skip` exists and identity otherwise.
/// The first conv carries the stride.
pub fn residual_block<T: Scalar>(
    x: &Tensor<T>,
    params: &Params<T>,
    prefix: &str,
    stride: usize,
) -> Result<Tensor<T>> {
    let h = params.conv(x, &format!("{prefix}.conv1"), stride)?;
    let h = silu(&params.group_norm(&h, &format!("{prefix}.norm1"))?);
    let h = params.conv(&h, &format!("{prefix}.conv2"), 1)?;
    let h = params.group_norm(&h, &format!("{prefix}.norm2"))?;
    let skip_name = format!("{prefix}.skip");
    let skip = if params.get(&format!("{skip_name}.weight")).is_ok() {
        params.conv(x, &skip_name, stride)?
    } else if stride == 1 && x.dim(0) == h.dim(0) {
        x.clone()
    } else {
        return Err(Error::MissingTensor(format!("{skip_name}.weight")));
    };
    skip.add(&h)
}

/// Encodes the reference image `[3, H, W]` to `[context_dim, H/p, W/p]`:
/// stride-2 stem, six residual blocks reaching the patch stride, 1×1 output
/// projection.
pub fn context_encode<T: Scalar>(img: &Tensor<T>, cfg: &ModelConfig, params: &Params<T>) -> Result<Tensor<T>> {
    let p = cfg.block.patch_size;
    if img.rank() != 3 || img.dim(0) != 3 || !img.dim(1).is_multiple_of(p) || !img.dim(2).is_multiple_of(p) {
        return Err(Error::dim(format!(
            "context encoder expects [3, H, W] with extents divisible by {p}, got {:?}",
            img.shape()
        )));
    }
    let (_, blocks) = context_plan(cfg);
    let x = params.conv(img, "ctx.stem", 2)?;
    let mut x = silu(&params.group_norm(&x, "ctx.stem_norm")?);
    for (i, &(_, _, stride)) in blocks.iter().enumerate() {
        x = residual_block(&x, params, &format!("ctx.res{i}"), stride)?;
    }
    params.conv(&x, "ctx.out", 1)
}
