use super::{
    conv_gru, convex_upsample, gru_update, lookup, motion_features, update_heads, CorrelationPyramid,
    FieldEstimate, FieldKind, GruState,
};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::params::Params;
use crate::tensor::{avg_pool, concat, resize_bilinear, silu, tanh, Scalar, Tensor};

/// Splits the context map into the initial hidden state `tanh(ctx[..hd])` and
/// the per-iteration GRU input `silu(ctx[hd..])`.
pub fn init_state<T: Scalar>(context: &Tensor<T>, hidden_dim: usize) -> Result<(GruState<T>, Tensor<T>)> {
    if context.rank() != 3 || context.dim(0) <= hidden_dim {
        return Err(Error::dim(format!(
            "context {:?} must have more than {hidden_dim} channels",
            context.shape()
        )));
    }
    let mut parts = context.split(0, &[hidden_dim, context.dim(0) - hidden_dim])?;
    let input = silu(&parts.pop().unwrap());
    let hidden = tanh(&parts.pop().unwrap());
    Ok((GruState::new(vec![hidden])?, input))
}

fn check_context<T: Scalar>(pyr: &CorrelationPyramid<T>, context: &Tensor<T>, iters: usize) -> Result<()> {
    if iters == 0 {
        return Err(Error::Config("refinement needs at least one iteration".into()));
    }
    if context.rank() != 3 || (context.dim(1), context.dim(2)) != pyr.grid() {
        return Err(Error::dim(format!(
            "context {:?} does not match the correlation grid {:?}",
            context.shape(),
            pyr.grid()
        )));
    }
    Ok(())
}

fn emit<T: Scalar>(
    field: &FieldEstimate<T>,
    mask: &Tensor<T>,
    s: usize,
    clamp_nonneg: bool,
) -> Result<FieldEstimate<T>> {
    let mut up = convex_upsample(field.values(), mask, s, true)?;
    if clamp_nonneg {
        up = up.map(|v| v.max(T::zero()));
    }
    FieldEstimate::new(field.kind(), up, 1)
}

/// Single-resolution flow refinement from a zero start. Every iterate is
/// convex-upsampled by the patch size and returned at full resolution.
pub fn iterate_flow<T: Scalar>(
    pyr: &CorrelationPyramid<T>,
    context: &Tensor<T>,
    iters: usize,
    radius: usize,
    cfg: &ModelConfig,
    params: &Params<T>,
) -> Result<Vec<FieldEstimate<T>>> {
    check_context(pyr, context, iters)?;
    if pyr.kind() != FieldKind::Flow {
        return Err(Error::dim("iterate_flow needs a flow pyramid"));
    }
    let s = cfg.block.patch_size;
    let (h, w) = pyr.grid();
    let (mut state, input) = init_state(context, cfg.matching.hidden_dim)?;
    let mut flow = FieldEstimate::zeros(FieldKind::Flow, h, w, s)?;
    let mut outputs = Vec::with_capacity(iters);
    for _ in 0..iters {
        let feats = lookup(pyr, &flow, radius)?;
        let step = gru_update(&state, &feats, &input, &flow, params, "flow")?;
        state = step.state;
        flow = FieldEstimate::new(FieldKind::Flow, flow.values().add(&step.delta)?, s)?;
        outputs.push(emit(&flow, &step.mask_logits, s, false)?);
    }
    Ok(outputs)
}

/// Disparity refinement with hidden states at up to three resolutions, each
/// half the previous, initialized by pooling the base state.
///
/// Per iteration the coarsest GRU runs first on its pooled context input;
/// each finer GRU also receives the bilinearly resized coarser hidden state.
/// Lookup, motion encoding and the disparity update happen at the base
/// resolution only. Emitted full-resolution iterates are clamped to be
/// non-negative; the internal estimate is not.
pub fn iterate_disparity_multires<T: Scalar>(
    pyr: &CorrelationPyramid<T>,
    context: &Tensor<T>,
    iters: usize,
    radius: usize,
    cfg: &ModelConfig,
    params: &Params<T>,
) -> Result<Vec<FieldEstimate<T>>> {
    check_context(pyr, context, iters)?;
    if pyr.kind() != FieldKind::Disparity {
        return Err(Error::dim("iterate_disparity_multires needs a disparity pyramid"));
    }
    let scales = cfg.matching.disparity_scales;
    let s = cfg.block.patch_size;
    let (h, w) = pyr.grid();
    let div = 1usize << (scales - 1);
    if h % div != 0 || w % div != 0 {
        return Err(Error::dim(format!(
            "feature grid {h}x{w} must be divisible by {div} for {scales} disparity scales"
        )));
    }
    let (state, inp0) = init_state(context, cfg.matching.hidden_dim)?;
    let mut hidden = state.hidden;
    let mut inputs = vec![inp0];
    for k in 1..scales {
        hidden.push(avg_pool(&hidden[k - 1], 2)?);
        inputs.push(avg_pool(&inputs[k - 1], 2)?);
    }

    let mut disp = FieldEstimate::zeros(FieldKind::Disparity, h, w, s)?;
    let mut outputs = Vec::with_capacity(iters);
    for _ in 0..iters {
        for k in (1..scales).rev() {
            let x = if k + 1 < scales {
                let up = resize_to(&hidden[k + 1], &hidden[k])?;
                concat(&[&inputs[k], &up], 0)?
            } else {
                inputs[k].clone()
            };
            hidden[k] = conv_gru(&hidden[k], &x, params, &format!("disp.gru{k}"))?;
        }
        let feats = lookup(pyr, &disp, radius)?;
        let motion = motion_features(&feats, &disp, params, "disp")?;
        let x = if scales > 1 {
            let up = resize_to(&hidden[1], &hidden[0])?;
            concat(&[&motion, &inputs[0], &up], 0)?
        } else {
            concat(&[&motion, &inputs[0]], 0)?
        };
        hidden[0] = conv_gru(&hidden[0], &x, params, "disp.gru0")?;
        let (delta, mask) = update_heads(&hidden[0], params, "disp")?;
        disp = FieldEstimate::new(FieldKind::Disparity, disp.values().add(&delta)?, s)?;
        outputs.push(emit(&disp, &mask, s, true)?);
    }
    Ok(outputs)
}

fn resize_to<T: Scalar>(x: &Tensor<T>, like: &Tensor<T>) -> Result<Tensor<T>> {
    resize_bilinear(x, like.dim(1), like.dim(2))
}
