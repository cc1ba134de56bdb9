use super::{map_to_tokens, tokens_to_map};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::params::Params;
use crate::ssd::{clamp_transition, multihead_ncssd};
use crate::tensor::{conv2d_grouped, silu, softplus, stack, Scalar, Tensor};

type HeadParams<T> = (Tensor<T>, Tensor<T>, Tensor<T>);

/// Maps raw `[L, heads]` logits to positive per-head transitions
/// `clamp(softplus(logit), A_MIN, A_MAX)`, one `[L]` vector per head.
pub fn transitions_from_logits<T: Scalar>(logits: &Tensor<T>) -> Result<Vec<Tensor<T>>> {
    let heads = logits.dim(1);
    let a = softplus(logits).map(clamp_transition).t()?;
    (0..heads).map(|h| a.index_axis0(h)).collect()
}

/// Derives per-head scan parameters from `a_src` (through `x_proj`'s
/// transition columns) and `bc_src` (through `bc_proj`).
fn scan_params<T: Scalar>(
    a_src: &Tensor<T>,
    bc_src: &Tensor<T>,
    cfg: &ModelConfig,
    params: &Params<T>,
    prefix: &str,
) -> Result<Vec<HeadParams<T>>> {
    let d = cfg.block.embed_dim;
    let heads = cfg.block.num_heads;
    let n = cfg.block.state_dim;
    let proj = params.linear(a_src, &format!("{prefix}.x_proj"))?;
    let logits = proj.split(1, &[d, heads])?.pop().unwrap();
    let a = transitions_from_logits(&logits)?;
    let bc = params.linear(bc_src, &format!("{prefix}.bc_proj"))?;
    let mut bc = bc.split(1, &[n, n])?;
    let c = bc.pop().unwrap();
    let b = bc.pop().unwrap();
    Ok(a.into_iter().map(|a| (a, b.clone(), c.clone())).collect())
}

/// One pairwise fusion block on `tokens: [2, L, D]` (left and right token
/// streams on a `gh × gw` grid). Returns `[2, L, D]`.
///
/// Per stream: layer norm; `x_proj` gives patch features and per-head
/// transition logits, `z_proj` gives the gate; depthwise conv on the token
/// grid plus SiLU gives `X`, from which `bc_proj` gives `B, C`; a multi-head
/// non-causal scan and layer norm give `Y`. Streams are then fused by swapped
/// gating `G_L = Y_L ⊙ silu(Z_R)`, `G_R = Y_R ⊙ silu(Z_L)`; a second
/// non-causal scan on `G` (transitions and `B, C` from the same projections)
/// goes through `out_proj` and is added to the block input.
pub fn densepercept_block<T: Scalar>(
    tokens: &Tensor<T>,
    grid: (usize, usize),
    cfg: &ModelConfig,
    params: &Params<T>,
    prefix: &str,
) -> Result<Tensor<T>> {
    let d = cfg.block.embed_dim;
    let heads = cfg.block.num_heads;
    let (gh, gw) = grid;
    if tokens.rank() != 3 || tokens.dim(0) != 2 || tokens.dim(1) != gh * gw || tokens.dim(2) != d {
        return Err(Error::dim(format!(
            "{prefix}: expected tokens [2, {}, {d}], got {:?}",
            gh * gw,
            tokens.shape()
        )));
    }
    let dw_w = params.get(&format!("{prefix}.dwconv.weight"))?;
    let dw_b = params.get(&format!("{prefix}.dwconv.bias"))?;
    let pad = dw_w.dim(2) / 2;

    let mut ys = Vec::with_capacity(2);
    let mut zs = Vec::with_capacity(2);
    for s in 0..2 {
        let u = params.layer_norm(&tokens.index_axis0(s)?, &format!("{prefix}.norm_in"))?;
        let proj = params.linear(&u, &format!("{prefix}.x_proj"))?;
        let feats = proj.split(1, &[d, heads])?.swap_remove(0);
        zs.push(params.linear(&u, &format!("{prefix}.z_proj"))?);

        let map = tokens_to_map(&feats, gh, gw)?;
        let conv = conv2d_grouped(&map, dw_w, dw_b, 1, pad, d)?;
        let x = silu(&map_to_tokens(&conv)?);

        let hp = scan_params(&u, &x, cfg, params, prefix)?;
        let y = multihead_ncssd(&x, &hp, false)?;
        ys.push(params.layer_norm(&y, &format!("{prefix}.norm_y"))?);
    }

    let fused = [
        ys[0].mul(&silu(&zs[1]))?,
        ys[1].mul(&silu(&zs[0]))?,
    ];

    let mut outs = Vec::with_capacity(2);
    for (s, g) in fused.iter().enumerate() {
        let hp = scan_params(g, g, cfg, params, prefix)?;
        let y2 = multihead_ncssd(g, &hp, false)?;
        let o = params.linear(&y2, &format!("{prefix}.out_proj"))?;
        outs.push(tokens.index_axis0(s)?.add(&o)?);
    }
    stack(&[&outs[0], &outs[1]])
}
