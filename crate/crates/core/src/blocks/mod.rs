//! Feature extraction: patch embedding, the pairwise NC-SSD fusion block and
//! the convolutional context encoder.

mod context;
mod densepercept;
mod patch;

pub use context::{context_encode, residual_block};
pub use densepercept::{densepercept_block, transitions_from_logits};
pub use patch::patch_embed;

use crate::config::ModelConfig;
use crate::error::{Error, Result, StageExt};
use crate::params::Params;
use crate::tensor::{stack, Scalar, Tensor};

/// Two images processed jointly: a rectified stereo pair, or consecutive
/// frames for flow. Both are `[3, H, W]` with values in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair<T> {
    left: Tensor<T>,
    right: Tensor<T>,
}

impl<T: Scalar> ImagePair<T> {
    pub fn new(left: Tensor<T>, right: Tensor<T>) -> Result<Self> {
        if left.rank() != 3 || left.dim(0) != 3 || left.shape() != right.shape() {
            return Err(Error::dim(format!(
                "image pair needs two [3, H, W] images of equal size, got {:?} and {:?}",
                left.shape(),
                right.shape()
            )));
        }
        let bound = T::one();
        for (which, img) in [("left", &left), ("right", &right)] {
            if img.data().iter().any(|v| !(v.abs() <= bound)) {
                return Err(Error::domain(format!(
                    "{which} image has values outside [-1, 1]"
                )));
            }
        }
        Ok(Self { left, right })
    }

    pub fn left(&self) -> &Tensor<T> {
        &self.left
    }

    pub fn right(&self) -> &Tensor<T> {
        &self.right
    }

    pub fn height(&self) -> usize {
        self.left.dim(1)
    }

    pub fn width(&self) -> usize {
        self.left.dim(2)
    }

    pub fn swapped(&self) -> Self {
        Self {
            left: self.right.clone(),
            right: self.left.clone(),
        }
    }
}

/// Matched feature maps for both images plus context for the reference image,
/// all `[channels, H/p, W/p]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PairFeatures<T> {
    pub f_left: Tensor<T>,
    pub f_right: Tensor<T>,
    pub context: Tensor<T>,
}

/// `[L, D]` tokens on a `gh × gw` grid to a `[D, gh, gw]` map.
pub(crate) fn tokens_to_map<T: Scalar>(tokens: &Tensor<T>, gh: usize, gw: usize) -> Result<Tensor<T>> {
    let d = tokens.dim(1);
    tokens.t()?.reshape([d, gh, gw])
}

/// `[D, gh, gw]` map to `[L, D]` tokens in row-major grid order.
pub(crate) fn map_to_tokens<T: Scalar>(map: &Tensor<T>) -> Result<Tensor<T>> {
    let d = map.dim(0);
    let l = map.len() / d;
    map.clone().reshape([d, l])?.t()
}

/// Embeds both images, runs the stacked fusion blocks on the token pair,
/// projects, and unflattens to feature maps; encodes context from the left
/// (reference) image.
pub fn extract_pair_features<T: Scalar>(
    pair: &ImagePair<T>,
    cfg: &ModelConfig,
    params: &Params<T>,
) -> Result<PairFeatures<T>> {
    let p = cfg.block.patch_size;
    let (h, w) = (pair.height(), pair.width());
    if h % p != 0 || w % p != 0 {
        return Err(Error::dim(format!(
            "image extents {h}x{w} not divisible by patch size {p}"
        )));
    }
    let (gh, gw) = (h / p, w / p);
    let left = patch_embed(pair.left(), p, params).stage("patch embedding (left)")?;
    let right = patch_embed(pair.right(), p, params).stage("patch embedding (right)")?;
    let mut tokens = stack(&[&left, &right])?;
    for i in 0..cfg.block.num_blocks {
        tokens = densepercept_block(&tokens, (gh, gw), cfg, params, &format!("block{i}"))
            .map_err(|e| e.in_stage("fusion block"))?;
    }
    let out = params.linear(&tokens, "feat_out").stage("feature projection")?;
    let f_left = tokens_to_map(&out.index_axis0(0)?, gh, gw)?;
    let f_right = tokens_to_map(&out.index_axis0(1)?, gh, gw)?;
    let context = context_encode(pair.left(), cfg, params).stage("context encoder")?;
    Ok(PairFeatures {
        f_left,
        f_right,
        context,
    })
}
