use super::FieldKind;
use crate::error::{Error, Result};
use crate::tensor::{avg_pool, Scalar, Tensor};

/// A correlation volume and its successively pooled copies. Flow levels are
/// `[H, W, H/2ᵏ, W/2ᵏ]`, disparity levels `[H, W, W/2ᵏ]`.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationPyramid<T> {
    kind: FieldKind,
    levels: Vec<Tensor<T>>,
}

impl<T: Scalar> CorrelationPyramid<T> {
    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn levels(&self) -> &[Tensor<T>] {
        &self.levels
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    /// Query grid `(H, W)` shared by every level.
    pub fn grid(&self) -> (usize, usize) {
        (self.levels[0].dim(0), self.levels[0].dim(1))
    }
}

pub fn build_pyramid<T: Scalar>(
    volume: Tensor<T>,
    kind: FieldKind,
    num_levels: usize,
) -> Result<CorrelationPyramid<T>> {
    let axes = kind.channels();
    if num_levels == 0 || volume.rank() != 2 + axes {
        return Err(Error::dim(format!(
            "{} pyramid: volume {:?} with {num_levels} levels",
            kind.name(),
            volume.shape()
        )));
    }
    let need = 1usize << (num_levels - 1);
    let r = volume.rank();
    if volume.shape()[r - axes..].iter().any(|&e| e < need) {
        return Err(Error::dim(format!(
            "{} pyramid: trailing extents of {:?} are below {need} for {num_levels} levels",
            kind.name(),
            volume.shape()
        )));
    }
    let mut levels = Vec::with_capacity(num_levels);
    levels.push(volume);
    for k in 1..num_levels {
        let next = avg_pool(&levels[k - 1], axes)?;
        levels.push(next);
    }
    Ok(CorrelationPyramid { kind, levels })
}
