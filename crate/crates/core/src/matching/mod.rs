//! Correlation volumes and pyramids, neighbourhood lookup, recurrent
//! refinement and convex upsampling.

mod gru;
mod lookup;
mod pyramid;
mod refine;
mod upsample;
mod volume;

pub use gru::{conv_gru, gru_update, motion_features, update_heads, UpdateOutput};
pub use lookup::{decode_lookup_argmax, lookup, lookup_disparity, lookup_flow, volume_argmax};
pub use pyramid::{build_pyramid, CorrelationPyramid};
pub use refine::{init_state, iterate_disparity_multires, iterate_flow};
pub use upsample::convex_upsample;
pub use volume::{build_disparity_volume, build_flow_volume};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FieldKind {
    /// Two channels `(u, v)`: horizontal then vertical displacement.
    Flow,
    /// One channel `d` with the right-image match at column `j - d`.
    Disparity,
}

impl FieldKind {
    pub fn channels(self) -> usize {
        match self {
            FieldKind::Flow => 2,
            FieldKind::Disparity => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FieldKind::Flow => "flow",
            FieldKind::Disparity => "disparity",
        }
    }
}

/// A flow or disparity field `[c, H, W]` in pixels of its own resolution,
/// which is `1/scale` of the input image.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldEstimate<T> {
    kind: FieldKind,
    values: Tensor<T>,
    scale: usize,
}

impl<T: Scalar> FieldEstimate<T> {
    pub fn new(kind: FieldKind, values: Tensor<T>, scale: usize) -> Result<Self> {
        if values.rank() != 3 || values.dim(0) != kind.channels() {
            return Err(Error::dim(format!(
                "{} field needs [{}, H, W], got {:?}",
                kind.name(),
                kind.channels(),
                values.shape()
            )));
        }
        if scale == 0 {
            return Err(Error::dim("field scale must be at least 1"));
        }
        Ok(Self { kind, values, scale })
    }

    pub fn zeros(kind: FieldKind, h: usize, w: usize, scale: usize) -> Result<Self> {
        Self::new(kind, Tensor::zeros([kind.channels(), h, w])?, scale)
    }

    pub fn kind(&self) -> FieldKind {
        self.kind
    }

    pub fn values(&self) -> &Tensor<T> {
        &self.values
    }

    pub fn into_values(self) -> Tensor<T> {
        self.values
    }

    pub fn scale(&self) -> usize {
        self.scale
    }

    pub fn height(&self) -> usize {
        self.values.dim(1)
    }

    pub fn width(&self) -> usize {
        self.values.dim(2)
    }
}

/// Recurrent hidden state, finest resolution first.
#[derive(Clone, Debug, PartialEq)]
pub struct GruState<T> {
    pub hidden: Vec<Tensor<T>>,
}

impl<T: Scalar> GruState<T> {
    pub fn new(hidden: Vec<Tensor<T>>) -> Result<Self> {
        if hidden.is_empty() || hidden.iter().any(|h| h.rank() != 3) {
            return Err(Error::dim("GRU state needs at least one [Dh, H, W] map"));
        }
        Ok(Self { hidden })
    }

    pub fn finest(&self) -> &Tensor<T> {
        &self.hidden[0]
    }
}

/// `[H, W, C]` to `[C, H, W]`.
pub(crate) fn hwc_to_chw<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    x.permute(&[2, 0, 1])
}
