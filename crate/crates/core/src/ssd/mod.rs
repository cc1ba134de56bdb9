//! Selective state-space scan kernels with a scalar per-token state transition.
//!
//! Two causal forms compute the same map:
//!
//! ```text
//!   linear:     h_t = A_t · h_{t-1} + B_t ⊗ x_t,      y_t = C_tᵀ h_t
//!   quadratic:  Y = F X,   F_ij = C_iᵀB_j · Π_{k=j+1..i} A_k   (i ≥ j, else 0)
//! ```
//!
//! The non-causal kernel drops the mask and the decay product: every token
//! reads one shared state `H = Σ_j (1/A_j) · B_j ⊗ x_j`, so `Y_i = C_iᵀ H`.
//!
//! | Symbol | Shape    |
//! |--------|----------|
//! | `x`    | `[L, D]` |
//! | `a`    | `[L]`    |
//! | `b`    | `[L, N]` |
//! | `c`    | `[L, N]` |
//! | `h`    | `[N, D]` |

mod causal;
mod noncausal;

pub use causal::{causal_ssd_linear, causal_ssd_quadratic, causal_transfer_matrix};
pub use noncausal::{
    bidirectional_identity_check, multihead_ncssd, ncssd_backward, ncssd_forward,
    ncssd_quadratic, NcssdGrads,
};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Lower clamp applied to generated or loaded state transitions.
pub const A_MIN: f64 = 1e-4;
/// Upper clamp applied to generated or loaded state transitions.
pub const A_MAX: f64 = 1e4;

/// Clamps a state transition into `[A_MIN, A_MAX]`.
#[inline]
pub fn clamp_transition<T: Scalar>(a: T) -> T {
    a.max(T::lit(A_MIN)).min(T::lit(A_MAX))
}

/// Per-token parameters of one scan.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanInputs<T> {
    x: Tensor<T>,
    a: Tensor<T>,
    b: Tensor<T>,
    c: Tensor<T>,
}

impl<T: Scalar> ScanInputs<T> {
    /// Validates shapes (`x: [L, D]`, `a: [L]`, `b, c: [L, N]`) and that every
    /// transition is finite and strictly positive.
    pub fn new(x: Tensor<T>, a: Tensor<T>, b: Tensor<T>, c: Tensor<T>) -> Result<Self> {
        if x.rank() != 2 || a.rank() != 1 || b.rank() != 2 || c.rank() != 2 {
            return Err(Error::dim(format!(
                "scan inputs need x [L,D], a [L], b [L,N], c [L,N]; got {:?}, {:?}, {:?}, {:?}",
                x.shape(),
                a.shape(),
                b.shape(),
                c.shape()
            )));
        }
        let l = x.dim(0);
        if a.dim(0) != l || b.dim(0) != l || c.dim(0) != l || b.dim(1) != c.dim(1) {
            return Err(Error::dim(format!(
                "scan inputs disagree on L or N: x {:?}, a {:?}, b {:?}, c {:?}",
                x.shape(),
                a.shape(),
                b.shape(),
                c.shape()
            )));
        }
        if let Some((j, v)) = a
            .data()
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && **v > T::zero()))
        {
            return Err(Error::domain(format!(
                "state transition A[{j}] = {v} must be finite and > 0"
            )));
        }
        Ok(Self { x, a, b, c })
    }

    pub fn x(&self) -> &Tensor<T> {
        &self.x
    }

    pub fn a(&self) -> &Tensor<T> {
        &self.a
    }

    pub fn b(&self) -> &Tensor<T> {
        &self.b
    }

    pub fn c(&self) -> &Tensor<T> {
        &self.c
    }

    /// Sequence length `L`.
    pub fn len(&self) -> usize {
        self.x.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Feature width `D`.
    pub fn width(&self) -> usize {
        self.x.dim(1)
    }

    /// State dimension `N`.
    pub fn state_dim(&self) -> usize {
        self.b.dim(1)
    }

    pub fn into_parts(self) -> (Tensor<T>, Tensor<T>, Tensor<T>, Tensor<T>) {
        (self.x, self.a, self.b, self.c)
    }
}

/// Result of a scan.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanOutput<T> {
    /// `[L, D]`
    pub y: Tensor<T>,
    /// `[N, D]`: final state for causal scans, the shared state for the
    /// non-causal kernel.
    pub h: Tensor<T>,
}
