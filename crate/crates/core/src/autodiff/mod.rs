//! Reverse-mode differentiation over `f64` matrices, sized for desk-scale
//! models rather than generality.
//!
//! The three gradient-manipulation primitives the rest of the crate depends
//! on live here with hand-written backward rules:
//!
//! * [`Tape::stop_gradient`] — identity forward, zero partial derivatives;
//! * [`Tape::gradient_reversal`] — identity forward, backward scaled by
//!   `-lambda`;
//! * [`Tape::straight_through`] — forwards the quantized value, routes the
//!   whole incoming gradient to the continuous pre-quantization input.
//!
//! [`gradcheck::finite_diff_check`] certifies any scalar-valued graph built
//! on the tape against central differences in double precision.

mod gradcheck;
mod tape;

pub use gradcheck::{finite_diff_check, finite_diff_check_filtered, GradCheckResult};
pub use tape::{Tape, TensorId};

use ndarray::Array2;

/// A value together with the gradient accumulated for it by a backward pass.
#[derive(Debug, Clone)]
pub struct DiffTensor {
    pub values: Array2<f64>,
    pub gradient: Array2<f64>,
}

impl DiffTensor {
    /// Gradient shape always mirrors the value shape.
    pub fn shape(&self) -> (usize, usize) {
        let d = self.values.dim();
        debug_assert_eq!(d, self.gradient.dim());
        d
    }
}
