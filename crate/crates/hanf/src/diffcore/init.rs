//! Parameter initialization.
//!
//! Weights use fan-in-scaled uniform samples in `[-sqrt(1/fan_in), sqrt(1/fan_in)]`;
//! batch-norm scales start at 1, shifts at 0, biases at 0. Everything is
//! deterministic given the RNG state, and parameters are drawn in
//! declaration order so two builds from the same seed agree bitwise.

use rand::Rng;

use super::tensor::Tensor;

/// What a parameter tensor is, which decides how it is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Convolution weight (Cout, Cin/groups, kh, kw); fan-in = Cin/groups * kh * kw.
    ConvWeight,
    /// Linear weight (O, I); fan-in = I.
    LinearWeight,
    /// Batch-norm scale, all ones.
    BnScale,
    /// Batch-norm shift, all zeros.
    BnShift,
    /// Bias, all zeros.
    Bias,
}

pub fn fan_in(kind: ParamKind, shape: &[usize]) -> usize {
    match kind {
        ParamKind::ConvWeight => shape[1] * shape[2] * shape[3],
        ParamKind::LinearWeight => shape[1],
        _ => 1,
    }
}

/// Initial tensor for a parameter of the given kind and shape.
pub fn init_param(kind: ParamKind, shape: &[usize], rng: &mut impl Rng) -> Tensor {
    match kind {
        ParamKind::ConvWeight | ParamKind::LinearWeight => {
            let bound = (1.0 / fan_in(kind, shape) as f64).sqrt();
            Tensor::uniform(shape.to_vec(), bound, rng)
        }
        ParamKind::BnScale => Tensor::full(shape.to_vec(), 1.0),
        ParamKind::BnShift | ParamKind::Bias => Tensor::zeros(shape.to_vec()),
    }
}
