//! SGD with momentum and weight decay, plus global-norm gradient clipping.

use super::tensor::Tensor;
use crate::error::{HanfError, Result};

/// Per-parameter-group optimizer state.
///
/// The update is the classic momentum form:
/// `v <- momentum*v + (g + weight_decay*w); w <- w - lr*v`.
#[derive(Debug, Clone)]
pub struct OptimState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    buffers: Vec<Tensor>,
}

impl OptimState {
    pub fn new(learning_rate: f64, momentum: f64, weight_decay: f64, params: &[Tensor]) -> Self {
        OptimState {
            learning_rate,
            momentum,
            weight_decay,
            buffers: params.iter().map(Tensor::zeros_like).collect(),
        }
    }

    /// Plain gradient descent with weight decay (no momentum buffers).
    pub fn plain(learning_rate: f64, weight_decay: f64, params: &[Tensor]) -> Self {
        Self::new(learning_rate, 0.0, weight_decay, params)
    }
}

/// One SGD step over a parameter group. Gradients must be populated
/// (one per parameter, shape-matched).
pub fn sgd_step(params: &mut [Tensor], grads: &[Tensor], state: &mut OptimState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.buffers.len() {
        return Err(HanfError::InvalidArgument(format!(
            "sgd_step: {} params, {} grads, {} buffers",
            params.len(),
            grads.len(),
            state.buffers.len()
        )));
    }
    for ((w, g), v) in params.iter_mut().zip(grads.iter()).zip(state.buffers.iter_mut()) {
        if !w.same_shape(g) {
            return Err(HanfError::shape(
                "sgd_step",
                format!("param {:?} vs grad {:?}", w.shape(), g.shape()),
            ));
        }
        let (mu, lambda, eta) = (state.momentum, state.weight_decay, state.learning_rate);
        for ((wv, gv), vv) in w.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            *vv = mu * *vv + (gv + lambda * *wv);
            *wv -= eta * *vv;
        }
    }
    Ok(())
}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the factor that was applied (1.0 when already within bounds).
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let total: f64 = grads.iter().map(Tensor::sq_l2_norm).sum();
    let norm = total.sqrt();
    if norm <= max_norm || norm == 0.0 {
        return 1.0;
    }
    let factor = max_norm / norm;
    for g in grads.iter_mut() {
        g.scale_assign(factor);
    }
    factor
}
