use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RmsPropConfig {
    pub learning_rate: f64,
    pub smoothing: f64,
    pub epsilon: f64,
}

/// Running mean-square accumulators, one per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct RmsPropState<S = f32> {
    pub v: Vec<Tensor<S>>,
}

impl<S: Scalar> RmsPropState<S> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<S>>) -> Self {
        Self { v: params.into_iter().map(Tensor::zeros_like).collect() }
    }
}

/// `v ← ρv + (1−ρ)g²`, `p ← p − lr·g/(√v + ε)`.
pub fn rmsprop_update<S: Scalar>(param: &mut Tensor<S>, grad: &[S], v: &mut Tensor<S>, cfg: &RmsPropConfig) -> Result<()> {
    if param.len() != grad.len() || v.len() != grad.len() {
        return Err(Error::shape("rmsprop_update", format!("param {:?}, grad {}, state {:?}", param.shape(), grad.len(), v.shape())));
    }
    let rho = S::lit(cfg.smoothing);
    let one_minus = S::one() - rho;
    let lr = S::lit(cfg.learning_rate);
    let eps = S::lit(cfg.epsilon);
    for ((p, &g), vi) in param.data_mut().iter_mut().zip(grad).zip(v.data_mut()) {
        *vi = rho * *vi + one_minus * g * g;
        *p = *p - lr * g / (vi.sqrt() + eps);
    }
    Ok(())
}

/// Rescales gradients in place so their global L2 norm is at most
/// `max_norm`; returns the norm before clipping. `max_norm <= 0` disables.
pub fn clip_global_norm<S: Scalar>(grads: &mut [Vec<S>], max_norm: f64) -> f64 {
    let norm = grads.iter().flatten().map(|g| g.to_f64_lossy().powi(2)).sum::<f64>().sqrt();
    if max_norm > 0.0 && norm > max_norm {
        let scale = S::lit(max_norm / norm);
        grads.iter_mut().flatten().for_each(|g| *g = *g * scale);
    }
    norm
}
