use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
    pub step: u64,
    pub hyper: AdamHyper,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>, hyper: AdamHyper) -> Self {
        let first: Vec<_> = params.into_iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self { second: first.clone(), first, step: 0, hyper }
    }
}

/// One bias-corrected Adam update. Nothing is modified if any gradient is
/// non-finite or shapes disagree.
pub fn adam_step<T: Scalar>(params: &mut [&mut Tensor<T>], grads: &[Tensor<T>], state: &mut AdamState<T>) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(Error::Shape(format!(
            "adam got {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.first.len()
        )));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.first) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(Error::Shape(format!("adam shape mismatch {:?} / {:?}", p.shape(), g.shape())));
        }
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::numerics("non-finite gradient passed to adam"));
    }
    state.step += 1;
    let h = state.hyper;
    let (b1, b2) = (T::of(h.beta1), T::of(h.beta2));
    let c1 = T::one() - T::of(h.beta1.powi(state.step as i32));
    let c2 = T::one() - T::of(h.beta2.powi(state.step as i32));
    let (lr, eps) = (T::of(h.lr), T::of(h.epsilon));
    for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut state.first).zip(&mut state.second) {
        for (((pv, &gv), mv), vv) in p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut()) {
            *mv = b1 * *mv + (T::one() - b1) * gv;
            *vv = b2 * *vv + (T::one() - b2) * gv * gv;
            let mhat = *mv / c1;
            let vhat = *vv / c2;
            *pv = *pv - lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
