//! Adam with bias correction.

use super::{ParamSet, Result, Scalar, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<T> {
    pub config: AdamConfig,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new(params: &ParamSet<T>, config: AdamConfig) -> Self {
        let zeros = || params.tensors().iter().map(|t| Tensor::zeros(t.shape())).collect();
        Self {
            config,
            m: zeros(),
            v: zeros(),
            step: 0,
        }
    }
}

pub fn adam_step<T: Scalar>(params: &mut ParamSet<T>, grads: &[Tensor<T>], st: &mut OptimizerState<T>) -> Result<()> {
    if grads.len() != params.len() || st.m.len() != params.len() {
        return Err(TensorError::ShapeMismatch {
            op: "adam_step",
            expected: vec![params.len()],
            found: vec![grads.len(), st.m.len()],
        });
    }
    for (slot, g) in grads.iter().enumerate() {
        if g.shape() != params.get(slot).shape() || st.m[slot].shape() != g.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "adam_step",
                expected: params.get(slot).shape().to_vec(),
                found: g.shape().to_vec(),
            });
        }
    }
    st.step += 1;
    let c = st.config;
    let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
    let bc1 = T::of(1.0 - c.beta1.powi(st.step as i32));
    let bc2 = T::of(1.0 - c.beta2.powi(st.step as i32));
    let (lr, eps) = (T::of(c.lr), T::of(c.eps));
    for (slot, g) in grads.iter().enumerate() {
        let p = params.get_mut(slot).data_mut();
        let m = st.m[slot].data_mut();
        let v = st.v[slot].data_mut();
        for i in 0..p.len() {
            let gi = g.data()[i];
            m[i] = b1 * m[i] + (T::one() - b1) * gi;
            v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            p[i] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    Ok(())
}
