use super::arch::Architecture;
use super::params::{Gradients, NetworkParams};
use crate::error::Result;
use crate::tensor::Scalar;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// First and second moment estimates plus the number of updates applied.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T = f32> {
    pub step: u64,
    pub m: NetworkParams<T>,
    pub v: NetworkParams<T>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(arch: Architecture) -> Result<Self> {
        Ok(AdamState {
            step: 0,
            m: NetworkParams::zeros(arch)?,
            v: NetworkParams::zeros(arch)?,
        })
    }

    /// One bias-corrected update of every parameter.
    pub fn update(&mut self, params: &mut NetworkParams<T>, grads: &Gradients<T>, learning_rate: f64) {
        self.step += 1;
        let tensors = params
            .tensors_mut()
            .iter_mut()
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
            .zip(grads.tensors());
        for (((p, m), v), g) in tensors {
            adam_update(p.data_mut(), m.data_mut(), v.data_mut(), g.data(), self.step, learning_rate);
        }
    }
}

/// `m ← β1·m + (1−β1)·g`, `v ← β2·v + (1−β2)·g²`,
/// `p ← p − lr·m̂/(√v̂ + ε)` with `m̂ = m/(1−β1^t)`, `v̂ = v/(1−β2^t)`.
/// `step` is the 1-based index of this update.
pub fn adam_update<T: Scalar>(params: &mut [T], m: &mut [T], v: &mut [T], grads: &[T], step: u64, learning_rate: f64) {
    let exponent = i32::try_from(step).unwrap_or(i32::MAX);
    let m_scale = T::of(1.0 / (1.0 - BETA1.powi(exponent)));
    let v_scale = T::of(1.0 / (1.0 - BETA2.powi(exponent)));
    let (b1, b2) = (T::of(BETA1), T::of(BETA2));
    let (c1, c2) = (T::of(1.0 - BETA1), T::of(1.0 - BETA2));
    let (lr, eps) = (T::of(learning_rate), T::of(EPSILON));
    for (((p, m), v), &g) in params.iter_mut().zip(m).zip(v).zip(grads) {
        *m = b1 * *m + c1 * g;
        *v = b2 * *v + c2 * g * g;
        let m_hat = *m * m_scale;
        let v_hat = *v * v_scale;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}
