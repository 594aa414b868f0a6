use ndarray::Zip;

use super::{NetConfig, NetParams, Scalar};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub m: NetParams<T>,
    pub v: NetParams<T>,
    pub t: u64,
    pub config: AdamConfig,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(cfg: &NetConfig, config: AdamConfig) -> Self {
        Self {
            m: NetParams::zeros(cfg),
            v: NetParams::zeros(cfg),
            t: 0,
            config,
        }
    }
}

/// One bias-corrected Adam update, in place.
///
/// Non-finite gradients are rejected before anything is modified.
pub fn adam_step<T: Scalar>(
    params: &mut NetParams<T>,
    grads: &NetParams<T>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    let g = grads.tensors();
    {
        let p = params.tensors();
        if p.len() != g.len() || p.iter().zip(&g).any(|(a, b)| a.shape() != b.shape()) {
            return Err(Error::Shape("gradient does not match parameters".into()));
        }
    }
    if let Some(i) = g.iter().position(|t| t.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFiniteGradient { tensor: i });
    }

    let AdamConfig { beta1, beta2, eps } = state.config;
    state.t += 1;
    let t = state.t as i32;
    let bc1 = T::from_f64(1.0 - beta1.powi(t));
    let bc2 = T::from_f64(1.0 - beta2.powi(t));
    let (b1, b2) = (T::from_f64(beta1), T::from_f64(beta2));
    let (one_m_b1, one_m_b2) = (T::from_f64(1.0 - beta1), T::from_f64(1.0 - beta2));
    let (lr, eps) = (T::from_f64(lr), T::from_f64(eps));

    let mut ms = state.m.tensors_mut();
    let mut vs = state.v.tensors_mut();
    for (((p, g), m), v) in params
        .tensors_mut()
        .iter_mut()
        .zip(&g)
        .zip(ms.iter_mut())
        .zip(vs.iter_mut())
    {
        Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
            *m = b1 * *m + one_m_b1 * g;
            *v = b2 * *v + one_m_b2 * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        });
    }
    Ok(())
}
