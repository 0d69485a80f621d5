use serde::{Deserialize, Serialize};

use crate::error::{AutogradError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        // beta1 = 0.5 follows the usual GAN training setup
        Self {
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First/second moment buffers, one per parameter tensor.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new<'a>(params: impl IntoIterator<Item = &'a Tensor<T>>, config: AdamConfig) -> Self {
        let (m, v) = params
            .into_iter()
            .map(|p| (Tensor::zeros(p.shape()), Tensor::zeros(p.shape())))
            .unzip();
        Self {
            config,
            step: 0,
            m,
            v,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[&Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(AutogradError::arg(
            "adam_step",
            format!(
                "{} params, {} grads, {} moment buffers",
                params.len(),
                grads.len(),
                state.m.len()
            ),
        ));
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(AutogradError::shape("adam_step", p.shape(), g.shape()));
        }
    }
    state.step += 1;
    let AdamConfig { beta1, beta2, eps } = state.config;
    let t = state.step as i32;
    let bc1 = 1.0 - beta1.powi(t);
    let bc2 = 1.0 - beta2.powi(t);
    let (b1, b2) = (T::from_f64_lossy(beta1), T::from_f64_lossy(beta2));
    let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
    let step_size = T::from_f64_lossy(lr / bc1);
    let inv_bc2_sqrt = T::from_f64_lossy(1.0 / bc2.sqrt());
    let eps = T::from_f64_lossy(eps);
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, w) in p.data_mut().iter_mut().enumerate() {
            m[j] = b1 * m[j] + one_b1 * g[j];
            v[j] = b2 * v[j] + one_b2 * g[j] * g[j];
            *w = *w - step_size * m[j] / (v[j].sqrt() * inv_bc2_sqrt + eps);
        }
    }
    Ok(())
}
