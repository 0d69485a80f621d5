//! Least-squares adversarial losses and the L1 cycle loss.

use inspex_autodiff::{Graph, NodeId, Scalar, Tensor};
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Constant factors on the adversarial terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub d_factor: f64,
    pub g_factor: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            d_factor: 0.5,
            g_factor: 1.0,
        }
    }
}

fn target<T: Scalar>(g: &mut Graph<T>, like: NodeId, v: f64) -> NodeId {
    let shape = g.value(like).shape().to_vec();
    g.constant(Tensor::full(&shape, T::from_f64_lossy(v)))
}

/// `f * mean((d_real - 1)^2) + f * mean(d_fake^2)` with `f = cfg.d_factor`.
pub fn lsgan_d_loss<T: Scalar>(g: &mut Graph<T>, d_real: NodeId, d_fake: NodeId, cfg: &LossConfig) -> Result<NodeId> {
    let ones = target(g, d_real, 1.0);
    let zeros = target(g, d_fake, 0.0);
    let r = g.mse_loss(d_real, ones)?;
    let f = g.mse_loss(d_fake, zeros)?;
    let s = g.add(r, f)?;
    Ok(g.mul_scalar(s, cfg.d_factor))
}

/// `g_factor * mean((d_fake - 1)^2)`.
pub fn lsgan_g_loss<T: Scalar>(g: &mut Graph<T>, d_fake: NodeId, cfg: &LossConfig) -> Result<NodeId> {
    let ones = target(g, d_fake, 1.0);
    let l = g.mse_loss(d_fake, ones)?;
    Ok(g.mul_scalar(l, cfg.g_factor))
}

/// `lambda * (mean|a - a_rec| + mean|b - b_rec|)` over both cycle directions.
pub fn cycle_loss<T: Scalar>(
    g: &mut Graph<T>,
    a: NodeId,
    a_rec: NodeId,
    b: NodeId,
    b_rec: NodeId,
    lambda: f64,
) -> Result<NodeId> {
    let la = g.l1_loss(a, a_rec)?;
    let lb = g.l1_loss(b, b_rec)?;
    let s = g.add(la, lb)?;
    Ok(g.mul_scalar(s, lambda))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn filled(g: &mut Graph<f64>, v: f64) -> NodeId {
        g.param(Tensor::full(&[2, 1, 3, 3], v))
    }

    fn value(g: &Graph<f64>, id: NodeId) -> f64 {
        g.value(id).item().unwrap()
    }

    #[test]
    fn discriminator_loss_examples() {
        let cfg = LossConfig::default();
        for (real, fake, want) in [(1.0, 0.0, 0.0), (0.0, 1.0, 1.0), (0.5, 0.5, 0.25)] {
            let mut g = Graph::new();
            let (r, f) = (filled(&mut g, real), filled(&mut g, fake));
            let l = lsgan_d_loss(&mut g, r, f, &cfg).unwrap();
            assert!((value(&g, l) - want).abs() < 1e-15);
        }
    }

    #[test]
    fn generator_loss_examples() {
        let cfg = LossConfig::default();
        for (fake, want) in [(1.0, 0.0), (0.0, 1.0), (0.5, 0.25)] {
            let mut g = Graph::new();
            let f = filled(&mut g, fake);
            let l = lsgan_g_loss(&mut g, f, &cfg).unwrap();
            assert!((value(&g, l) - want).abs() < 1e-15);
        }
    }

    #[test]
    fn cycle_loss_examples() {
        let mut g = Graph::new();
        let a = filled(&mut g, 0.3);
        let a_off = filled(&mut g, 0.4);
        let b = filled(&mut g, -0.2);
        let l = cycle_loss(&mut g, a, a, b, b, 10.0).unwrap();
        assert_eq!(value(&g, l), 0.0);
        // offset 0.1 in one direction only: 10 * 0.1
        let l = cycle_loss(&mut g, a, a_off, b, b, 10.0).unwrap();
        assert!((value(&g, l) - 1.0).abs() < 1e-12);
        let l = cycle_loss(&mut g, a, a_off, b, a_off, 0.0).unwrap();
        assert_eq!(value(&g, l), 0.0);
    }

    #[test]
    fn mismatched_logit_shapes_are_rejected() {
        let mut g = Graph::<f64>::new();
        let r = g.param(Tensor::zeros(&[1, 1, 2, 2]));
        let f = g.param(Tensor::zeros(&[1, 1, 3, 3]));
        let bad = g.l1_loss(r, f);
        assert!(bad.is_err());
    }
}
