//! Training hyperparameters and the learning-rate schedule.

use inspex_autodiff::AdamConfig;
use serde::{Deserialize, Serialize};

use crate::error::{HarmonizerError, Result};
use crate::losses::LossConfig;
use crate::nets::{DiscriminatorConfig, GeneratorConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lambda_cycle: f64,
    /// First epoch of the linear decay.
    pub decay_start: usize,
    pub adam: AdamConfig,
    pub loss: LossConfig,
    /// Past fakes kept for discriminator updates; 0 disables the pool.
    pub pool_size: usize,
    pub checkpoint_every: usize,
    /// Side of random square training crops (multiple of 4); 0 trains on
    /// whole slices.
    pub crop: usize,
    /// HU window mapped to [-1, 1].
    pub window: (f32, f32),
    /// Fixed inference epoch; `None` selects by validation.
    pub inference_epoch: Option<usize>,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl TrainingConfig {
    pub fn paper() -> Self {
        Self {
            generator: GeneratorConfig::paper(),
            discriminator: DiscriminatorConfig::paper(),
            epochs: 50,
            batch_size: 12,
            lr: 2e-4,
            lambda_cycle: 10.0,
            decay_start: 25,
            adam: AdamConfig::default(),
            loss: LossConfig::default(),
            pool_size: 50,
            checkpoint_every: 1,
            crop: 0,
            window: (-1024.0, 3072.0),
            inference_epoch: None,
            seed: 0,
        }
    }

    pub fn desk() -> Self {
        Self {
            generator: GeneratorConfig::desk(),
            discriminator: DiscriminatorConfig::desk(),
            epochs: 10,
            batch_size: 4,
            decay_start: 5,
            crop: 64,
            ..Self::paper()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.discriminator.validate()?;
        let bad = |m: String| Err(HarmonizerError::Config(m));
        if self.epochs > 0 && self.decay_start >= self.epochs {
            return bad(format!("decay start {} must precede the last epoch ({})", self.decay_start, self.epochs));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(self.lambda_cycle >= 0.0 && self.lambda_cycle.is_finite()) {
            return bad(format!("cycle weight must be non-negative, got {}", self.lambda_cycle));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.checkpoint_every == 0 {
            return bad("checkpoint cadence must be at least 1 epoch".into());
        }
        if let c @ 1.. = self.crop {
            if c == 0 || c % 4 != 0 {
                return bad(format!("crop side must be a positive multiple of 4, got {c}"));
            }
        }
        if !(self.window.0 < self.window.1) {
            return bad(format!("empty window {:?}", self.window));
        }
        if let Some(e) = self.inference_epoch {
            if e > self.epochs {
                return bad(format!("inference epoch {e} is beyond the last epoch {}", self.epochs));
            }
        }
        Ok(())
    }
}

/// Constant until `decay_start`, then linear decay reaching 0 at the last
/// epoch (`epochs - 1`).
pub fn lr_schedule(epoch: usize, cfg: &TrainingConfig) -> f64 {
    if epoch < cfg.decay_start {
        return cfg.lr;
    }
    let span = cfg.epochs.saturating_sub(cfg.decay_start).max(1) as f64;
    let done = (epoch - cfg.decay_start + 1) as f64;
    (cfg.lr * (1.0 - done / span)).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn paper_schedule_values() {
        let cfg = TrainingConfig::paper();
        assert_eq!(lr_schedule(0, &cfg), 2e-4);
        assert_eq!(lr_schedule(24, &cfg), 2e-4);
        assert_eq!(lr_schedule(49, &cfg), 0.0);
        assert!((lr_schedule(25, &cfg) - 2e-4 * 24.0 / 25.0).abs() < 1e-18);
    }

    #[test]
    fn schedule_is_non_increasing_with_minimum_at_the_end() {
        for cfg in [TrainingConfig::paper(), TrainingConfig::desk()] {
            let lrs: Vec<f64> = (0..cfg.epochs).map(|e| lr_schedule(e, &cfg)).collect();
            assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
            let min = lrs.iter().cloned().fold(f64::INFINITY, f64::min);
            assert_eq!(*lrs.last().unwrap(), min);
        }
    }

    #[test]
    fn presets_validate_and_round_trip() {
        for cfg in [TrainingConfig::paper(), TrainingConfig::desk()] {
            cfg.validate().unwrap();
            let back: TrainingConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
            assert_eq!(back, cfg);
        }
        let mut c = TrainingConfig::desk();
        c.decay_start = c.epochs;
        assert!(c.validate().is_err());
        let mut c = TrainingConfig::desk();
        c.crop = 30;
        assert!(c.validate().is_err());
    }
}
