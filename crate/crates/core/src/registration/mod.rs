//! Rigid, affine and symmetric diffeomorphic registration in index space.
//!
//! Conventions: the fixed image defines the output grid. A forward field `u`
//! resamples the moving image into fixed space, `warped(x) = moving(x + u(x))`.

mod affine;
mod field;
mod linear;
mod pyramid;
mod syn;

use serde::{Deserialize, Serialize};

pub use affine::{euler_rotation, rotation_angles, transform_volume, transform_volume_fill, AffineTransform, TransformKind};
pub use field::{
    compose_fields, exponentiate, invert_field, jacobian_determinant, warp_mask, warp_volume, warp_volume_fill,
    DisplacementField, Inversion, DEFAULT_INVERSION_ITERATIONS, NIFTI_INTENT_VECTOR,
};
pub use linear::{register_affine, register_rigid, LinearOutcome};
pub use syn::{register_deformable, register_deformable_stages, DeformableOutcome};

use crate::error::{InspexError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Rigid,
    Affine,
    #[serde(alias = "deform-half")]
    DeformHalf,
    #[serde(alias = "deform-full")]
    DeformFull,
}

impl Stage {
    pub const ALL: [Stage; 4] = [Stage::Rigid, Stage::Affine, Stage::DeformHalf, Stage::DeformFull];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Rigid => "rigid",
            Stage::Affine => "affine",
            Stage::DeformHalf => "deform_half",
            Stage::DeformFull => "deform_full",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "rigid" => Ok(Stage::Rigid),
            "affine" => Ok(Stage::Affine),
            "deform_half" => Ok(Stage::DeformHalf),
            "deform_full" => Ok(Stage::DeformFull),
            other => Err(InspexError::Argument(format!("unknown registration stage '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    LocalCc,
    Mse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DeformLevel {
    Half,
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegistrationConfig {
    pub stages: Vec<Stage>,
    pub rigid_iterations: usize,
    pub affine_iterations: usize,
    /// Cap per pyramid level of the deformable stage.
    pub deform_iterations: usize,
    pub metric: Similarity,
    pub cc_radius: usize,
    /// Gaussian sigma (voxels) applied to each update field.
    pub sigma_update: f64,
    /// Gaussian sigma (voxels) applied to the accumulated fields.
    pub sigma_total: f64,
    /// Largest update vector per deformable iteration, in voxels of the level.
    pub gradient_step: f64,
    /// Initial step of the linear optimizer, in voxels of the level.
    pub linear_step: f64,
    pub squaring_steps: u32,
    /// Relative metric change below which a level is considered converged.
    pub tolerance: f64,
    /// Shrink factors of the linear pyramid, coarsest first.
    pub linear_shrinks: Vec<usize>,
    /// Deformable levels run before the half-resolution level, coarsest first.
    pub deform_coarse_shrinks: Vec<usize>,
    pub inversion_iterations: usize,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        Self {
            stages: Stage::ALL.to_vec(),
            rigid_iterations: 200,
            affine_iterations: 200,
            deform_iterations: 100,
            metric: Similarity::LocalCc,
            cc_radius: 3,
            sigma_update: 3.0,
            sigma_total: 0.5,
            gradient_step: 0.25,
            linear_step: 1.0,
            squaring_steps: 6,
            tolerance: 1e-6,
            linear_shrinks: vec![4, 2, 1],
            deform_coarse_shrinks: vec![4],
            inversion_iterations: DEFAULT_INVERSION_ITERATIONS,
        }
    }
}

impl RegistrationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(InspexError::Argument(format!("registration config: {m}")));
        if !(self.sigma_update >= 0.0 && self.sigma_total >= 0.0) {
            return bad("smoothing sigmas must be non-negative");
        }
        if self.cc_radius < 1 {
            return bad("CC window radius must be at least 1");
        }
        if !(self.gradient_step > 0.0 && self.linear_step > 0.0) {
            return bad("step sizes must be positive");
        }
        if !(self.tolerance >= 0.0) {
            return bad("tolerance must be non-negative");
        }
        if self.linear_shrinks.is_empty() || self.linear_shrinks.iter().any(|&s| s == 0) {
            return bad("linear pyramid needs positive shrink factors");
        }
        if self.deform_coarse_shrinks.windows(2).any(|w| w[0] <= w[1]) || self.deform_coarse_shrinks.iter().any(|&s| s <= 2) {
            return bad("coarse deformable shrinks must be decreasing and above 2");
        }
        if self.squaring_steps > 20 {
            return bad("at most 20 squaring steps");
        }
        Ok(())
    }

    pub fn has(&self, s: Stage) -> bool {
        self.stages.contains(&s)
    }
}

/// Metric values of one pyramid level, one entry per accepted iterate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelTrace {
    pub shrink: usize,
    pub metric: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl LevelTrace {
    /// Largest drop between consecutive metric values (0 when monotone).
    pub fn largest_dip(&self) -> f64 {
        self.metric.windows(2).map(|w| w[0] - w[1]).fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug)]
pub struct RegistrationResult {
    pub level: DeformLevel,
    /// Moving-to-fixed resampling field on the fixed grid (includes the initial transform).
    pub forward: crate::registration::DisplacementField,
    /// Fixed-to-moving resampling field on the moving grid.
    pub inverse: crate::registration::DisplacementField,
    pub warped: crate::volume::Volume,
    pub inverse_warped: crate::volume::Volume,
    pub trace: Vec<LevelTrace>,
    /// Set when a level hit its cap or the field inversion left a large residual.
    pub warning: Option<String>,
}
