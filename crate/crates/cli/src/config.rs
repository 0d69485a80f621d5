//! Pipeline configuration: TOML with dotted nesting, strict keys and
//! `section.key=value` overrides.

use std::path::{Path, PathBuf};

use inspex_core::lungseg::QuantConfig;
use inspex_core::phantom::PhantomSpec;
use inspex_core::registration::RegistrationConfig;
use inspex_harmonizer::TrainingConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Environment variable naming the default output root.
pub const OUT_DIR_ENV: &str = "INSPEX_OUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub phantom: PhantomConfig,
    pub harmonization: HarmonizationConfig,
    pub training: TrainingConfig,
    pub registration: RegistrationConfig,
    pub quantification: QuantConfig,
    pub run: RunConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        let out_dir = std::env::var_os(OUT_DIR_ENV).map_or_else(|| PathBuf::from("inspex-out"), PathBuf::from);
        Self { out_dir }
    }
}

/// Synthetic cohorts. The evaluation cohort has `n_controls + n_cases`
/// pairs; training and validation cohorts are emphysema cases drawn with
/// their own seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhantomConfig {
    pub shape: [usize; 3],
    pub n_controls: usize,
    pub n_cases: usize,
    pub n_training: usize,
    pub n_validation: usize,
    /// Largest true displacement in voxels; 0 keeps the anatomical default.
    pub max_displacement: f64,
    /// Additive noise of the hard kernel, HU.
    pub noise_hu: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        Self {
            shape: [96, 96, 64],
            n_controls: 0,
            n_cases: 20,
            n_training: 40,
            n_validation: 6,
            max_displacement: 5.0,
            noise_hu: 30.0,
        }
    }
}

impl PhantomConfig {
    pub fn spec(&self) -> PhantomSpec {
        let mut s = PhantomSpec::desk(self.shape);
        if self.max_displacement > 0.0 {
            s = s.with_max_displacement(self.max_displacement);
        }
        s.hard.noise_hu = self.noise_hu;
        s
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarmonizationConfig {
    /// Runs the harmonized arm; off leaves a single raw arm.
    pub enabled: bool,
    /// Every n-th axial slice of each training volume is used.
    pub slice_stride: usize,
    /// Pretrained checkpoint used instead of training.
    pub checkpoint: Option<PathBuf>,
}

impl Default for HarmonizationConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            slice_stride: 4,
            checkpoint: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Case workers; 0 uses the available hardware parallelism.
    pub workers: usize,
    /// Dilation (voxels) of each lung mask before masking the registration inputs.
    pub mask_margin: usize,
    /// Writes phantom, harmonized and warped volumes next to each case.
    pub save_volumes: bool,
    /// Also writes displacement fields (three times a volume each).
    pub save_fields: bool,
    /// Tiles per side of the checkerboard previews; 0 disables them.
    pub checkerboard_tiles: usize,
    /// Reuses stage outputs whose config hash matches.
    pub reuse: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            workers: 0,
            mask_margin: 3,
            save_volumes: true,
            save_fields: false,
            checkerboard_tiles: 10,
            reuse: true,
        }
    }
}

impl RunConfig {
    pub fn worker_count(&self) -> usize {
        if self.workers > 0 {
            self.workers
        } else {
            std::thread::available_parallelism().map_or(1, |n| n.get())
        }
    }
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl PipelineConfig {
    /// Desk-scale study: 96 x 96 x 64 phantoms and the small harmonizer.
    pub fn desk() -> Self {
        Self {
            seed: 2024,
            paths: PathsConfig::default(),
            phantom: PhantomConfig::default(),
            harmonization: HarmonizationConfig::default(),
            training: TrainingConfig::desk(),
            registration: RegistrationConfig::default(),
            quantification: QuantConfig::default(),
            run: RunConfig::default(),
        }
    }

    /// Full-size harmonizer (width 64, 9 residual blocks, 50 epochs of
    /// batch 12, whole slices, fifth-epoch inference) on larger phantoms.
    pub fn paper() -> Self {
        let mut c = Self::desk();
        c.phantom.shape = [128, 128, 96];
        c.training = TrainingConfig::paper();
        c.training.inference_epoch = Some(5);
        c
    }

    /// Tiny configuration for smoke runs (32^3 grids, 2 epochs).
    pub fn smoke() -> Self {
        let mut c = Self::desk();
        c.phantom = PhantomConfig {
            shape: [32, 32, 32],
            n_controls: 1,
            n_cases: 3,
            n_training: 3,
            n_validation: 1,
            max_displacement: 2.0,
            ..PhantomConfig::default()
        };
        c.training.epochs = 2;
        c.training.decay_start = 1;
        c.training.crop = 32;
        c.training.generator.base_width = 4;
        c.training.generator.residual_blocks = 1;
        c.training.discriminator.base_width = 4;
        c.harmonization.slice_stride = 8;
        c.registration.rigid_iterations = 30;
        c.registration.affine_iterations = 30;
        c.registration.deform_iterations = 15;
        c.run.checkerboard_tiles = 4;
        // lungs of a 32^3 phantom hold about 1 mL each
        c.quantification.min_component_ml = 0.1;
        c
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.seed > i64::MAX as u64 {
            return bad(format!("seed {} does not fit a TOML integer", self.seed));
        }
        if self.phantom.n_controls + self.phantom.n_cases == 0 {
            return bad("the evaluation cohort is empty".into());
        }
        if self.harmonization.enabled && self.harmonization.checkpoint.is_none() {
            if self.phantom.n_training == 0 {
                return bad("harmonizer training needs phantom.n_training > 0".into());
            }
            if self.training.inference_epoch.is_none() && self.phantom.n_validation == 0 {
                return bad("checkpoint selection needs phantom.n_validation > 0 or training.inference_epoch".into());
            }
            if let Some(e) = self.training.inference_epoch {
                if e > self.training.epochs {
                    return bad(format!("inference epoch {e} exceeds {} training epochs", self.training.epochs));
                }
            }
        }
        if self.harmonization.slice_stride == 0 {
            return bad("harmonization.slice_stride must be positive".into());
        }
        if self.registration.stages.is_empty() {
            return bad("registration.stages is empty".into());
        }
        self.phantom.spec().validate()?;
        self.training.validate()?;
        self.registration.validate()?;
        self.quantification.validate()?;
        Ok(())
    }

    /// Parses TOML; unknown keys and type errors carry their location.
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn emit(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads `path` (when given) and applies `key=value` overrides, where the
    /// value is a TOML literal or, failing that, a bare string.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut doc: toml::Table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(inspex_core::InspexError::io(p))?;
                text.parse().map_err(|e: toml::de::Error| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => toml::Table::try_from(Self::default()).map_err(|e| CliError::Config(e.to_string()))?,
        };
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let cfg: Self = doc.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    /// Short hex digest of the canonical JSON form of `parts`.
    pub fn digest(parts: &[&serde_json::Value]) -> String {
        let mut h = Sha256::new();
        for p in parts {
            h.update(p.to_string().as_bytes());
            h.update([0]);
        }
        hex::encode(&h.finalize()[..8])
    }
}

pub fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override '{spec}' is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let value = match format!("v = {raw}").parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    };
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("bad override key '{key}'")));
    }
    let mut table = doc;
    for p in &parts[..parts.len() - 1] {
        let entry = table.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("override '{key}': '{p}' is not a section")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_and_validate() {
        for c in [PipelineConfig::desk(), PipelineConfig::paper(), PipelineConfig::smoke()] {
            c.validate().unwrap();
            assert_eq!(PipelineConfig::parse(&c.emit().unwrap()).unwrap(), c);
        }
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let text = "seed = 3\n[registration]\ncc_radius = 3\nsmoothing = 2\n";
        let err = PipelineConfig::parse(text).unwrap_err().to_string();
        assert!(err.contains("smoothing"), "{err}");
        assert!(err.contains("line 4"), "{err}");
    }

    #[test]
    fn overrides_use_dotted_keys() {
        let c = PipelineConfig::load(
            None,
            &[
                "registration.stages=[\"rigid\"]".into(),
                "training.epochs=3".into(),
                "paths.out_dir=/tmp/x".into(),
            ],
        )
        .unwrap();
        assert_eq!(c.registration.stages, [inspex_core::registration::Stage::Rigid]);
        assert_eq!(c.training.epochs, 3);
        assert_eq!(c.paths.out_dir, PathBuf::from("/tmp/x"));
        assert!(PipelineConfig::load(None, &["nonsense".into()]).is_err());
        assert!(PipelineConfig::load(None, &["phantom.colour=3".into()]).is_err());
    }

    #[test]
    fn defaults_carry_the_reference_values() {
        let c = PipelineConfig::default();
        assert_eq!(c.quantification.emphysema_threshold_hu, -950.0);
        assert_eq!(c.training.lr, 2e-4);
        assert_eq!(c.training.lambda_cycle, 10.0);
        assert_eq!(c.training.window, (-1024.0, 3072.0));
        let p = PipelineConfig::paper();
        assert_eq!((p.training.epochs, p.training.batch_size), (50, 12));
    }
}
