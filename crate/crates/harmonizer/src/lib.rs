//! Unpaired HARD -> SOFT reconstruction-kernel translation of axial CT slices
//! with a cycle-consistent pair of ResNet generators and PatchGAN
//! discriminators trained under least-squares adversarial losses.

mod error;
mod infer;
mod losses;
mod nets;
mod pool;
mod schedule;
mod select;
mod train;

pub use error::{HarmonizerError, Result};
pub use infer::{harmonize_volume, IdentityTranslator, SliceTranslator};
pub use losses::{cycle_loss, lsgan_d_loss, lsgan_g_loss, LossConfig};
pub use nets::{DiscriminatorConfig, DiscriminatorNet, GeneratorConfig, GeneratorNet, ParamSet};
pub use pool::ReplayPool;
pub use schedule::{lr_schedule, TrainingConfig};
pub use select::{emphysema_gap, select_checkpoint, CheckpointScore, Selection, ValidationCase};
pub use train::{checkpoint_name, load_generator, train, volume_slices, CycleModel, EpochLog, TrainingOutcome, TrainingSlices, LOG_COLUMNS};
