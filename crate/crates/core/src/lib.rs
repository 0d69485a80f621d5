//! Paired inspiratory/expiratory chest CT analysis: volumes and NIfTI I/O,
//! synthetic lung phantoms with reconstruction-kernel simulation, classical
//! lung segmentation and emphysema scoring, rigid/affine/symmetric
//! diffeomorphic registration, and the statistics used to evaluate them.

pub mod error;
pub mod filter;
pub mod io;
pub mod lungseg;
pub mod metrics;
pub mod phantom;
pub mod registration;
pub mod volume;

pub use error::{InspexError, Result};
pub use volume::{BinaryMask, Grid, NormalizedVolume, Volume};
