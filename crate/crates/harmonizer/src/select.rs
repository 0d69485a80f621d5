//! Checkpoint choice by agreement of harmonized and soft-kernel emphysema scores.

use std::path::{Path, PathBuf};

use inspex_core::lungseg::{emphysema_percent, segment_lungs, QuantConfig};
use inspex_core::{InspexError, Volume};
use serde::{Deserialize, Serialize};

use crate::error::{HarmonizerError, Result};
use crate::infer::harmonize_volume;
use crate::train::load_generator;

/// A held-out pair: the same anatomy under the hard and the soft kernel.
#[derive(Clone, Debug)]
pub struct ValidationCase {
    pub id: String,
    pub hard: Volume,
    pub soft: Volume,
}

fn score(v: &Volume, quant: &QuantConfig) -> Result<f64> {
    let lung = segment_lungs(v, quant)?;
    Ok(emphysema_percent(v, &lung.mask, quant)?)
}

/// `|E(harmonized) - E(soft)|`, each image segmented on its own.
pub fn emphysema_gap(harmonized: &Volume, soft: &Volume, quant: &QuantConfig) -> Result<f64> {
    Ok((score(harmonized, quant)? - score(soft, quant)?).abs())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointScore {
    pub epoch: usize,
    pub path: PathBuf,
    pub median_gap: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub epoch: usize,
    pub path: PathBuf,
    pub scores: Vec<CheckpointScore>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn score_checkpoint(path: &Path, cases: &[ValidationCase], quant: &QuantConfig) -> Result<f64> {
    let (net, window) = load_generator(path)?;
    let mut gaps = Vec::with_capacity(cases.len());
    for c in cases {
        match emphysema_gap(&harmonize_volume(&c.hard, &net, window)?, &c.soft, quant) {
            Ok(g) => gaps.push(g),
            // no lung found in the translated image: unusable checkpoint
            Err(HarmonizerError::Inspex(InspexError::InsufficientData(m))) => {
                log::warn!("{}: case {}: {m}", path.display(), c.id);
                gaps.push(f64::INFINITY);
            }
            Err(e) => return Err(e),
        }
    }
    Ok(median(gaps))
}

/// Picks the checkpoint with the smallest median gap over `cases`; ties go
/// to the earlier epoch.
pub fn select_checkpoint(checkpoints: &[(usize, PathBuf)], cases: &[ValidationCase], quant: &QuantConfig) -> Result<Selection> {
    if checkpoints.is_empty() || cases.is_empty() {
        return Err(HarmonizerError::Usage(format!(
            "selection needs checkpoints and validation cases ({} and {})",
            checkpoints.len(),
            cases.len()
        )));
    }
    let mut scores = Vec::with_capacity(checkpoints.len());
    for (epoch, path) in checkpoints {
        let median_gap = score_checkpoint(path, cases, quant)?;
        log::info!("checkpoint epoch {epoch}: median emphysema gap {median_gap:.3}");
        scores.push(CheckpointScore { epoch: *epoch, path: path.clone(), median_gap });
    }
    let best = scores
        .iter()
        .min_by(|a, b| a.median_gap.total_cmp(&b.median_gap).then(a.epoch.cmp(&b.epoch)))
        .expect("non-empty");
    Ok(Selection { epoch: best.epoch, path: best.path.clone(), scores: scores.clone() })
}
