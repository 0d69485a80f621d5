//! Evaluation: mask overlap, checkerboard overlays, distribution summaries,
//! paired tests and study-report assembly.

mod report;
mod stats;

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{InspexError, Result};
use crate::volume::{BinaryMask, Volume};

pub use report::{
    build_report, dice_column, ArmRecord, BoxplotSummary, CaseRecord, Cell, ColumnSummary, ReportRow, StudyReport,
    TestRecord,
};
pub use stats::{
    normal_sf, paired_t_test, regularized_incomplete_beta, student_t_sf, wilcoxon_signed_rank, TTest, Wilcoxon,
    WILCOXON_EXACT_MAX_N,
};

/// Dice coefficient. Two empty masks score 1.0 and carry `empty_pair`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiceScore {
    pub value: f64,
    pub empty_pair: bool,
}

pub fn dice(a: &BinaryMask, b: &BinaryMask) -> Result<DiceScore> {
    b.check_shape(a.shape())?;
    let (mut na, mut nb, mut both) = (0u64, 0u64, 0u64);
    for (&x, &y) in a.bits().iter().zip(b.bits()) {
        na += x as u64;
        nb += y as u64;
        both += (x && y) as u64;
    }
    if na + nb == 0 {
        return Ok(DiceScore {
            value: 1.0,
            empty_pair: true,
        });
    }
    Ok(DiceScore {
        value: 2.0 * both as f64 / (na + nb) as f64,
        empty_pair: false,
    })
}

/// Axial-plane checkerboard of `n x n` tiles; tile (0, 0) comes from `fixed`.
pub fn checkerboard(fixed: &Volume, warped: &Volume, n: usize) -> Result<Volume> {
    if fixed.shape() != warped.shape() {
        return Err(InspexError::Shape(fixed.shape(), warped.shape()));
    }
    if n < 2 {
        return Err(InspexError::Argument(format!("checkerboard needs at least 2 tiles per side, got {n}")));
    }
    let [nx, ny, _] = fixed.shape();
    let (f, w) = (fixed.data(), warped.data());
    Volume::from_fn(fixed.grid().clone(), |x, y, z| {
        let i = x + nx * (y + ny * z);
        if (tile_index(x, nx, n) + tile_index(y, ny, n)) % 2 == 0 {
            f[i]
        } else {
            w[i]
        }
    })
}

fn tile_index(p: usize, len: usize, n: usize) -> usize {
    p * n / len
}

/// One axial slice as 8-bit gray, linearly windowed to `[lo, hi]` HU.
/// Rows run along y, columns along x.
pub fn slice_to_gray8(v: &Volume, z: usize, window: (f32, f32)) -> Result<Vec<u8>> {
    let nz = v.shape()[2];
    if z >= nz {
        return Err(InspexError::Argument(format!("slice {z} outside 0..{nz}")));
    }
    let (lo, hi) = window;
    if !(hi > lo) {
        return Err(InspexError::Argument(format!("empty window [{lo}, {hi}]")));
    }
    Ok(v.axial_slice(z)
        .iter()
        .map(|&x| ((x - lo) / (hi - lo) * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect())
}

/// Writes an axial slice as an 8-bit grayscale PNG.
pub fn write_slice_png(v: &Volume, z: usize, window: (f32, f32), path: &Path) -> Result<()> {
    let [nx, ny, _] = v.shape();
    let gray = slice_to_gray8(v, z, window)?;
    let img = image::GrayImage::from_raw(nx as u32, ny as u32, gray)
        .ok_or_else(|| InspexError::Data("slice buffer does not match its dimensions".into()))?;
    let mut bytes = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png)
        .map_err(|e| InspexError::Format(format!("png encoding failed: {e}")))?;
    crate::io::write_atomic(path, &bytes)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub median: f64,
    pub min: f64,
    pub max: f64,
}

/// Median (mean of the two middle values for even n), min and max.
pub fn summarize(values: &[f64]) -> Result<Summary> {
    let sorted = sorted_finite(values)?;
    Ok(Summary {
        n: sorted.len(),
        median: quantile_sorted(&sorted, 0.5),
        min: sorted[0],
        max: sorted[sorted.len() - 1],
    })
}

/// Quartiles, 1.5 IQR whiskers and the points beyond them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxplotStats {
    pub n: usize,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

pub fn boxplot_stats(values: &[f64]) -> Result<BoxplotStats> {
    let sorted = sorted_finite(values)?;
    let q1 = quantile_sorted(&sorted, 0.25);
    let q3 = quantile_sorted(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside = || sorted.iter().copied().filter(|&v| v >= lo && v <= hi);
    Ok(BoxplotStats {
        n: sorted.len(),
        q1,
        median: quantile_sorted(&sorted, 0.5),
        q3,
        whisker_low: inside().next().unwrap_or(q1),
        whisker_high: inside().last().unwrap_or(q3),
        outliers: sorted.iter().copied().filter(|&v| v < lo || v > hi).collect(),
    })
}

fn sorted_finite(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(InspexError::InsufficientData("no values to summarize".into()));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(InspexError::Data(format!("non-finite value {v} in sample")));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// Linear interpolation between order statistics (`q` in [0, 1]).
fn quantile_sorted(s: &[f64], q: f64) -> f64 {
    let pos = q * (s.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        s[lo]
    } else {
        let t = pos - lo as f64;
        // mean of the two middles is computed symmetrically to stay exact
        if t == 0.5 {
            (s[lo] + s[hi]) / 2.0
        } else {
            s[lo] + t * (s[hi] - s[lo])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid;

    fn mask_with(shape: [usize; 3], idx: impl IntoIterator<Item = usize>) -> BinaryMask {
        let mut m = BinaryMask::empty(shape);
        for i in idx {
            m.bits_mut()[i] = true;
        }
        m
    }

    #[test]
    fn dice_plug_in() {
        let shape = [20, 10, 1];
        // |A| = 100, |B| = 60, overlap 40
        let a = mask_with(shape, 0..100);
        let b = mask_with(shape, 60..120);
        let d = dice(&a, &b).unwrap();
        assert_eq!(d.value, 0.5);
        assert!(!d.empty_pair);
    }

    #[test]
    fn dice_edge_cases() {
        let shape = [4, 4, 4];
        let a = mask_with(shape, 0..10);
        let b = mask_with(shape, 20..30);
        assert_eq!(dice(&a, &a).unwrap().value, 1.0);
        assert_eq!(dice(&a, &b).unwrap().value, 0.0);
        let e = BinaryMask::empty(shape);
        assert_eq!(dice(&e, &e).unwrap(), DiceScore { value: 1.0, empty_pair: true });
        assert_eq!(dice(&a, &e).unwrap().value, 0.0);
        assert!(dice(&a, &BinaryMask::empty([4, 4, 3])).is_err());
    }

    #[test]
    fn checkerboard_tiles() {
        let g = Grid::new([512, 512, 1], [1.0; 3]).unwrap();
        let f = Volume::filled(g.clone(), 0.0).unwrap();
        let w = Volume::filled(g, 1.0).unwrap();
        let c = checkerboard(&f, &w, 10).unwrap();
        assert_eq!(c.at(0, 0, 0), 0.0);
        // tile widths along x are 51 or 52 and there are 10 of them
        let row: Vec<f32> = (0..512).map(|x| c.at(x, 0, 0)).collect();
        let mut widths = vec![];
        let mut run = 1;
        for x in 1..512 {
            if row[x] == row[x - 1] {
                run += 1;
            } else {
                widths.push(run);
                run = 1;
            }
        }
        widths.push(run);
        assert_eq!(widths.len(), 10);
        assert!(widths.iter().all(|&w| w == 51 || w == 52), "{widths:?}");
        assert_eq!(checkerboard(&f, &f, 10).unwrap().data(), f.data());
        assert!(checkerboard(&f, &w, 1).is_err());
    }

    #[test]
    fn gray8_window() {
        let g = Grid::new([3, 1, 1], [1.0; 3]).unwrap();
        let v = Volume::new(g, vec![-2000.0, -512.0, 100.0]).unwrap();
        assert_eq!(slice_to_gray8(&v, 0, (-1024.0, 0.0)).unwrap(), vec![0, 128, 255]);
    }

    #[test]
    fn summaries() {
        let s = summarize(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!((s.median, s.min, s.max, s.n), (2.0, 1.0, 3.0, 3));
        assert_eq!(summarize(&[1.0, 2.0, 3.0, 4.0]).unwrap().median, 2.5);
        let s = summarize(&[7.0]).unwrap();
        assert_eq!((s.median, s.min, s.max), (7.0, 7.0, 7.0));
        assert!(summarize(&[]).is_err());
        assert!(summarize(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn boxplot_whiskers_and_outliers() {
        let mut v: Vec<f64> = (1..=9).map(f64::from).collect();
        v.push(100.0);
        let b = boxplot_stats(&v).unwrap();
        assert_eq!(b.q1, 3.25);
        assert_eq!(b.median, 5.5);
        assert_eq!(b.q3, 7.75);
        assert_eq!(b.whisker_low, 1.0);
        assert_eq!(b.whisker_high, 9.0);
        assert_eq!(b.outliers, vec![100.0]);
    }
}
