//! Threshold + connected-component lung segmentation and emphysema scoring.

use serde::{Deserialize, Serialize};

use crate::error::{InspexError, Result};
use crate::volume::{BinaryMask, Grid, Volume};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuantConfig {
    /// Voxels strictly below this value count as emphysema.
    pub emphysema_threshold_hu: f32,
    /// Voxels below this value are air candidates for the lung mask.
    pub air_threshold_hu: f32,
    pub min_component_ml: f64,
    pub closing_radius: usize,
    /// 26 (face, edge and corner neighbours) or 6 (faces only).
    pub connectivity: u8,
}

impl Default for QuantConfig {
    fn default() -> Self {
        Self {
            emphysema_threshold_hu: -950.0,
            air_threshold_hu: -320.0,
            min_component_ml: 1.0,
            closing_radius: 2,
            connectivity: 26,
        }
    }
}

impl QuantConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.emphysema_threshold_hu < self.air_threshold_hu && self.air_threshold_hu < 0.0) {
            return Err(InspexError::Argument(format!(
                "thresholds must satisfy emphysema ({}) < air ({}) < 0",
                self.emphysema_threshold_hu, self.air_threshold_hu
            )));
        }
        if !(self.min_component_ml >= 0.0) {
            return Err(InspexError::Argument("minimum component volume must be non-negative".into()));
        }
        if self.connectivity != 6 && self.connectivity != 26 {
            return Err(InspexError::Argument(format!("connectivity must be 6 or 26, got {}", self.connectivity)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LungMask {
    pub mask: BinaryMask,
    /// Set when no lung component survived.
    pub warning: Option<String>,
}

fn neighbour_offsets(connectivity: u8) -> Vec<[i64; 3]> {
    let mut out = Vec::new();
    for dz in -1i64..=1 {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let manhattan = dx.abs() + dy.abs() + dz.abs();
                if manhattan == 0 || (connectivity == 6 && manhattan > 1) {
                    continue;
                }
                out.push([dx, dy, dz]);
            }
        }
    }
    out
}

/// Component labels (0 = background, 1.. = components) and per-label sizes.
pub fn label_components(mask: &BinaryMask, connectivity: u8) -> (Vec<u32>, Vec<u64>) {
    let shape = mask.shape();
    let bits = mask.bits();
    let offs = neighbour_offsets(connectivity);
    let mut labels = vec![0u32; bits.len()];
    let mut sizes = vec![0u64];
    let mut stack = Vec::new();
    let [nx, ny, nz] = shape.map(|n| n as i64);
    for seed in 0..bits.len() {
        if !bits[seed] || labels[seed] != 0 {
            continue;
        }
        let label = sizes.len() as u32;
        sizes.push(0);
        labels[seed] = label;
        stack.push(seed);
        while let Some(i) = stack.pop() {
            sizes[label as usize] += 1;
            let (x, y, z) = ((i % shape[0]) as i64, ((i / shape[0]) % shape[1]) as i64, (i / (shape[0] * shape[1])) as i64);
            for o in &offs {
                let (a, b, c) = (x + o[0], y + o[1], z + o[2]);
                if a < 0 || b < 0 || c < 0 || a >= nx || b >= ny || c >= nz {
                    continue;
                }
                let j = (a + nx * (b + ny * c)) as usize;
                if bits[j] && labels[j] == 0 {
                    labels[j] = label;
                    stack.push(j);
                }
            }
        }
    }
    (labels, sizes)
}

fn ball_offsets(radius: usize) -> Vec<[i64; 3]> {
    let r = radius as i64;
    let mut out = Vec::new();
    for dz in -r..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy + dz * dz <= r * r {
                    out.push([dx, dy, dz]);
                }
            }
        }
    }
    out
}

/// Binary dilation by a Euclidean ball; voxels outside the grid are unset.
pub fn dilate(mask: &BinaryMask, radius: usize) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let shape = mask.shape();
    let offs = ball_offsets(radius);
    let mut out = mask.clone();
    let [nx, ny, nz] = shape.map(|n| n as i64);
    let bits = mask.bits();
    let ob = out.bits_mut();
    for i in 0..bits.len() {
        if !bits[i] {
            continue;
        }
        let (x, y, z) = ((i % shape[0]) as i64, ((i / shape[0]) % shape[1]) as i64, (i / (shape[0] * shape[1])) as i64);
        for o in &offs {
            let (a, b, c) = (x + o[0], y + o[1], z + o[2]);
            if a >= 0 && b >= 0 && c >= 0 && a < nx && b < ny && c < nz {
                ob[(a + nx * (b + ny * c)) as usize] = true;
            }
        }
    }
    out
}

/// Binary erosion by a Euclidean ball; voxels outside the grid count as set so
/// that the border itself does not erode.
pub fn erode(mask: &BinaryMask, radius: usize) -> BinaryMask {
    if radius == 0 {
        return mask.clone();
    }
    let complement = BinaryMask::new(mask.shape(), mask.bits().iter().map(|b| !b).collect()).expect("same shape");
    let grown = dilate(&complement, radius);
    BinaryMask::new(mask.shape(), grown.bits().iter().map(|b| !b).collect()).expect("same shape")
}

pub fn close(mask: &BinaryMask, radius: usize) -> BinaryMask {
    erode(&dilate(mask, radius), radius)
}

fn touches_boundary(labels: &[u32], shape: [usize; 3], n_labels: usize) -> Vec<bool> {
    let mut touch = vec![false; n_labels];
    let mut i = 0;
    for z in 0..shape[2] {
        for y in 0..shape[1] {
            for x in 0..shape[0] {
                if x == 0 || y == 0 || z == 0 || x + 1 == shape[0] || y + 1 == shape[1] || z + 1 == shape[2] {
                    touch[labels[i] as usize] = true;
                }
                i += 1;
            }
        }
    }
    touch
}

pub fn segment_lungs(v: &Volume, cfg: &QuantConfig) -> Result<LungMask> {
    cfg.validate()?;
    let air = BinaryMask::from_volume(v, |x| x < cfg.air_threshold_hu);
    let (labels, sizes) = label_components(&air, cfg.connectivity);
    let touch = touches_boundary(&labels, v.shape(), sizes.len());
    let ml = v.grid().voxel_ml();
    let keep: Vec<bool> = (0..sizes.len())
        .map(|l| l != 0 && !touch[l] && sizes[l] as f64 * ml >= cfg.min_component_ml)
        .collect();
    let raw = BinaryMask::new(v.shape(), labels.iter().map(|&l| keep[l as usize]).collect())?;
    let mask = close(&raw, cfg.closing_radius);
    let warning = mask.is_empty().then(|| "no lung component found".to_string());
    Ok(LungMask { mask, warning })
}

/// Lung voxels strictly below the emphysema threshold.
pub fn emphysema_mask(v: &Volume, lung: &BinaryMask, cfg: &QuantConfig) -> Result<BinaryMask> {
    lung.check_shape(v.shape())?;
    let t = cfg.emphysema_threshold_hu;
    BinaryMask::new(
        v.shape(),
        v.data().iter().zip(lung.bits()).map(|(&x, &l)| l && x < t).collect(),
    )
}

/// `100 * |emphysema| / |lung|`.
pub fn emphysema_percent(v: &Volume, lung: &BinaryMask, cfg: &QuantConfig) -> Result<f64> {
    let n = lung.count();
    if n == 0 {
        return Err(InspexError::InsufficientData("emphysema score undefined for an empty lung mask".into()));
    }
    let e = emphysema_mask(v, lung, cfg)?.count();
    Ok(100.0 * e as f64 / n as f64)
}

pub fn mask_volume_ml(mask: &BinaryMask, grid: &Grid) -> f64 {
    mask.count() as f64 * grid.voxel_ml()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: [usize; 3]) -> Grid {
        Grid::new(n, [1.0; 3]).unwrap()
    }

    fn cfg() -> QuantConfig {
        QuantConfig {
            min_component_ml: 0.0,
            closing_radius: 0,
            ..QuantConfig::default()
        }
    }

    #[test]
    fn thresholds_are_validated() {
        let mut c = QuantConfig::default();
        c.emphysema_threshold_hu = -300.0;
        assert!(c.validate().is_err());
        c = QuantConfig::default();
        c.air_threshold_hu = 10.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn tissue_only_gives_empty_mask_with_warning() {
        let v = Volume::filled(grid([8, 8, 8]), 40.0).unwrap();
        let r = segment_lungs(&v, &QuantConfig::default()).unwrap();
        assert!(r.mask.is_empty());
        assert!(r.warning.is_some());
    }

    #[test]
    fn boundary_air_is_rejected() {
        let v = Volume::filled(grid([8, 8, 8]), -1000.0).unwrap();
        assert!(segment_lungs(&v, &cfg()).unwrap().mask.is_empty());
    }

    #[test]
    fn enclosed_air_is_kept_and_outside_air_dropped() {
        let g = grid([20, 12, 12]);
        let v = Volume::from_fn(g, |x, y, z| {
            let inside_body = (2..18).contains(&x) && (2..10).contains(&y) && (2..10).contains(&z);
            let lung = (5..9).contains(&x) && (4..8).contains(&y) && (4..8).contains(&z);
            if lung {
                -850.0
            } else if inside_body {
                40.0
            } else {
                -1000.0
            }
        })
        .unwrap();
        let m = segment_lungs(&v, &cfg()).unwrap().mask;
        assert_eq!(m.count(), 64);
        assert!(m.get(6, 5, 5) && !m.get(0, 0, 0));
    }

    #[test]
    fn small_components_are_dropped() {
        let g = grid([12, 12, 12]);
        let v = Volume::from_fn(g, |x, y, z| if x == 5 && y == 5 && z == 5 { -900.0 } else { 40.0 }).unwrap();
        let c = QuantConfig {
            min_component_ml: 0.002,
            ..cfg()
        };
        assert!(segment_lungs(&v, &c).unwrap().mask.is_empty());
        assert_eq!(segment_lungs(&v, &cfg()).unwrap().mask.count(), 1);
    }

    #[test]
    fn closing_fills_a_vessel() {
        let g = grid([16, 16, 16]);
        let v = Volume::from_fn(g, |x, y, z| {
            let lung = (3..13).contains(&x) && (3..13).contains(&y) && (3..13).contains(&z);
            if lung && !(x == 8 && y == 8 && (5..10).contains(&z)) {
                -850.0
            } else {
                40.0
            }
        })
        .unwrap();
        let open = segment_lungs(&v, &cfg()).unwrap().mask;
        let closed = segment_lungs(&v, &QuantConfig { closing_radius: 2, ..cfg() }).unwrap().mask;
        assert_eq!(open.count(), 1000 - 5);
        assert_eq!(closed.count(), 1000);
    }

    #[test]
    fn connectivity_changes_diagonal_joins() {
        let m = BinaryMask::from_fn([3, 3, 3], |x, y, z| (x, y, z) == (0, 0, 0) || (x, y, z) == (1, 1, 1));
        assert_eq!(label_components(&m, 26).1.len(), 2);
        assert_eq!(label_components(&m, 6).1.len(), 3);
    }

    #[test]
    fn emphysema_scores() {
        let g = grid([4, 4, 4]);
        let lung = BinaryMask::full(g.shape);
        let c = QuantConfig::default();
        let all = Volume::filled(g.clone(), -1000.0).unwrap();
        assert_eq!(emphysema_mask(&all, &lung, &c).unwrap(), lung);
        let none = Volume::filled(g.clone(), -850.0).unwrap();
        assert!(emphysema_mask(&none, &lung, &c).unwrap().is_empty());
        assert_eq!(emphysema_percent(&none, &lung, &c).unwrap(), 0.0);
        let half = Volume::from_fn(g.clone(), |x, _, _| if x < 2 { -1000.0 } else { -800.0 }).unwrap();
        assert_eq!(emphysema_percent(&half, &lung, &c).unwrap(), 50.0);
        let at = Volume::filled(g.clone(), -950.0).unwrap();
        assert_eq!(emphysema_percent(&at, &lung, &c).unwrap(), 0.0);
        assert!(emphysema_percent(&all, &BinaryMask::empty(g.shape), &c).is_err());
    }
}
