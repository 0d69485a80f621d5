use serde::{Deserialize, Serialize};

use super::{Grid, Volume};
use crate::error::{InspexError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interp {
    Linear,
    Nearest,
}

/// Trilinear sample of an x-fastest buffer at continuous index `p`, clamping to the edge.
#[inline]
pub fn sample_linear(data: &[f32], shape: [usize; 3], p: [f64; 3]) -> f32 {
    let mut i0 = [0usize; 3];
    let mut i1 = [0usize; 3];
    let mut t = [0f64; 3];
    for a in 0..3 {
        let hi = (shape[a] - 1) as f64;
        let c = p[a].clamp(0.0, hi);
        let f = c.floor();
        i0[a] = f as usize;
        i1[a] = (i0[a] + 1).min(shape[a] - 1);
        t[a] = c - f;
    }
    let (nx, nxy) = (shape[0], shape[0] * shape[1]);
    let at = |x: usize, y: usize, z: usize| data[x + nx * y + nxy * z] as f64;
    let c00 = at(i0[0], i0[1], i0[2]) * (1.0 - t[0]) + at(i1[0], i0[1], i0[2]) * t[0];
    let c10 = at(i0[0], i1[1], i0[2]) * (1.0 - t[0]) + at(i1[0], i1[1], i0[2]) * t[0];
    let c01 = at(i0[0], i0[1], i1[2]) * (1.0 - t[0]) + at(i1[0], i0[1], i1[2]) * t[0];
    let c11 = at(i0[0], i1[1], i1[2]) * (1.0 - t[0]) + at(i1[0], i1[1], i1[2]) * t[0];
    let c0 = c00 * (1.0 - t[1]) + c10 * t[1];
    let c1 = c01 * (1.0 - t[1]) + c11 * t[1];
    (c0 * (1.0 - t[2]) + c1 * t[2]) as f32
}

#[inline]
pub(crate) fn sample_nearest(data: &[f32], shape: [usize; 3], p: [f64; 3]) -> f32 {
    let mut idx = [0usize; 3];
    for a in 0..3 {
        idx[a] = p[a].round().clamp(0.0, (shape[a] - 1) as f64) as usize;
    }
    data[idx[0] + shape[0] * (idx[1] + shape[1] * idx[2])]
}

/// Output-to-input index map `i -> i * scale` along each axis, index 0 aligned.
fn resample_with(v: &Volume, shape: [usize; 3], scale: [f64; 3], interp: Interp) -> Result<Volume> {
    let src = v.data();
    let src_shape = v.shape();
    let mut grid: Grid = v.grid().clone();
    for a in 0..3 {
        grid.spacing[a] *= scale[a];
    }
    grid.shape = shape;
    Volume::from_fn(grid, |x, y, z| {
        let p = [x as f64 * scale[0], y as f64 * scale[1], z as f64 * scale[2]];
        match interp {
            Interp::Linear => sample_linear(src, src_shape, p),
            Interp::Nearest => sample_nearest(src, src_shape, p),
        }
    })
}

/// Resamples by `factor` per axis (`0.5` halves resolution). Output voxel `i`
/// samples input index `i / factor`; spacing is scaled by `1 / factor` and the
/// output extent is the largest grid whose samples stay inside the input.
pub fn resample(v: &Volume, factor: [f64; 3], interp: Interp) -> Result<Volume> {
    if factor.iter().any(|&f| !(f > 0.0 && f.is_finite())) {
        return Err(InspexError::Argument(format!("resample factors must be positive, got {factor:?}")));
    }
    if factor == [1.0; 3] {
        return Ok(v.clone());
    }
    let mut shape = [0usize; 3];
    for a in 0..3 {
        shape[a] = ((v.shape()[a] - 1) as f64 * factor[a] + 1e-9).floor() as usize + 1;
    }
    if shape.iter().any(|&n| n < 2) {
        return Err(InspexError::Argument(format!(
            "resampling {:?} by {factor:?} gives degenerate shape {shape:?}",
            v.shape()
        )));
    }
    resample_with(v, shape, [1.0 / factor[0], 1.0 / factor[1], 1.0 / factor[2]], interp)
}

/// Resamples onto an explicit output `shape`, output voxel `i` sampling input
/// index `i * scale` (samples past the input edge are clamped).
pub fn resample_to_shape(v: &Volume, shape: [usize; 3], scale: [f64; 3], interp: Interp) -> Result<Volume> {
    if shape.iter().any(|&n| n == 0) || scale.iter().any(|&s| !(s > 0.0)) {
        return Err(InspexError::Argument(format!("bad target shape {shape:?} / scale {scale:?}")));
    }
    resample_with(v, shape, scale, interp)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn factor_one_is_exact_identity() {
        let g = Grid::new([5, 4, 3], [0.7, 0.7, 1.25]).unwrap();
        let v = Volume::from_fn(g, |x, y, z| (x * 7 + y * 3 + z) as f32 * 1.37 - 900.0).unwrap();
        assert_eq!(resample(&v, [1.0; 3], Interp::Linear).unwrap(), v);
    }

    #[test]
    fn constant_stays_constant() {
        let g = Grid::new([9, 8, 7], [1.0; 3]).unwrap();
        let v = Volume::filled(g, -850.0).unwrap();
        for f in [0.5, 0.37, 2.0] {
            let r = resample(&v, [f; 3], Interp::Linear).unwrap();
            assert!(r.data().iter().all(|&x| x == -850.0));
        }
    }

    #[test]
    fn halving_a_ramp_doubles_its_slope_per_voxel() {
        let g = Grid::new([16, 6, 6], [1.0; 3]).unwrap();
        let v = Volume::from_fn(g, |x, _, _| 3.5 * x as f32 - 100.0).unwrap();
        let r = resample(&v, [0.5; 3], Interp::Linear).unwrap();
        assert_eq!(r.shape(), [8, 3, 3]);
        assert_eq!(r.spacing(), [2.0; 3]);
        for x in 0..8 {
            assert!((r.at(x, 1, 1) - (7.0 * x as f32 - 100.0)).abs() < 1e-5);
        }
    }

    #[test]
    fn degenerate_output_is_rejected() {
        let g = Grid::new([3, 3, 3], [1.0; 3]).unwrap();
        let v = Volume::filled(g, 0.0).unwrap();
        assert!(resample(&v, [0.25; 3], Interp::Linear).is_err());
    }
}
