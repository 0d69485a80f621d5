//! Dense displacement fields in voxel units and their algebra.

use std::path::Path;

use crate::error::{InspexError, Result};
use crate::filter::gaussian_blur_in_place;
use crate::volume::{
    load_nifti_raw, sample_linear, sample_nearest, save_nifti_raw, BinaryMask, Grid, Interp,
    NiftiImage, Volume, HU_AIR,
};

/// NIfTI intent code for vector-valued voxels.
pub const NIFTI_INTENT_VECTOR: i16 = 1007;
const FIELD_DESCRIPTION: &str = "displacement (voxel units, x y z components)";

/// `u(x)` per voxel of a fixed grid: the sample location for output voxel `x`
/// is `x + u(x)` in index coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField {
    grid: Grid,
    comps: [Vec<f32>; 3],
}

impl DisplacementField {
    pub fn zeros(grid: &Grid) -> Self {
        let n = grid.len();
        Self {
            grid: grid.clone(),
            comps: [vec![0.0; n], vec![0.0; n], vec![0.0; n]],
        }
    }

    pub fn constant(grid: &Grid, u: [f32; 3]) -> Self {
        let n = grid.len();
        Self {
            grid: grid.clone(),
            comps: [vec![u[0]; n], vec![u[1]; n], vec![u[2]; n]],
        }
    }

    pub fn from_components(grid: &Grid, comps: [Vec<f32>; 3]) -> Result<Self> {
        if comps.iter().any(|c| c.len() != grid.len()) {
            return Err(InspexError::Argument("field components do not match grid".into()));
        }
        if comps.iter().flatten().any(|v| !v.is_finite()) {
            return Err(InspexError::Numerical("non-finite displacement".into()));
        }
        Ok(Self {
            grid: grid.clone(),
            comps,
        })
    }

    pub fn from_fn(grid: &Grid, mut f: impl FnMut(usize, usize, usize) -> [f64; 3]) -> Result<Self> {
        let n = grid.len();
        let mut comps = [Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n)];
        let [nx, ny, nz] = grid.shape;
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let u = f(x, y, z);
                    for a in 0..3 {
                        comps[a].push(u[a] as f32);
                    }
                }
            }
        }
        Self::from_components(grid, comps)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn shape(&self) -> [usize; 3] {
        self.grid.shape
    }

    pub fn component(&self, axis: usize) -> &[f32] {
        &self.comps[axis]
    }

    pub fn components_mut(&mut self) -> &mut [Vec<f32>; 3] {
        &mut self.comps
    }

    #[inline]
    pub fn at(&self, i: usize) -> [f64; 3] {
        [self.comps[0][i] as f64, self.comps[1][i] as f64, self.comps[2][i] as f64]
    }

    /// Trilinear interpolation at a continuous index (edge clamped).
    #[inline]
    pub fn sample(&self, p: [f64; 3]) -> [f64; 3] {
        let s = self.grid.shape;
        [
            sample_linear(&self.comps[0], s, p) as f64,
            sample_linear(&self.comps[1], s, p) as f64,
            sample_linear(&self.comps[2], s, p) as f64,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.comps.iter().flatten().all(|v| v.is_finite())
    }

    pub fn scaled(&self, k: f64) -> Self {
        let mut out = self.clone();
        for c in out.comps.iter_mut() {
            c.iter_mut().for_each(|v| *v = (*v as f64 * k) as f32);
        }
        out
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same(other)?;
        let mut out = self.clone();
        for a in 0..3 {
            for (v, &w) in out.comps[a].iter_mut().zip(&other.comps[a]) {
                *v += w;
            }
        }
        Ok(out)
    }

    fn check_same(&self, other: &Self) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(InspexError::Shape(self.shape(), other.shape()));
        }
        Ok(())
    }

    pub fn smooth(&mut self, sigma: f64) {
        if sigma > 0.0 {
            let shape = self.shape();
            for c in self.comps.iter_mut() {
                gaussian_blur_in_place(c, shape, [sigma; 3]);
            }
        }
    }

    pub fn magnitudes(&self) -> Vec<f64> {
        (0..self.grid.len())
            .map(|i| {
                let u = self.at(i);
                (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt()
            })
            .collect()
    }

    /// Mean vector length, optionally restricted to a mask.
    pub fn mean_magnitude(&self, mask: Option<&BinaryMask>) -> f64 {
        let mags = self.magnitudes();
        let (mut s, mut n) = (0.0, 0u64);
        for (i, m) in mags.iter().enumerate() {
            if mask.map_or(true, |k| k.bits()[i]) {
                s += m;
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            s / n as f64
        }
    }

    pub fn max_magnitude(&self) -> f64 {
        self.magnitudes().into_iter().fold(0.0, f64::max)
    }

    /// Field on a finer grid of `shape`: fine voxel `i` samples coarse index
    /// `i / ratio`, and vectors are multiplied by `ratio`.
    pub fn upsample(&self, fine: &Grid, ratio: f64) -> Result<Self> {
        let coarse_grid = Grid {
            shape: self.shape(),
            spacing: fine.spacing,
            origin: fine.origin,
            direction: fine.direction,
        };
        let mut comps: [Vec<f32>; 3] = Default::default();
        for a in 0..3 {
            let v = Volume::new(coarse_grid.clone(), self.comps[a].clone())?;
            let r = crate::volume::resample_to_shape(&v, fine.shape, [1.0 / ratio; 3], Interp::Linear)?;
            comps[a] = r.into_data().into_iter().map(|x| (x as f64 * ratio) as f32).collect();
        }
        Self::from_components(fine, comps)
    }

    /// Endpoint error `|u - truth|` averaged over a mask.
    pub fn mean_endpoint_error(&self, truth: &Self, mask: &BinaryMask) -> Result<f64> {
        self.check_same(truth)?;
        mask.check_shape(self.shape())?;
        let (mut s, mut n) = (0.0, 0u64);
        for i in 0..self.grid.len() {
            if mask.bits()[i] {
                let (a, b) = (self.at(i), truth.at(i));
                s += ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt();
                n += 1;
            }
        }
        if n == 0 {
            return Err(InspexError::InsufficientData("empty mask for endpoint error".into()));
        }
        Ok(s / n as f64)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut data = Vec::with_capacity(3 * self.grid.len());
        for c in &self.comps {
            data.extend_from_slice(c);
        }
        save_nifti_raw(
            path,
            &NiftiImage {
                grid: self.grid.clone(),
                components: 3,
                intent_code: NIFTI_INTENT_VECTOR,
                description: FIELD_DESCRIPTION.into(),
                data,
            },
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = load_nifti_raw(path)?;
        if img.components != 3 {
            return Err(InspexError::Unsupported(format!(
                "{}: expected 3 vector components, found {}",
                path.display(),
                img.components
            )));
        }
        let n = img.grid.len();
        let comps = [
            img.data[..n].to_vec(),
            img.data[n..2 * n].to_vec(),
            img.data[2 * n..].to_vec(),
        ];
        Self::from_components(&img.grid, comps)
    }
}

fn in_bounds(p: [f64; 3], shape: [usize; 3]) -> bool {
    const TOL: f64 = 1e-6;
    (0..3).all(|a| p[a] >= -TOL && p[a] <= (shape[a] - 1) as f64 + TOL)
}

/// `out(x) = v(x + u(x))`; samples falling outside the grid become air.
pub fn warp_volume(v: &Volume, field: &DisplacementField, interp: Interp) -> Result<Volume> {
    warp_volume_fill(v, field, interp, HU_AIR)
}

pub fn warp_volume_fill(v: &Volume, field: &DisplacementField, interp: Interp, fill: f32) -> Result<Volume> {
    let src_shape = v.shape();
    let src = v.data();
    let mut grid = v.grid().clone();
    grid.shape = field.shape();
    Volume::from_fn(grid, |x, y, z| {
        let i = field.grid.index(x, y, z);
        let u = field.at(i);
        let p = [x as f64 + u[0], y as f64 + u[1], z as f64 + u[2]];
        if !in_bounds(p, src_shape) {
            return fill;
        }
        match interp {
            Interp::Linear => sample_linear(src, src_shape, p),
            Interp::Nearest => sample_nearest(src, src_shape, p),
        }
    })
}

/// Nearest-neighbour warp of a mask; out-of-grid samples are unset.
pub fn warp_mask(m: &BinaryMask, field: &DisplacementField) -> BinaryMask {
    let src = m.shape();
    BinaryMask::from_fn(field.shape(), |x, y, z| {
        let u = field.at(field.grid.index(x, y, z));
        let p = [x as f64 + u[0], y as f64 + u[1], z as f64 + u[2]];
        if !in_bounds(p, src) {
            return false;
        }
        let q: [usize; 3] = std::array::from_fn(|a| p[a].round().clamp(0.0, (src[a] - 1) as f64) as usize);
        m.get(q[0], q[1], q[2])
    })
}

/// `w(x) = inner(x + outer(x)) + outer(x)`: warping by `w` equals warping by
/// `inner` and then by `outer`.
pub fn compose_fields(outer: &DisplacementField, inner: &DisplacementField) -> Result<DisplacementField> {
    let grid = outer.grid.clone();
    let mut comps: [Vec<f32>; 3] = Default::default();
    for c in comps.iter_mut() {
        c.reserve(grid.len());
    }
    for i in 0..grid.len() {
        let [x, y, z] = grid.coords(i);
        let o = outer.at(i);
        let w = inner.sample([x as f64 + o[0], y as f64 + o[1], z as f64 + o[2]]);
        for a in 0..3 {
            comps[a].push((w[a] + o[a]) as f32);
        }
    }
    DisplacementField::from_components(&grid, comps)
}

#[derive(Clone, Debug)]
pub struct Inversion {
    pub field: DisplacementField,
    /// Mean and max of `|compose(f, inv)|` over the grid.
    pub mean_residual: f64,
    pub max_residual: f64,
    /// Set when the mean residual stays above the requested tolerance.
    pub warning: bool,
}

pub const DEFAULT_INVERSION_ITERATIONS: usize = 20;

/// Fixed-point inversion `v <- -f(x + v(x))`.
pub fn invert_field(f: &DisplacementField, iterations: usize, tolerance: f64) -> Result<Inversion> {
    let grid = f.grid.clone();
    let mut inv = f.scaled(-1.0);
    for _ in 0..iterations {
        let mut next: [Vec<f32>; 3] = Default::default();
        for i in 0..grid.len() {
            let [x, y, z] = grid.coords(i);
            let v = inv.at(i);
            let w = f.sample([x as f64 + v[0], y as f64 + v[1], z as f64 + v[2]]);
            for a in 0..3 {
                next[a].push(-w[a] as f32);
            }
        }
        inv = DisplacementField::from_components(&grid, next)?;
    }
    let residual = compose_fields(f, &inv)?;
    let mean_residual = residual.mean_magnitude(None);
    let max_residual = residual.max_magnitude();
    Ok(Inversion {
        field: inv,
        mean_residual,
        max_residual,
        warning: mean_residual > tolerance,
    })
}

/// `exp(v)` by scaling and squaring: `v / 2^steps` composed with itself `steps` times.
pub fn exponentiate(v: &DisplacementField, steps: u32) -> Result<DisplacementField> {
    let mut u = v.scaled(1.0 / f64::from(1u32 << steps.min(30)));
    for _ in 0..steps {
        u = compose_fields(&u, &u)?;
    }
    Ok(u)
}

/// `det(I + grad u)` per voxel; central differences inside, one-sided at borders.
pub fn jacobian_determinant(f: &DisplacementField) -> Volume {
    let grid = f.grid.clone();
    let shape = grid.shape;
    let stride = [1, shape[0], shape[0] * shape[1]];
    let mut out = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let c = grid.coords(i);
        // j[comp][axis] = d u_comp / d x_axis
        let mut j = [[0.0f64; 3]; 3];
        for axis in 0..3 {
            let n = shape[axis];
            if n < 2 {
                continue;
            }
            let (lo, hi, h) = if c[axis] == 0 {
                (i, i + stride[axis], 1.0)
            } else if c[axis] == n - 1 {
                (i - stride[axis], i, 1.0)
            } else {
                (i - stride[axis], i + stride[axis], 2.0)
            };
            for (comp, row) in j.iter_mut().enumerate() {
                row[axis] = (f.comps[comp][hi] as f64 - f.comps[comp][lo] as f64) / h;
            }
        }
        for (d, row) in j.iter_mut().enumerate() {
            row[d] += 1.0;
        }
        let det = j[0][0] * (j[1][1] * j[2][2] - j[1][2] * j[2][1]) - j[0][1] * (j[1][0] * j[2][2] - j[1][2] * j[2][0])
            + j[0][2] * (j[1][0] * j[2][1] - j[1][1] * j[2][0]);
        out.push(det as f32);
    }
    Volume::new(grid, out).expect("finite field gives finite determinants")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter::gaussian_blur;
    use rand::{Rng, SeedableRng};

    fn grid(n: [usize; 3]) -> Grid {
        Grid::new(n, [1.0; 3]).unwrap()
    }

    pub(crate) fn smooth_random_field(g: &Grid, seed: u64, max_disp: f64) -> DisplacementField {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut comps: [Vec<f32>; 3] = Default::default();
        for c in comps.iter_mut() {
            let noise: Vec<f32> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            *c = gaussian_blur(&noise, g.shape, [4.0; 3]);
        }
        let f = DisplacementField::from_components(g, comps).unwrap();
        let m = f.max_magnitude();
        f.scaled(max_disp / m)
    }

    #[test]
    fn zero_field_warps_are_identity() {
        let g = grid([6, 5, 4]);
        let v = Volume::from_fn(g.clone(), |x, y, z| (x + 2 * y + 3 * z) as f32).unwrap();
        let z = DisplacementField::zeros(&g);
        assert_eq!(warp_volume(&v, &z, Interp::Linear).unwrap(), v);
        let m = BinaryMask::from_fn(g.shape, |x, y, _| x > y);
        assert_eq!(warp_mask(&m, &z), m);
        assert!(warp_mask(&BinaryMask::empty(g.shape), &z).is_empty());
    }

    #[test]
    fn unit_shift_moves_a_ramp() {
        let g = grid([8, 3, 3]);
        let v = Volume::from_fn(g.clone(), |x, _, _| 10.0 * x as f32 - 500.0).unwrap();
        let w = warp_volume(&v, &DisplacementField::constant(&g, [1.0, 0.0, 0.0]), Interp::Linear).unwrap();
        for x in 0..7 {
            assert_eq!(w.at(x, 1, 1), 10.0 * (x + 1) as f32 - 500.0);
        }
        assert_eq!(w.at(7, 1, 1), HU_AIR);
    }

    #[test]
    fn nearest_warp_keeps_masks_binary() {
        let g = grid([10, 10, 6]);
        let f = smooth_random_field(&g, 3, 2.5);
        let m = BinaryMask::from_fn(g.shape, |x, y, z| (x as i32 - 5).pow(2) + (y as i32 - 5).pow(2) + (z as i32 - 3).pow(2) < 9);
        let mv = m.to_volume(&g).unwrap();
        let w = warp_volume_fill(&mv, &f, Interp::Nearest, 0.0).unwrap();
        assert!(w.data().iter().all(|&v| v == 0.0 || v == 1.0));
    }

    #[test]
    fn composition_identities() {
        let g = grid([7, 6, 5]);
        let f = smooth_random_field(&g, 1, 1.5);
        let z = DisplacementField::zeros(&g);
        assert_eq!(compose_fields(&z, &f).unwrap(), f);
        let fz = compose_fields(&f, &z).unwrap();
        assert!(fz.add(&f.scaled(-1.0)).unwrap().max_magnitude() < 1e-6);
        let a = DisplacementField::constant(&g, [0.5, -1.0, 0.25]);
        let b = DisplacementField::constant(&g, [-0.25, 0.5, 0.5]);
        let ab = compose_fields(&a, &b).unwrap();
        for i in 0..g.len() {
            let u = ab.at(i);
            assert!((u[0] - 0.25).abs() < 1e-6 && (u[1] + 0.5).abs() < 1e-6 && (u[2] - 0.75).abs() < 1e-6);
        }
    }

    #[test]
    fn inverse_of_constant_and_zero() {
        let g = grid([6, 6, 6]);
        let z = invert_field(&DisplacementField::zeros(&g), 20, 0.1).unwrap();
        assert_eq!(z.field.max_magnitude(), 0.0);
        let c = invert_field(&DisplacementField::constant(&g, [1.0, -2.0, 0.5]), 20, 0.1).unwrap();
        let u = c.field.at(g.index(3, 3, 3));
        assert_eq!(u, [-1.0, 2.0, -0.5]);
    }

    #[test]
    fn smooth_random_field_inverts_to_small_residual() {
        let g = grid([24, 24, 16]);
        let f = smooth_random_field(&g, 7, 3.0);
        let inv = invert_field(&f, DEFAULT_INVERSION_ITERATIONS, 0.1).unwrap();
        assert!(inv.mean_residual < 0.1, "residual {}", inv.mean_residual);
        assert!(!inv.warning);
    }

    #[test]
    fn jacobian_of_zero_and_linear_contraction() {
        let g = grid([9, 9, 9]);
        let j = jacobian_determinant(&DisplacementField::zeros(&g));
        assert!(j.data().iter().all(|&d| (d - 1.0).abs() < 1e-6));
        let f = DisplacementField::from_fn(&g, |x, y, z| [-0.1 * x as f64, -0.1 * y as f64, -0.1 * z as f64]).unwrap();
        let j = jacobian_determinant(&f);
        for z in 1..8 {
            for y in 1..8 {
                for x in 1..8 {
                    assert!((j.at(x, y, z) - 0.729).abs() < 1e-3);
                }
            }
        }
    }

    #[test]
    fn exponentiation_of_constant_is_the_constant() {
        let g = grid([6, 6, 6]);
        let c = DisplacementField::constant(&g, [0.8, 0.0, -0.4]);
        let e = exponentiate(&c, 6).unwrap();
        assert!(e.add(&c.scaled(-1.0)).unwrap().max_magnitude() < 1e-5);
    }

    #[test]
    fn upsampled_vectors_are_doubled_at_coincident_points() {
        let coarse = grid([5, 4, 3]);
        let f = smooth_random_field(&coarse, 11, 1.0);
        let fine = grid([10, 8, 6]);
        let up = f.upsample(&fine, 2.0).unwrap();
        for z in 0..3 {
            for y in 0..4 {
                for x in 0..5 {
                    let c = f.at(coarse.index(x, y, z));
                    let u = up.at(fine.index(2 * x, 2 * y, 2 * z));
                    for a in 0..3 {
                        assert_eq!(u[a] as f32, (c[a] * 2.0) as f32);
                    }
                }
            }
        }
    }

    #[test]
    fn field_nifti_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = grid([5, 4, 3]);
        let f = smooth_random_field(&g, 2, 2.0);
        let p = dir.path().join("f.nii.gz");
        f.save(&p).unwrap();
        assert_eq!(DisplacementField::load(&p).unwrap(), f);
    }
}
