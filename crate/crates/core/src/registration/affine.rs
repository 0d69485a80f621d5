//! Linear transforms acting on index coordinates.

use serde::{Deserialize, Serialize};

use super::field::DisplacementField;
use crate::error::{InspexError, Result};
use crate::volume::{sample_linear, sample_nearest, Grid, Interp, Volume, HU_AIR, IDENTITY3};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransformKind {
    Rigid,
    Affine,
}

/// `y = A x + t`, mapping a fixed-grid index `x` to the moving-grid index `y`
/// it samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub matrix: [[f64; 3]; 3],
    pub translation: [f64; 3],
    pub kind: TransformKind,
}

pub(crate) fn mat_mul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| (0..3).map(|k| a[i][k] * b[k][j]).sum()))
}

pub(crate) fn mat_vec(a: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    std::array::from_fn(|i| a[i][0] * v[0] + a[i][1] * v[1] + a[i][2] * v[2])
}

pub(crate) fn det3(a: &[[f64; 3]; 3]) -> f64 {
    a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1]) - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
        + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
}

fn inverse3(a: &[[f64; 3]; 3]) -> Option<[[f64; 3]; 3]> {
    let d = det3(a);
    if d.abs() < 1e-12 || !d.is_finite() {
        return None;
    }
    let c = |i: usize, j: usize| {
        let (r0, r1) = ((i + 1) % 3, (i + 2) % 3);
        let (c0, c1) = ((j + 1) % 3, (j + 2) % 3);
        a[r0][c0] * a[r1][c1] - a[r0][c1] * a[r1][c0]
    };
    Some(std::array::from_fn(|i| std::array::from_fn(|j| c(j, i) / d)))
}

/// Rotation `Rz(gz) Ry(gy) Rx(gx)` (radians).
pub fn euler_rotation(angles: [f64; 3]) -> [[f64; 3]; 3] {
    let (sx, cx) = angles[0].sin_cos();
    let (sy, cy) = angles[1].sin_cos();
    let (sz, cz) = angles[2].sin_cos();
    let rx = [[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]];
    let ry = [[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]];
    let rz = [[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]];
    mat_mul(&rz, &mat_mul(&ry, &rx))
}

/// Euler angles of a rotation matrix built by [`euler_rotation`].
pub fn rotation_angles(r: &[[f64; 3]; 3]) -> [f64; 3] {
    let gy = (-r[2][0]).clamp(-1.0, 1.0).asin();
    let gx = r[2][1].atan2(r[2][2]);
    let gz = r[1][0].atan2(r[0][0]);
    [gx, gy, gz]
}

impl AffineTransform {
    pub fn identity() -> Self {
        Self {
            matrix: IDENTITY3,
            translation: [0.0; 3],
            kind: TransformKind::Rigid,
        }
    }

    /// Rotation about `center` followed by a shift.
    pub fn rigid(angles: [f64; 3], shift: [f64; 3], center: [f64; 3]) -> Self {
        Self::about_center(euler_rotation(angles), shift, center, TransformKind::Rigid)
    }

    /// `y = A (x - c) + c + shift`.
    pub fn about_center(matrix: [[f64; 3]; 3], shift: [f64; 3], center: [f64; 3], kind: TransformKind) -> Self {
        let ac = mat_vec(&matrix, center);
        Self {
            matrix,
            translation: std::array::from_fn(|i| center[i] + shift[i] - ac[i]),
            kind,
        }
    }

    /// The shift part when written about `center`.
    pub fn shift_about(&self, center: [f64; 3]) -> [f64; 3] {
        let y = self.apply(center);
        std::array::from_fn(|i| y[i] - center[i])
    }

    #[inline]
    pub fn apply(&self, x: [f64; 3]) -> [f64; 3] {
        let y = mat_vec(&self.matrix, x);
        std::array::from_fn(|i| y[i] + self.translation[i])
    }

    pub fn is_finite(&self) -> bool {
        self.matrix.iter().flatten().chain(&self.translation).all(|v| v.is_finite())
    }

    /// Orthonormality and unit determinant within `tol`.
    pub fn is_proper_rotation(&self, tol: f64) -> bool {
        let a = &self.matrix;
        for i in 0..3 {
            for j in 0..3 {
                let dot: f64 = (0..3).map(|k| a[k][i] * a[k][j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                if (dot - want).abs() > tol {
                    return false;
                }
            }
        }
        (det3(a) - 1.0).abs() <= tol
    }

    pub fn validate(&self) -> Result<()> {
        if !self.is_finite() {
            return Err(InspexError::Numerical("non-finite transform".into()));
        }
        if self.kind == TransformKind::Rigid && !self.is_proper_rotation(1e-6) {
            return Err(InspexError::Data("rigid transform is not a proper rotation".into()));
        }
        Ok(())
    }

    /// `self` after `inner`: `x -> self(inner(x))`.
    pub fn then(&self, inner: &Self) -> Self {
        let matrix = mat_mul(&self.matrix, &inner.matrix);
        let t = mat_vec(&self.matrix, inner.translation);
        let kind = if self.kind == TransformKind::Rigid && inner.kind == TransformKind::Rigid {
            TransformKind::Rigid
        } else {
            TransformKind::Affine
        };
        Self {
            matrix,
            translation: std::array::from_fn(|i| t[i] + self.translation[i]),
            kind,
        }
    }

    pub fn inverse(&self) -> Result<Self> {
        let inv = inverse3(&self.matrix).ok_or_else(|| InspexError::Degenerate("singular transform matrix".into()))?;
        let t = mat_vec(&inv, self.translation);
        Ok(Self {
            matrix: inv,
            translation: [-t[0], -t[1], -t[2]],
            kind: self.kind,
        })
    }

    /// Displacement `u(x) = T(x) - x` on `grid`.
    pub fn to_field(&self, grid: &Grid) -> Result<DisplacementField> {
        DisplacementField::from_fn(grid, |x, y, z| {
            let p = [x as f64, y as f64, z as f64];
            let q = self.apply(p);
            [q[0] - p[0], q[1] - p[1], q[2] - p[2]]
        })
    }
}

/// Resamples `moving` onto `fixed_grid` through `t`; outside samples become air.
pub fn transform_volume(moving: &Volume, t: &AffineTransform, fixed_grid: &Grid, interp: Interp) -> Result<Volume> {
    transform_volume_fill(moving, t, fixed_grid, interp, HU_AIR)
}

pub fn transform_volume_fill(
    moving: &Volume,
    t: &AffineTransform,
    fixed_grid: &Grid,
    interp: Interp,
    fill: f32,
) -> Result<Volume> {
    let src = moving.data();
    let shape = moving.shape();
    let mut grid = moving.grid().clone();
    grid.shape = fixed_grid.shape;
    Volume::from_fn(grid, |x, y, z| {
        let p = t.apply([x as f64, y as f64, z as f64]);
        if (0..3).any(|a| p[a] < -1e-6 || p[a] > (shape[a] - 1) as f64 + 1e-6) {
            return fill;
        }
        match interp {
            Interp::Linear => sample_linear(src, shape, p),
            Interp::Nearest => sample_nearest(src, shape, p),
        }
    })
}
