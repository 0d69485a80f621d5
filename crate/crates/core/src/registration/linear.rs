//! Rigid and affine alignment by regular-step gradient descent on the mean
//! squared intensity difference, coarse to fine.

use super::affine::{euler_rotation, rotation_angles, AffineTransform, TransformKind};
use super::pyramid::{gradient, shrink, unit_intensity};
use super::{LevelTrace, RegistrationConfig};
use crate::error::{InspexError, Result};
use crate::volume::{sample_linear, Volume};

#[derive(Clone, Debug)]
pub struct LinearOutcome {
    pub transform: AffineTransform,
    pub trace: Vec<LevelTrace>,
    pub warning: Option<String>,
}

const MIN_STEP: f64 = 1e-3;

struct Level {
    fixed: Vec<f32>,
    fshape: [usize; 3],
    moving: Vec<f32>,
    mshape: [usize; 3],
    mgrad: [Vec<f32>; 3],
    center: [f64; 3],
}

/// Value and gradient of the MSE with respect to `A` and the shift, where
/// `y = A (x - c) + c + s`.
struct Eval {
    value: f64,
    d_matrix: [[f64; 3]; 3],
    d_shift: [f64; 3],
}

impl Level {
    fn evaluate(&self, a: &[[f64; 3]; 3], s: [f64; 3]) -> Eval {
        let c = self.center;
        let [nx, ny, nz] = self.fshape;
        let hi: [f64; 3] = std::array::from_fn(|k| (self.mshape[k] - 1) as f64);
        let mut value = 0.0;
        let mut dm = [[0.0f64; 3]; 3];
        let mut ds = [0.0f64; 3];
        let mut i = 0;
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let d = [x as f64 - c[0], y as f64 - c[1], z as f64 - c[2]];
                    let p: [f64; 3] =
                        std::array::from_fn(|k| a[k][0] * d[0] + a[k][1] * d[1] + a[k][2] * d[2] + c[k] + s[k]);
                    let f = self.fixed[i] as f64;
                    i += 1;
                    if (0..3).any(|k| p[k] < 0.0 || p[k] > hi[k]) {
                        // outside samples read as air (0) and carry no gradient
                        value += f * f;
                        continue;
                    }
                    let r = sample_linear(&self.moving, self.mshape, p) as f64 - f;
                    value += r * r;
                    for k in 0..3 {
                        let g = 2.0 * r * sample_linear(&self.mgrad[k], self.mshape, p) as f64;
                        ds[k] += g;
                        for j in 0..3 {
                            dm[k][j] += g * d[j];
                        }
                    }
                }
            }
        }
        let n = i as f64;
        dm.iter_mut().flatten().for_each(|v| *v /= n);
        ds.iter_mut().for_each(|v| *v /= n);
        Eval {
            value: value / n,
            d_matrix: dm,
            d_shift: ds,
        }
    }
}

fn center_of(shape: [usize; 3]) -> [f64; 3] {
    std::array::from_fn(|a| (shape[a] - 1) as f64 / 2.0)
}

/// Parameter vector and its mapping to `(A, s)`.
trait Param {
    fn to_matrix_shift(&self, p: &[f64]) -> ([[f64; 3]; 3], [f64; 3]);
    fn gradient(&self, p: &[f64], e: &Eval) -> Vec<f64>;
    /// Voxel-equivalent scale of each parameter.
    fn scales(&self, radius: f64) -> Vec<f64>;
}

struct RigidParam;
struct AffineParam;

impl Param for RigidParam {
    fn to_matrix_shift(&self, p: &[f64]) -> ([[f64; 3]; 3], [f64; 3]) {
        (euler_rotation([p[0], p[1], p[2]]), [p[3], p[4], p[5]])
    }

    fn gradient(&self, p: &[f64], e: &Eval) -> Vec<f64> {
        let mut g = vec![0.0; 6];
        const H: f64 = 1e-6;
        for k in 0..3 {
            let mut lo = [p[0], p[1], p[2]];
            let mut hi = lo;
            lo[k] -= H;
            hi[k] += H;
            let (rl, rh) = (euler_rotation(lo), euler_rotation(hi));
            let mut acc = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    acc += e.d_matrix[i][j] * (rh[i][j] - rl[i][j]) / (2.0 * H);
                }
            }
            g[k] = acc;
        }
        g[3..].copy_from_slice(&e.d_shift);
        g
    }

    fn scales(&self, radius: f64) -> Vec<f64> {
        vec![radius, radius, radius, 1.0, 1.0, 1.0]
    }
}

impl Param for AffineParam {
    fn to_matrix_shift(&self, p: &[f64]) -> ([[f64; 3]; 3], [f64; 3]) {
        (std::array::from_fn(|i| std::array::from_fn(|j| p[3 * i + j])), [p[9], p[10], p[11]])
    }

    fn gradient(&self, _p: &[f64], e: &Eval) -> Vec<f64> {
        let mut g: Vec<f64> = e.d_matrix.iter().flatten().copied().collect();
        g.extend_from_slice(&e.d_shift);
        g
    }

    fn scales(&self, radius: f64) -> Vec<f64> {
        let mut s = vec![radius; 9];
        s.extend_from_slice(&[1.0; 3]);
        s
    }
}

/// Regular-step descent in voxel-scaled parameters; a step is kept only when
/// it lowers the metric, otherwise the step length halves.
fn optimize_level(
    level: &Level,
    param: &dyn Param,
    p: &mut [f64],
    step0: f64,
    max_iter: usize,
    tolerance: f64,
    shrink_factor: usize,
) -> (LevelTrace, bool) {
    let radius = level.center.iter().fold(1.0f64, |m, &c| m.max(c));
    let scales = param.scales(radius);
    let (a, s) = param.to_matrix_shift(p);
    let mut cur = level.evaluate(&a, s);
    let mut grad = param.gradient(p, &cur);
    let mut trace = vec![-cur.value];
    let mut step = step0;
    let mut converged = false;
    let mut zero_grad = false;
    let mut it = 0;
    while it < max_iter {
        it += 1;
        let scaled: Vec<f64> = grad.iter().zip(&scales).map(|(g, sc)| g / sc).collect();
        let norm = scaled.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            zero_grad = norm == 0.0 && it == 1;
            converged = true;
            break;
        }
        let cand: Vec<f64> = p
            .iter()
            .zip(scaled.iter().zip(&scales))
            .map(|(pi, (d, sc))| pi - step * d / norm / sc)
            .collect();
        let (a, s) = param.to_matrix_shift(&cand);
        let next = level.evaluate(&a, s);
        if next.value < cur.value {
            let gain = (cur.value - next.value) / cur.value.abs().max(1e-300);
            p.copy_from_slice(&cand);
            grad = param.gradient(p, &next);
            cur = next;
            trace.push(-cur.value);
            if gain < tolerance {
                converged = true;
                break;
            }
        } else {
            step *= 0.5;
            if step < MIN_STEP {
                converged = true;
                break;
            }
        }
    }
    (
        LevelTrace {
            shrink: shrink_factor,
            metric: trace,
            iterations: it,
            converged,
        },
        zero_grad,
    )
}

fn run_linear(
    fixed: &Volume,
    moving: &Volume,
    init: &AffineTransform,
    cfg: &RegistrationConfig,
    kind: TransformKind,
) -> Result<LinearOutcome> {
    cfg.validate()?;
    if fixed.data().is_empty() || moving.data().is_empty() {
        return Err(InspexError::Argument("registration needs nonempty volumes".into()));
    }
    init.validate()?;
    let fixed_u = unit_intensity(fixed)?;
    let moving_u = unit_intensity(moving)?;
    let c_full = center_of(fixed.shape());
    let (param, max_iter): (&dyn Param, usize) = match kind {
        TransformKind::Rigid => (&RigidParam, cfg.rigid_iterations),
        TransformKind::Affine => (&AffineParam, cfg.affine_iterations),
    };
    let shift0 = init.shift_about(c_full);
    let mut p: Vec<f64> = match kind {
        TransformKind::Rigid => {
            let g = rotation_angles(&init.matrix);
            vec![g[0], g[1], g[2], shift0[0], shift0[1], shift0[2]]
        }
        TransformKind::Affine => {
            let mut v: Vec<f64> = init.matrix.iter().flatten().copied().collect();
            v.extend_from_slice(&shift0);
            v
        }
    };
    let mut traces = Vec::new();
    let mut warnings = Vec::new();
    if is_constant(fixed_u.data()) || is_constant(moving_u.data()) {
        // a flat image leaves only the trivial optimum of pushing content out of view
        warnings.push("constant input image (degenerate input); initial transform kept".into());
        let (a, shift) = param.to_matrix_shift(&p);
        return Ok(LinearOutcome {
            transform: AffineTransform::about_center(a, shift, c_full, kind),
            trace: traces,
            warning: Some(warnings.join("; ")),
        });
    }
    let mut all_zero = true;
    let shrinks: Vec<usize> = cfg
        .linear_shrinks
        .iter()
        .copied()
        .filter(|&s| s == 1 || fixed.shape().iter().all(|&n| (n - 1) / s + 1 >= 8))
        .collect();
    for &s in &shrinks {
        let f = shrink(&fixed_u, s)?;
        let m = shrink(&moving_u, s)?;
        let mgrad = gradient(m.data(), m.shape());
        let level = Level {
            fshape: f.shape(),
            mshape: m.shape(),
            fixed: f.into_data(),
            moving: m.into_data(),
            mgrad,
            center: center_of_level(c_full, s),
        };
        // shifts are expressed in voxels of the current level
        let sf = s as f64;
        scale_shift(&mut p, kind, 1.0 / sf);
        let (trace, zero) = optimize_level(&level, param, &mut p, cfg.linear_step, max_iter, cfg.tolerance, s);
        scale_shift(&mut p, kind, sf);
        all_zero &= zero;
        if !trace.converged {
            warnings.push(format!("level 1/{s} stopped at the iteration cap"));
        }
        traces.push(trace);
    }
    let (a, shift) = param.to_matrix_shift(&p);
    let transform = AffineTransform::about_center(a, shift, c_full, kind);
    if !transform.is_finite() {
        return Err(InspexError::Numerical(format!("{kind:?} registration diverged")));
    }
    if all_zero {
        warnings.push("zero metric gradient (degenerate input); initial transform kept".into());
    }
    Ok(LinearOutcome {
        transform,
        trace: traces,
        warning: if warnings.is_empty() { None } else { Some(warnings.join("; ")) },
    })
}

pub(crate) fn is_constant(v: &[f32]) -> bool {
    v.iter().all(|&x| x == v[0])
}

fn center_of_level(c_full: [f64; 3], s: usize) -> [f64; 3] {
    std::array::from_fn(|a| c_full[a] / s as f64)
}

fn scale_shift(p: &mut [f64], kind: TransformKind, k: f64) {
    let start = match kind {
        TransformKind::Rigid => 3,
        TransformKind::Affine => 9,
    };
    p[start..].iter_mut().for_each(|v| *v *= k);
}

/// Six-parameter alignment of `moving` to `fixed` starting from identity.
pub fn register_rigid(fixed: &Volume, moving: &Volume, cfg: &RegistrationConfig) -> Result<LinearOutcome> {
    let cf = center_of(fixed.shape());
    let cm = center_of(moving.shape());
    let init = AffineTransform::rigid([0.0; 3], std::array::from_fn(|a| cm[a] - cf[a]), cf);
    run_linear(fixed, moving, &init, cfg, TransformKind::Rigid)
}

/// Twelve-parameter refinement starting from `init`.
pub fn register_affine(
    fixed: &Volume,
    moving: &Volume,
    init: &AffineTransform,
    cfg: &RegistrationConfig,
) -> Result<LinearOutcome> {
    let mut init = init.clone();
    init.kind = TransformKind::Affine;
    run_linear(fixed, moving, &init, cfg, TransformKind::Affine)
}
