//! Greedy symmetric normalization with a local cross-correlation metric.
//!
//! Both images are deformed toward a common midpoint: `I = F(x + u1(x))` and
//! `J = M(x + u2(x))`. Each iteration smooths the metric gradient of either
//! side, exponentiates it and composes it onto the matching half-warp. The
//! moving-to-fixed field is `u2` after the inverse of `u1`.

use super::affine::AffineTransform;
use super::field::{compose_fields, exponentiate, invert_field, warp_volume_fill, DisplacementField};
use super::pyramid::{gradient, shrink, unit_intensity};
use super::{DeformLevel, LevelTrace, RegistrationConfig, RegistrationResult, Similarity};
use crate::error::{InspexError, Result};
use crate::filter::{box_count, box_sum, gaussian_blur_in_place};
use crate::volume::{Grid, Interp, Volume};

const VAR_EPS: f64 = 1e-8;
const MIN_STEP_FRACTION: f64 = 1.0 / 64.0;
/// Iterations over which the metric gain is measured for convergence.
const CONVERGENCE_WINDOW: usize = 10;

#[derive(Clone, Debug, Default)]
pub struct DeformableOutcome {
    pub half: Option<RegistrationResult>,
    pub full: Option<RegistrationResult>,
}

struct Forces {
    metric: f64,
    d1: [Vec<f32>; 3],
    d2: [Vec<f32>; 3],
}

/// Metric at the midpoint and the ascent direction for each side.
fn forces(i_img: &[f32], j_img: &[f32], shape: [usize; 3], cfg: &RegistrationConfig) -> Forces {
    let n = i_img.len();
    let gi = gradient(i_img, shape);
    let gj = gradient(j_img, shape);
    let mut d1: [Vec<f32>; 3] = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut d2 = d1.clone();
    match cfg.metric {
        Similarity::Mse => {
            let mut sum = 0.0;
            for v in 0..n {
                let r = (j_img[v] - i_img[v]) as f64;
                sum += r * r;
                for a in 0..3 {
                    d1[a][v] = (2.0 * r * gi[a][v] as f64) as f32;
                    d2[a][v] = (-2.0 * r * gj[a][v] as f64) as f32;
                }
            }
            Forces { metric: -sum / n as f64, d1, d2 }
        }
        Similarity::LocalCc => {
            let r = cfg.cc_radius;
            let iv: Vec<f64> = i_img.iter().map(|&x| x as f64).collect();
            let jv: Vec<f64> = j_img.iter().map(|&x| x as f64).collect();
            let prod = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).collect::<Vec<f64>>();
            let cnt = box_count(shape, r);
            let si = box_sum(&iv, shape, r);
            let sj = box_sum(&jv, shape, r);
            let sii = box_sum(&prod(&iv, &iv), shape, r);
            let sjj = box_sum(&prod(&jv, &jv), shape, r);
            let sij = box_sum(&prod(&iv, &jv), shape, r);
            let mut total = 0.0;
            for v in 0..n {
                let (mi, mj) = (si[v] / cnt[v], sj[v] / cnt[v]);
                let a_ij = sij[v] - si[v] * mj;
                let a_ii = sii[v] - si[v] * mi;
                let a_jj = sjj[v] - sj[v] * mj;
                if a_ii < VAR_EPS || a_jj < VAR_EPS {
                    continue;
                }
                let cc = a_ij * a_ij / (a_ii * a_jj);
                total += cc;
                let (ci, cj) = (iv[v] - mi, jv[v] - mj);
                let k = 2.0 * a_ij / (a_ii * a_jj);
                let f1 = k * (cj - a_ij / a_ii * ci);
                let f2 = k * (ci - a_ij / a_jj * cj);
                for a in 0..3 {
                    d1[a][v] = (f1 * gi[a][v] as f64) as f32;
                    d2[a][v] = (f2 * gj[a][v] as f64) as f32;
                }
            }
            let metric = total / n as f64;
            Forces { metric, d1, d2 }
        }
    }
}

/// Smoothed, step-normalised and exponentiated update; `None` when the
/// direction vanishes.
fn update_field(
    grid: &Grid,
    mut d: [Vec<f32>; 3],
    step: f64,
    axis_scale: [f64; 3],
    cfg: &RegistrationConfig,
) -> Result<Option<DisplacementField>> {
    if cfg.sigma_update > 0.0 {
        for c in d.iter_mut() {
            gaussian_blur_in_place(c, grid.shape, [cfg.sigma_update; 3]);
        }
    }
    for (a, c) in d.iter_mut().enumerate() {
        if axis_scale[a] != 1.0 {
            c.iter_mut().for_each(|v| *v = (*v as f64 * axis_scale[a]) as f32);
        }
    }
    let field = DisplacementField::from_components(grid, d)?;
    let max = field.max_magnitude();
    if max == 0.0 || !max.is_finite() {
        return Ok(None);
    }
    exponentiate(&field.scaled(step / max), cfg.squaring_steps).map(Some)
}

struct LevelState {
    u1: DisplacementField,
    u2: DisplacementField,
}

fn midpoint_images(f: &Volume, m: &Volume, st: &LevelState) -> Result<(Vec<f32>, Vec<f32>)> {
    let i = warp_volume_fill(f, &st.u1, Interp::Linear, 0.0)?.into_data();
    let j = warp_volume_fill(m, &st.u2, Interp::Linear, 0.0)?.into_data();
    Ok((i, j))
}

fn run_level(
    f: &Volume,
    m: &Volume,
    st: &mut LevelState,
    cfg: &RegistrationConfig,
    shrink_factor: usize,
) -> Result<LevelTrace> {
    let grid = f.grid().clone();
    let shape = grid.shape;
    let smin = grid.spacing.iter().cloned().fold(f64::INFINITY, f64::min);
    let axis_scale: [f64; 3] = std::array::from_fn(|a| smin / grid.spacing[a]);
    let (i_img, j_img) = midpoint_images(f, m, st)?;
    let mut cur = forces(&i_img, &j_img, shape, cfg);
    let mut trace = vec![cur.metric];
    let mut step = cfg.gradient_step;
    let mut converged = false;
    let mut it = 0;
    while it < cfg.deform_iterations {
        it += 1;
        let d1 = update_field(&grid, std::mem::take(&mut cur.d1), step, axis_scale, cfg)?;
        let d2 = update_field(&grid, std::mem::take(&mut cur.d2), step, axis_scale, cfg)?;
        let (Some(d1), Some(d2)) = (d1, d2) else {
            converged = true;
            break;
        };
        let mut u1 = compose_fields(&d1, &st.u1)?;
        let mut u2 = compose_fields(&d2, &st.u2)?;
        u1.smooth(cfg.sigma_total);
        u2.smooth(cfg.sigma_total);
        if !u1.is_finite() || !u2.is_finite() {
            return Err(InspexError::Numerical(format!(
                "non-finite deformation at level 1/{shrink_factor}, iteration {it}"
            )));
        }
        let cand = LevelState { u1, u2 };
        let (i_img, j_img) = midpoint_images(f, m, &cand)?;
        let next = forces(&i_img, &j_img, shape, cfg);
        if next.metric >= cur.metric {
            *st = cand;
            cur = next;
            step = (step * 1.25).min(cfg.gradient_step);
            trace.push(cur.metric);
            let k = trace.len();
            if k > CONVERGENCE_WINDOW {
                let gain = trace[k - 1] - trace[k - 1 - CONVERGENCE_WINDOW];
                if gain < cfg.tolerance * trace[k - 1].abs().max(1e-12) * CONVERGENCE_WINDOW as f64 {
                    converged = true;
                    break;
                }
            }
        } else {
            // rejected: recompute the forces of the kept state at a shorter step
            step *= 0.5;
            if step < cfg.gradient_step * MIN_STEP_FRACTION {
                converged = true;
                break;
            }
            let (i_img, j_img) = midpoint_images(f, m, st)?;
            cur = forces(&i_img, &j_img, shape, cfg);
        }
    }
    Ok(LevelTrace {
        shrink: shrink_factor,
        metric: trace,
        iterations: it,
        converged,
    })
}

fn upsample_state(st: &LevelState, fine: &Grid, ratio: f64) -> Result<LevelState> {
    Ok(LevelState {
        u1: st.u1.upsample(fine, ratio)?,
        u2: st.u2.upsample(fine, ratio)?,
    })
}

/// Builds full-resolution outputs from the level state.
#[allow(clippy::too_many_arguments)]
fn finish(
    fixed: &Volume,
    moving: &Volume,
    init: &AffineTransform,
    st: &LevelState,
    level_shrink: usize,
    level: DeformLevel,
    trace: Vec<LevelTrace>,
    cfg: &RegistrationConfig,
    mut warnings: Vec<String>,
) -> Result<RegistrationResult> {
    let inv1 = invert_field(&st.u1, cfg.inversion_iterations, 0.1)?;
    let inv2 = invert_field(&st.u2, cfg.inversion_iterations, 0.1)?;
    for (name, inv) in [("fixed", &inv1), ("moving", &inv2)] {
        if inv.warning {
            warnings.push(format!("{name} half-warp inversion residual {:.3} voxels", inv.mean_residual));
        }
    }
    let fwd_level = compose_fields(&inv1.field, &st.u2)?;
    let inv_level = compose_fields(&inv2.field, &st.u1)?;
    let full_grid = fixed.grid().clone();
    let (fwd_d, inv_d) = if level_shrink == 1 {
        (fwd_level, inv_level)
    } else {
        let r = level_shrink as f64;
        (fwd_level.upsample(&full_grid, r)?, inv_level.upsample(&full_grid, r)?)
    };
    // total forward map x -> T(x + u(x))
    let forward = DisplacementField::from_fn(fixed.grid(), |x, y, z| {
        let i = full_grid.index(x, y, z);
        let u = fwd_d.at(i);
        let q = init.apply([x as f64 + u[0], y as f64 + u[1], z as f64 + u[2]]);
        [q[0] - x as f64, q[1] - y as f64, q[2] - z as f64]
    })?;
    // inverse map y -> z + v(z) with z = T^-1(y), on the moving grid
    let tinv = init.inverse()?;
    let inverse = DisplacementField::from_fn(moving.grid(), |x, y, z| {
        let p = tinv.apply([x as f64, y as f64, z as f64]);
        let v = inv_d.sample(p);
        [p[0] + v[0] - x as f64, p[1] + v[1] - y as f64, p[2] + v[2] - z as f64]
    })?;
    let warped = super::field::warp_volume(moving, &forward, Interp::Linear)?;
    let inverse_warped = super::field::warp_volume(fixed, &inverse, Interp::Linear)?;
    Ok(RegistrationResult {
        level,
        forward,
        inverse,
        warped,
        inverse_warped,
        trace,
        warning: if warnings.is_empty() { None } else { Some(warnings.join("; ")) },
    })
}

/// Runs the deformable pyramid once and returns the half-resolution snapshot
/// and/or the full-resolution result. The full level starts from the half one.
pub fn register_deformable_stages(
    fixed: &Volume,
    moving: &Volume,
    init: &AffineTransform,
    cfg: &RegistrationConfig,
    want_half: bool,
    want_full: bool,
) -> Result<DeformableOutcome> {
    cfg.validate()?;
    init.validate()?;
    if fixed.data().is_empty() || moving.data().is_empty() {
        return Err(InspexError::Argument("registration needs nonempty volumes".into()));
    }
    let mut out = DeformableOutcome::default();
    if !want_half && !want_full {
        return Ok(out);
    }
    // bake the linear transform into the moving image once
    let f_full = unit_intensity(fixed)?;
    let m_aff = super::affine::transform_volume_fill(&unit_intensity(moving)?, init, fixed.grid(), Interp::Linear, 0.0)?;
    let mut shrinks: Vec<usize> = cfg
        .deform_coarse_shrinks
        .iter()
        .copied()
        .filter(|&s| fixed.shape().iter().all(|&n| (n - 1) / s + 1 >= 8))
        .collect();
    shrinks.push(2);
    if want_full {
        shrinks.push(1);
    }
    let mut traces = Vec::new();
    let mut st: Option<(LevelState, usize)> = None;
    let mut warnings = Vec::new();
    for &s in &shrinks {
        let f = shrink(&f_full, s)?;
        let m = shrink(&m_aff, s)?;
        let grid = f.grid().clone();
        let mut state = match st.take() {
            None => LevelState {
                u1: DisplacementField::zeros(&grid),
                u2: DisplacementField::zeros(&grid),
            },
            Some((prev, ps)) => upsample_state(&prev, &grid, ps as f64 / s as f64)?,
        };
        let trace = run_level(&f, &m, &mut state, cfg, s)?;
        if !trace.converged {
            warnings.push(format!("level 1/{s} stopped at the iteration cap"));
        }
        traces.push(trace);
        if s == 2 && want_half {
            out.half = Some(finish(
                fixed,
                moving,
                init,
                &state,
                2,
                DeformLevel::Half,
                traces.clone(),
                cfg,
                warnings.clone(),
            )?);
        }
        st = Some((state, s));
    }
    if want_full {
        let (state, s) = st.expect("at least one level ran");
        out.full = Some(finish(fixed, moving, init, &state, s, DeformLevel::Full, traces, cfg, warnings)?);
    }
    Ok(out)
}

/// Deformable registration of `moving` onto `fixed` after `init`.
pub fn register_deformable(
    fixed: &Volume,
    moving: &Volume,
    init: &AffineTransform,
    cfg: &RegistrationConfig,
    level: DeformLevel,
) -> Result<RegistrationResult> {
    let full = level == DeformLevel::Full;
    let out = register_deformable_stages(fixed, moving, init, cfg, !full, full)?;
    Ok(if full { out.full } else { out.half }.expect("requested level is produced"))
}
