//! Synthetic inspiratory/expiratory chest phantoms with a known expiration warp
//! and simulated reconstruction kernels.
//!
//! The expiration map pulls every lung radially toward its centre:
//! `phi(x) = x + u(x)` with `u(x) = -f * s(rho) * (x - c)`, where `rho` is the
//! ellipsoidal radius of `x` for that lung, `s = 1` inside the lung and fades
//! to 0 over `rho in [1, 1 + falloff]`. The expiratory image satisfies
//! `exp(phi(x)) = insp(x)` (plus densification), so `u` is exactly the
//! expiratory-to-inspiratory resampling field on the inspiratory grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{InspexError, Result};
use crate::filter::{gaussian_blur, gaussian_kernel};
use crate::registration::DisplacementField;
use crate::volume::{clip_hu, sample_linear, BinaryMask, Grid, Volume, HU_AIR, HU_WINDOW_FULL};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ellipsoid {
    pub center: [f64; 3],
    pub radii: [f64; 3],
}

impl Ellipsoid {
    #[inline]
    pub fn rho(&self, p: [f64; 3]) -> f64 {
        let mut s = 0.0;
        for a in 0..3 {
            let d = (p[a] - self.center[a]) / self.radii[a];
            s += d * d;
        }
        s.sqrt()
    }

    pub fn volume(&self) -> f64 {
        4.0 / 3.0 * std::f64::consts::PI * self.radii[0] * self.radii[1] * self.radii[2]
    }

    fn scaled(&self, k: f64) -> Self {
        Self {
            center: self.center,
            radii: self.radii.map(|r| r * k),
        }
    }

    /// Points spread over the surface (Fibonacci lattice).
    fn surface(&self, n: usize) -> impl Iterator<Item = [f64; 3]> + '_ {
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        (0..n).map(move |i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
            let r = (1.0 - z * z).sqrt();
            let t = golden * i as f64;
            let d = [r * t.cos(), r * t.sin(), z];
            std::array::from_fn(|a| self.center[a] + self.radii[a] * d[a])
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Hard,
    Soft,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSim {
    pub kind: KernelKind,
    /// SOFT: blur sigma. HARD: sigma of the unsharp-mask base blur. Voxels.
    pub sigma: f64,
    /// Unsharp-mask gain (HARD only).
    pub alpha: f64,
    /// Standard deviation of the additive noise in HU (HARD only).
    pub noise_hu: f64,
    /// Correlation length of the noise in voxels.
    pub noise_corr: f64,
    pub seed: u64,
}

impl KernelSim {
    pub fn soft(sigma: f64) -> Self {
        Self {
            kind: KernelKind::Soft,
            sigma,
            alpha: 0.0,
            noise_hu: 0.0,
            noise_corr: 0.0,
            seed: 0,
        }
    }

    pub fn hard(sigma: f64, alpha: f64, noise_hu: f64, noise_corr: f64) -> Self {
        Self {
            kind: KernelKind::Hard,
            sigma,
            alpha,
            noise_hu,
            noise_corr,
            seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self.kind {
            KernelKind::Soft => self.sigma > 0.0,
            KernelKind::Hard => {
                self.sigma > 0.0 && self.alpha >= 0.0 && self.noise_hu >= 0.0 && self.noise_corr >= 0.0
            }
        };
        if ok && self.sigma.is_finite() && self.alpha.is_finite() && self.noise_hu.is_finite() {
            Ok(())
        } else {
            Err(InspexError::Argument(format!("invalid kernel parameters {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmphysemaSpec {
    pub count: usize,
    /// Blob radius range in voxels.
    pub radius_min: f64,
    pub radius_max: f64,
    pub hu: f32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpirationSpec {
    /// Fractional lung volume lost on expiration, in (0, 1).
    pub contraction: f64,
    /// HU added to expiratory parenchyma.
    pub densification_hu: f32,
    /// Width of the fade-out shell in units of the lung radius.
    pub falloff: f64,
}

impl ExpirationSpec {
    /// Radial (per-axis) shrink factor equivalent to the volume loss.
    pub fn linear_fraction(&self) -> f64 {
        1.0 - (1.0 - self.contraction).cbrt()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomSpec {
    pub shape: [usize; 3],
    pub spacing: [f64; 3],
    pub body: Ellipsoid,
    pub tissue_hu: f32,
    pub lungs: [Ellipsoid; 2],
    pub parenchyma_hu: f32,
    pub emphysema: EmphysemaSpec,
    pub expiration: ExpirationSpec,
    /// Standard deviation (HU) of the smooth parenchymal texture.
    pub texture_hu: f64,
    /// Smoothing sigma of the texture, voxels.
    pub texture_sigma: f64,
    /// Relative random perturbation of lung centres and radii per seed.
    pub jitter: f64,
    pub hard: KernelSim,
    pub soft: KernelSim,
    pub seed: u64,
}

impl PhantomSpec {
    /// Default anatomy scaled to `shape` (designed on a 96 x 96 x 64 grid).
    pub fn desk(shape: [usize; 3]) -> Self {
        let c: [f64; 3] = std::array::from_fn(|a| (shape[a] - 1) as f64 / 2.0);
        // per-axis scale, shrunk where the body would reach the border
        let k: [f64; 3] = std::array::from_fn(|a| {
            let nominal = shape[a] as f64 / [96.0, 96.0, 64.0][a];
            nominal.min((c[a] - 1.5) / [44.0, 38.0, 29.0][a])
        });
        let lung = |dx: f64| Ellipsoid {
            center: [c[0] + dx * k[0], c[1], c[2]],
            radii: [13.0 * k[0], 21.0 * k[1], 17.0 * k[2]],
        };
        Self {
            shape,
            spacing: [1.0; 3],
            body: Ellipsoid {
                center: c,
                radii: [44.0 * k[0], 38.0 * k[1], 29.0 * k[2]],
            },
            tissue_hu: 40.0,
            lungs: [lung(-20.0), lung(20.0)],
            parenchyma_hu: -850.0,
            emphysema: EmphysemaSpec {
                count: 6,
                radius_min: (3.5 * k[0].min(k[1]).min(k[2])).max(1.0),
                radius_max: (7.0 * k[0].min(k[1]).min(k[2])).max(1.0),
                hu: -980.0,
            },
            expiration: ExpirationSpec {
                contraction: 0.5,
                densification_hu: 100.0,
                falloff: 0.35,
            },
            texture_hu: 25.0,
            texture_sigma: 1.5,
            jitter: 0.03,
            hard: KernelSim::hard(1.0, 0.3, 30.0, 0.8),
            soft: KernelSim::soft(1.0),
            seed: 0,
        }
    }

    /// Sets the contraction so that the largest true displacement is `d` voxels.
    pub fn with_max_displacement(mut self, d: f64) -> Self {
        let r = self.lungs.iter().flat_map(|l| l.radii).fold(0.0, f64::max) * (1.0 + self.jitter);
        let lin = (d / r).clamp(1e-6, 0.95);
        self.expiration.contraction = 1.0 - (1.0 - lin).powi(3);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(InspexError::Argument(format!("phantom spec: {m}")));
        Grid::new(self.shape, self.spacing)?;
        let f = self.expiration.contraction;
        if !(f > 0.0 && f < 1.0) {
            return bad(format!("contraction must lie in (0, 1), got {f}"));
        }
        if !(self.expiration.falloff > 0.0) {
            return bad("falloff must be positive".into());
        }
        let e = &self.emphysema;
        if !(e.radius_min > 0.0 && e.radius_min <= e.radius_max) {
            return bad("emphysema radius range is empty".into());
        }
        if !(self.texture_hu >= 0.0 && self.texture_sigma > 0.0 && (0.0..0.5).contains(&self.jitter)) {
            return bad("texture and jitter parameters out of range".into());
        }
        for a in 0..3 {
            let lo = self.body.center[a] - self.body.radii[a];
            let hi = self.body.center[a] + self.body.radii[a];
            if lo < 1.0 || hi > (self.shape[a] - 2) as f64 {
                return bad("body must stay clear of the grid border".into());
            }
        }
        check_shells(&self.body, &self.lungs, self.expiration.falloff)?;
        self.hard.validate()?;
        self.soft.validate()?;
        if self.hard.kind != KernelKind::Hard || self.soft.kind != KernelKind::Soft {
            return bad("kernel kinds must be hard and soft".into());
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaseLabel {
    Control,
    Case,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomCase {
    pub id: String,
    pub label: CaseLabel,
    pub seed: u64,
    /// Inspiratory scan through the hard kernel.
    pub inspiratory: Volume,
    /// Inspiratory scan through the soft kernel (reference for harmonization).
    pub inspiratory_soft: Volume,
    /// Expiratory scan through the soft kernel.
    pub expiratory: Volume,
    pub pristine_inspiratory: Volume,
    pub pristine_expiratory: Volume,
    /// Expiratory-to-inspiratory resampling field on the inspiratory grid.
    pub truth_field: DisplacementField,
    pub lung_inspiratory: BinaryMask,
    pub lung_expiratory: BinaryMask,
    pub emphysema_inspiratory: BinaryMask,
    pub emphysema_expiratory: BinaryMask,
    pub lungs: [Ellipsoid; 2],
    /// Blob spheres as (centre, radius).
    pub blobs: Vec<([f64; 3], f64)>,
    /// Analytic blob volume over analytic lung volume.
    pub blob_fraction: f64,
}

fn smoothstep_falloff(rho: f64, width: f64) -> f64 {
    if rho <= 1.0 {
        1.0
    } else if rho >= 1.0 + width {
        0.0
    } else {
        let t = (rho - 1.0) / width;
        1.0 - t * t * (3.0 - 2.0 * t)
    }
}

/// Per-purpose RNG stream of a case.
fn stream(seed: u64, purpose: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(purpose);
    r
}

/// Seed of case `index` in a cohort seeded with `cohort_seed`.
pub fn derive_seed(cohort_seed: u64, index: u64) -> u64 {
    let mut r = ChaCha8Rng::seed_from_u64(cohort_seed);
    r.set_stream(1 << 32 | index);
    r.gen()
}

struct Anatomy {
    body: Ellipsoid,
    lungs: [Ellipsoid; 2],
    blobs: Vec<([f64; 3], f64)>,
    lin: f64,
    falloff: f64,
}

impl Anatomy {
    /// Index of the lung whose deformation shell contains `p`, with its rho.
    #[inline]
    fn shell(&self, p: [f64; 3]) -> Option<(usize, f64)> {
        for (k, l) in self.lungs.iter().enumerate() {
            let r = l.rho(p);
            if r < 1.0 + self.falloff {
                return Some((k, r));
            }
        }
        None
    }

    fn displacement(&self, p: [f64; 3]) -> [f64; 3] {
        match self.shell(p) {
            None => [0.0; 3],
            Some((k, rho)) => {
                let s = self.lin * smoothstep_falloff(rho, self.falloff);
                let c = self.lungs[k].center;
                std::array::from_fn(|a| -s * (p[a] - c[a]))
            }
        }
    }

    /// Pre-image under the expiration map.
    fn inverse(&self, y: [f64; 3]) -> [f64; 3] {
        let Some((k, rho_y)) = self.shell(y) else { return y };
        if rho_y == 0.0 {
            return y;
        }
        // rho_y = g(rho_x) = rho_x (1 - lin s(rho_x)) is increasing; bisect
        let g = |r: f64| r * (1.0 - self.lin * smoothstep_falloff(r, self.falloff));
        let (mut lo, mut hi) = (rho_y, rho_y / (1.0 - self.lin));
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if g(mid) < rho_y {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let k_scale = 0.5 * (lo + hi) / rho_y;
        let c = self.lungs[k].center;
        std::array::from_fn(|a| c[a] + (y[a] - c[a]) * k_scale)
    }

    fn in_lung(&self, p: [f64; 3]) -> bool {
        self.lungs.iter().any(|l| l.rho(p) <= 1.0)
    }

    fn in_blob(&self, p: [f64; 3]) -> bool {
        self.blobs.iter().any(|(c, r)| {
            let d2: f64 = (0..3).map(|a| (p[a] - c[a]).powi(2)).sum();
            d2 <= r * r
        })
    }
}

/// Each lung's deformation shell must sit inside the body and the two shells
/// must not overlap.
fn check_shells(body: &Ellipsoid, lungs: &[Ellipsoid; 2], falloff: f64) -> Result<()> {
    let shells = lungs.map(|l| l.scaled(1.0 + falloff));
    if shells.iter().any(|s| s.surface(4000).any(|p| body.rho(p) >= 1.0)) {
        return Err(InspexError::Argument(
            "phantom spec: lungs and their deformation shells must lie strictly inside the body".into(),
        ));
    }
    if shells[0].surface(4000).any(|p| shells[1].rho(p) < 1.0) || shells[1].surface(4000).any(|p| shells[0].rho(p) < 1.0) {
        return Err(InspexError::Argument("phantom spec: lung deformation shells overlap".into()));
    }
    Ok(())
}

fn build_anatomy(spec: &PhantomSpec) -> Result<Anatomy> {
    let mut rng = stream(spec.seed, 0);
    let j = spec.jitter;
    let mut lungs = spec.lungs;
    for l in lungs.iter_mut() {
        let r0 = l.radii;
        for a in 0..3 {
            l.radii[a] = r0[a] * (1.0 + j * rng.gen_range(-1.0..1.0));
            l.center[a] += j * r0[a] * rng.gen_range(-1.0..1.0) * 0.5;
        }
    }
    check_shells(&spec.body, &lungs, spec.expiration.falloff)?;
    let mut blobs: Vec<([f64; 3], f64)> = Vec::new();
    let e = &spec.emphysema;
    let mut attempts = 0;
    while blobs.len() < e.count {
        attempts += 1;
        if attempts > 100_000 {
            return Err(InspexError::Argument("cannot place emphysema blobs inside the lungs".into()));
        }
        let r = if e.radius_max > e.radius_min {
            rng.gen_range(e.radius_min..e.radius_max)
        } else {
            e.radius_min
        };
        let lung = &lungs[rng.gen_range(0..2)];
        let c: [f64; 3] = std::array::from_fn(|a| lung.center[a] + lung.radii[a] * rng.gen_range(-1.0..1.0));
        let rmin = lung.radii.iter().cloned().fold(f64::INFINITY, f64::min);
        if lung.rho(c) + r / rmin > 0.9 {
            continue;
        }
        if blobs.iter().any(|(b, rb)| {
            let d2: f64 = (0..3).map(|a| (b[a] - c[a]).powi(2)).sum();
            d2.sqrt() < r + rb + 1.0
        }) {
            continue;
        }
        blobs.push((c, r));
    }
    Ok(Anatomy {
        body: spec.body,
        lungs,
        blobs,
        lin: spec.expiration.linear_fraction(),
        falloff: spec.expiration.falloff,
    })
}

/// Smooth Gaussian field with the requested standard deviation. The noise is
/// drawn on a padded grid so that edge replication does not inflate the
/// variance near the border.
fn texture_field(shape: [usize; 3], sigma: f64, sd: f64, rng: &mut ChaCha8Rng) -> Vec<f32> {
    let pad = if sigma > 0.0 { gaussian_kernel(sigma).len() / 2 } else { 0 };
    let big: [usize; 3] = shape.map(|n| n + 2 * pad);
    let white: Vec<f32> = (0..big.iter().product()).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
    let field = correlated(&white, big, sigma, sd);
    let mut out = Vec::with_capacity(shape.iter().product());
    for z in 0..shape[2] {
        for y in 0..shape[1] {
            let start = pad + big[0] * (y + pad + big[1] * (z + pad));
            out.extend_from_slice(&field[start..start + shape[0]]);
        }
    }
    out
}

/// Blurs unit white noise and rescales it to standard deviation `sd` using the
/// kernel's energy.
fn correlated(white: &[f32], shape: [usize; 3], sigma: f64, sd: f64) -> Vec<f32> {
    if sigma <= 0.0 {
        return white.iter().map(|&w| (w as f64 * sd) as f32).collect();
    }
    let k = gaussian_kernel(sigma);
    let energy: f64 = k.iter().map(|w| w * w).sum::<f64>().powi(3);
    let scale = sd / energy.sqrt();
    gaussian_blur(white, shape, [sigma; 3])
        .into_iter()
        .map(|v| (v as f64 * scale) as f32)
        .collect()
}

/// SOFT: Gaussian blur. HARD: `v + alpha (v - blur(v)) + noise`. Both clipped
/// to the full HU window.
pub fn simulate_kernel(v: &Volume, k: &KernelSim) -> Result<Volume> {
    k.validate()?;
    let shape = v.shape();
    let blurred = gaussian_blur(v.data(), shape, [k.sigma; 3]);
    let out: Vec<f32> = match k.kind {
        KernelKind::Soft => blurred,
        KernelKind::Hard => {
            let mut out: Vec<f32> = v
                .data()
                .iter()
                .zip(&blurred)
                .map(|(&x, &b)| (x as f64 + k.alpha * (x as f64 - b as f64)) as f32)
                .collect();
            if k.noise_hu > 0.0 {
                let mut rng = stream(k.seed, 7);
                let noise = texture_field(shape, k.noise_corr, k.noise_hu, &mut rng);
                out.iter_mut().zip(noise).for_each(|(o, n)| *o += n);
            }
            out
        }
    };
    clip_hu(&v.with_data(out)?, HU_WINDOW_FULL.0, HU_WINDOW_FULL.1)
}

pub fn generate_case(spec: &PhantomSpec) -> Result<PhantomCase> {
    spec.validate()?;
    let grid = Grid::new(spec.shape, spec.spacing)?;
    let anat = build_anatomy(spec)?;
    let mut rng = stream(spec.seed, 1);
    let texture = texture_field(spec.shape, spec.texture_sigma, spec.texture_hu, &mut rng);

    let value = |p: [f64; 3], expiratory: bool| -> f32 {
        if anat.in_blob(p) {
            spec.emphysema.hu
        } else if anat.in_lung(p) {
            let t = sample_linear(&texture, spec.shape, p);
            let dens = if expiratory { spec.expiration.densification_hu } else { 0.0 };
            spec.parenchyma_hu + t + dens
        } else if anat.body.rho(p) <= 1.0 {
            spec.tissue_hu
        } else {
            HU_AIR
        }
    };
    let pos = |x: usize, y: usize, z: usize| [x as f64, y as f64, z as f64];
    let pristine_insp = Volume::from_fn(grid.clone(), |x, y, z| value(pos(x, y, z), false))?;
    let pristine_exp = Volume::from_fn(grid.clone(), |x, y, z| value(anat.inverse(pos(x, y, z)), true))?;
    let truth_field = DisplacementField::from_fn(&grid, |x, y, z| anat.displacement(pos(x, y, z)))?;
    let lung_insp = BinaryMask::from_fn(spec.shape, |x, y, z| anat.in_lung(pos(x, y, z)));
    let emph_insp = BinaryMask::from_fn(spec.shape, |x, y, z| {
        let p = pos(x, y, z);
        anat.in_lung(p) && anat.in_blob(p)
    });
    let lung_exp = BinaryMask::from_fn(spec.shape, |x, y, z| anat.in_lung(anat.inverse(pos(x, y, z))));
    let emph_exp = BinaryMask::from_fn(spec.shape, |x, y, z| {
        let p = anat.inverse(pos(x, y, z));
        anat.in_lung(p) && anat.in_blob(p)
    });

    let hard = spec.hard.clone().with_seed(derive_seed(spec.seed, 101));
    let soft = spec.soft.clone().with_seed(derive_seed(spec.seed, 102));
    let inspiratory = simulate_kernel(&pristine_insp, &hard)?;
    let inspiratory_soft = simulate_kernel(&pristine_insp, &soft)?;
    let expiratory = simulate_kernel(&pristine_exp, &soft)?;

    let blob_volume: f64 = anat.blobs.iter().map(|(_, r)| 4.0 / 3.0 * std::f64::consts::PI * r.powi(3)).sum();
    let lung_volume: f64 = anat.lungs.iter().map(Ellipsoid::volume).sum();
    Ok(PhantomCase {
        id: format!("seed{}", spec.seed),
        label: if spec.emphysema.count == 0 { CaseLabel::Control } else { CaseLabel::Case },
        seed: spec.seed,
        inspiratory,
        inspiratory_soft,
        expiratory,
        pristine_inspiratory: pristine_insp,
        pristine_expiratory: pristine_exp,
        truth_field,
        lung_inspiratory: lung_insp,
        lung_expiratory: lung_exp,
        emphysema_inspiratory: emph_insp,
        emphysema_expiratory: emph_exp,
        lungs: anat.lungs,
        blobs: anat.blobs,
        blob_fraction: blob_volume / lung_volume,
    })
}

/// Case `index` of the cohort built by [`generate_cohort`], generated alone.
pub fn cohort_case(n_controls: usize, index: usize, base: &PhantomSpec, seed: u64) -> Result<PhantomCase> {
    let control = index < n_controls;
    let mut spec = base.clone();
    spec.seed = derive_seed(seed, index as u64);
    if control {
        spec.emphysema.count = 0;
    }
    let mut case = generate_case(&spec)?;
    case.id = format!("{}_{:03}", if control { "control" } else { "case" }, index);
    Ok(case)
}

/// `n_controls` blob-free cases followed by `n_cases` emphysema cases, with
/// per-case seeds derived from `seed`.
pub fn generate_cohort(n_controls: usize, n_cases: usize, base: &PhantomSpec, seed: u64) -> Result<Vec<PhantomCase>> {
    (0..n_controls + n_cases).map(|i| cohort_case(n_controls, i, base, seed)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registration::jacobian_determinant;

    fn small() -> PhantomSpec {
        PhantomSpec::desk([48, 48, 32])
    }

    #[test]
    fn default_spec_is_valid() {
        PhantomSpec::desk([96, 96, 64]).validate().unwrap();
        small().validate().unwrap();
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = small();
        s.expiration.contraction = 1.0;
        assert!(s.validate().is_err());
        let mut s = small();
        s.lungs[0].radii[0] *= 3.0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn smoothstep_endpoints() {
        assert_eq!(smoothstep_falloff(0.5, 0.3), 1.0);
        assert_eq!(smoothstep_falloff(1.3, 0.3), 0.0);
        assert!((smoothstep_falloff(1.15, 0.3) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn inverse_map_undoes_the_forward_map() {
        let spec = small();
        let anat = build_anatomy(&spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..2000 {
            let p: [f64; 3] = std::array::from_fn(|a| rng.gen_range(0.0..(spec.shape[a] - 1) as f64));
            let u = anat.displacement(p);
            let y = [p[0] + u[0], p[1] + u[1], p[2] + u[2]];
            let q = anat.inverse(y);
            for a in 0..3 {
                assert!((p[a] - q[a]).abs() < 1e-9, "{p:?} -> {y:?} -> {q:?}");
            }
        }
    }

    #[test]
    fn kernels_on_degenerate_inputs() {
        let g = Grid::new([10, 10, 10], [1.0; 3]).unwrap();
        let c = Volume::filled(g.clone(), -850.0).unwrap();
        let s = simulate_kernel(&c, &KernelSim::soft(1.2)).unwrap();
        assert!(s.data().iter().all(|&v| (v + 850.0).abs() < 1e-3));
        let v = Volume::from_fn(g, |x, y, z| (x * 37 + y * 11 + z) as f32 - 900.0).unwrap();
        let h = simulate_kernel(&v, &KernelSim::hard(1.0, 0.0, 0.0, 1.0)).unwrap();
        assert_eq!(h, v);
    }

    #[test]
    fn correlated_noise_has_requested_sd() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = texture_field([40, 40, 40], 1.0, 30.0, &mut rng);
        let m = n.iter().map(|&v| v as f64).sum::<f64>() / n.len() as f64;
        let sd = (n.iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / n.len() as f64).sqrt();
        assert!((sd - 30.0).abs() < 2.0, "sd {sd}");
    }

    #[test]
    fn case_invariants_hold() {
        let mut spec = small();
        spec.seed = 17;
        let case = generate_case(&spec).unwrap();
        assert!(case.emphysema_inspiratory.is_subset_of(&case.lung_inspiratory));
        assert!(case.emphysema_expiratory.is_subset_of(&case.lung_expiratory));
        assert_eq!(case.label, CaseLabel::Case);
        assert!(case.lung_expiratory.count() < case.lung_inspiratory.count());
        let jac = jacobian_determinant(&case.truth_field);
        for (i, &l) in case.lung_inspiratory.bits().iter().enumerate() {
            if l {
                assert!(jac.data()[i] > 0.0);
            }
        }
        assert_eq!(generate_case(&spec).unwrap(), case);
    }

    #[test]
    fn no_contraction_limit() {
        let mut spec = small();
        spec.expiration.contraction = 1e-9;
        spec.expiration.densification_hu = 0.0;
        let case = generate_case(&spec).unwrap();
        assert!(case.truth_field.max_magnitude() < 1e-6);
        assert_eq!(case.pristine_expiratory, case.pristine_inspiratory);
    }

    #[test]
    fn cohort_labels_and_determinism() {
        let mut spec = PhantomSpec::desk([48, 48, 32]);
        spec.emphysema.count = 4;
        assert!(generate_cohort(0, 0, &spec, 1).unwrap().is_empty());
        let a = generate_cohort(2, 1, &spec, 9).unwrap();
        assert_eq!(a.iter().filter(|c| c.label == CaseLabel::Control).count(), 2);
        assert!(a[0].blobs.is_empty() && !a[2].blobs.is_empty());
        assert_eq!(a, generate_cohort(2, 1, &spec, 9).unwrap());
        assert_ne!(a[0].seed, a[1].seed);
    }
}
