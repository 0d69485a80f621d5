//! Voxel grids in Hounsfield units, binary masks and intensity preprocessing.
//!
//! Voxels are stored x-fastest (`x + nx * (y + ny * z)`), matching NIfTI; an
//! axial slice is a fixed `z`.

mod nifti;
mod resample;

pub use nifti::{load_nifti, load_nifti_raw, save_nifti, save_nifti_raw, NiftiImage, DESCRIP_LEN};
pub use resample::{resample, resample_to_shape, sample_linear, Interp};
pub(crate) use resample::sample_nearest;

use serde::{Deserialize, Serialize};

use crate::error::{InspexError, Result};

/// Default clip window for harmonizer inputs.
pub const HU_WINDOW_FULL: (f32, f32) = (-1024.0, 3072.0);
/// Clip window applied to lung-masked volumes.
pub const HU_WINDOW_LUNG: (f32, f32) = (-1024.0, 0.0);
/// Air; fill value for masked-out and out-of-bounds voxels.
pub const HU_AIR: f32 = -1024.0;

/// Geometry shared by volumes, masks and displacement fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub shape: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
    /// Columns are the world directions of the x, y, z index axes.
    pub direction: [[f64; 3]; 3],
}

pub const IDENTITY3: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

impl Grid {
    pub fn new(shape: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        let g = Self {
            shape,
            spacing,
            origin: [0.0; 3],
            direction: IDENTITY3,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.shape.iter().any(|&n| n == 0) {
            return Err(InspexError::Argument(format!("zero-extent shape {:?}", self.shape)));
        }
        if self.spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(InspexError::Argument(format!("spacing must be positive, got {:?}", self.spacing)));
        }
        if self.origin.iter().chain(self.direction.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(InspexError::Argument("non-finite origin or direction".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.shape[0] * (y + self.shape[1] * z)
    }

    #[inline]
    pub fn coords(&self, i: usize) -> [usize; 3] {
        let [nx, ny, _] = self.shape;
        [i % nx, (i / nx) % ny, i / (nx * ny)]
    }

    /// Voxel volume in millilitres.
    pub fn voxel_ml(&self) -> f64 {
        self.spacing.iter().product::<f64>() / 1000.0
    }
}

/// Scalar CT volume in Hounsfield units.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    grid: Grid,
    data: Vec<f32>,
}

impl Volume {
    pub fn new(grid: Grid, data: Vec<f32>) -> Result<Self> {
        grid.validate()?;
        if data.len() != grid.len() {
            return Err(InspexError::Argument(format!(
                "shape {:?} needs {} voxels, got {}",
                grid.shape,
                grid.len(),
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(InspexError::Data(format!("non-finite voxel at index {i}")));
        }
        Ok(Self { grid, data })
    }

    pub fn filled(grid: Grid, value: f32) -> Result<Self> {
        let n = grid.len();
        Self::new(grid, vec![value; n])
    }

    /// Builds a volume by evaluating `f(x, y, z)` at every voxel.
    pub fn from_fn(grid: Grid, mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        let [nx, ny, nz] = grid.shape;
        let mut data = Vec::with_capacity(grid.len());
        for z in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(grid, data)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn shape(&self) -> [usize; 3] {
        self.grid.shape
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.grid.spacing
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[self.grid.index(x, y, z)]
    }

    /// New volume on the same grid with `f` applied to each voxel.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Self> {
        Self::new(self.grid.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn with_data(&self, data: Vec<f32>) -> Result<Self> {
        Self::new(self.grid.clone(), data)
    }

    /// Axial slice `z` as a row-major `ny x nx` buffer.
    pub fn axial_slice(&self, z: usize) -> &[f32] {
        let n = self.grid.shape[0] * self.grid.shape[1];
        &self.data[z * n..(z + 1) * n]
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }
}

/// Per-voxel boolean annotation of a volume grid.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    shape: [usize; 3],
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(shape: [usize; 3], bits: Vec<bool>) -> Result<Self> {
        if bits.len() != shape.iter().product::<usize>() {
            return Err(InspexError::Argument(format!(
                "mask shape {shape:?} does not match {} bits",
                bits.len()
            )));
        }
        Ok(Self { shape, bits })
    }

    pub fn empty(shape: [usize; 3]) -> Self {
        Self {
            shape,
            bits: vec![false; shape.iter().product()],
        }
    }

    pub fn full(shape: [usize; 3]) -> Self {
        Self {
            shape,
            bits: vec![true; shape.iter().product()],
        }
    }

    pub fn from_fn(shape: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(shape.iter().product());
        for z in 0..shape[2] {
            for y in 0..shape[1] {
                for x in 0..shape[0] {
                    bits.push(f(x, y, z));
                }
            }
        }
        Self { shape, bits }
    }

    /// Thresholded view of a volume: `pred(v)` per voxel.
    pub fn from_volume(v: &Volume, pred: impl Fn(f32) -> bool) -> Self {
        Self {
            shape: v.shape(),
            bits: v.data().iter().map(|&x| pred(x)).collect(),
        }
    }

    pub fn shape(&self) -> [usize; 3] {
        self.shape
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn bits_mut(&mut self) -> &mut [bool] {
        &mut self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.bits[x + self.shape[0] * (y + self.shape[1] * z)]
    }

    /// Number of set voxels (64-bit).
    pub fn count(&self) -> u64 {
        self.bits.iter().filter(|&&b| b).count() as u64
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|&b| b)
    }

    pub fn check_shape(&self, shape: [usize; 3]) -> Result<()> {
        if self.shape != shape {
            return Err(InspexError::Shape(self.shape, shape));
        }
        Ok(())
    }

    pub fn and(&self, other: &BinaryMask) -> Result<BinaryMask> {
        other.check_shape(self.shape)?;
        Ok(Self {
            shape: self.shape,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| a && b).collect(),
        })
    }

    pub fn or(&self, other: &BinaryMask) -> Result<BinaryMask> {
        other.check_shape(self.shape)?;
        Ok(Self {
            shape: self.shape,
            bits: self.bits.iter().zip(&other.bits).map(|(&a, &b)| a || b).collect(),
        })
    }

    /// `true` iff every set bit of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.shape == other.shape && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    /// Mask as a 0/1 volume on `grid`.
    pub fn to_volume(&self, grid: &Grid) -> Result<Volume> {
        self.check_shape(grid.shape)?;
        Volume::new(grid.clone(), self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect())
    }
}

/// Volume whose voxels were mapped affinely from an HU window onto `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedVolume {
    grid: Grid,
    data: Vec<f32>,
    window: (f32, f32),
}

impl NormalizedVolume {
    pub fn new(grid: Grid, data: Vec<f32>, window: (f32, f32)) -> Result<Self> {
        check_window(window.0, window.1)?;
        if data.len() != grid.len() {
            return Err(InspexError::Argument("buffer length does not match grid".into()));
        }
        if let Some(v) = data.iter().find(|v| !(-1.0..=1.0).contains(*v)) {
            return Err(InspexError::Data(format!("normalized value {v} outside [-1, 1]")));
        }
        Ok(Self { grid, data, window })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn window(&self) -> (f32, f32) {
        self.window
    }
}

fn check_window(lo: f32, hi: f32) -> Result<()> {
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(InspexError::Argument(format!("window requires lo < hi, got ({lo}, {hi})")));
    }
    Ok(())
}

/// Clamps every voxel into `[lo, hi]`.
pub fn clip_hu(v: &Volume, lo: f32, hi: f32) -> Result<Volume> {
    check_window(lo, hi)?;
    v.map(|x| x.clamp(lo, hi))
}

/// Affine map `x -> 2 (x - lo) / (hi - lo) - 1`; `v` must already be clipped.
pub fn normalize(v: &Volume, lo: f32, hi: f32) -> Result<NormalizedVolume> {
    check_window(lo, hi)?;
    if let Some(x) = v.data().iter().find(|x| !(lo..=hi).contains(*x)) {
        return Err(InspexError::Argument(format!(
            "voxel {x} outside window ({lo}, {hi}); clip first"
        )));
    }
    let data = v.data().iter().map(|&x| normalize_value(x, lo, hi)).collect();
    NormalizedVolume::new(v.grid().clone(), data, (lo, hi))
}

#[inline]
pub fn normalize_value(x: f32, lo: f32, hi: f32) -> f32 {
    let (x, lo, hi) = (x as f64, lo as f64, hi as f64);
    ((2.0 * (x - lo) / (hi - lo) - 1.0) as f32).clamp(-1.0, 1.0)
}

#[inline]
pub fn denormalize_value(y: f32, lo: f32, hi: f32) -> f32 {
    let (y, lo, hi) = (y as f64, lo as f64, hi as f64);
    ((y + 1.0) * 0.5 * (hi - lo) + lo) as f32
}

/// Inverse of [`normalize`] using the recorded window.
pub fn denormalize(n: &NormalizedVolume) -> Volume {
    let (lo, hi) = n.window;
    let data = n.data.iter().map(|&y| denormalize_value(y, lo, hi)).collect();
    Volume::new(n.grid.clone(), data).expect("normalized volume is finite")
}

/// How voxels outside the mask are treated by [`apply_mask`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskMode {
    /// Voxels outside the mask become the given HU value.
    Fill(f32),
    /// Voxel times mask bit; outside voxels become 0 HU.
    LiteralMultiply,
}

impl Default for MaskMode {
    fn default() -> Self {
        MaskMode::Fill(HU_AIR)
    }
}

pub fn apply_mask(v: &Volume, m: &BinaryMask, mode: MaskMode) -> Result<Volume> {
    m.check_shape(v.shape())?;
    let data = v
        .data()
        .iter()
        .zip(m.bits())
        .map(|(&x, &b)| match (b, mode) {
            (true, _) => x,
            (false, MaskMode::Fill(bg)) => bg,
            (false, MaskMode::LiteralMultiply) => 0.0,
        })
        .collect();
    v.with_data(data)
}
