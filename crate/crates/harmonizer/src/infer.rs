//! Slice-wise application of a trained generator to a whole volume.

use inspex_autodiff::Tensor;
use inspex_core::volume::{clip_hu, denormalize_value, normalize_value};
use inspex_core::Volume;

use crate::error::{HarmonizerError, Result};
use crate::nets::GeneratorNet;

/// Maps a normalized `[1, 1, h, w]` slice to one of the same shape.
pub trait SliceTranslator {
    /// Required divisor of both sides; inputs are padded up to it.
    fn side_multiple(&self) -> usize {
        1
    }
    fn translate(&self, slice: Tensor<f32>) -> Result<Tensor<f32>>;
}

/// Returns its input; lets the pipeline run without a trained model.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityTranslator;

impl SliceTranslator for IdentityTranslator {
    fn translate(&self, slice: Tensor<f32>) -> Result<Tensor<f32>> {
        Ok(slice)
    }
}

impl SliceTranslator for GeneratorNet {
    fn side_multiple(&self) -> usize {
        Self::SIDE_MULTIPLE
    }

    fn translate(&self, slice: Tensor<f32>) -> Result<Tensor<f32>> {
        self.apply(slice)
    }
}

fn reflect(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = i % period;
    if r < n {
        r
    } else {
        period - r
    }
}

/// Clips to `window`, translates every axial slice and maps back to HU.
/// Slices are reflection-padded on the high side to the translator's
/// multiple and cropped afterwards; output stays inside `window`.
pub fn harmonize_volume(v: &Volume, translator: &dyn SliceTranslator, window: (f32, f32)) -> Result<Volume> {
    let (lo, hi) = window;
    let clipped = clip_hu(v, lo, hi)?;
    let [nx, ny, nz] = v.shape();
    let m = translator.side_multiple().max(1);
    let (py, px) = (ny.div_ceil(m) * m, nx.div_ceil(m) * m);
    let mut out = vec![0.0f32; nx * ny * nz];
    for z in 0..nz {
        let s = clipped.axial_slice(z);
        let mut padded = Vec::with_capacity(py * px);
        for y in 0..py {
            let row = &s[reflect(y, ny) * nx..][..nx];
            padded.extend((0..px).map(|x| normalize_value(row[reflect(x, nx)], lo, hi)));
        }
        let t = translator.translate(Tensor::new(&[1, 1, py, px], padded)?)?;
        if t.shape() != [1, 1, py, px] {
            return Err(HarmonizerError::Usage(format!(
                "translator returned shape {:?} for a {py}x{px} slice",
                t.shape()
            )));
        }
        let dst = &mut out[z * nx * ny..(z + 1) * nx * ny];
        for y in 0..ny {
            for x in 0..nx {
                let u = t.data()[y * px + x];
                if !u.is_finite() {
                    return Err(HarmonizerError::Usage(format!("non-finite translator output in slice {z}")));
                }
                dst[y * nx + x] = denormalize_value(u.clamp(-1.0, 1.0), lo, hi).clamp(lo, hi);
            }
        }
    }
    Ok(v.with_data(out)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflection_indices() {
        let r: Vec<usize> = (0..8).map(|i| reflect(i, 3)).collect();
        assert_eq!(r, [0, 1, 2, 1, 0, 1, 2, 1]);
        assert_eq!(reflect(5, 1), 0);
    }
}
