//! Image pyramids and intensity preparation shared by the registration stages.

use crate::error::Result;
use crate::filter::gaussian_blur;
use crate::volume::{resample, Interp, Volume};

/// Maps HU on the lung window to [0, 1]; registration inputs are expected to be
/// masked and clipped to [-1024, 0].
pub(crate) fn unit_intensity(v: &Volume) -> Result<Volume> {
    v.map(|x| ((x + 1024.0) / 1024.0).clamp(0.0, 1.0))
}

/// Blurred (sigma = shrink / 2) and subsampled copy; `shrink == 1` is the input.
pub(crate) fn shrink(v: &Volume, s: usize) -> Result<Volume> {
    if s <= 1 {
        return Ok(v.clone());
    }
    let blurred = v.with_data(gaussian_blur(v.data(), v.shape(), [0.5 * s as f64; 3]))?;
    resample(&blurred, [1.0 / s as f64; 3], Interp::Linear)
}

#[cfg(test)]
/// Shape of a level, matching [`shrink`].
pub(crate) fn level_shape(shape: [usize; 3], s: usize) -> [usize; 3] {
    std::array::from_fn(|a| (shape[a] - 1) / s.max(1) + 1)
}

/// Central-difference gradient images (one-sided at borders).
pub(crate) fn gradient(data: &[f32], shape: [usize; 3]) -> [Vec<f32>; 3] {
    let stride = [1, shape[0], shape[0] * shape[1]];
    let n = data.len();
    let mut out: [Vec<f32>; 3] = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let mut i = 0;
    for z in 0..shape[2] {
        for y in 0..shape[1] {
            for x in 0..shape[0] {
                let c = [x, y, z];
                for a in 0..3 {
                    if shape[a] < 2 {
                        continue;
                    }
                    let (lo, hi, h) = if c[a] == 0 {
                        (i, i + stride[a], 1.0)
                    } else if c[a] == shape[a] - 1 {
                        (i - stride[a], i, 1.0)
                    } else {
                        (i - stride[a], i + stride[a], 2.0)
                    };
                    out[a][i] = (data[hi] - data[lo]) / h;
                }
                i += 1;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid;

    #[test]
    fn level_shape_matches_shrink() {
        let g = Grid::new([33, 20, 17], [1.0; 3]).unwrap();
        let v = Volume::filled(g, -900.0).unwrap();
        for s in [1, 2, 4] {
            assert_eq!(shrink(&v, s).unwrap().shape(), level_shape([33, 20, 17], s));
        }
    }

    #[test]
    fn gradient_of_ramp() {
        let shape = [5, 4, 3];
        let data: Vec<f32> = (0..60).map(|i| (i % 5) as f32 * 2.0 + (i / 20) as f32).collect();
        let g = gradient(&data, shape);
        assert!(g[0].iter().all(|&v| v == 2.0));
        assert!(g[1].iter().all(|&v| v == 0.0));
        assert!(g[2].iter().all(|&v| v == 1.0));
    }
}
