//! Separable smoothing and windowed sums over x-fastest 3-D buffers.

/// Normalized 1-D Gaussian taps with radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

// Runs `f(line_start, stride)` for every line along `axis`.
fn for_each_line(shape: [usize; 3], axis: usize, mut f: impl FnMut(usize, usize)) {
    let [nx, ny, nz] = shape;
    match axis {
        0 => {
            for z in 0..nz {
                for y in 0..ny {
                    f(nx * (y + ny * z), 1);
                }
            }
        }
        1 => {
            for z in 0..nz {
                for x in 0..nx {
                    f(x + nx * ny * z, nx);
                }
            }
        }
        _ => {
            for y in 0..ny {
                for x in 0..nx {
                    f(x + nx * y, nx * ny);
                }
            }
        }
    }
}

fn convolve_axis(data: &mut [f32], shape: [usize; 3], axis: usize, kernel: &[f64]) {
    if kernel.len() == 1 {
        return;
    }
    let n = shape[axis];
    let r = (kernel.len() / 2) as isize;
    let mut line = vec![0f64; n];
    for_each_line(shape, axis, |start, stride| {
        for (i, l) in line.iter_mut().enumerate() {
            *l = data[start + i * stride] as f64;
        }
        for i in 0..n {
            let mut acc = 0.0;
            for (k, &w) in kernel.iter().enumerate() {
                let j = (i as isize + k as isize - r).clamp(0, n as isize - 1) as usize;
                acc += w * line[j];
            }
            data[start + i * stride] = acc as f32;
        }
    });
}

/// Gaussian blur with per-axis standard deviations in voxels (edge-replicated).
pub fn gaussian_blur(data: &[f32], shape: [usize; 3], sigma: [f64; 3]) -> Vec<f32> {
    let mut out = data.to_vec();
    gaussian_blur_in_place(&mut out, shape, sigma);
    out
}

pub fn gaussian_blur_in_place(data: &mut [f32], shape: [usize; 3], sigma: [f64; 3]) {
    for axis in 0..3 {
        convolve_axis(data, shape, axis, &gaussian_kernel(sigma[axis]));
    }
}

/// Sum over the cube of half-width `radius` around each voxel, truncated at the
/// grid boundary.
pub fn box_sum(data: &[f64], shape: [usize; 3], radius: usize) -> Vec<f64> {
    let mut out = data.to_vec();
    let mut line = Vec::new();
    let mut prefix = Vec::new();
    for axis in 0..3 {
        let n = shape[axis];
        line.resize(n, 0.0);
        prefix.resize(n + 1, 0.0);
        for_each_line(shape, axis, |start, stride| {
            prefix[0] = 0.0;
            for i in 0..n {
                line[i] = out[start + i * stride];
                prefix[i + 1] = prefix[i] + line[i];
            }
            for i in 0..n {
                let lo = i.saturating_sub(radius);
                let hi = (i + radius + 1).min(n);
                out[start + i * stride] = prefix[hi] - prefix[lo];
            }
        });
    }
    out
}

/// Number of in-grid voxels in each truncated window of [`box_sum`].
pub fn box_count(shape: [usize; 3], radius: usize) -> Vec<f64> {
    let per_axis: Vec<Vec<f64>> = (0..3)
        .map(|a| {
            (0..shape[a])
                .map(|i| ((i + radius + 1).min(shape[a]) - i.saturating_sub(radius)) as f64)
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(shape.iter().product());
    for z in 0..shape[2] {
        for y in 0..shape[1] {
            for x in 0..shape[0] {
                out.push(per_axis[0][x] * per_axis[1][y] * per_axis[2][z]);
            }
        }
    }
    out
}
