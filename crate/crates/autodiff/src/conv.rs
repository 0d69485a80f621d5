//! Convolution kernels built on im2col + GEMM.
//!
//! Column buffers are recomputed in the backward pass instead of being kept
//! alive on the tape; for the 7x7 generator layers they would dominate memory.

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    /// Geometry of a zero-padded convolution over a `channels x height x width` image.
    /// Returns `None` when the kernel does not fit.
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    ) -> Option<Self> {
        let ph = height + 2 * pad;
        let pw = width + 2 * pad;
        if stride == 0 || ph < kh || pw < kw {
            return None;
        }
        Some(Self {
            channels,
            height,
            width,
            kh,
            kw,
            stride,
            pad,
            out_h: (ph - kh) / stride + 1,
            out_w: (pw - kw) / stride + 1,
        })
    }

    pub fn col_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }
}

pub(crate) fn im2col<T: Scalar>(img: &[T], g: &ConvGeom, cols: &mut [T]) {
    let ncols = g.col_cols();
    debug_assert_eq!(cols.len(), g.col_rows() * ncols);
    for c in 0..g.channels {
        let plane = &img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let dst = &mut cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + i) as isize - g.pad as isize;
                    let drow = &mut dst[oy * g.out_w..(oy + 1) * g.out_w];
                    if iy < 0 || iy >= g.height as isize {
                        drow.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, d) in drow.iter_mut().enumerate() {
                        let ix = (ox * g.stride + j) as isize - g.pad as isize;
                        *d = if ix < 0 || ix >= g.width as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-adds columns back into `img`.
pub(crate) fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, img: &mut [T]) {
    let ncols = g.col_cols();
    for c in 0..g.channels {
        let plane = &mut img[c * g.height * g.width..(c + 1) * g.height * g.width];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + i) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for ox in 0..g.out_w {
                        let ix = (ox * g.stride + j) as isize - g.pad as isize;
                        if ix >= 0 && ix < g.width as isize {
                            let d = &mut dst[ix as usize];
                            *d = *d + src[oy * g.out_w + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Forward convolution. `w` is `[out_ch, in_ch, kh, kw]`, `y` is `[n, out_ch, out_h, out_w]`.
pub(crate) fn conv2d_forward<T: Scalar>(
    x: &[T],
    batch: usize,
    g: &ConvGeom,
    w: &[T],
    out_ch: usize,
    bias: Option<&[T]>,
) -> Vec<T> {
    let (k, ncols) = (g.col_rows(), g.col_cols());
    let mut cols = vec![T::zero(); k * ncols];
    let mut y = vec![T::zero(); batch * out_ch * ncols];
    for n in 0..batch {
        im2col(&x[n * g.image_len()..(n + 1) * g.image_len()], g, &mut cols);
        let yn = &mut y[n * out_ch * ncols..(n + 1) * out_ch * ncols];
        T::gemm(out_ch, k, ncols, w, false, &cols, false, T::zero(), yn);
        if let Some(b) = bias {
            for (o, &bo) in b.iter().enumerate() {
                yn[o * ncols..(o + 1) * ncols].iter_mut().for_each(|v| *v = *v + bo);
            }
        }
    }
    y
}

/// Gradients of [`conv2d_forward`] with respect to input, weight and bias.
#[allow(clippy::too_many_arguments)]
pub(crate) fn conv2d_backward<T: Scalar>(
    x: &[T],
    batch: usize,
    g: &ConvGeom,
    w: &[T],
    out_ch: usize,
    dy: &[T],
    want_dx: bool,
    want_dw: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Vec<T>) {
    let (k, ncols) = (g.col_rows(), g.col_cols());
    let mut cols = vec![T::zero(); k * ncols];
    let mut dx = want_dx.then(|| vec![T::zero(); batch * g.image_len()]);
    let mut dw = want_dw.then(|| vec![T::zero(); out_ch * k]);
    let mut db = vec![T::zero(); out_ch];
    for n in 0..batch {
        let dyn_ = &dy[n * out_ch * ncols..(n + 1) * out_ch * ncols];
        for (o, acc) in db.iter_mut().enumerate() {
            *acc = *acc + dyn_[o * ncols..(o + 1) * ncols].iter().copied().sum::<T>();
        }
        if let Some(dw) = dw.as_mut() {
            im2col(&x[n * g.image_len()..(n + 1) * g.image_len()], g, &mut cols);
            T::gemm(out_ch, ncols, k, dyn_, false, &cols, true, T::one(), dw);
        }
        if let Some(dx) = dx.as_mut() {
            T::gemm(k, out_ch, ncols, w, true, dyn_, false, T::zero(), &mut cols);
            col2im(&cols, g, &mut dx[n * g.image_len()..(n + 1) * g.image_len()]);
        }
    }
    (dx, dw, db)
}

/// Transposed convolution. `w` is `[in_ch, out_ch, kh, kw]`; `g` describes the
/// *output* image as the input of the adjoint convolution, so `g.out_h x g.out_w`
/// equals the spatial size of `x`.
pub(crate) fn conv_transpose2d_forward<T: Scalar>(
    x: &[T],
    batch: usize,
    in_ch: usize,
    g: &ConvGeom,
    w: &[T],
    bias: Option<&[T]>,
) -> Vec<T> {
    let (k, ncols) = (g.col_rows(), g.col_cols());
    let mut cols = vec![T::zero(); k * ncols];
    let mut y = vec![T::zero(); batch * g.image_len()];
    for n in 0..batch {
        let xn = &x[n * in_ch * ncols..(n + 1) * in_ch * ncols];
        T::gemm(k, in_ch, ncols, w, true, xn, false, T::zero(), &mut cols);
        let yn = &mut y[n * g.image_len()..(n + 1) * g.image_len()];
        col2im(&cols, g, yn);
        if let Some(b) = bias {
            let plane = g.height * g.width;
            for (o, &bo) in b.iter().enumerate() {
                yn[o * plane..(o + 1) * plane].iter_mut().for_each(|v| *v = *v + bo);
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn conv_transpose2d_backward<T: Scalar>(
    x: &[T],
    batch: usize,
    in_ch: usize,
    g: &ConvGeom,
    w: &[T],
    dy: &[T],
    want_dx: bool,
    want_dw: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Vec<T>) {
    let (k, ncols) = (g.col_rows(), g.col_cols());
    let plane = g.height * g.width;
    let mut cols = vec![T::zero(); k * ncols];
    let mut dx = want_dx.then(|| vec![T::zero(); batch * in_ch * ncols]);
    let mut dw = want_dw.then(|| vec![T::zero(); in_ch * k]);
    let mut db = vec![T::zero(); g.channels];
    for n in 0..batch {
        let dyn_ = &dy[n * g.image_len()..(n + 1) * g.image_len()];
        for (o, acc) in db.iter_mut().enumerate() {
            *acc = *acc + dyn_[o * plane..(o + 1) * plane].iter().copied().sum::<T>();
        }
        im2col(dyn_, g, &mut cols);
        if let Some(dx) = dx.as_mut() {
            let dxn = &mut dx[n * in_ch * ncols..(n + 1) * in_ch * ncols];
            T::gemm(in_ch, k, ncols, w, false, &cols, false, T::zero(), dxn);
        }
        if let Some(dw) = dw.as_mut() {
            let xn = &x[n * in_ch * ncols..(n + 1) * in_ch * ncols];
            T::gemm(in_ch, ncols, k, xn, false, &cols, true, T::one(), dw);
        }
    }
    (dx, dw, db)
}
