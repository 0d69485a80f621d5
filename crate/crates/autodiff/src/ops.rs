//! Forward definitions and backward rules for every recorded operation.

use crate::conv::{self, ConvGeom};
use crate::error::{AutogradError, Result};
use crate::graph::{Graph, NodeId, Op};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Variance floor used by [`Graph::instance_norm`].
pub const INSTANCE_NORM_EPS: f64 = 1e-5;

impl<T: Scalar> Graph<T> {
    /// 2-D convolution with zero padding. `x`: `[n, c, h, w]`, `w`: `[o, c, kh, kw]`, `b`: `[o]`.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        const OP: &str = "conv2d";
        let (n, c, h, wd) = self.value(x).dims4(OP)?;
        let (o, wc, kh, kw) = self.value(w).dims4(OP)?;
        if wc != c {
            return Err(AutogradError::shape(OP, self.value(x).shape(), self.value(w).shape()));
        }
        self.check_bias(OP, b, o)?;
        if stride == 0 {
            return Err(AutogradError::arg(OP, "stride must be at least 1"));
        }
        let g = ConvGeom::new(c, h, wd, kh, kw, stride, pad)
            .ok_or_else(|| AutogradError::shape(OP, self.value(x).shape(), self.value(w).shape()))?;
        let y = conv::conv2d_forward(
            self.value(x).data(),
            n,
            &g,
            self.value(w).data(),
            o,
            b.map(|b| self.value(b).data()),
        );
        let out = Tensor::new(&[n, o, g.out_h, g.out_w], y)?;
        let rg = self.any_requires_grad(&[x, w]) || b.is_some_and(|b| self.requires_grad(b));
        Ok(self.push(out, Op::Conv2d { x, w, b, stride, pad }, rg))
    }

    /// Transposed 2-D convolution. `w`: `[c_in, c_out, kh, kw]`.
    /// Output side is `(h - 1) * stride - 2 * pad + k + output_pad`.
    #[allow(clippy::too_many_arguments)]
    pub fn conv_transpose2d(
        &mut self,
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
        output_pad: usize,
    ) -> Result<NodeId> {
        const OP: &str = "conv_transpose2d";
        let (n, c, h, wd) = self.value(x).dims4(OP)?;
        let (wc, o, kh, kw) = self.value(w).dims4(OP)?;
        if wc != c {
            return Err(AutogradError::shape(OP, self.value(x).shape(), self.value(w).shape()));
        }
        self.check_bias(OP, b, o)?;
        if stride == 0 || output_pad >= stride {
            return Err(AutogradError::arg(OP, "need stride >= 1 and output_pad < stride"));
        }
        let oh = ((h - 1) * stride + kh + output_pad)
            .checked_sub(2 * pad)
            .filter(|&v| v > 0);
        let ow = ((wd - 1) * stride + kw + output_pad)
            .checked_sub(2 * pad)
            .filter(|&v| v > 0);
        let (Some(oh), Some(ow)) = (oh, ow) else {
            return Err(AutogradError::arg(OP, "padding larger than output"));
        };
        let g = ConvGeom::new(o, oh, ow, kh, kw, stride, pad)
            .filter(|g| g.out_h == h && g.out_w == wd)
            .ok_or_else(|| AutogradError::shape(OP, self.value(x).shape(), self.value(w).shape()))?;
        let y = conv::conv_transpose2d_forward(
            self.value(x).data(),
            n,
            c,
            &g,
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let out = Tensor::new(&[n, o, oh, ow], y)?;
        let rg = self.any_requires_grad(&[x, w]) || b.is_some_and(|b| self.requires_grad(b));
        Ok(self.push(out, Op::ConvTranspose2d { x, w, b, stride, pad }, rg))
    }

    fn check_bias(&self, op: &'static str, b: Option<NodeId>, channels: usize) -> Result<()> {
        if let Some(b) = b {
            if self.value(b).shape() != [channels] {
                return Err(AutogradError::shape(op, self.value(b).shape(), &[channels]));
            }
        }
        Ok(())
    }

    /// Normalizes each (sample, channel) plane to zero mean and unit variance,
    /// then applies the per-channel affine `gamma * xhat + beta`.
    pub fn instance_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        const OP: &str = "instance_norm";
        let (n, c, h, w) = self.value(x).dims4(OP)?;
        for p in [gamma, beta] {
            if self.value(p).shape() != [c] {
                return Err(AutogradError::shape(OP, self.value(x).shape(), self.value(p).shape()));
            }
        }
        let plane = h * w;
        if plane == 0 {
            return Err(AutogradError::arg(OP, "empty spatial plane"));
        }
        let eps = T::from_f64_lossy(INSTANCE_NORM_EPS);
        let xs = self.value(x).data();
        let gs = self.value(gamma).data();
        let bs = self.value(beta).data();
        let mut out = vec![T::zero(); xs.len()];
        let mut means = Vec::with_capacity(n * c);
        let mut inv_stds = Vec::with_capacity(n * c);
        for p in 0..n * c {
            let src = &xs[p * plane..(p + 1) * plane];
            // statistics accumulate in f64 regardless of T
            let mean = src.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / plane as f64;
            let var = src
                .iter()
                .map(|v| {
                    let d = v.to_f64_lossy() - mean;
                    d * d
                })
                .sum::<f64>()
                / plane as f64;
            let mean = T::from_f64_lossy(mean);
            let inv_std = (T::from_f64_lossy(var) + eps).sqrt().recip();
            let (gm, bt) = (gs[p % c], bs[p % c]);
            for (o, &v) in out[p * plane..(p + 1) * plane].iter_mut().zip(src) {
                *o = gm * (v - mean) * inv_std + bt;
            }
            means.push(mean);
            inv_stds.push(inv_std);
        }
        let out = Tensor::new(&[n, c, h, w], out)?;
        let rg = self.any_requires_grad(&[x, gamma, beta]);
        Ok(self.push(
            out,
            Op::InstanceNorm {
                x,
                gamma,
                beta,
                mean: means,
                inv_std: inv_stds,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| v.max(T::zero()));
        let rg = self.requires_grad(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn leaky_relu(&mut self, x: NodeId, slope: f64) -> NodeId {
        let s = T::from_f64_lossy(slope);
        let out = self.value(x).map(|v| if v > T::zero() { v } else { v * s });
        let rg = self.requires_grad(x);
        self.push(out, Op::LeakyRelu(x, s), rg)
    }

    pub fn tanh(&mut self, x: NodeId) -> NodeId {
        let out = self.value(x).map(|v| v.tanh());
        let rg = self.requires_grad(x);
        self.push(out, Op::Tanh(x), rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.any_requires_grad(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn mul_scalar(&mut self, x: NodeId, c: f64) -> NodeId {
        let c = T::from_f64_lossy(c);
        let out = self.value(x).map(|v| v * c);
        let rg = self.requires_grad(x);
        self.push(out, Op::MulScalar(x, c), rg)
    }

    /// `mean(|a - b|)` as a scalar.
    pub fn l1_loss(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("l1_loss", a, b)?;
        let n = self.value(a).len().max(1) as f64;
        let s: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| (x - y).abs().to_f64_lossy())
            .sum();
        let rg = self.any_requires_grad(&[a, b]);
        Ok(self.push(Tensor::scalar(T::from_f64_lossy(s / n)), Op::L1Loss(a, b), rg))
    }

    /// `mean((a - b)^2)` as a scalar (no one-half factor).
    pub fn mse_loss(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("mse_loss", a, b)?;
        let n = self.value(a).len().max(1) as f64;
        let s: f64 = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| {
                let d = (x - y).to_f64_lossy();
                d * d
            })
            .sum();
        let rg = self.any_requires_grad(&[a, b]);
        Ok(self.push(Tensor::scalar(T::from_f64_lossy(s / n)), Op::MseLoss(a, b), rg))
    }

    /// Mirror padding of the two spatial axes (edge sample not repeated).
    pub fn reflection_pad(&mut self, x: NodeId, pad: usize) -> Result<NodeId> {
        const OP: &str = "reflection_pad";
        let (n, c, h, w) = self.value(x).dims4(OP)?;
        if pad >= h || pad >= w {
            return Err(AutogradError::arg(
                OP,
                format!("pad {pad} must be smaller than spatial size {h}x{w}"),
            ));
        }
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        let xs = self.value(x).data();
        let mut out = vec![T::zero(); n * c * ph * pw];
        for p in 0..n * c {
            let src = &xs[p * h * w..(p + 1) * h * w];
            let dst = &mut out[p * ph * pw..(p + 1) * ph * pw];
            for y in 0..ph {
                let sy = reflect(y, pad, h);
                for xx in 0..pw {
                    dst[y * pw + xx] = src[sy * w + reflect(xx, pad, w)];
                }
            }
        }
        let out = Tensor::new(&[n, c, ph, pw], out)?;
        let rg = self.requires_grad(x);
        Ok(self.push(out, Op::ReflectionPad(x, pad), rg))
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(AutogradError::shape(op, sa, sb));
        }
        Ok(())
    }

    /// Gradient contributions of node `id` to its inputs, given upstream `gout`.
    pub(crate) fn backward_rule(&self, id: NodeId, gout: &Tensor<T>) -> Vec<(NodeId, Tensor<T>)> {
        let node = &self.nodes[id.0];
        let go = gout.data();
        match &node.op {
            Op::Leaf => vec![],
            Op::Conv2d { x, w, b, stride, pad } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (n, c, h, wd) = xv.dims4("conv2d").expect("checked in forward");
                let (o, _, kh, kw) = wv.dims4("conv2d").expect("checked in forward");
                let g = ConvGeom::new(c, h, wd, kh, kw, *stride, *pad).expect("checked in forward");
                let (dx, dw, db) = conv::conv2d_backward(
                    xv.data(),
                    n,
                    &g,
                    wv.data(),
                    o,
                    go,
                    self.requires_grad(*x),
                    self.requires_grad(*w),
                );
                let mut out = Vec::new();
                if let Some(dx) = dx {
                    out.push((*x, Tensor::new(xv.shape(), dx).expect("same len")));
                }
                if let Some(dw) = dw {
                    out.push((*w, Tensor::new(wv.shape(), dw).expect("same len")));
                }
                if let Some(b) = b {
                    out.push((*b, Tensor::new(&[o], db).expect("same len")));
                }
                out
            }
            Op::ConvTranspose2d { x, w, b, stride, pad } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                let (n, c, _, _) = xv.dims4("conv_transpose2d").expect("checked");
                let (_, o, kh, kw) = wv.dims4("conv_transpose2d").expect("checked");
                let (_, _, oh, ow) = node.value.dims4("conv_transpose2d").expect("checked");
                let g = ConvGeom::new(o, oh, ow, kh, kw, *stride, *pad).expect("checked");
                let (dx, dw, db) = conv::conv_transpose2d_backward(
                    xv.data(),
                    n,
                    c,
                    &g,
                    wv.data(),
                    go,
                    self.requires_grad(*x),
                    self.requires_grad(*w),
                );
                let mut out = Vec::new();
                if let Some(dx) = dx {
                    out.push((*x, Tensor::new(xv.shape(), dx).expect("same len")));
                }
                if let Some(dw) = dw {
                    out.push((*w, Tensor::new(wv.shape(), dw).expect("same len")));
                }
                if let Some(b) = b {
                    out.push((*b, Tensor::new(&[o], db).expect("same len")));
                }
                out
            }
            Op::InstanceNorm {
                x,
                gamma,
                beta,
                mean,
                inv_std,
            } => {
                let xv = self.value(*x);
                let gv = self.value(*gamma).data();
                let (n, c, h, w) = xv.dims4("instance_norm").expect("checked");
                let plane = h * w;
                let m = T::from_usize(plane).expect("plane size fits");
                let mut dx = vec![T::zero(); xv.len()];
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                let xs = xv.data();
                for p in 0..n * c {
                    let ch = p % c;
                    let (mu, is) = (mean[p], inv_std[p]);
                    let src = &xs[p * plane..(p + 1) * plane];
                    let gp = &go[p * plane..(p + 1) * plane];
                    let mut sum_g = T::zero();
                    let mut sum_gx = T::zero();
                    for (&v, &g) in src.iter().zip(gp) {
                        let xhat = (v - mu) * is;
                        sum_g = sum_g + g;
                        sum_gx = sum_gx + g * xhat;
                    }
                    dbeta[ch] = dbeta[ch] + sum_g;
                    dgamma[ch] = dgamma[ch] + sum_gx;
                    let k = gv[ch] * is / m;
                    for ((d, &v), &g) in dx[p * plane..(p + 1) * plane].iter_mut().zip(src).zip(gp) {
                        let xhat = (v - mu) * is;
                        *d = k * (m * g - sum_g - xhat * sum_gx);
                    }
                }
                vec![
                    (*x, Tensor::new(xv.shape(), dx).expect("same len")),
                    (*gamma, Tensor::new(&[c], dgamma).expect("same len")),
                    (*beta, Tensor::new(&[c], dbeta).expect("same len")),
                ]
            }
            Op::Relu(x) => {
                let xv = self.value(*x);
                let d = xv
                    .data()
                    .iter()
                    .zip(go)
                    .map(|(&v, &g)| if v > T::zero() { g } else { T::zero() })
                    .collect();
                vec![(*x, Tensor::new(xv.shape(), d).expect("same len"))]
            }
            Op::LeakyRelu(x, s) => {
                let xv = self.value(*x);
                let d = xv
                    .data()
                    .iter()
                    .zip(go)
                    .map(|(&v, &g)| if v > T::zero() { g } else { g * *s })
                    .collect();
                vec![(*x, Tensor::new(xv.shape(), d).expect("same len"))]
            }
            Op::Tanh(x) => {
                let d = node
                    .value
                    .data()
                    .iter()
                    .zip(go)
                    .map(|(&y, &g)| g * (T::one() - y * y))
                    .collect();
                vec![(*x, Tensor::new(node.value.shape(), d).expect("same len"))]
            }
            Op::Add(a, b) => vec![(*a, gout.clone()), (*b, gout.clone())],
            Op::MulScalar(x, c) => vec![(*x, gout.map(|g| g * *c))],
            Op::L1Loss(a, b) => {
                let g0 = go[0];
                let (av, bv) = (self.value(*a), self.value(*b));
                let k = g0 / T::from_usize(av.len().max(1)).expect("len fits");
                let da: Vec<T> = av
                    .data()
                    .iter()
                    .zip(bv.data())
                    .map(|(&x, &y)| {
                        let d = x - y;
                        if d > T::zero() {
                            k
                        } else if d < T::zero() {
                            -k
                        } else {
                            T::zero()
                        }
                    })
                    .collect();
                let db = da.iter().map(|&v| -v).collect();
                vec![
                    (*a, Tensor::new(av.shape(), da).expect("same len")),
                    (*b, Tensor::new(bv.shape(), db).expect("same len")),
                ]
            }
            Op::MseLoss(a, b) => {
                let g0 = go[0];
                let (av, bv) = (self.value(*a), self.value(*b));
                let k = (T::one() + T::one()) * g0 / T::from_usize(av.len().max(1)).expect("len fits");
                let da: Vec<T> = av.data().iter().zip(bv.data()).map(|(&x, &y)| k * (x - y)).collect();
                let db = da.iter().map(|&v| -v).collect();
                vec![
                    (*a, Tensor::new(av.shape(), da).expect("same len")),
                    (*b, Tensor::new(bv.shape(), db).expect("same len")),
                ]
            }
            Op::ReflectionPad(x, pad) => {
                let xv = self.value(*x);
                let (n, c, h, w) = xv.dims4("reflection_pad").expect("checked");
                let (ph, pw) = (h + 2 * pad, w + 2 * pad);
                let mut dx = vec![T::zero(); xv.len()];
                for p in 0..n * c {
                    let src = &go[p * ph * pw..(p + 1) * ph * pw];
                    let dst = &mut dx[p * h * w..(p + 1) * h * w];
                    for y in 0..ph {
                        let sy = reflect(y, *pad, h);
                        for xx in 0..pw {
                            let d = &mut dst[sy * w + reflect(xx, *pad, w)];
                            *d = *d + src[y * pw + xx];
                        }
                    }
                }
                vec![(*x, Tensor::new(xv.shape(), dx).expect("same len"))]
            }
        }
    }
}

// Source index for padded coordinate `i` (mirror about the first/last sample).
fn reflect(i: usize, pad: usize, n: usize) -> usize {
    let j = i as isize - pad as isize;
    let n = n as isize;
    let r = if j < 0 {
        -j
    } else if j >= n {
        2 * (n - 1) - j
    } else {
        j
    };
    r as usize
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn identity_1x1_conv_is_noop() {
        let mut g = Graph::<f64>::new();
        let data: Vec<f64> = (0..2 * 3 * 4 * 5).map(|i| i as f64 * 0.1 - 3.0).collect();
        let x = g.constant(t(&[2, 3, 4, 5], data.clone()));
        let mut wd = vec![0.0; 9];
        for c in 0..3 {
            wd[c * 3 + c] = 1.0;
        }
        let w = g.constant(t(&[3, 3, 1, 1], wd));
        let y = g.conv2d(x, w, None, 1, 0).unwrap();
        assert_eq!(g.value(y).shape(), &[2, 3, 4, 5]);
        assert_eq!(g.value(y).data(), &data[..]);
    }

    #[test]
    fn conv3x3_on_ramp_matches_direct_sum() {
        // 5x5 ramp x[i][j] = 5 i + j, kernel k[a][b] = a - b + a * b / 2
        let img: Vec<f64> = (0..25).map(|v| v as f64).collect();
        let ker: Vec<f64> = (0..9)
            .map(|v| {
                let (a, b) = ((v / 3) as f64, (v % 3) as f64);
                a - b + 0.5 * a * b
            })
            .collect();
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1, 1, 5, 5], img.clone()));
        let w = g.constant(t(&[1, 1, 3, 3], ker.clone()));
        let b = g.constant(t(&[1], vec![0.25]));
        let y = g.conv2d(x, w, Some(b), 1, 0).unwrap();
        let mut direct = [0.0; 9];
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.25;
                for a in 0..3 {
                    for bb in 0..3 {
                        acc += ker[a * 3 + bb] * img[(i + a) * 5 + j + bb];
                    }
                }
                direct[i * 3 + j] = acc;
            }
        }
        assert_eq!(g.value(y).data(), &direct[..]);
        // the map is affine in (i, j): 69.25 + 22.5 i + 4.5 j
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(direct[i * 3 + j], 69.25 + 22.5 * i as f64 + 4.5 * j as f64);
            }
        }
    }

    #[test]
    fn instance_norm_standardizes_each_plane() {
        let mut g = Graph::<f64>::new();
        let data: Vec<f64> = (0..2 * 2 * 6 * 6).map(|i| ((i * 7919) % 101) as f64 * 0.3 + i as f64 * 0.01).collect();
        let x = g.constant(t(&[2, 2, 6, 6], data));
        let gm = g.constant(t(&[2], vec![1.0, 1.0]));
        let bt = g.constant(t(&[2], vec![0.0, 0.0]));
        let y = g.instance_norm(x, gm, bt).unwrap();
        for p in g.value(y).data().chunks(36) {
            let mean = p.iter().sum::<f64>() / 36.0;
            let var = p.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 36.0;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn reflection_pad_mirrors_without_repeating_edge() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(t(&[1, 1, 1, 3], vec![1.0, 2.0, 3.0]));
        assert!(g.reflection_pad(x, 1).is_err());
        let x = g.constant(t(&[1, 1, 3, 3], (1..=9).map(f64::from).collect()));
        let y = g.reflection_pad(x, 1).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 1, 5, 5]);
        assert_eq!(&g.value(y).data()[..5], &[5.0, 4.0, 5.0, 6.0, 5.0]);
    }

    #[test]
    fn transpose_conv_doubles_spatial_size() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[1, 2, 4, 4], 1.0));
        let w = g.constant(Tensor::full(&[2, 3, 3, 3], 0.5));
        let y = g.conv_transpose2d(x, w, None, 2, 1, 1).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 3, 8, 8]);
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut g = Graph::<f64>::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[3, 2]));
        let err = g.add(a, b).unwrap_err().to_string();
        assert!(err.contains("add") && err.contains("[2, 3]") && err.contains("[3, 2]"));
        let x = g.constant(Tensor::zeros(&[1, 2, 5, 5]));
        let w = g.constant(Tensor::zeros(&[1, 3, 3, 3]));
        assert!(g.conv2d(x, w, None, 1, 0).unwrap_err().to_string().contains("conv2d"));
    }

    #[test]
    fn losses_are_zero_on_equal_inputs() {
        let mut g = Graph::<f64>::new();
        let x = g.param(t(&[4], vec![1.0, -2.0, 3.0, 0.5]));
        let l1 = g.l1_loss(x, x).unwrap();
        let l2 = g.mse_loss(x, x).unwrap();
        assert_eq!(g.value(l1).item(), Some(0.0));
        assert_eq!(g.value(l2).item(), Some(0.0));
    }

    #[test]
    fn tanh_slope_at_zero_is_one() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::scalar(0.0));
        let y = g.tanh(x);
        let z = g.constant(Tensor::scalar(-1.0));
        // d/dx |tanh(x) + 1| = tanh'(x) for tanh(x) > -1
        let l = g.l1_loss(y, z).unwrap();
        let grads = g.backward(l).unwrap();
        assert!((grads.get(x).unwrap().item().unwrap() - 1.0).abs() < 1e-6);
    }
}
