//! ResNet generator and PatchGAN discriminator over `[n, 1, h, w]` slices.

use inspex_autodiff::{init, Graph, NodeId, Scalar, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HarmonizerError, Result};

/// Named parameter tensors in creation order; forward passes consume them in
/// the same order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    pub names: Vec<String>,
    pub tensors: Vec<Tensor<f32>>,
}

impl ParamSet {
    fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    fn push(&mut self, name: String, t: Tensor<f32>) {
        self.names.push(name);
        self.tensors.push(t);
    }

    fn conv<R: Rng>(&mut self, name: &str, shape: [usize; 4], rng: &mut R) {
        self.push(format!("{name}.w"), init::normal(&shape, 0.0, init::INIT_STD, rng));
    }

    fn norm(&mut self, name: &str, c: usize) {
        self.push(format!("{name}.gamma"), Tensor::full(&[c], 1.0));
        self.push(format!("{name}.beta"), Tensor::zeros(&[c]));
    }

    fn bias(&mut self, name: &str, c: usize) {
        self.push(format!("{name}.b"), Tensor::zeros(&[c]));
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    /// Records every tensor on `g`, as trainable leaves or as constants.
    pub fn bind<T: Scalar>(&self, g: &mut Graph<T>, trainable: bool) -> Vec<NodeId> {
        self.tensors
            .iter()
            .map(|t| {
                let v = t.cast::<T>();
                if trainable {
                    g.param(v)
                } else {
                    g.constant(v)
                }
            })
            .collect()
    }

    /// Replaces the tensors from `(name, tensor)` pairs carrying `prefix`.
    pub fn load_prefixed(&mut self, prefix: &str, entries: &[(String, Tensor<f32>)]) -> Result<()> {
        for (name, slot) in self.names.iter().zip(self.tensors.iter_mut()) {
            let key = format!("{prefix}{name}");
            let (_, t) = entries
                .iter()
                .find(|(n, _)| *n == key)
                .ok_or_else(|| HarmonizerError::Checkpoint(format!("missing tensor '{key}'")))?;
            if t.shape() != slot.shape() {
                return Err(HarmonizerError::Checkpoint(format!(
                    "tensor '{key}' has shape {:?}, expected {:?}",
                    t.shape(),
                    slot.shape()
                )));
            }
            *slot = t.clone();
        }
        Ok(())
    }

    pub fn prefixed(&self, prefix: &str) -> Vec<(String, Tensor<f32>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .map(|(n, t)| (format!("{prefix}{n}"), t.clone()))
            .collect()
    }
}

struct Cursor<'a> {
    ids: &'a [NodeId],
    at: usize,
}

impl Cursor<'_> {
    fn next(&mut self) -> NodeId {
        let id = self.ids[self.at];
        self.at += 1;
        id
    }
}

fn check_bound(ids: &[NodeId], want: usize) -> Result<()> {
    if ids.len() != want {
        return Err(HarmonizerError::Usage(format!("expected {want} bound parameters, got {}", ids.len())));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorConfig {
    pub base_width: usize,
    pub residual_blocks: usize,
}

impl GeneratorConfig {
    pub fn paper() -> Self {
        Self {
            base_width: 64,
            residual_blocks: 9,
        }
    }

    pub fn desk() -> Self {
        Self {
            base_width: 16,
            residual_blocks: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_width == 0 || self.residual_blocks == 0 {
            return Err(HarmonizerError::Config(format!(
                "generator needs a positive width and at least one residual block, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// 7x7 conv, two stride-2 convs, residual blocks, two stride-2 transposed
/// convs, 7x7 conv, tanh. Instance norm follows every hidden conv.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorNet {
    pub config: GeneratorConfig,
    pub params: ParamSet,
}

impl GeneratorNet {
    pub fn new<R: Rng>(config: GeneratorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let w = config.base_width;
        let mut p = ParamSet::new();
        p.conv("stem", [w, 1, 7, 7], rng);
        p.norm("stem.in", w);
        p.conv("down1", [2 * w, w, 3, 3], rng);
        p.norm("down1.in", 2 * w);
        p.conv("down2", [4 * w, 2 * w, 3, 3], rng);
        p.norm("down2.in", 4 * w);
        for r in 0..config.residual_blocks {
            for half in ["a", "b"] {
                p.conv(&format!("res{r}.{half}"), [4 * w, 4 * w, 3, 3], rng);
                p.norm(&format!("res{r}.{half}.in"), 4 * w);
            }
        }
        // transposed weights are [c_in, c_out, k, k]
        p.conv("up1", [4 * w, 2 * w, 3, 3], rng);
        p.norm("up1.in", 2 * w);
        p.conv("up2", [2 * w, w, 3, 3], rng);
        p.norm("up2.in", w);
        p.conv("head", [1, w, 7, 7], rng);
        p.bias("head", 1);
        Ok(Self { config, params: p })
    }

    /// Slices fed to the generator need sides divisible by this.
    pub const SIDE_MULTIPLE: usize = 4;

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ids: &[NodeId], x: NodeId) -> Result<NodeId> {
        check_bound(ids, self.params.len())?;
        let (_, _, h, w) = g.value(x).dims4("generator")?;
        if h % Self::SIDE_MULTIPLE != 0 || w % Self::SIDE_MULTIPLE != 0 {
            return Err(HarmonizerError::Usage(format!("generator input {h}x{w} is not a multiple of 4 per side")));
        }
        let mut c = Cursor { ids, at: 0 };
        let norm_relu = |g: &mut Graph<T>, c: &mut Cursor, y: NodeId| -> Result<NodeId> {
            let (gm, bt) = (c.next(), c.next());
            let y = g.instance_norm(y, gm, bt)?;
            Ok(g.relu(y))
        };
        let y = g.reflection_pad(x, 3)?;
        let y = g.conv2d(y, c.next(), None, 1, 0)?;
        let y = norm_relu(g, &mut c, y)?;
        let y = g.conv2d(y, c.next(), None, 2, 1)?;
        let y = norm_relu(g, &mut c, y)?;
        let y = g.conv2d(y, c.next(), None, 2, 1)?;
        let mut y = norm_relu(g, &mut c, y)?;
        for _ in 0..self.config.residual_blocks {
            let r = g.reflection_pad(y, 1)?;
            let r = g.conv2d(r, c.next(), None, 1, 0)?;
            let r = norm_relu(g, &mut c, r)?;
            let r = g.reflection_pad(r, 1)?;
            let r = g.conv2d(r, c.next(), None, 1, 0)?;
            let (gm, bt) = (c.next(), c.next());
            let r = g.instance_norm(r, gm, bt)?;
            y = g.add(y, r)?;
        }
        let y = g.conv_transpose2d(y, c.next(), None, 2, 1, 1)?;
        let y = norm_relu(g, &mut c, y)?;
        let y = g.conv_transpose2d(y, c.next(), None, 2, 1, 1)?;
        let y = norm_relu(g, &mut c, y)?;
        let y = g.reflection_pad(y, 3)?;
        let (hw, hb) = (c.next(), c.next());
        let y = g.conv2d(y, hw, Some(hb), 1, 0)?;
        Ok(g.tanh(y))
    }

    /// Inference without gradient tracking on a `[n, 1, h, w]` batch.
    pub fn apply(&self, x: Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = Graph::<f32>::new();
        let ids = self.params.bind(&mut g, false);
        let xi = g.constant(x);
        let y = self.forward(&mut g, &ids, xi)?;
        Ok(g.value(y).clone())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscriminatorConfig {
    pub base_width: usize,
    /// Number of stride-2 4x4 convs; two stride-1 convs follow.
    pub downsamplings: usize,
}

impl DiscriminatorConfig {
    pub fn paper() -> Self {
        Self {
            base_width: 64,
            downsamplings: 3,
        }
    }

    pub fn desk() -> Self {
        Self {
            base_width: 16,
            downsamplings: 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.base_width == 0 || self.downsamplings == 0 {
            return Err(HarmonizerError::Config(format!(
                "discriminator needs a positive width and at least one downsampling, got {self:?}"
            )));
        }
        Ok(())
    }

    /// Input pixels seen by one output logit.
    pub fn receptive_field(&self) -> usize {
        // kernel 4 everywhere; walk back from the output through two stride-1
        // layers and the stride-2 stack
        let mut r = 1;
        for _ in 0..2 {
            r += 3;
        }
        for _ in 0..self.downsamplings {
            r = (r - 1) * 2 + 4;
        }
        r
    }

    fn width(&self, layer: usize) -> usize {
        self.base_width << layer.min(3)
    }
}

/// PatchGAN: 4x4 convs with leaky ReLU (0.2) and instance norm (not on the
/// first layer) ending in a one-channel logit map.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorNet {
    pub config: DiscriminatorConfig,
    pub params: ParamSet,
}

impl DiscriminatorNet {
    pub fn new<R: Rng>(config: DiscriminatorConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut p = ParamSet::new();
        let mut cin = 1;
        for l in 0..=config.downsamplings {
            let cout = config.width(l);
            p.conv(&format!("l{l}"), [cout, cin, 4, 4], rng);
            if l == 0 {
                p.bias("l0", cout);
            } else {
                p.norm(&format!("l{l}.in"), cout);
            }
            cin = cout;
        }
        p.conv("head", [1, cin, 4, 4], rng);
        p.bias("head", 1);
        Ok(Self { config, params: p })
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, ids: &[NodeId], x: NodeId) -> Result<NodeId> {
        check_bound(ids, self.params.len())?;
        let mut c = Cursor { ids, at: 0 };
        let mut y = x;
        for l in 0..=self.config.downsamplings {
            let stride = if l < self.config.downsamplings { 2 } else { 1 };
            if l == 0 {
                let (w, b) = (c.next(), c.next());
                y = g.conv2d(y, w, Some(b), stride, 1)?;
            } else {
                y = g.conv2d(y, c.next(), None, stride, 1)?;
                let (gm, bt) = (c.next(), c.next());
                y = g.instance_norm(y, gm, bt)?;
            }
            y = g.leaky_relu(y, 0.2);
        }
        let (w, b) = (c.next(), c.next());
        Ok(g.conv2d(y, w, Some(b), 1, 1)?)
    }

    pub fn apply(&self, x: Tensor<f32>) -> Result<Tensor<f32>> {
        let mut g = Graph::<f32>::new();
        let ids = self.params.bind(&mut g, false);
        let xi = g.constant(x);
        let y = self.forward(&mut g, &ids, xi)?;
        Ok(g.value(y).clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn paper_discriminator_sees_70_pixels() {
        assert_eq!(DiscriminatorConfig::paper().receptive_field(), 70);
        assert_eq!(DiscriminatorConfig { base_width: 8, downsamplings: 2 }.receptive_field(), 34);
    }

    #[test]
    fn generator_keeps_the_slice_shape_and_range() {
        let g = GeneratorNet::new(GeneratorConfig { base_width: 4, residual_blocks: 1 }, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        for (h, w) in [(16, 16), (24, 12), (32, 20)] {
            let x = Tensor::new(&[2, 1, h, w], (0..2 * h * w).map(|i| ((i % 7) as f32 - 3.0) / 3.0).collect()).unwrap();
            let y = g.apply(x).unwrap();
            assert_eq!(y.shape(), &[2, 1, h, w]);
            assert!(y.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        }
        let bad = Tensor::new(&[1, 1, 10, 12], vec![0.0; 120]).unwrap();
        assert!(g.apply(bad).is_err());
    }

    #[test]
    fn invalid_configs() {
        assert!(GeneratorConfig { base_width: 4, residual_blocks: 0 }.validate().is_err());
        assert!(DiscriminatorConfig { base_width: 0, downsamplings: 3 }.validate().is_err());
    }
}
