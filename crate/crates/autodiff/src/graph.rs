use crate::error::{AutogradError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
pub(crate) enum Op<T> {
    Leaf,
    Conv2d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
    },
    ConvTranspose2d {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
        stride: usize,
        pad: usize,
    },
    InstanceNorm {
        x: NodeId,
        gamma: NodeId,
        beta: NodeId,
        // one entry per (sample, channel) plane
        mean: Vec<T>,
        inv_std: Vec<T>,
    },
    Relu(NodeId),
    LeakyRelu(NodeId, T),
    Tanh(NodeId),
    Add(NodeId, NodeId),
    MulScalar(NodeId, T),
    L1Loss(NodeId, NodeId),
    MseLoss(NodeId, NodeId),
    ReflectionPad(NodeId, usize),
}

impl<T> Op<T> {
    pub(crate) fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => vec![],
            Op::Conv2d { x, w, b, .. } | Op::ConvTranspose2d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b.iter().copied());
                v
            }
            Op::InstanceNorm { x, gamma, beta, .. } => vec![*x, *gamma, *beta],
            Op::Relu(x) | Op::LeakyRelu(x, _) | Op::Tanh(x) | Op::MulScalar(x, _) => vec![*x],
            Op::ReflectionPad(x, _) => vec![*x],
            Op::Add(a, b) | Op::L1Loss(a, b) | Op::MseLoss(a, b) => vec![*a, *b],
        }
    }
}

#[derive(Debug)]
pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub requires_grad: bool,
}

/// Define-by-run tape. Nodes are appended in execution order, so every
/// operation's inputs precede it and a single reverse sweep is a valid
/// topological traversal.
#[derive(Debug, Default)]
pub struct Graph<T> {
    pub(crate) nodes: Vec<Node<T>>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor<T>> {
        self.grads.get_mut(id.0).and_then(|g| g.take())
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Records a trainable leaf; gradients flow into it.
    pub fn param(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Records a constant leaf; no gradient is accumulated for it.
    pub fn constant(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Copies the current value of `id` into a fresh constant leaf.
    pub fn detach(&mut self, id: NodeId) -> NodeId {
        let v = self.nodes[id.0].value.clone();
        self.constant(v)
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> NodeId {
        debug_assert!(op.inputs().iter().all(|i| i.0 < self.nodes.len()));
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub(crate) fn any_requires_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|i| self.nodes[i.0].requires_grad)
    }

    /// Reverse sweep from a scalar `loss`. Gradients of nodes that feed several
    /// consumers are summed.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<T>> {
        let node = self
            .nodes
            .get(loss.0)
            .ok_or_else(|| AutogradError::Usage(format!("node {} is not on this tape", loss.0)))?;
        if node.value.len() != 1 {
            return Err(AutogradError::Usage(format!(
                "loss must be scalar, got shape {:?}",
                node.value.shape()
            )));
        }
        if !node.requires_grad {
            return Err(AutogradError::Usage(
                "loss does not depend on any tracked parameter".into(),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(node.value.shape(), T::one()));
        for idx in (0..=loss.0).rev() {
            let Some(gout) = grads[idx].take() else {
                continue;
            };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            for (input, g) in self.backward_rule(NodeId(idx), &gout) {
                if !self.nodes[input.0].requires_grad {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
            grads[idx] = Some(gout);
        }
        Ok(Gradients { grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_rejects_untracked_and_non_scalar_losses() {
        let mut g = Graph::<f64>::new();
        let c = g.constant(Tensor::scalar(3.0));
        let sq = g.mse_loss(c, c).unwrap();
        assert!(matches!(g.backward(sq), Err(AutogradError::Usage(_))));

        let p = g.param(Tensor::new(&[2], vec![1.0, 2.0]).unwrap());
        let r = g.relu(p);
        assert!(matches!(g.backward(r), Err(AutogradError::Usage(_))));
    }

    #[test]
    fn mse_against_zero_gives_mean_convention_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::scalar(3.0));
        let z = g.constant(Tensor::scalar(0.0));
        let loss = g.mse_loss(x, z).unwrap();
        assert_eq!(g.value(loss).item(), Some(9.0));
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), Some(6.0));

        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::new(&[4], vec![3.0; 4]).unwrap());
        let z = g.constant(Tensor::zeros(&[4]));
        let loss = g.mse_loss(x, z).unwrap();
        let grads = g.backward(loss).unwrap();
        assert!(grads.get(x).unwrap().data().iter().all(|&v| v == 6.0 / 4.0));
    }

    #[test]
    fn add_passes_upstream_gradient_to_both_inputs() {
        let mut g = Graph::<f64>::new();
        let a = g.param(Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap());
        let b = g.param(Tensor::new(&[3], vec![0.0, 4.0, 1.0]).unwrap());
        let s = g.add(a, b).unwrap();
        let s = g.mul_scalar(s, 2.0);
        let z = g.constant(Tensor::zeros(&[3]));
        // d/ds of mean(s^2) = 2 s / 3 ; ds/da = ds/db = 2
        let loss = g.mse_loss(s, z).unwrap();
        let grads = g.backward(loss).unwrap();
        let sv = g.value(s).data().to_vec();
        for (i, &svi) in sv.iter().enumerate() {
            let want = 2.0 * svi / 3.0 * 2.0;
            assert!((grads.get(a).unwrap().data()[i] - want).abs() < 1e-12);
            assert!((grads.get(b).unwrap().data()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn shared_node_accumulates_both_paths() {
        // loss = mean((x + tanh(x))^2) for scalar x; both branches reach x.
        let x0 = 0.7_f64;
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::scalar(x0));
        let t = g.tanh(x);
        let s = g.add(x, t).unwrap();
        let z = g.constant(Tensor::scalar(0.0));
        let loss = g.mse_loss(s, z).unwrap();
        let grads = g.backward(loss).unwrap();
        let th = x0.tanh();
        let want = 2.0 * (x0 + th) * (1.0 + (1.0 - th * th));
        assert!((grads.get(x).unwrap().item().unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn detached_nodes_block_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::scalar(2.0));
        let y = g.mul_scalar(x, 3.0);
        let yd = g.detach(y);
        let s = g.add(x, yd).unwrap();
        let z = g.constant(Tensor::scalar(0.0));
        let loss = g.l1_loss(s, z).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap().item(), Some(1.0));
    }
}
