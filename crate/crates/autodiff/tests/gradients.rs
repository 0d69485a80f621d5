//! Finite-difference gradient checks for every layer, over many seeds.

use inspex_autodiff::{grad_check, init, Graph, NodeId, Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-3;
const TOL: f64 = 1e-4;
const SEEDS: u64 = 10;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0x5eed_0000 + seed)
}

// Values bounded away from zero so pointwise kinks are never straddled by the stencil.
fn away_from_zero(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = r.gen_range(0.05..1.0);
            if r.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

// loss = mse(out, target) with a fixed random target, so every output element
// gets a distinct upstream gradient.
fn project(g: &mut Graph<f64>, out: NodeId, seed: u64) -> Result<NodeId> {
    let target = init::uniform(g.value(out).shape(), -1.0, 1.0, &mut rng(1000 + seed));
    let t = g.constant(target);
    g.mse_loss(out, t)
}

fn check<F>(name: &str, f: F, inputs: Vec<Tensor<f64>>)
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    let r = grad_check(f, &inputs, STEP).unwrap();
    assert!(
        r.max_rel_error < TOL,
        "{name}: max relative error {} over {} components",
        r.max_rel_error,
        r.checked
    );
}

#[test]
fn conv2d_gradients() {
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let (n, c, o) = (r.gen_range(1..3), r.gen_range(1..4), r.gen_range(1..4));
        let k = [1, 3, 4][seed as usize % 3];
        let stride = 1 + seed as usize % 2;
        let pad = seed as usize % 2;
        let (h, w) = (r.gen_range(k..k + 4), r.gen_range(k..k + 4));
        let x = init::uniform(&[n, c, h, w], -1.0, 1.0, &mut r);
        let wt = init::uniform(&[o, c, k, k], -1.0, 1.0, &mut r);
        let b = init::uniform(&[o], -1.0, 1.0, &mut r);
        check(
            "conv2d",
            move |g, ids| {
                let y = g.conv2d(ids[0], ids[1], Some(ids[2]), stride, pad)?;
                project(g, y, seed)
            },
            vec![x, wt, b],
        );
    }
}

#[test]
fn conv_transpose2d_gradients() {
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let (n, c, o) = (r.gen_range(1..3), r.gen_range(1..4), r.gen_range(1..4));
        let (h, w) = (r.gen_range(2..5), r.gen_range(2..5));
        let stride = 1 + seed as usize % 2;
        let out_pad = if stride == 2 { (seed as usize / 2) % 2 } else { 0 };
        let x = init::uniform(&[n, c, h, w], -1.0, 1.0, &mut r);
        let wt = init::uniform(&[c, o, 3, 3], -1.0, 1.0, &mut r);
        let b = init::uniform(&[o], -1.0, 1.0, &mut r);
        check(
            "conv_transpose2d",
            move |g, ids| {
                let y = g.conv_transpose2d(ids[0], ids[1], Some(ids[2]), stride, 1, out_pad)?;
                project(g, y, seed)
            },
            vec![x, wt, b],
        );
    }
}

#[test]
fn instance_norm_gradients() {
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let (n, c) = (r.gen_range(1..3), r.gen_range(1..4));
        let (h, w) = (r.gen_range(2..5), r.gen_range(2..5));
        let x = init::uniform(&[n, c, h, w], -1.0, 1.0, &mut r);
        let gamma = init::uniform(&[c], 0.5, 1.5, &mut r);
        let beta = init::uniform(&[c], -0.5, 0.5, &mut r);
        check(
            "instance_norm",
            move |g, ids| {
                let y = g.instance_norm(ids[0], ids[1], ids[2])?;
                project(g, y, seed)
            },
            vec![x, gamma, beta],
        );
    }
}

#[test]
fn pointwise_activation_gradients() {
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let x = away_from_zero(&[2, 2, 3, 3], &mut r);
        check("relu", move |g, ids| {
            let y = g.relu(ids[0]);
            project(g, y, seed)
        }, vec![x.clone()]);
        check("leaky_relu", move |g, ids| {
            let y = g.leaky_relu(ids[0], 0.2);
            project(g, y, seed)
        }, vec![x.clone()]);
        let x = init::uniform(&[2, 2, 3, 3], -2.0, 2.0, &mut r);
        check("tanh", move |g, ids| {
            let y = g.tanh(ids[0]);
            project(g, y, seed)
        }, vec![x]);
    }
}

#[test]
fn loss_gradients() {
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let a = init::uniform(&[2, 1, 3, 4], -1.0, 1.0, &mut r);
        // offset keeps |a - b| away from the L1 kink
        let d = away_from_zero(&[2, 1, 3, 4], &mut r);
        let b = Tensor::new(a.shape(), a.data().iter().zip(d.data()).map(|(x, y)| x + y).collect()).unwrap();
        check("l1_loss", |g, ids| g.l1_loss(ids[0], ids[1]), vec![a.clone(), b.clone()]);
        check("mse_loss", |g, ids| g.mse_loss(ids[0], ids[1]), vec![a, b]);
    }
}

#[test]
fn reflection_pad_and_algebra_gradients() {
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let p = 1 + seed as usize % 3;
        let x = init::uniform(&[1, 2, p + 2, p + 3], -1.0, 1.0, &mut r);
        check("reflection_pad", move |g, ids| {
            let y = g.reflection_pad(ids[0], p)?;
            project(g, y, seed)
        }, vec![x.clone()]);
        let y = init::uniform(x.shape(), -1.0, 1.0, &mut r);
        check("add/mul_scalar", move |g, ids| {
            let s = g.add(ids[0], ids[1])?;
            let s = g.mul_scalar(s, -1.7);
            project(g, s, seed)
        }, vec![x, y]);
    }
}

#[test]
fn residual_block_composite_gradient() {
    // reflection pad -> conv -> instance norm -> relu -> pad -> conv -> norm, plus skip
    for seed in 0..3 {
        let mut r = rng(seed);
        let c = 2;
        let x = init::uniform(&[1, c, 5, 5], -1.0, 1.0, &mut r);
        let w1 = init::uniform(&[c, c, 3, 3], -0.5, 0.5, &mut r);
        let w2 = init::uniform(&[c, c, 3, 3], -0.5, 0.5, &mut r);
        let gm = init::uniform(&[c], 0.8, 1.2, &mut r);
        let bt = init::uniform(&[c], -0.2, 0.2, &mut r);
        check(
            "residual block",
            move |g, ids| {
                let h = g.reflection_pad(ids[0], 1)?;
                let h = g.conv2d(h, ids[1], None, 1, 0)?;
                let h = g.instance_norm(h, ids[3], ids[4])?;
                let h = g.tanh(h);
                let h = g.reflection_pad(h, 1)?;
                let h = g.conv2d(h, ids[2], None, 1, 0)?;
                let h = g.instance_norm(h, ids[3], ids[4])?;
                let y = g.add(ids[0], h)?;
                project(g, y, seed)
            },
            vec![x, w1, w2, gm, bt],
        );
    }
}
