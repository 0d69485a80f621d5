use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

/// Components whose analytic and numeric gradients are both below this
/// magnitude are compared in absolute rather than relative terms.
pub const GRAD_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub checked: usize,
}

/// Central finite-difference gradient of the scalar produced by `f`
/// with respect to every element of every input.
pub fn numeric_gradients<F>(f: &F, inputs: &[Tensor<f64>], step: f64) -> Result<Vec<Tensor<f64>>>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    let eval = |inputs: &[Tensor<f64>]| -> Result<f64> {
        let mut g = Graph::new();
        let ids: Vec<_> = inputs.iter().map(|t| g.param(t.clone())).collect();
        let out = f(&mut g, &ids)?;
        Ok(g.value(out).item().unwrap_or(f64::NAN))
    };
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for k in 0..inputs.len() {
        let mut grad = Tensor::zeros(inputs[k].shape());
        for i in 0..inputs[k].len() {
            let orig = work[k].data()[i];
            work[k].data_mut()[i] = orig + step;
            let plus = eval(&work)?;
            work[k].data_mut()[i] = orig - step;
            let minus = eval(&work)?;
            work[k].data_mut()[i] = orig;
            grad.data_mut()[i] = (plus - minus) / (2.0 * step);
        }
        out.push(grad);
    }
    Ok(out)
}

/// Compares reverse-mode gradients of `f` against central differences.
///
/// The relative error of one component is `|a - n| / max(|a|, |n|)`, or the
/// absolute error when both magnitudes are below [`GRAD_FLOOR`].
pub fn grad_check<F>(f: F, inputs: &[Tensor<f64>], step: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    let mut g = Graph::new();
    let ids: Vec<_> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let loss = f(&mut g, &ids)?;
    let grads = g.backward(loss)?;
    let numeric = numeric_gradients(&f, inputs, step)?;
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        checked: 0,
    };
    for (id, num) in ids.iter().zip(&numeric) {
        let zeros = Tensor::zeros(num.shape());
        let ana = grads.get(*id).unwrap_or(&zeros);
        for (&a, &n) in ana.data().iter().zip(num.data()) {
            let abs = (a - n).abs();
            let scale = a.abs().max(n.abs());
            let rel = if scale < GRAD_FLOOR { abs } else { abs / scale };
            report.max_abs_error = report.max_abs_error.max(abs);
            report.max_rel_error = report.max_rel_error.max(rel);
            report.checked += 1;
        }
    }
    Ok(report)
}
