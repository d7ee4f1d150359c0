use crate::array::Array;
use crate::error::{Result, TensorError};
use crate::graph::{Graph, NodeId};

/// Compares reverse-mode gradients of the graph's single scalar output with
/// central differences `(f(θ+δ) − f(θ−δ)) / 2δ`, element by element of
/// `leaf`. Returns the largest relative error, using
/// `max(|analytic|, |numeric|, 1e-8)` as the denominator.
///
/// The graph is left bound to its original leaf values.
pub fn finite_difference_check(
    graph: &mut Graph,
    bindings: &[(NodeId, Array)],
    leaf: NodeId,
    step: f64,
) -> Result<f64> {
    if step <= 0.0 || !step.is_finite() {
        return Err(TensorError::InvalidArgument(format!("step {}", step)));
    }
    if !graph.is_leaf(leaf) {
        return Err(TensorError::NotALeaf(leaf.index()));
    }
    let output = match graph.outputs() {
        [o] => *o,
        outs => {
            return Err(TensorError::InvalidArgument(format!(
                "expected exactly one output, graph has {}",
                outs.len()
            )))
        }
    };
    graph.evaluate(bindings)?;
    if graph.value(output).len() != 1 {
        return Err(TensorError::NotScalar(graph.shape(output).to_vec()));
    }
    let analytic = graph
        .backward(output)?
        .remove(leaf)
        .unwrap_or_else(|| Array::zeros(graph.shape(leaf)));
    let base = graph.value(leaf).clone();
    let mut worst = 0.0f64;
    for i in 0..base.len() {
        let mut probe = base.clone();
        probe.data_mut()[i] = base.data()[i] + step;
        let up = graph.evaluate(&[(leaf, probe.clone())])?[0].item()?;
        probe.data_mut()[i] = base.data()[i] - step;
        let down = graph.evaluate(&[(leaf, probe)])?[0].item()?;
        let numeric = (up - down) / (2.0 * step);
        let a = analytic.data()[i];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    graph.evaluate(&[(leaf, base)])?;
    Ok(worst)
}
