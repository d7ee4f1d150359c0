use std::collections::BTreeMap;

use crate::array::Array;
use crate::error::{mismatch, Result, TensorError};
use crate::ops::{self, Aux, Op};

/// Handle to a node of one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    inputs: Vec<NodeId>,
    value: Array,
    aux: Aux,
    requires_grad: bool,
}

/// A recorded program of primitive applications.
///
/// Nodes are appended in topological order and evaluated eagerly as they are
/// added. The recorded program can be replayed with new leaf values through
/// [`Graph::evaluate`], which is what the finite-difference oracle relies on.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    outputs: Vec<NodeId>,
}

/// Per-leaf gradients produced by [`Graph::gradients`].
#[derive(Clone, Debug, Default)]
pub struct GradMap {
    grads: BTreeMap<NodeId, Array>,
}

impl GradMap {
    pub fn get(&self, id: NodeId) -> Option<&Array> {
        self.grads.get(&id)
    }

    pub fn remove(&mut self, id: NodeId) -> Option<Array> {
        self.grads.remove(&id)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NodeId, &Array)> {
        self.grads.iter()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

macro_rules! unary_ops {
    ($($(#[$m:meta])* $name:ident => $op:expr),* $(,)?) => {
        $(
            $(#[$m])*
            pub fn $name(&mut self, x: NodeId) -> Result<NodeId> {
                self.push($op, vec![x])
            }
        )*
    };
}

macro_rules! binary_ops {
    ($($(#[$m:meta])* $name:ident => $op:expr),* $(,)?) => {
        $(
            $(#[$m])*
            pub fn $name(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
                self.push($op, vec![a, b])
            }
        )*
    };
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable input (parameter or data the caller wants gradients for).
    pub fn leaf(&mut self, value: Array) -> Result<NodeId> {
        self.add_leaf(value, true)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Array) -> Result<NodeId> {
        self.add_leaf(value, false)
    }

    pub fn scalar(&mut self, v: f64) -> Result<NodeId> {
        self.constant(Array::scalar(v))
    }

    fn add_leaf(&mut self, value: Array, requires_grad: bool) -> Result<NodeId> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite {
                context: format!("leaf {}", self.nodes.len()),
            });
        }
        self.nodes.push(Node {
            op: Op::Leaf,
            inputs: Vec::new(),
            value,
            aux: Aux::None,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    pub fn value(&self, id: NodeId) -> &Array {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        matches!(self.nodes.get(id.0), Some(n) if n.op == Op::Leaf)
    }

    pub fn mark_output(&mut self, id: NodeId) {
        self.outputs.push(id);
    }

    pub fn outputs(&self) -> &[NodeId] {
        &self.outputs
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(TensorError::UnknownNode(id.0))
        }
    }

    fn push(&mut self, op: Op, inputs: Vec<NodeId>) -> Result<NodeId> {
        for &i in &inputs {
            self.check(i)?;
        }
        let (value, aux) = {
            let vals: Vec<&Array> = inputs.iter().map(|i| &self.nodes[i.0].value).collect();
            ops::forward(&op, &vals)?
        };
        let requires_grad = inputs.iter().any(|i| self.nodes[i.0].requires_grad);
        self.nodes.push(Node {
            op,
            inputs,
            value,
            aux,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    binary_ops! {
        /// Matrix product over the last two axes; the right operand is either
        /// 2-D (shared across the batch) or has the same batch axes.
        matmul => Op::MatMul,
        add => Op::Add,
        sub => Op::Sub,
        mul => Op::Mul,
        div => Op::Div,
        /// Elementwise maximum; ties send the gradient to the first operand.
        maximum => Op::Maximum,
        /// Elementwise smooth-L1 (unit threshold) of `a - b`.
        smooth_l1 => Op::SmoothL1,
    }

    unary_ops! {
        sqrt => Op::Sqrt,
        ln => Op::Ln,
        exp => Op::Exp,
        abs => Op::Abs,
        relu => Op::Relu,
        /// Tanh approximation.
        gelu => Op::Gelu,
        sigmoid => Op::Sigmoid,
        sum => Op::SumAll,
        mean => Op::MeanAll,
    }

    pub fn powf(&mut self, x: NodeId, p: f64) -> Result<NodeId> {
        self.push(Op::Powf(p), vec![x])
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.push(Op::Scale(c), vec![x])
    }

    pub fn offset(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.push(Op::Offset(c), vec![x])
    }

    pub fn neg(&mut self, x: NodeId) -> Result<NodeId> {
        self.scale(x, -1.0)
    }

    /// Same-padded, stride-1 2-D convolution of `[N, Cin, H, W]` with
    /// `[Cout, Cin, kh, kw]` (odd kernel sizes).
    pub fn conv2d(&mut self, x: NodeId, w: NodeId, dilation: usize) -> Result<NodeId> {
        self.push(Op::Conv2d { dilation }, vec![x, w])
    }

    pub fn concat(&mut self, xs: &[NodeId], axis: usize) -> Result<NodeId> {
        if xs.is_empty() {
            return Err(mismatch("concat", "no inputs"));
        }
        self.push(Op::Concat { axis }, xs.to_vec())
    }

    pub fn softmax(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        self.push(Op::Softmax { axis }, vec![x])
    }

    /// Sum over `axes`, keeping them as extent-1 axes.
    pub fn sum_axes(&mut self, x: NodeId, axes: &[usize]) -> Result<NodeId> {
        self.push(Op::SumAxes { axes: axes.to_vec() }, vec![x])
    }

    pub fn mean_axes(&mut self, x: NodeId, axes: &[usize]) -> Result<NodeId> {
        self.push(Op::MeanAxes { axes: axes.to_vec() }, vec![x])
    }

    pub fn max_axes(&mut self, x: NodeId, axes: &[usize]) -> Result<NodeId> {
        self.push(Op::MaxAxes { axes: axes.to_vec() }, vec![x])
    }

    pub fn min_axes(&mut self, x: NodeId, axes: &[usize]) -> Result<NodeId> {
        self.push(Op::MinAxes { axes: axes.to_vec() }, vec![x])
    }

    /// Group normalization over `[N, C, ...]` without affine terms.
    pub fn group_norm(&mut self, x: NodeId, groups: usize, eps: f64) -> Result<NodeId> {
        self.push(Op::GroupNorm { groups, eps }, vec![x])
    }

    /// Normalization over the last axis without affine terms.
    pub fn layer_norm(&mut self, x: NodeId, eps: f64) -> Result<NodeId> {
        self.push(Op::LayerNorm { eps }, vec![x])
    }

    /// Inverted dropout with a mask drawn from `seed`.
    pub fn dropout(&mut self, x: NodeId, rate: f64, seed: u64) -> Result<NodeId> {
        if rate == 0.0 {
            return Ok(x);
        }
        self.push(Op::Dropout { rate, seed }, vec![x])
    }

    pub fn avg_pool(&mut self, x: NodeId, k: usize) -> Result<NodeId> {
        if k == 1 {
            return Ok(x);
        }
        self.push(Op::AvgPool { k }, vec![x])
    }

    /// Nearest-neighbour upsampling by an integer factor.
    pub fn upsample(&mut self, x: NodeId, k: usize) -> Result<NodeId> {
        if k == 1 {
            return Ok(x);
        }
        self.push(Op::Upsample { k }, vec![x])
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.push(Op::Reshape { shape: shape.to_vec() }, vec![x])
    }

    pub fn permute(&mut self, x: NodeId, perm: &[usize]) -> Result<NodeId> {
        self.push(Op::Permute { perm: perm.to_vec() }, vec![x])
    }

    /// `x[.., start..end, ..]` along `axis`.
    pub fn slice(&mut self, x: NodeId, axis: usize, start: usize, end: usize) -> Result<NodeId> {
        self.push(Op::Slice { axis, start, end }, vec![x])
    }

    pub fn broadcast_to(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.push(Op::BroadcastTo { shape: shape.to_vec() }, vec![x])
    }

    /// Selects elements of the flattened input.
    pub fn gather(&mut self, x: NodeId, indices: Vec<usize>) -> Result<NodeId> {
        self.push(Op::Gather { indices }, vec![x])
    }

    /// Linearly interpolated histogram of a 1-D node over `[lo, hi]`. Each
    /// value splits unit mass between the two nearest bin centres, so the
    /// counts sum to the number of values and are differentiable almost
    /// everywhere in the values and in both range ends.
    pub fn histogram(&mut self, values: NodeId, lo: NodeId, hi: NodeId, bins: usize) -> Result<NodeId> {
        self.push(Op::Histogram { bins }, vec![values, lo, hi])
    }

    /// Ascending sort along `axis`. Inference only: no adjoint.
    pub fn sort(&mut self, x: NodeId, axis: usize) -> Result<NodeId> {
        self.push(Op::Sort { axis }, vec![x])
    }

    /// Rebinds leaves and recomputes every node, returning the marked outputs.
    pub fn evaluate(&mut self, bindings: &[(NodeId, Array)]) -> Result<Vec<Array>> {
        for (id, v) in bindings {
            self.check(*id)?;
            let node = &mut self.nodes[id.0];
            if node.op != Op::Leaf {
                return Err(TensorError::NotALeaf(id.0));
            }
            if node.value.shape() != v.shape() {
                return Err(mismatch(
                    "evaluate",
                    format!("leaf {} bound {:?}, recorded {:?}", id.0, v.shape(), node.value.shape()),
                ));
            }
            if !v.all_finite() {
                return Err(TensorError::NonFinite {
                    context: format!("binding for leaf {}", id.0),
                });
            }
            node.value = v.clone();
        }
        for i in 0..self.nodes.len() {
            if self.nodes[i].op == Op::Leaf {
                continue;
            }
            let (value, aux) = {
                let node = &self.nodes[i];
                let vals: Vec<&Array> = node.inputs.iter().map(|j| &self.nodes[j.0].value).collect();
                ops::forward(&node.op, &vals)?
            };
            self.nodes[i].value = value;
            self.nodes[i].aux = aux;
        }
        Ok(self.outputs.iter().map(|o| self.nodes[o.0].value.clone()).collect())
    }

    /// Reverse-mode gradients of `seed` (weighted by `cotangent`) with respect
    /// to every differentiable leaf that `seed` depends on.
    pub fn gradients(&self, seed: NodeId, cotangent: &Array) -> Result<GradMap> {
        self.check(seed)?;
        if self.nodes[seed.0].value.shape() != cotangent.shape() {
            return Err(mismatch(
                "gradients",
                format!(
                    "cotangent {:?} for output {:?}",
                    cotangent.shape(),
                    self.nodes[seed.0].value.shape()
                ),
            ));
        }
        let mut grads: Vec<Option<Array>> = vec![None; seed.0 + 1];
        grads[seed.0] = Some(cotangent.clone());
        let mut out = GradMap::default();
        for i in (0..=seed.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if node.op == Op::Leaf {
                out.grads.insert(NodeId(i), g);
                continue;
            }
            let need: Vec<bool> = node
                .inputs
                .iter()
                .map(|j| self.nodes[j.0].requires_grad)
                .collect();
            let vals: Vec<&Array> = node.inputs.iter().map(|j| &self.nodes[j.0].value).collect();
            let parts = ops::backward(&node.op, &vals, &node.value, &node.aux, &g, &need)?;
            for ((j, part), needed) in node.inputs.iter().zip(parts).zip(need) {
                let Some(part) = part else { continue };
                if !needed {
                    continue;
                }
                match grads[j.0].as_mut() {
                    Some(acc) => acc.add_assign(&part)?,
                    None => grads[j.0] = Some(part),
                }
            }
        }
        Ok(out)
    }

    /// Gradients of a scalar node with unit cotangent.
    pub fn backward(&self, loss: NodeId) -> Result<GradMap> {
        self.check(loss)?;
        let v = &self.nodes[loss.0].value;
        if v.len() != 1 {
            return Err(TensorError::NotScalar(v.shape().to_vec()));
        }
        self.gradients(loss, &Array::full(v.shape(), 1.0))
    }
}

/// Free-function form of [`Graph::evaluate`].
pub fn evaluate(graph: &mut Graph, bindings: &[(NodeId, Array)]) -> Result<Vec<Array>> {
    graph.evaluate(bindings)
}

/// Free-function form of [`Graph::gradients`] that first applies `bindings`.
pub fn gradients(
    graph: &mut Graph,
    bindings: &[(NodeId, Array)],
    seed_output: NodeId,
    cotangent: &Array,
) -> Result<GradMap> {
    if !graph.outputs.contains(&seed_output) {
        return Err(TensorError::InvalidArgument(format!(
            "node {} is not a graph output",
            seed_output.0
        )));
    }
    graph.evaluate(bindings)?;
    graph.gradients(seed_output, cotangent)
}
