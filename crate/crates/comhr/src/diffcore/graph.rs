//! Dynamic computation graph with reverse-mode differentiation.
//!
//! Operations are recorded on a tape in creation order, which is also a
//! topological order, so one reverse sweep propagates exact gradients.
//! A graph instance is single-threaded; independent graphs can run on
//! independent threads because parameters are read-only during forward.

use std::collections::HashMap;

use super::error::{DiffError, DiffResult};
use super::ops::{self, OpKind};
use super::tensor::Tensor;

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

/// One recorded operation: its kind, parents, and forward value.
#[derive(Debug)]
pub struct DiffNode {
    pub kind: OpKind,
    pub inputs: Vec<NodeId>,
    pub value: Tensor,
}

/// A named weight tensor.
#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

/// Ordered collection of uniquely named parameters.
#[derive(Clone, Debug, Default)]
pub struct ParamSet {
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> DiffResult<usize> {
        self.insert_with(name, value, true)
    }

    pub fn insert_with(&mut self, name: &str, value: Tensor, trainable: bool) -> DiffResult<usize> {
        if self.index.contains_key(name) {
            return Err(DiffError::DuplicateParam(name.to_string()));
        }
        let slot = self.params.len();
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            trainable,
        });
        self.index.insert(name.to_string(), slot);
        Ok(slot)
    }

    pub fn slot(&self, name: &str) -> DiffResult<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| DiffError::UnknownParam(name.to_string()))
    }

    pub fn get(&self, name: &str) -> DiffResult<&Parameter> {
        Ok(&self.params[self.slot(name)?])
    }

    pub fn value(&self, name: &str) -> DiffResult<&Tensor> {
        Ok(&self.get(name)?.value)
    }

    pub fn at(&self, slot: usize) -> &Parameter {
        &self.params[slot]
    }

    pub fn at_mut(&mut self, slot: usize) -> &mut Parameter {
        &mut self.params[slot]
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    /// Total number of scalar elements across all parameters.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }
}

/// Branch signature of one forward pass: the active side of every kink
/// encountered, in tape order. Two evaluations are finite-difference
/// comparable only if their signatures match.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Signature {
    words: Vec<u64>,
    len: usize,
}

impl Signature {
    pub fn push(&mut self, bit: bool) {
        let word = self.len / 64;
        if word == self.words.len() {
            self.words.push(0);
        }
        if bit {
            self.words[word] |= 1 << (self.len % 64);
        }
        self.len += 1;
    }

    pub fn extend(&mut self, bits: &[bool]) {
        for &b in bits {
            self.push(b);
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }
}

/// Per-parameter gradients produced by [`Graph::backward`], indexed by
/// parameter slot. Parameters the loss does not depend on hold exact zeros.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Tensor>,
}

impl Gradients {
    pub fn slot(&self, slot: usize) -> &Tensor {
        &self.grads[slot]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Tensor> {
        self.grads.iter()
    }

    pub fn into_vec(self) -> Vec<Tensor> {
        self.grads
    }
}

/// Tape-based computation graph.
pub struct Graph {
    nodes: Vec<DiffNode>,
    /// (parameter slot, leaf node) bindings in creation order.
    bound: Vec<(usize, NodeId)>,
    /// Memoized binding per slot so repeated lookups share one leaf.
    binding_cache: HashMap<usize, NodeId>,
    signature: Signature,
    track: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// A graph that records parents for backward.
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            bound: Vec::new(),
            binding_cache: HashMap::new(),
            signature: Signature::default(),
            track: true,
        }
    }

    /// A forward-only graph: values are computed identically but parents
    /// are not retained and backward is refused.
    pub fn inference() -> Self {
        let mut g = Self::new();
        g.track = false;
        g
    }

    pub fn is_tracking(&self) -> bool {
        self.track
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn signature(&self) -> &Signature {
        &self.signature
    }

    /// Records a value-dependent branch taken by caller code (for example a
    /// degenerate-input fallback) so gradchecks can detect branch flips.
    pub fn record_branch(&mut self, bit: bool) {
        self.signature.push(bit);
    }

    /// Inserts a constant leaf (no gradient flows into it).
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(OpKind::Leaf, Vec::new(), value)
    }

    pub fn constant_scalar(&mut self, v: f64) -> NodeId {
        self.constant(Tensor::scalar(v))
    }

    /// Binds a parameter slot as a leaf. Repeated binds of the same slot
    /// return the same leaf, so gradients accumulate across all uses.
    pub fn param(&mut self, params: &ParamSet, slot: usize) -> NodeId {
        if let Some(&id) = self.binding_cache.get(&slot) {
            return id;
        }
        let p = params.at(slot);
        let id = self.push(OpKind::Leaf, Vec::new(), p.value.clone());
        if p.trainable {
            self.bound.push((slot, id));
        }
        self.binding_cache.insert(slot, id);
        id
    }

    pub fn param_named(&mut self, params: &ParamSet, name: &str) -> DiffResult<NodeId> {
        Ok(self.param(params, params.slot(name)?))
    }

    fn push(&mut self, kind: OpKind, inputs: Vec<NodeId>, value: Tensor) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(DiffNode {
            kind,
            inputs: if self.track { inputs } else { Vec::new() },
            value,
        });
        id
    }

    /// Applies an operation, validating dims and recording it on the tape.
    pub fn apply(&mut self, kind: OpKind, input_ids: &[NodeId]) -> DiffResult<NodeId> {
        let inputs: Vec<&Tensor> = input_ids.iter().map(|id| &self.nodes[id.0].value).collect();
        let value = ops::forward(&kind, &inputs)?;
        let mut bits = Vec::new();
        ops::branch_bits(&kind, &inputs, &mut bits);
        self.signature.extend(&bits);
        Ok(self.push(kind, input_ids.to_vec(), value))
    }

    // Convenience wrappers, one per op kind.

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> DiffResult<NodeId> {
        self.apply(OpKind::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> DiffResult<NodeId> {
        self.apply(OpKind::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> DiffResult<NodeId> {
        self.apply(OpKind::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> DiffResult<NodeId> {
        self.apply(OpKind::Mul, &[a, b])
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> DiffResult<NodeId> {
        self.apply(OpKind::Scale(c), &[a])
    }

    pub fn offset(&mut self, a: NodeId, c: f64) -> DiffResult<NodeId> {
        self.apply(OpKind::Offset(c), &[a])
    }

    pub fn scalar_mul(&mut self, s: NodeId, x: NodeId) -> DiffResult<NodeId> {
        self.apply(OpKind::ScalarMul, &[s, x])
    }

    pub fn relu(&mut self, a: NodeId) -> DiffResult<NodeId> {
        self.apply(OpKind::Relu, &[a])
    }

    pub fn exp(&mut self, a: NodeId) -> DiffResult<NodeId> {
        self.apply(OpKind::Exp, &[a])
    }

    pub fn log(&mut self, a: NodeId) -> DiffResult<NodeId> {
        self.apply(OpKind::Log, &[a])
    }

    pub fn concat(&mut self, axis: usize, parts: &[NodeId]) -> DiffResult<NodeId> {
        self.apply(OpKind::Concat { axis }, parts)
    }

    pub fn slice(&mut self, a: NodeId, offset: usize, dims: Vec<usize>) -> DiffResult<NodeId> {
        self.apply(OpKind::Slice { offset, dims }, &[a])
    }

    /// Row `i` of a rank-2 node, as a `[1, cols]` node.
    pub fn row(&mut self, a: NodeId, i: usize) -> DiffResult<NodeId> {
        let cols = self.value(a).ncols();
        self.slice(a, i * cols, vec![1, cols])
    }

    pub fn reshape(&mut self, a: NodeId, dims: Vec<usize>) -> DiffResult<NodeId> {
        self.apply(OpKind::Reshape { dims }, &[a])
    }

    pub fn transpose(&mut self, a: NodeId) -> DiffResult<NodeId> {
        self.apply(OpKind::Transpose, &[a])
    }

    pub fn l2_normalize(&mut self, a: NodeId) -> DiffResult<NodeId> {
        self.apply(OpKind::L2Normalize, &[a])
    }

    pub fn cosine(&mut self, a: NodeId, b: NodeId) -> DiffResult<NodeId> {
        self.apply(OpKind::Cosine, &[a, b])
    }

    pub fn softmax(&mut self, a: NodeId, axis: usize) -> DiffResult<NodeId> {
        self.apply(OpKind::Softmax { axis }, &[a])
    }

    pub fn masked_mean(&mut self, features: NodeId, weights: NodeId) -> DiffResult<NodeId> {
        self.apply(OpKind::MaskedMean, &[features, weights])
    }

    pub fn sum(&mut self, a: NodeId) -> DiffResult<NodeId> {
        self.apply(OpKind::Sum, &[a])
    }

    pub fn mean(&mut self, a: NodeId) -> DiffResult<NodeId> {
        self.apply(OpKind::Mean, &[a])
    }

    pub fn squared_error(&mut self, a: NodeId, b: NodeId) -> DiffResult<NodeId> {
        self.apply(OpKind::SquaredError, &[a, b])
    }

    pub fn layer_norm(&mut self, a: NodeId, eps: f64) -> DiffResult<NodeId> {
        self.apply(OpKind::LayerNorm { eps }, &[a])
    }

    pub fn cross(&mut self, a: NodeId, b: NodeId) -> DiffResult<NodeId> {
        self.apply(OpKind::Cross, &[a, b])
    }

    /// Reverse sweep from a scalar `loss`, returning one gradient per
    /// parameter slot in `params` (exact zeros for uninvolved parameters).
    pub fn backward(&mut self, loss: NodeId, params: &ParamSet) -> DiffResult<Gradients> {
        if !self.track {
            return Err(DiffError::TrackingDisabled);
        }
        let loss_node = &self.nodes[loss.0];
        if !loss_node.value.is_scalar() {
            return Err(DiffError::NonScalarLoss {
                dims: loss_node.value.dims().to_vec(),
            });
        }

        let mut node_grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        node_grads[loss.0] = Some(Tensor::scalar(1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = node_grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            if !node.inputs.is_empty() {
                let inputs: Vec<&Tensor> =
                    node.inputs.iter().map(|id| &self.nodes[id.0].value).collect();
                let contribs = ops::vjp(&node.kind, &inputs, &node.value, &g);
                for (input_id, contrib) in node.inputs.clone().iter().zip(contribs) {
                    match &mut node_grads[input_id.0] {
                        Some(acc) => acc.add_assign(&contrib),
                        slot => *slot = Some(contrib),
                    }
                }
            }
            node_grads[i] = Some(g);
        }

        let mut grads: Vec<Tensor> = params
            .iter()
            .map(|p| Tensor::zeros(p.value.dims()))
            .collect();
        for &(slot, node_id) in &self.bound {
            if let Some(g) = &node_grads[node_id.0] {
                grads[slot].add_assign(g);
            }
        }
        Ok(Gradients { grads })
    }
}
