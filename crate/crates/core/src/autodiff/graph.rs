use std::collections::BTreeMap;
use std::fmt;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Index of a node inside a [`Graph`]. Ids are handed out in topological order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A differentiable operation recorded in the graph.
///
/// `forward` may cache whatever the backward pass needs (im2col buffers,
/// argmax indices); it is re-run when the graph is replayed.
pub trait Op {
    fn name(&self) -> &'static str;

    fn forward(&mut self, inputs: &[&Tensor]) -> Result<Tensor>;

    /// One entry per input. Entries for inputs whose `needs` flag is false may
    /// be `None`.
    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad: &[f32],
        needs: &[bool],
    ) -> Vec<Option<Vec<f32>>>;

    /// Hash of the discrete branch decisions taken in the last forward
    /// (active ReLU units, pooling winners, ...). Finite-difference checks
    /// use it to skip elements whose perturbation crosses a kink.
    fn branch_signature(&self, _inputs: &[&Tensor], _output: &Tensor) -> u64 {
        0
    }
}

struct Node {
    op: Option<Box<dyn Op>>,
    inputs: Vec<NodeId>,
    value: Tensor,
    tracks: bool,
}

/// Gradients of every `requires_grad` leaf, keyed by node.
pub type GradMap = BTreeMap<NodeId, Vec<f32>>;

/// Tape of eagerly evaluated operations.
pub struct Graph {
    nodes: Vec<Node>,
    seed: u64,
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let ops: Vec<&str> = self
            .nodes
            .iter()
            .map(|n| n.op.as_ref().map_or("leaf", |o| o.name()))
            .collect();
        f.debug_struct("Graph")
            .field("seed", &self.seed)
            .field("nodes", &ops)
            .finish()
    }
}

impl Default for Graph {
    fn default() -> Self {
        Self::new(0)
    }
}

impl Graph {
    pub fn new(seed: u64) -> Self {
        Self {
            nodes: Vec::new(),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Adds a leaf; it is tracked iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> NodeId {
        let tracks = t.requires_grad();
        self.push(None, Vec::new(), t, tracks)
    }

    pub fn param(&mut self, t: Tensor) -> NodeId {
        self.leaf(t.with_requires_grad(true))
    }

    pub fn constant(&mut self, t: Tensor) -> NodeId {
        self.leaf(t.with_requires_grad(false))
    }

    pub fn apply<O: Op + 'static>(&mut self, mut op: O, inputs: &[NodeId]) -> Result<NodeId> {
        let value = {
            let ins: Vec<&Tensor> = inputs.iter().map(|id| &self.nodes[id.0].value).collect();
            op.forward(&ins)?
        };
        let tracks = inputs.iter().any(|id| self.nodes[id.0].tracks);
        Ok(self.push(Some(Box::new(op)), inputs.to_vec(), value, tracks))
    }

    fn push(&mut self, op: Option<Box<dyn Op>>, inputs: Vec<NodeId>, value: Tensor, tracks: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            op,
            inputs,
            value,
            tracks,
        });
        id
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn op_name(&self, id: NodeId) -> &'static str {
        self.nodes[id.0].op.as_ref().map_or("leaf", |o| o.name())
    }

    pub fn inputs(&self, id: NodeId) -> &[NodeId] {
        &self.nodes[id.0].inputs
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        self.nodes[id.0].op.is_none()
    }

    /// Leaves flagged `requires_grad`, in insertion order.
    pub fn params(&self) -> Vec<NodeId> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.op.is_none() && n.value.requires_grad())
            .map(|(i, _)| NodeId(i))
            .collect()
    }

    /// Overwrites a leaf's values. Call [`Graph::replay`] to refresh
    /// downstream nodes.
    pub fn set_leaf_data(&mut self, id: NodeId, data: &[f32]) -> Result<()> {
        let node = &mut self.nodes[id.0];
        if node.op.is_some() {
            return Err(Error::shape("set_leaf_data", "node is not a leaf"));
        }
        if data.len() != node.value.numel() {
            return Err(Error::shape(
                "set_leaf_data",
                format!("{} values for {} elements", data.len(), node.value.numel()),
            ));
        }
        node.value.data_mut().copy_from_slice(data);
        Ok(())
    }

    /// Re-evaluates every non-leaf node from current leaf values.
    pub fn replay(&mut self) -> Result<()> {
        for i in 0..self.nodes.len() {
            if self.nodes[i].op.is_none() {
                continue;
            }
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &mut rest[0];
            let ins: Vec<&Tensor> = node.inputs.iter().map(|id| &before[id.0].value).collect();
            let op = node.op.as_mut().unwrap();
            let mut out = op.forward(&ins)?;
            if node.value.requires_grad() {
                out = out.with_requires_grad(true);
            }
            node.value = out;
        }
        Ok(())
    }

    /// Combined branch signature of every op; see [`Op::branch_signature`].
    pub fn fingerprint(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for node in &self.nodes {
            if let Some(op) = &node.op {
                let ins: Vec<&Tensor> = node.inputs.iter().map(|id| &self.nodes[id.0].value).collect();
                h ^= op.branch_signature(&ins, &node.value);
                h = h.wrapping_mul(0x100_0000_01b3);
            }
        }
        h
    }

    /// Reverse-mode sweep from a scalar node. Leaf gradients accumulate into
    /// the leaves' grad slots, so two calls without [`Graph::zero_grad`]
    /// double them. Returns the current grad of every tracked leaf.
    pub fn backward(&mut self, loss: NodeId) -> Result<GradMap> {
        let numel = self.nodes[loss.0].value.numel();
        if numel != 1 {
            return Err(Error::NotScalar { numel });
        }
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let mut leaf_grads: Vec<(usize, Vec<f32>)> = Vec::new();

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let Some(op) = &node.op else {
                if node.value.requires_grad() {
                    leaf_grads.push((i, g));
                }
                continue;
            };
            let needs: Vec<bool> = node.inputs.iter().map(|id| self.nodes[id.0].tracks).collect();
            if !needs.iter().any(|&b| b) {
                continue;
            }
            let ins: Vec<&Tensor> = node.inputs.iter().map(|id| &self.nodes[id.0].value).collect();
            let input_grads = op.backward(&ins, &node.value, &g, &needs);
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "{}", op.name());
            for ((id, gi), need) in node.inputs.iter().zip(input_grads).zip(&needs) {
                let (Some(gi), true) = (gi, *need) else { continue };
                match &mut grads[id.0] {
                    Some(acc) => acc.iter_mut().zip(&gi).for_each(|(a, b)| *a += b),
                    slot => *slot = Some(gi),
                }
            }
        }

        for (i, g) in leaf_grads {
            self.nodes[i].value.accumulate_grad(&g);
        }
        Ok(self.grad_map())
    }

    pub fn grad_map(&self) -> GradMap {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.value.grad().map(|g| (NodeId(i), g.to_vec())))
            .collect()
    }

    pub fn grad(&self, id: NodeId) -> Option<&[f32]> {
        self.nodes[id.0].value.grad()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.value.zero_grad();
        }
    }
}
