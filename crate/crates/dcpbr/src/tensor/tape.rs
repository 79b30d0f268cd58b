//! Gradient tape: operation records and the reverse sweep.

use std::sync::Arc;

use crate::{Error, Result};

use super::Tensor;

/// Index of a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

/// Parent reference saved inside an operation record. Keeps the forward
/// value alive for the backward pass; `node` is `None` for constants.
#[derive(Clone)]
pub(crate) struct Src {
    pub node: Option<NodeId>,
    pub data: Arc<Vec<f64>>,
    pub shape: Vec<usize>,
}

impl Src {
    pub fn of(t: &Tensor) -> Src {
        Src { node: t.node(), data: t.data_arc(), shape: t.shape().to_vec() }
    }

    pub fn tracked(&self) -> bool {
        self.node.is_some()
    }
}

pub(crate) enum Op {
    Leaf,
    Add {
        a: Src,
        b: Src,
    },
    Sub {
        a: Src,
        b: Src,
    },
    Mul {
        a: Src,
        b: Src,
    },
    Div {
        a: Src,
        b: Src,
    },
    PowScalar {
        a: Src,
        exponent: f64,
    },
    Sigmoid {
        a: Src,
        out: Arc<Vec<f64>>,
    },
    Tanh {
        a: Src,
        out: Arc<Vec<f64>>,
    },
    Sqrt {
        a: Src,
        out: Arc<Vec<f64>>,
    },
    Clamp {
        a: Src,
        lo: f64,
        hi: f64,
    },
    LeakyRelu {
        a: Src,
        slope: f64,
    },
    Conv2d {
        input: Src,
        weight: Src,
        bias: Src,
        stride: usize,
        padding: usize,
    },
    UpsampleNearest {
        a: Src,
        factor: usize,
    },
    ConcatChannels {
        a: Src,
        b: Src,
    },
    SliceChannels {
        a: Src,
        start: usize,
    },
    /// `xhat` and `inv_std` are saved per `(batch, channel)` statistics from
    /// the forward pass.
    ChannelNorm {
        a: Src,
        scale: Src,
        shift: Src,
        xhat: Arc<Vec<f64>>,
        inv_std: Arc<Vec<f64>>,
    },
    SumAll {
        a: Src,
    },
    SumChannels {
        a: Src,
    },
    SumBatch {
        a: Src,
    },
    /// `taps` holds, per output sample, the four corner texel indices and
    /// their bilinear weights.
    SampleBilinear {
        tex: Src,
        taps: Arc<Vec<[(usize, f64); 4]>>,
    },
    ScatterPixels {
        src: Src,
        pixels: Arc<Vec<usize>>,
    },
    L1 {
        a: Src,
        b: Src,
    },
    Tv {
        a: Src,
    },
}

pub(crate) struct Node {
    pub op: Op,
    pub shape: Vec<usize>,
}

/// Records every tracked operation in program order. Node indices are
/// assigned sequentially, so each node's parents always precede it.
#[derive(Default)]
pub struct Tape {
    pub(crate) nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the backward root with respect to `t`, if `t` is tracked
    /// and was reached by the sweep.
    pub fn get(&self, t: &Tensor) -> Option<&[f64]> {
        self.by_node(t.node()?)
    }

    pub fn by_node(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0)?.as_deref()
    }
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// Registers a differentiable variable. Leaves are the only nodes that
    /// can be created without an input tensor.
    pub fn leaf(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Tensor {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        let id = self.push(Op::Leaf, shape.clone());
        Tensor::with_node(shape, data, id)
    }

    pub(crate) fn push(&mut self, op: Op, shape: Vec<usize>) -> NodeId {
        self.nodes.push(Node { op, shape });
        NodeId(self.nodes.len() - 1)
    }

    /// Reverse sweep from a tracked scalar. Returns one gradient buffer per
    /// reached node; unreached nodes yield `None`.
    pub fn backward(&self, root: &Tensor) -> Result<Gradients> {
        let root_id = root.node().ok_or(Error::ShapeMismatch {
            op: "backward",
            detail: "root tensor is a constant (not recorded on the tape)".into(),
        })?;
        if root.numel() != 1 {
            return Err(Error::ShapeMismatch {
                op: "backward",
                detail: format!("root must be scalar, got shape {:?}", root.shape()),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[root_id.0] = Some(vec![1.0]);

        for id in (0..=root_id.0).rev() {
            // Nodes are topologically ordered, so by the time `id` is
            // visited every consumer has already deposited its contribution.
            if grads[id].is_none() {
                continue;
            }
            let upstream = grads[id].take().expect("checked above");
            let node = &self.nodes[id];
            super::ops::backward_op(&node.op, &node.shape, &upstream, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[id] = Some(upstream);
            }
        }
        Ok(Gradients { grads })
    }
}

/// Adds `contribution` into the gradient slot of `src`, if tracked.
pub(crate) fn accumulate(grads: &mut [Option<Vec<f64>>], src: &Src, contribution: Vec<f64>) {
    let Some(NodeId(id)) = src.node else { return };
    match &mut grads[id] {
        Some(acc) => {
            debug_assert_eq!(acc.len(), contribution.len());
            for (a, c) in acc.iter_mut().zip(&contribution) {
                *a += c;
            }
        }
        slot @ None => *slot = Some(contribution),
    }
}
