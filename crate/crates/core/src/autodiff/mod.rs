//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] is rebuilt for every forward pass. Each recorded node holds its
//! value, the primitive that produced it and whether any gradient can flow
//! into it. Node ids are assigned in recording order, so parents always have
//! smaller ids than their children and the backward sweep is a single pass
//! over the node list in reverse.

mod ops;

use std::collections::BTreeMap;

pub use ops::{Op, LOG_FLOOR};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub struct Node {
    id: NodeId,
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

impl Node {
    pub fn id(&self) -> NodeId {
        self.id
    }

    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub fn op(&self) -> &Op {
        &self.op
    }

    pub fn parents(&self) -> Vec<NodeId> {
        self.op.parents()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, NodeId>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Registered parameter names and their node ids.
    pub fn params(&self) -> &BTreeMap<String, NodeId> {
        &self.params
    }

    pub fn param_id(&self, name: &str) -> Option<NodeId> {
        self.params.get(name).copied()
    }

    fn leaf(&mut self, value: Tensor, requires_grad: bool) -> NodeId {
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            id,
            value,
            op: Op::Leaf,
            requires_grad,
        });
        id
    }

    /// A leaf no gradient is tracked for.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, false)
    }

    /// An unnamed leaf that receives an adjoint.
    pub fn variable(&mut self, value: Tensor) -> NodeId {
        self.leaf(value, true)
    }

    /// A named trainable leaf; [`Tape::backward`] reports its gradient.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor) -> Result<NodeId> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::arg(format!("parameter `{name}` registered twice")));
        }
        let id = self.leaf(value, true);
        self.params.insert(name, id);
        Ok(id)
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::arg(format!("node {} is not on this tape", id.0)))
        }
    }

    /// Evaluates and records `op`.
    pub fn push(&mut self, op: Op) -> Result<NodeId> {
        let parents = op.parents();
        for &p in &parents {
            self.check(p)?;
        }
        let value = ops::forward(&op, |id| &self.nodes[id.0].value)?;
        let requires_grad = match op {
            Op::StopGradient(_) => false,
            _ => parents.iter().any(|p| self.nodes[p.0].requires_grad),
        };
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node {
            id,
            value,
            op,
            requires_grad,
        });
        Ok(id)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Add(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        self.push(Op::Scale(a, factor))
    }

    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        self.push(Op::AddBias(a, bias))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Tanh(a))
    }

    pub fn softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Softmax(a))
    }

    pub fn log_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::LogSoftmax(a))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::arg("concat needs at least one part"));
        }
        self.push(Op::Concat(parts.to_vec()))
    }

    pub fn stack_rows(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::arg("stack_rows needs at least one part"));
        }
        self.push(Op::StackRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        self.push(Op::SliceCols {
            input: a,
            start,
            len,
        })
    }

    pub fn row_select(&mut self, table: NodeId, rows: &[usize]) -> Result<NodeId> {
        self.push(Op::RowSelect {
            table,
            rows: rows.to_vec(),
        })
    }

    pub fn stop_gradient(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::StopGradient(a))
    }

    /// Mean cross-entropy of probability rows against one target per row.
    pub fn cross_entropy(&mut self, probs: NodeId, targets: &[usize]) -> Result<NodeId> {
        self.push(Op::CrossEntropy {
            probs,
            targets: targets.to_vec(),
        })
    }

    /// Mean negative log-likelihood of log-probability rows.
    pub fn nll(&mut self, log_probs: NodeId, targets: &[usize]) -> Result<NodeId> {
        self.push(Op::Nll {
            log_probs,
            targets: targets.to_vec(),
        })
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Sum(a))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        self.push(Op::Mean(a))
    }

    /// Mean of several scalar nodes.
    pub fn mean_of(&mut self, scalars: &[NodeId]) -> Result<NodeId> {
        let stacked = self.stack_rows(scalars)?;
        self.mean(stacked)
    }

    /// Adjoints of every node with respect to the scalar `loss`.
    pub fn gradients(&self, loss: NodeId) -> Result<Gradients> {
        self.check(loss)?;
        let loss_value = &self.nodes[loss.0].value;
        if !loss_value.is_scalar() {
            return Err(Error::arg(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_value.shape()
            )));
        }
        let mut adjoints: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        adjoints[loss.0] = Some(Tensor::ones(loss_value.shape()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let (lower, upper) = adjoints.split_at_mut(i);
            let Some(grad) = upper[0].as_ref() else {
                continue;
            };
            let contributions = ops::backward(&node.op, &node.value, grad, |id| {
                &self.nodes[id.0].value
            });
            for (parent, d) in contributions {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut lower[parent.0] {
                    Some(acc) => acc.add_assign(&d),
                    slot @ None => *slot = Some(d),
                }
            }
        }
        Ok(Gradients { adjoints })
    }

    /// Gradients of `loss` for every registered parameter. Parameters the
    /// loss does not reach get zero tensors of matching shape.
    pub fn backward(&self, loss: NodeId) -> Result<BTreeMap<String, Tensor>> {
        let grads = self.gradients(loss)?;
        Ok(self
            .params
            .iter()
            .map(|(name, &id)| (name.clone(), grads.wrt(id, self)))
            .collect())
    }

    /// Recomputes every non-leaf value from the leaves.
    pub fn replay(&self) -> Result<Vec<Tensor>> {
        let mut values: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node.op {
                Op::Leaf => node.value.clone(),
                ref op => ops::forward(op, |id| &values[id.0])?,
            };
            values.push(v);
        }
        Ok(values)
    }
}

/// Per-node adjoints from one backward sweep.
#[derive(Clone, Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Tensor>>,
}

impl Gradients {
    /// The adjoint of `id`, or `None` when no gradient reached it.
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.adjoints.get(id.0).and_then(Option::as_ref)
    }

    /// The adjoint of `id`, zero-filled when no gradient reached it.
    pub fn wrt(&self, id: NodeId, tape: &Tape) -> Tensor {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| tape.value(id).zeros_like())
    }
}
