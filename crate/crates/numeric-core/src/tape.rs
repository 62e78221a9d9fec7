use std::cell::RefCell;

use crate::error::{NumericError, Result};
use crate::tensor::Tensor;

/// Backward step of one recorded op. Receives the gradient flowing into the
/// node's output and accumulates contributions into the parents' slots.
pub(crate) type BackwardFn = Box<dyn Fn(&Tensor, &mut GradBuf)>;

pub(crate) struct Node {
    pub(crate) value: Tensor,
    pub(crate) requires_grad: bool,
    pub(crate) backward: Option<BackwardFn>,
}

/// A Wengert tape: the forward pass appends nodes, `backward` replays them in
/// reverse. Insertion order is a topological order by construction, so each
/// node's gradient is complete before its backward step runs — gradients
/// accumulate exactly once per input.
pub struct Tape {
    pub(crate) nodes: RefCell<Vec<Node>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Insert an input node. Leaves own their values; only leaves with
    /// `requires_grad` end up with gradients worth reading.
    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        let id = self.push_node(Node { value, requires_grad, backward: None });
        Var { tape: self, id }
    }

    /// A leaf that never receives gradients (positional encodings, targets,
    /// sampling grids and the like).
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    pub(crate) fn push_node(&self, node: Node) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        nodes.len() - 1
    }

    /// Record the output of an op, enforcing the all-finite forward contract.
    pub(crate) fn push_result(
        &self,
        op: &'static str,
        value: Tensor,
        requires_grad: bool,
        backward: Option<BackwardFn>,
    ) -> Result<Var<'_>> {
        if !value.is_finite() {
            return Err(NumericError::NonFinite {
                op,
                context: format!("output shape {:?}", value.shape()),
            });
        }
        let backward = if requires_grad { backward } else { None };
        let id = self.push_node(Node { value, requires_grad, backward });
        Ok(Var { tape: self, id })
    }

    pub(crate) fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Clone out a node's value.
    pub fn value_of(&self, var: Var<'_>) -> Tensor {
        self.nodes.borrow()[var.id].value.clone()
    }

    pub(crate) fn with_value<R>(&self, id: usize, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn with_values2<R>(
        &self,
        a: usize,
        b: usize,
        f: impl FnOnce(&Tensor, &Tensor) -> R,
    ) -> R {
        let nodes = self.nodes.borrow();
        f(&nodes[a].value, &nodes[b].value)
    }

    /// Reverse sweep from a scalar output. Returns one gradient slot per node;
    /// slots of nodes the output does not depend on stay empty.
    pub fn backward(&self, output: Var<'_>) -> Result<Gradients> {
        let seed = {
            let nodes = self.nodes.borrow();
            let out = &nodes[output.id].value;
            if out.numel() != 1 {
                return Err(NumericError::arg(
                    "backward",
                    format!("output must be scalar, got shape {:?}", out.shape()),
                ));
            }
            Tensor::full(out.shape(), 1.0)
        };
        let mut buf = GradBuf { slots: vec![None; self.len()] };
        buf.accumulate(output.id, seed);
        let nodes = self.nodes.borrow();
        for id in (0..=output.id).rev() {
            let Some(grad) = buf.slots[id].clone() else { continue };
            if let Some(step) = &nodes[id].backward {
                step(&grad, &mut buf);
            }
        }
        Ok(Gradients { slots: buf.slots })
    }
}

/// Handle to a node on a tape. Cheap to copy; all ops are methods on this.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.value_of(*self)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.with_value(self.id, |v| v.shape().to_vec())
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }
}

/// Per-node gradient accumulator used during the reverse sweep.
pub struct GradBuf {
    slots: Vec<Option<Tensor>>,
}

impl GradBuf {
    pub fn accumulate(&mut self, id: usize, contribution: Tensor) {
        match &mut self.slots[id] {
            Some(existing) => {
                debug_assert_eq!(existing.shape(), contribution.shape());
                for (g, c) in existing.data_mut().iter_mut().zip(contribution.data()) {
                    *g += c;
                }
            }
            slot @ None => *slot = Some(contribution),
        }
    }
}

/// Gradients produced by one reverse sweep.
pub struct Gradients {
    slots: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.slots.get(var.id).and_then(|s| s.as_ref())
    }

    pub fn take(&mut self, var: Var<'_>) -> Option<Tensor> {
        self.slots.get_mut(var.id).and_then(|s| s.take())
    }
}
