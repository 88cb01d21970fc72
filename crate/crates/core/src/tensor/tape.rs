use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use super::params::{ParamId, ParamStore};
use super::{ops, Tensor};
use crate::error::{Error, Result};

/// Operation that produced a node, with parent indices and whatever the
/// backward rule needs that is not already in the parent values.
pub(crate) enum Op {
    Leaf,
    Param,
    Binary {
        kind: ops::Binary,
        a: usize,
        b: usize,
    },
    Scale {
        a: usize,
        c: f64,
    },
    Shift {
        a: usize,
    },
    MatMul {
        a: usize,
        b: usize,
    },
    Transpose {
        a: usize,
    },
    Reshape {
        a: usize,
    },
    Unary {
        a: usize,
        kind: ops::Unary,
    },
    Softmax {
        a: usize,
    },
    Sum {
        a: usize,
    },
    Mean {
        a: usize,
    },
    MeanRows {
        a: usize,
    },
    MaxRows {
        a: usize,
        arg: Vec<usize>,
    },
    GroupMax {
        a: usize,
        arg: Vec<usize>,
    },
    Gather {
        a: usize,
        index: Rc<[usize]>,
    },
    ConcatCols {
        parts: Vec<usize>,
    },
    SliceCols {
        a: usize,
        start: usize,
    },
    ConcatRows {
        parts: Vec<usize>,
    },
    LayerNorm {
        a: usize,
        inv_std: Vec<f64>,
    },
    ApplyField {
        field: usize,
        points: usize,
    },
    Eager {
        a: usize,
        grad: Vec<f64>,
    },
    Scan(Box<super::scan::ScanNode>),
}

pub(crate) struct Node {
    pub(crate) value: Rc<Tensor>,
    pub(crate) op: Op,
    pub(crate) tracked: bool,
}

/// Single-use record of a forward pass.
///
/// Nodes are appended in evaluation order, so parents always precede
/// children and a reverse sweep visits every node once.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<HashMap<ParamId, usize>>,
    consumed: Cell<bool>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.value().shape())
            .finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Untracked input.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    /// Tracked input whose gradient is reported by [`Tape::backward`].
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Tracked parameter; registered once per tape and reused afterwards.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        if let Some(&node) = self.params.borrow().get(&id) {
            return Var { tape: self, id: node };
        }
        let var = self.push(store.value(id).clone(), Op::Param, true);
        self.params.borrow_mut().insert(id, var.id);
        var
    }

    /// Parameter value as an untracked constant (frozen networks, sampling).
    pub fn frozen(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        self.constant(store.value(id).clone())
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    pub(crate) fn push(&self, value: Tensor, op: Op, tracked: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            tracked,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Tensor> {
        Rc::clone(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn tracked(&self, id: usize) -> bool {
        self.nodes.borrow()[id].tracked
    }

    /// Reverse sweep from a scalar loss. The tape is consumed: a second call
    /// is a contract error.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::contract("loss belongs to a different tape"));
        }
        if self.consumed.replace(true) {
            return Err(Error::contract("tape has already been differentiated"));
        }
        let nodes = self.nodes.borrow();
        if !nodes[loss.id].value.is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        let mut leaves: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        if nodes[loss.id].tracked {
            grads[loss.id] = Some(vec![1.0]);
        }
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            match nodes[id].op {
                Op::Leaf | Op::Param => leaves[id] = Some(g),
                _ => ops::backprop(&nodes, id, &g, &mut grads),
            }
        }
        let params = self
            .params
            .borrow()
            .iter()
            .map(|(&p, &node)| (p, node))
            .collect();
        Ok(Gradients { leaves, params })
    }
}

/// Gradients of a scalar loss with respect to every tracked leaf.
pub struct Gradients {
    leaves: Vec<Option<Vec<f64>>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient for a tracked leaf; `None` when the loss does not depend on it.
    pub fn wrt(&self, var: Var<'_>) -> Option<&[f64]> {
        self.leaves.get(var.id)?.as_deref()
    }

    /// Gradient of a registered parameter, if it influenced the loss.
    pub fn param(&self, id: ParamId) -> Option<&[f64]> {
        let node = self.params.iter().find(|(p, _)| *p == id)?.1;
        self.leaves[node].as_deref()
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.params
            .iter()
            .filter_map(|&(p, node)| self.leaves[node].as_deref().map(|g| (p, g)))
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn rows(&self) -> usize {
        self.value().rows()
    }

    pub fn cols(&self) -> usize {
        self.value().cols()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn is_tracked(&self) -> bool {
        self.tape.tracked(self.id)
    }

    /// Copy of the value with tracking cut.
    pub fn detach(&self) -> Var<'t> {
        let v = (*self.value()).clone();
        self.tape.constant(v)
    }
}
