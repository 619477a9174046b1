use std::cell::{Cell, RefCell};
use std::fmt;
use std::sync::Arc;

use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tensor::Tensor;

/// Inputs handed to an op's backward rule.
pub(crate) struct BackwardArgs<'a, T> {
    /// Gradient of the loss with respect to the op output.
    pub grad: &'a [T],
    pub inputs: &'a [Arc<Tensor<T>>],
    pub output: &'a Tensor<T>,
    /// Which inputs want a gradient; rules may skip the rest.
    pub needs: &'a [bool],
}

/// One entry per input; `None` means "no contribution".
pub(crate) type Grads<T> = Vec<Option<Vec<T>>>;

type BackwardFn<T> = Box<dyn Fn(&BackwardArgs<'_, T>) -> Grads<T>>;

struct Node<T> {
    op: &'static str,
    value: Arc<Tensor<T>>,
    requires_grad: bool,
    inputs: Vec<usize>,
    backward: Option<BackwardFn<T>>,
}

/// Append-only record of a forward computation.
///
/// Nodes are pushed in execution order, so inputs always precede the ops
/// that consume them and a single reverse sweep visits each op once.
pub struct Tape<T: Real> {
    nodes: RefCell<Vec<Node<T>>>,
    grads: RefCell<Option<Vec<Option<Vec<T>>>>>,
    done: Cell<bool>,
    macs: Cell<u64>,
}

/// Handle to a value recorded on a [`Tape`].
pub struct Var<'t, T: Real> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) id: usize,
}

impl<T: Real> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T: Real> Copy for Var<'_, T> {}

impl<T: Real> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            grads: RefCell::new(None),
            done: Cell::new(false),
            macs: Cell::new(0),
        }
    }

    /// Trainable leaf: gradients are tracked for it.
    pub fn leaf(&self, value: Tensor<T>) -> Result<Var<'_, T>> {
        self.leaf_shared(Arc::new(value), true)
    }

    /// Detached input: participates in the forward pass only.
    pub fn constant(&self, value: Tensor<T>) -> Result<Var<'_, T>> {
        self.leaf_shared(Arc::new(value), false)
    }

    /// Leaf backed by an existing shared buffer (no copy).
    pub fn leaf_shared(&self, value: Arc<Tensor<T>>, requires_grad: bool) -> Result<Var<'_, T>> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite("leaf"));
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op: "leaf",
            value,
            requires_grad,
            inputs: Vec::new(),
            backward: None,
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Multiply-accumulate operations executed by forward ops so far.
    pub fn macs(&self) -> u64 {
        self.macs.get()
    }

    pub(crate) fn add_macs(&self, n: u64) {
        self.macs.set(self.macs.get() + n);
    }

    /// Op names in recording order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.borrow().iter().map(|n| n.op).collect()
    }

    pub(crate) fn value(&self, id: usize) -> Arc<Tensor<T>> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Record an op. The backward rule is dropped when no input needs grad.
    pub(crate) fn record<F>(
        &self,
        op: &'static str,
        inputs: &[Var<'_, T>],
        value: Tensor<T>,
        backward: F,
    ) -> Result<Var<'_, T>>
    where
        F: Fn(&BackwardArgs<'_, T>) -> Grads<T> + 'static,
    {
        if self.done.get() {
            return Err(TensorError::Contract(
                "cannot record on a tape after backward".into(),
            ));
        }
        if !value.is_finite() {
            return Err(TensorError::NonFinite(op));
        }
        let mut nodes = self.nodes.borrow_mut();
        let ids: Vec<usize> = inputs.iter().map(|v| v.id).collect();
        let requires_grad = ids.iter().any(|&i| nodes[i].requires_grad);
        nodes.push(Node {
            op,
            value: Arc::new(value),
            requires_grad,
            inputs: ids,
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
        });
        Ok(Var {
            tape: self,
            id: nodes.len() - 1,
        })
    }

    /// Reverse sweep from a scalar loss. A tape supports exactly one sweep.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<()> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(TensorError::Contract("loss belongs to another tape".into()));
        }
        if self.done.get() {
            return Err(TensorError::Contract(
                "backward already ran on this tape".into(),
            ));
        }
        let nodes = self.nodes.borrow();
        let root = &nodes[loss.id];
        if root.value.numel() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        self.done.set(true);

        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(vec![T::one()]);
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let inputs: Vec<Arc<Tensor<T>>> =
                node.inputs.iter().map(|&i| Arc::clone(&nodes[i].value)).collect();
            let needs: Vec<bool> = node.inputs.iter().map(|&i| nodes[i].requires_grad).collect();
            let contributions = backward(&BackwardArgs {
                grad: &grad,
                inputs: &inputs,
                output: &node.value,
                needs: &needs,
            });
            debug_assert_eq!(contributions.len(), node.inputs.len(), "{} backward", node.op);
            for ((&input, contribution), &need) in
                node.inputs.iter().zip(contributions).zip(&needs)
            {
                let (Some(c), true) = (contribution, need) else {
                    continue;
                };
                match &mut grads[input] {
                    Some(acc) => {
                        for (a, x) in acc.iter_mut().zip(&c) {
                            *a += *x;
                        }
                    }
                    slot @ None => *slot = Some(c),
                }
            }
        }
        *self.grads.borrow_mut() = Some(grads);
        Ok(())
    }

    /// Gradient of the last backward sweep for a leaf (or any node).
    pub fn grad(&self, var: Var<'_, T>) -> Result<Tensor<T>> {
        let grads = self.grads.borrow();
        let Some(grads) = grads.as_ref() else {
            return Err(TensorError::Contract("backward has not run".into()));
        };
        let nodes = self.nodes.borrow();
        let node = nodes.get(var.id).ok_or(TensorError::AbsentGrad(var.id))?;
        if !node.requires_grad || !std::ptr::eq(var.tape, self) {
            return Err(TensorError::AbsentGrad(var.id));
        }
        let shape = node.value.shape().to_vec();
        match &grads[var.id] {
            Some(g) => Tensor::new(&shape, g.clone()),
            // Reachable leaf that the loss does not depend on.
            None => Ok(Tensor::zeros(&shape)),
        }
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Arc<Tensor<T>> {
        self.tape.value(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }

    /// Scalar value of a one-element var.
    pub fn item(&self) -> Result<T> {
        self.value().item()
    }

    pub fn grad(&self) -> Result<Tensor<T>> {
        self.tape.grad(*self)
    }
}
