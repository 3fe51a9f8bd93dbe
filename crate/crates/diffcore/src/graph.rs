use crate::error::DiffError;
use crate::ops::Op;
use crate::param::{ParamId, ParamStore};
use crate::{Real, Result, Tensor};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

pub(crate) struct Node<T> {
    pub value: Tensor<T>,
    pub op: Op<T>,
    pub requires_grad: bool,
    pub param: Option<(u64, ParamId)>,
}

/// A tape recording a single forward pass.
pub struct Graph<T> {
    pub(crate) nodes: Vec<Node<T>>,
    pub(crate) grads: Vec<Option<Tensor<T>>>,
    training: bool,
    backward_done: bool,
    empty_mask_losses: usize,
}

impl<T: Real> Graph<T> {
    pub fn new(training: bool) -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
            training,
            backward_done: false,
            empty_mask_losses: 0,
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of masked losses evaluated with an all-zero mask.
    pub fn empty_mask_losses(&self) -> usize {
        self.empty_mask_losses
    }

    pub(crate) fn note_empty_mask(&mut self) {
        self.empty_mask_losses += 1;
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    pub(crate) fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Leaf that receives a gradient.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf without gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Copies a stored parameter onto the tape.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let value = store.get(id).value.clone();
        let v = self.push(value, Op::Leaf, true);
        self.nodes[v.0].param = Some((store.uid(), id));
        v
    }

    /// Reverse-mode accumulation from a scalar root.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let shape = self.shape(root);
        if shape != [1, 1] {
            return Err(DiffError::NonScalarRoot(shape));
        }
        if self.backward_done {
            return Err(DiffError::BackwardTwice);
        }
        self.backward_done = true;
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        self.grads[root.0] = Some(Tensor::scalar(T::one()));
        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            crate::ops::backward(&self.nodes, i, &g, &mut self.grads);
            self.grads[i] = Some(g);
        }
        Ok(())
    }

    /// Adds the gradient of every parameter leaf taken from `store` into it.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore<T>) {
        for (node, grad) in self.nodes.iter().zip(&self.grads) {
            if let (Some((uid, id)), Some(g)) = (node.param, grad) {
                if uid != store.uid() {
                    continue;
                }
                store.get_mut(id).grad.add_assign(g);
            }
        }
    }
}
