use std::cell::RefCell;
use std::fmt;
use std::sync::Arc;

use crate::param::{ParamId, ParamStore};
use crate::{Error, Result, Scalar, Tensor};

/// Maps the upstream gradient of a node to one gradient per parent.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T]) -> Vec<Vec<T>>>;

struct Node<T> {
    value: Arc<Tensor<T>>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
}

/// Per-forward-pass record of operations.
///
/// A tape is built from a snapshot of a [`ParamStore`]; parameter values are
/// shared, not copied. Drop the tape after [`Tape::backward`] to release the
/// recorded intermediates.
pub struct Tape<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    params: Vec<Arc<Tensor<T>>>,
    param_nodes: RefCell<Vec<Option<usize>>>,
    recording: bool,
}

impl<T: Scalar> Tape<T> {
    /// Tape that records backward closures.
    pub fn new(store: &ParamStore<T>) -> Self {
        Self::build(store, true)
    }

    /// Tape for inference: values only, no backward graph.
    pub fn inference(store: &ParamStore<T>) -> Self {
        Self::build(store, false)
    }

    /// Recording tape with no parameters.
    pub fn empty() -> Self {
        Self::build(&ParamStore::new(), true)
    }

    fn build(store: &ParamStore<T>, recording: bool) -> Self {
        let params: Vec<_> = store.ids().map(|id| store.shared(id)).collect();
        let n = params.len();
        Tape {
            nodes: RefCell::new(Vec::new()),
            params,
            param_nodes: RefCell::new(vec![None; n]),
            recording,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leaf node for a non-learnable input. Gradients still flow to it.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push_shared(Arc::new(value), Vec::new(), None)
    }

    /// Leaf node for a parameter; repeated calls return the same node.
    pub fn param(&self, id: ParamId) -> Var<'_, T> {
        if let Some(node) = self.param_nodes.borrow()[id.0] {
            return Var { tape: self, id: node };
        }
        let v = self.push_shared(Arc::clone(&self.params[id.0]), Vec::new(), None);
        self.param_nodes.borrow_mut()[id.0] = Some(v.id);
        v
    }

    pub(crate) fn push(&self, value: Tensor<T>, parents: Vec<usize>, backward: BackwardFn<T>) -> Var<'_, T> {
        self.push_shared(Arc::new(value), parents, Some(backward))
    }

    fn push_shared(&self, value: Arc<Tensor<T>>, parents: Vec<usize>, backward: Option<BackwardFn<T>>) -> Var<'_, T> {
        debug_assert!(
            value.data().iter().all(|v| !v.is_nan()),
            "NaN produced on tape node {}",
            self.len()
        );
        let mut nodes = self.nodes.borrow_mut();
        let id = nodes.len();
        let (parents, backward) = if self.recording {
            (parents, backward)
        } else {
            (Vec::new(), None)
        };
        nodes.push(Node {
            value,
            parents,
            backward,
        });
        Var { tape: self, id }
    }

    fn value_of(&self, id: usize) -> Arc<Tensor<T>> {
        Arc::clone(&self.nodes.borrow()[id].value)
    }

    /// Reverse sweep from a scalar loss.
    ///
    /// Each node is visited exactly once, in reverse recording order. Fan-out
    /// contributions are summed before a node propagates.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let out = &nodes[loss.id];
        if out.value.numel() != 1 {
            return Err(Error::NonScalarLoss(out.value.shape().to_vec()));
        }
        if !self.recording {
            return Err(Error::invalid("backward", "tape was built in inference mode"));
        }
        let mut grads: Vec<Option<Vec<T>>> = Vec::with_capacity(nodes.len());
        grads.resize_with(nodes.len(), || None);
        grads[loss.id] = Some(vec![T::one()]);
        let mut visited = 0;
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            visited += 1;
            let parent_grads = backward(&g);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, pg) in node.parents.iter().zip(parent_grads) {
                debug_assert_eq!(pg.len(), nodes[p].value.numel());
                match &mut grads[p] {
                    Some(acc) => {
                        for (a, b) in acc.iter_mut().zip(pg) {
                            *a += b;
                        }
                    }
                    slot @ None => *slot = Some(pg),
                }
            }
        }
        Ok(Gradients {
            grads,
            param_nodes: self.param_nodes.borrow().clone(),
            visited,
        })
    }
}

/// Handle to a node on a [`Tape`].
pub struct Var<'t, T: Scalar> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) id: usize,
}

impl<T: Scalar> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T: Scalar> Copy for Var<'_, T> {}

impl<T: Scalar> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn node_id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Arc<Tensor<T>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.numel()
    }

    /// Copies the value out of the tape.
    pub fn to_tensor(&self) -> Tensor<T> {
        (*self.value()).clone()
    }

    pub(crate) fn same_tape(&self, other: &Var<'t, T>) {
        assert!(std::ptr::eq(self.tape, other.tape), "vars from different tapes");
    }

    /// Appends a node with a single parent.
    pub(crate) fn unary_node(self, value: Tensor<T>, backward: impl Fn(&[T]) -> Vec<T> + 'static) -> Var<'t, T> {
        self.tape
            .push(value, vec![self.id], Box::new(move |g| vec![backward(g)]))
    }
}

/// Result of a backward sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    param_nodes: Vec<Option<usize>>,
    visited: usize,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf, or `None` when the loss does not depend on it.
    pub fn wrt(&self, var: Var<'_, T>) -> Option<&[T]> {
        self.grads.get(var.id).and_then(|g| g.as_deref())
    }

    pub fn param(&self, id: ParamId) -> Option<&[T]> {
        self.param_nodes
            .get(id.0)
            .copied()
            .flatten()
            .and_then(|node| self.grads[node].as_deref())
    }

    /// Number of interior nodes whose backward closure ran.
    pub fn visited(&self) -> usize {
        self.visited
    }
}
