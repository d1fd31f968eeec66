//! Minimal reverse-mode autodiff on dynamic-rank f64 arrays.
//!
//! A `Tensor` is a shared handle to a graph node. Leaves are either constants
//! or parameters; interior nodes keep their parents alive and carry a closure
//! that maps the incoming gradient to per-parent gradients. Graphs are built
//! eagerly, values are computed at construction time, and `backward` walks the
//! graph once in reverse topological order.
//!
//! f64 is deliberate: the test suite checks every backward pass against
//! central finite differences, and f32 does not leave enough headroom between
//! truncation error and roundoff at usable step sizes.

mod conv;
mod ops;
mod resample;

pub use conv::conv2d;
pub use ops::concat;

use ndarray::ArrayD;
use std::cell::{Ref, RefCell};
use std::collections::HashSet;
use std::rc::Rc;

pub type Arr = ArrayD<f64>;

/// Force row-major memory order. `dot` can hand back column-major arrays for
/// degenerate operand shapes, and reshapes assume row-major.
pub(crate) fn to_standard<D: ndarray::Dimension>(a: ndarray::Array<f64, D>) -> ndarray::Array<f64, D> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

/// Maps the gradient flowing into a node to gradients for each parent,
/// in parent order. `None` entries mean "no gradient for this parent".
pub(crate) type GradFn = Box<dyn Fn(&Arr, &[Tensor]) -> Vec<Option<Arr>>>;

pub(crate) struct Node {
    id: u64,
    value: RefCell<Arr>,
    grad: RefCell<Option<Arr>>,
    parents: Vec<Tensor>,
    grad_fn: Option<GradFn>,
    requires_grad: bool,
}

fn next_id() -> u64 {
    use std::cell::Cell;
    thread_local! {
        static COUNTER: Cell<u64> = const { Cell::new(0) };
    }
    COUNTER.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Long chains of ops would otherwise drop recursively through the parent
/// links and can blow the stack, so each node drains its parents into an
/// explicit worklist before they go away.
impl Drop for Node {
    fn drop(&mut self) {
        if self.parents.is_empty() {
            return;
        }
        let mut stack: Vec<Tensor> = self.parents.drain(..).collect();
        while let Some(t) = stack.pop() {
            if let Some(mut node) = Rc::into_inner(t.0) {
                stack.extend(node.parents.drain(..));
            }
        }
    }
}

#[derive(Clone)]
pub struct Tensor(pub(crate) Rc<Node>);

impl Tensor {
    /// Leaf that does not take gradients.
    pub fn constant(value: Arr) -> Tensor {
        Tensor(Rc::new(Node {
            id: next_id(),
            value: RefCell::new(value),
            grad: RefCell::new(None),
            parents: Vec::new(),
            grad_fn: None,
            requires_grad: false,
        }))
    }

    /// Leaf that accumulates gradients across backward calls until
    /// `zero_grad`. Parameters are shared into every graph that uses them.
    pub fn parameter(value: Arr) -> Tensor {
        Tensor(Rc::new(Node {
            id: next_id(),
            value: RefCell::new(value),
            grad: RefCell::new(None),
            parents: Vec::new(),
            grad_fn: None,
            requires_grad: true,
        }))
    }

    pub(crate) fn from_op(value: Arr, parents: Vec<Tensor>, grad_fn: GradFn) -> Tensor {
        // If nothing upstream wants gradients the node can forget its
        // ancestry entirely; this keeps inference graphs flat.
        if !parents.iter().any(|p| p.0.requires_grad) {
            return Tensor::constant(value);
        }
        Tensor(Rc::new(Node {
            id: next_id(),
            value: RefCell::new(value),
            grad: RefCell::new(None),
            parents,
            grad_fn: Some(grad_fn),
            requires_grad: true,
        }))
    }

    pub fn value(&self) -> Ref<'_, Arr> {
        self.0.value.borrow()
    }

    pub fn to_array(&self) -> Arr {
        self.0.value.borrow().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.0.value.borrow().shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// True for leaves created with `constant` or `detach`.
    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.is_none()
    }

    /// Scalar value of a single-element tensor.
    pub fn item(&self) -> f64 {
        let v = self.0.value.borrow();
        assert_eq!(v.len(), 1, "item() on tensor with {} elements", v.len());
        *v.iter().next().unwrap()
    }

    /// Overwrite the stored value in place. Only meaningful on leaves; the
    /// optimizer and the finite-difference tests use this to perturb
    /// parameters between forward passes.
    pub fn set_value(&self, value: Arr) {
        assert_eq!(
            self.0.value.borrow().shape(),
            value.shape(),
            "set_value must preserve shape"
        );
        *self.0.value.borrow_mut() = value;
    }

    pub fn grad(&self) -> Option<Arr> {
        self.0.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Cut the graph: returns a constant leaf holding a copy of the current
    /// value. Gradients never flow through the result.
    pub fn detach(&self) -> Tensor {
        Tensor::constant(self.to_array())
    }

    fn accumulate_grad(&self, g: Arr) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => *acc += &g,
            None => *slot = Some(g),
        }
    }

    /// Reverse-mode sweep from a scalar root. Gradients land in the `grad`
    /// slot of every reachable node that requires them; interior nodes are
    /// cleared again on the way out so only leaves keep theirs.
    pub fn backward(&self) {
        {
            let v = self.0.value.borrow();
            assert_eq!(v.len(), 1, "backward() needs a scalar root, got shape {:?}", v.shape());
        }
        if !self.0.requires_grad {
            return;
        }

        // Iterative post-order DFS; recursion would overflow on deep graphs.
        let mut order: Vec<Tensor> = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.0.id) {
                continue;
            }
            stack.push((t.clone(), true));
            for p in &t.0.parents {
                if p.0.requires_grad && !visited.contains(&p.0.id) {
                    stack.push((p.clone(), false));
                }
            }
        }

        self.accumulate_grad(Arr::ones(self.0.value.borrow().raw_dim()));

        for t in order.iter().rev() {
            let Some(grad_fn) = t.0.grad_fn.as_ref() else {
                continue;
            };
            // Interior gradients are consumed here; taking them frees the
            // buffer and leaves parameter grads as the only survivors.
            let g = t.0.grad.borrow_mut().take();
            let Some(g) = g else { continue };
            let parent_grads = grad_fn(&g, &t.0.parents);
            debug_assert_eq!(parent_grads.len(), t.0.parents.len());
            for (p, pg) in t.0.parents.iter().zip(parent_grads) {
                if let (true, Some(pg)) = (p.0.requires_grad, pg) {
                    debug_assert_eq!(
                        pg.shape(),
                        p.0.value.borrow().shape(),
                        "gradient shape mismatch"
                    );
                    p.accumulate_grad(pg);
                }
            }
        }
    }
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.0.id)
            .field("shape", &self.0.value.borrow().shape())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}
