//! Rank-3 tensors with a recorded-tape reverse-mode autograd.
//!
//! Every value flowing through the networks is a `(batch, channels, time)`
//! array of `f32`. Operations on tensors that require gradients record a
//! backward closure together with their parents; [`Tensor::backward`] walks
//! the recorded graph in reverse topological order, deposits gradients on
//! leaf tensors and then releases the graph.

use std::cell::{Cell, Ref, RefCell, RefMut};
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};

static NEXT_ID: AtomicUsize = AtomicUsize::new(0);

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` with gradient recording disabled on the current thread.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let _restore = Restore(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub batch: usize,
    pub channels: usize,
    pub time: usize,
}

impl Shape {
    pub const fn new(batch: usize, channels: usize, time: usize) -> Self {
        Self {
            batch,
            channels,
            time,
        }
    }

    pub const fn scalar() -> Self {
        Self::new(1, 1, 1)
    }

    pub fn numel(&self) -> usize {
        self.batch * self.channels * self.time
    }

    pub fn index(&self, b: usize, c: usize, t: usize) -> usize {
        (b * self.channels + c) * self.time + t
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.batch, self.channels, self.time)
    }
}

/// Inputs handed to a backward closure.
pub(crate) struct BackwardCtx<'a> {
    pub grad: &'a [f32],
    pub output: &'a [f32],
    pub parents: &'a [Tensor],
}

type BackwardFn = dyn Fn(&BackwardCtx<'_>) -> Vec<Option<Vec<f32>>>;

struct GradFn {
    parents: Vec<Tensor>,
    backward: Box<BackwardFn>,
}

struct Node {
    id: usize,
    shape: Shape,
    data: RefCell<Vec<f32>>,
    grad: RefCell<Option<Vec<f32>>>,
    requires_grad: bool,
    grad_fn: RefCell<Option<GradFn>>,
    released: Cell<bool>,
}

/// Shared handle to a tensor node. Cloning is cheap and aliases the same data.
#[derive(Clone)]
pub struct Tensor(Rc<Node>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

impl Tensor {
    fn make(shape: Shape, data: Vec<f32>, requires_grad: bool, grad_fn: Option<GradFn>) -> Self {
        assert_eq!(
            data.len(),
            shape.numel(),
            "tensor data length does not match shape {shape}"
        );
        Tensor(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            grad_fn: RefCell::new(grad_fn),
            released: Cell::new(false),
        }))
    }

    /// A constant tensor (never receives gradients).
    pub fn new(shape: Shape, data: Vec<f32>) -> Self {
        Self::make(shape, data, false, None)
    }

    /// A trainable leaf tensor.
    pub fn parameter(shape: Shape, data: Vec<f32>) -> Self {
        Self::make(shape, data, true, None)
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::new(shape, vec![0.0; shape.numel()])
    }

    pub fn full(shape: Shape, value: f32) -> Self {
        Self::new(shape, vec![value; shape.numel()])
    }

    pub fn scalar(value: f32) -> Self {
        Self::new(Shape::scalar(), vec![value])
    }

    /// Result of a differentiable operation. Records `backward` only when
    /// gradient mode is on and some parent requires gradients.
    pub(crate) fn from_op<F>(shape: Shape, data: Vec<f32>, parents: Vec<Tensor>, backward: F) -> Self
    where
        F: Fn(&BackwardCtx<'_>) -> Vec<Option<Vec<f32>>> + 'static,
    {
        let needs = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if needs {
            let grad_fn = GradFn {
                parents,
                backward: Box::new(backward),
            };
            Self::make(shape, data, true, Some(grad_fn))
        } else {
            Self::new(shape, data)
        }
    }

    pub fn id(&self) -> usize {
        self.0.id
    }

    pub fn shape(&self) -> Shape {
        self.0.shape
    }

    pub fn numel(&self) -> usize {
        self.0.shape.numel()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.grad_fn.borrow().is_none() && !self.0.released.get()
    }

    pub fn data(&self) -> Ref<'_, Vec<f32>> {
        self.0.data.borrow()
    }

    /// Mutable access to the values; used by optimizers and state loading.
    pub fn data_mut(&self) -> RefMut<'_, Vec<f32>> {
        self.0.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.0.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f32 {
        let d = self.data();
        assert_eq!(d.len(), 1, "item() on tensor of shape {}", self.shape());
        d[0]
    }

    pub fn at(&self, b: usize, c: usize, t: usize) -> f32 {
        self.data()[self.shape().index(b, c, t)]
    }

    pub fn grad(&self) -> Option<Vec<f32>> {
        self.0.grad.borrow().clone()
    }

    pub fn grad_ref(&self) -> Ref<'_, Option<Vec<f32>>> {
        self.0.grad.borrow()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    pub fn set_grad(&self, grad: Option<Vec<f32>>) {
        if let Some(g) = &grad {
            assert_eq!(g.len(), self.numel());
        }
        *self.0.grad.borrow_mut() = grad;
    }

    /// A constant copy that is cut out of the graph.
    pub fn detach(&self) -> Tensor {
        Tensor::new(self.shape(), self.to_vec())
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        if self.data().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    /// Back-propagates from this scalar, accumulating into leaf `grad`s.
    ///
    /// The recorded graph is released afterwards; a second call on the same
    /// output fails until the computation is recorded again.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Autograd(format!(
                "backward requires a scalar, got shape {}",
                self.shape()
            )));
        }
        if self.0.released.get() {
            return Err(Error::Autograd(
                "graph already released by a previous backward pass".into(),
            ));
        }
        if !self.requires_grad() {
            return Err(Error::Autograd("tensor does not require grad".into()));
        }

        let order = self.topological_order();
        let mut pending: HashMap<usize, Vec<f32>> = HashMap::new();
        pending.insert(self.id(), vec![1.0]);

        for node in order.iter().rev() {
            let Some(grad) = pending.remove(&node.id()) else {
                continue;
            };
            let grad_fn = node.0.grad_fn.borrow_mut().take();
            match grad_fn {
                None => {
                    let mut slot = node.0.grad.borrow_mut();
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&grad).for_each(|(a, g)| *a += g),
                        None => *slot = Some(grad),
                    }
                }
                Some(f) => {
                    node.0.released.set(true);
                    let output = node.0.data.borrow();
                    let ctx = BackwardCtx {
                        grad: &grad,
                        output: &output,
                        parents: &f.parents,
                    };
                    let parent_grads = (f.backward)(&ctx);
                    debug_assert_eq!(parent_grads.len(), f.parents.len());
                    for (parent, pg) in f.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !parent.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), parent.numel());
                        match pending.get_mut(&parent.id()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, g)| *a += g),
                            None => {
                                pending.insert(parent.id(), pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn topological_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited = std::collections::HashSet::new();
        // (node, children expanded?)
        let mut stack = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !visited.insert(node.id()) {
                continue;
            }
            stack.push((node.clone(), true));
            if let Some(f) = node.0.grad_fn.borrow().as_ref() {
                for p in &f.parents {
                    if p.requires_grad() && !visited.contains(&p.id()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}
