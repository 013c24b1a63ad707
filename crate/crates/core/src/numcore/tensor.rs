use std::cell::{Cell, Ref, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

use super::Scalar;
use crate::error::{Error, Result};

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any backward closures.
///
/// Used for evaluation passes over large scenes, where saving attention
/// probabilities for every window would be wasted memory.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let _restore = Restore(prev);
    f()
}

pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Reverse-mode rule for one recorded operation.
///
/// `backward` receives the forward output and the gradient flowing into it,
/// and must accumulate input gradients with [`DiffTensor::accumulate_grad`].
pub trait Backward<T: Scalar> {
    fn name(&self) -> &'static str;
    fn inputs(&self) -> Vec<&DiffTensor<T>>;
    fn backward(&self, output: &[T], grad: &[T]);
}

struct Node<T: Scalar> {
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: bool,
    op: Option<Box<dyn Backward<T>>>,
}

/// Dense row-major array that participates in reverse-mode differentiation.
///
/// Cloning is cheap and shares storage; parameters are held by the model and
/// by every graph that reads them.
pub struct DiffTensor<T: Scalar = f64>(Rc<Node<T>>);

impl<T: Scalar> Clone for DiffTensor<T> {
    fn clone(&self) -> Self {
        DiffTensor(Rc::clone(&self.0))
    }
}

impl<T: Scalar> fmt::Debug for DiffTensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DiffTensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.0.op.as_ref().map(|op| op.name()))
            .finish()
    }
}

impl<T: Scalar> DiffTensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        Self::build(shape, data, false)
    }

    /// A leaf that accumulates gradient.
    pub fn param(shape: &[usize], data: Vec<T>) -> Result<Self> {
        Self::build(shape, data, true)
    }

    fn build(shape: &[usize], data: Vec<T>, requires_grad: bool) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {shape:?} needs {numel} elements, got {}", data.len()),
            ));
        }
        Ok(DiffTensor(Rc::new(Node {
            shape: shape.to_vec(),
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            op: None,
        })))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::build(shape, vec![T::zero(); n], false).expect("consistent shape")
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&v| T::of(v)).collect())
    }

    pub fn scalar(v: T) -> Self {
        Self::build(&[], vec![v], false).expect("scalar")
    }

    /// Wraps an op result. The op is only retained when gradient recording is
    /// enabled and at least one input requires gradient.
    pub fn from_op(shape: Vec<usize>, data: Vec<T>, op: impl Backward<T> + 'static) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let requires_grad = grad_enabled() && op.inputs().iter().any(|t| t.requires_grad());
        let op: Option<Box<dyn Backward<T>>> = if requires_grad {
            Some(Box::new(op))
        } else {
            None
        };
        DiffTensor(Rc::new(Node {
            shape,
            data: RefCell::new(data),
            grad: RefCell::new(None),
            requires_grad,
            op,
        }))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn len(&self) -> usize {
        self.0.data.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Leading extent of a matrix (1 for scalars).
    pub fn rows(&self) -> usize {
        match self.0.shape.len() {
            0 => 1,
            1 => 1,
            _ => self.0.shape[0],
        }
    }

    /// Trailing extent (1 for scalars).
    pub fn cols(&self) -> usize {
        self.0.shape.last().copied().unwrap_or(1)
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.0.data.borrow()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.data.borrow().clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.0.data.borrow().iter().map(|v| v.f64()).collect()
    }

    pub fn item(&self) -> T {
        self.0.data.borrow()[0]
    }

    /// Stable identity of the underlying storage.
    pub fn id(&self) -> usize {
        Rc::as_ptr(&self.0) as *const () as usize
    }

    pub fn ptr_eq(&self, other: &Self) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    /// Overwrites the values in place; the shape is fixed.
    pub fn set_data(&self, data: Vec<T>) -> Result<()> {
        let mut d = self.0.data.borrow_mut();
        if d.len() != data.len() {
            return Err(Error::dim(
                "set_data",
                format!("expected {} elements, got {}", d.len(), data.len()),
            ));
        }
        *d = data;
        Ok(())
    }

    pub fn update_data(&self, f: impl FnOnce(&mut [T])) {
        f(&mut self.0.data.borrow_mut());
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.borrow().clone()
    }

    pub fn has_grad(&self) -> bool {
        self.0.grad.borrow().is_some()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    /// Adds `g` into this tensor's gradient buffer. No-op for constants.
    pub fn accumulate_grad(&self, g: &[T]) {
        self.with_grad_mut(|buf| {
            for (b, &v) in buf.iter_mut().zip(g) {
                *b = *b + v;
            }
        });
    }

    /// Gives mutable access to the gradient buffer, allocating zeros first.
    pub fn with_grad_mut(&self, f: impl FnOnce(&mut [T])) {
        if !self.0.requires_grad {
            return;
        }
        let mut slot = self.0.grad.borrow_mut();
        let n = self.0.data.borrow().len();
        let buf = slot.get_or_insert_with(|| vec![T::zero(); n]);
        f(buf);
    }

    /// Fails with the given site name if any element is NaN or infinite.
    pub fn check_finite(&self, site: &str) -> Result<()> {
        if self.0.data.borrow().iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite {
                site: site.to_string(),
            })
        }
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(Error::dim(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.shape()),
            ));
        }
        self.check_finite("loss")?;
        if !self.requires_grad() {
            return Ok(());
        }
        let order = self.topo_order();
        self.accumulate_grad(&[T::one()]);
        for node in order.iter().rev() {
            let Some(op) = node.0.op.as_ref() else {
                continue;
            };
            let Some(grad) = node.0.grad.borrow().clone() else {
                continue;
            };
            let data = node.0.data.borrow();
            op.backward(&data, &grad);
        }
        Ok(())
    }

    /// Post-order over the recorded graph, inputs before outputs.
    fn topo_order(&self) -> Vec<DiffTensor<T>> {
        let mut order = Vec::new();
        let mut seen = HashSet::new();
        let mut stack: Vec<(DiffTensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !seen.insert(node.id()) {
                continue;
            }
            stack.push((node.clone(), true));
            if let Some(op) = node.0.op.as_ref() {
                for input in op.inputs() {
                    if input.requires_grad() && !seen.contains(&input.id()) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }
        order
    }

    /// Leaves with `requires_grad` reachable from this tensor.
    pub fn leaves(&self) -> Vec<DiffTensor<T>> {
        self.topo_order()
            .into_iter()
            .filter(|t| t.0.op.is_none())
            .collect()
    }
}
