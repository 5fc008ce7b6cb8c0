//! Minimal reverse-mode automatic differentiation on a recorded tape.
//!
//! Values are dense row-major f64 tensors of rank 1 or 2. Every operation
//! appends a node to the [`Tape`]; [`Tensor::backward`] walks the record in
//! reverse and accumulates vector-Jacobian products into a [`GradStore`].
//!
//! A tape is single-writer: forward and backward on one tape are not
//! reentrant. Independent tapes may run on separate threads.

mod ops;

pub mod adam;
pub mod checkpoint;
pub mod fdcheck;
pub mod nn;
pub mod params;

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

pub use ops::Activation;

/// Plain (non-tape) Gram-Schmidt 6D-to-matrix forward, shared with
/// kinematics so both paths agree bit for bit. Output is row-major.
pub fn rot6d_forward_raw(r: &[f64]) -> Result<[f64; 9], String> {
    ops::rot6d_forward(r)
}

/// Errors raised while building or differentiating a tape.
#[derive(Debug, thiserror::Error, PartialEq)]
pub enum DiffError {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("backward requires a scalar loss node, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("empty point cloud")]
    EmptyCloud,
    #[error("degenerate rotation input: {0}")]
    DegenerateRotation(String),
}

pub(crate) struct Node {
    pub op: ops::Op,
    pub value: Vec<f64>,
    pub shape: [usize; 2],
    pub requires_grad: bool,
}

/// Recorded computation graph. Nodes are appended in topological order.
#[derive(Clone)]
pub struct Tape {
    inner: Rc<RefCell<Vec<Node>>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            inner: Rc::new(RefCell::new(Vec::new())),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, node: Node) -> Tensor {
        let shape = node.shape;
        let mut nodes = self.inner.borrow_mut();
        nodes.push(node);
        Tensor {
            tape: self.clone(),
            id: nodes.len() - 1,
            shape,
        }
    }

    /// Record a leaf that participates in gradient computation.
    pub fn leaf(&self, data: &[f64], shape: &[usize]) -> Tensor {
        self.leaf_node(data, shape, true)
    }

    /// Record a constant: gradients are neither computed for nor through it
    /// beyond what the chain rule requires.
    pub fn constant(&self, data: &[f64], shape: &[usize]) -> Tensor {
        self.leaf_node(data, shape, false)
    }

    pub fn scalar(&self, v: f64) -> Tensor {
        self.constant(&[v], &[1])
    }

    fn leaf_node(&self, data: &[f64], shape: &[usize], requires_grad: bool) -> Tensor {
        let shape = norm_shape(shape);
        assert_eq!(
            data.len(),
            shape[0] * shape[1],
            "leaf data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        self.push(Node {
            op: ops::Op::Leaf,
            value: data.to_vec(),
            shape,
            requires_grad,
        })
    }
}

/// Normalized internal shape: rank-1 `[n]` is stored as `[1, n]`.
pub(crate) fn norm_shape(shape: &[usize]) -> [usize; 2] {
    match shape {
        [n] => [1, *n],
        [r, c] => [*r, *c],
        other => panic!("only rank-1/rank-2 tensors are supported, got {other:?}"),
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone)]
pub struct Tensor {
    tape: Tape,
    id: usize,
    shape: [usize; 2],
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor(id={}, shape={:?})", self.id, self.shape)
    }
}

impl Tensor {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn len(&self) -> usize {
        self.shape[0] * self.shape[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn shape(&self) -> [usize; 2] {
        self.shape
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    /// Copy of the forward value.
    pub fn value(&self) -> Vec<f64> {
        self.tape.inner.borrow()[self.id].value.clone()
    }

    /// Forward value of a `[1,1]` tensor.
    pub fn item(&self) -> f64 {
        let nodes = self.tape.inner.borrow();
        let node = &nodes[self.id];
        assert_eq!(node.value.len(), 1, "item() on non-scalar {:?}", self.shape);
        node.value[0]
    }

    /// Reverse pass from this scalar node. Returns gradients for every node
    /// that (transitively) requires them.
    pub fn backward(&self) -> Result<GradStore, DiffError> {
        if self.len() != 1 {
            return Err(DiffError::NonScalarLoss(self.shape.to_vec()));
        }
        let nodes = self.tape.inner.borrow();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[self.id] = Some(vec![1.0]);
        for id in (0..=self.id).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            ops::backward_step(&nodes, id, &grad, &mut grads);
            grads[id] = Some(grad);
        }
        Ok(GradStore { grads })
    }
}

/// Gradients produced by one backward pass, indexed by node id.
pub struct GradStore {
    grads: Vec<Option<Vec<f64>>>,
}

impl GradStore {
    /// Gradient of the loss with respect to `t`, zero if the node is
    /// unreachable from the loss.
    pub fn get(&self, t: &Tensor) -> Vec<f64> {
        match &self.grads[t.id] {
            Some(g) => g.clone(),
            None => vec![0.0; t.len()],
        }
    }
}
