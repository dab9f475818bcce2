//! Dense f64 tensors with reverse-mode differentiation on a dynamic tape.
//!
//! Every operation records itself onto a [`Tape`]; [`Tensor::backward`]
//! replays the records in reverse to accumulate gradients into every
//! `requires_grad` leaf. Tensors are immutable once created except for
//! gradient accumulation, and a tape is confined to one thread.

mod kernels;
mod ops;

pub use kernels::{matmul_nn, matmul_nt, matmul_tn};
pub use ops::concat_cols;

use std::cell::RefCell;
use std::rc::Rc;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("contract violation: {0}")]
    Contract(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Backward rules. Each variant stores the ids of its inputs; saved
/// forward values are re-read from the tape during the reverse sweep.
#[derive(Debug, Clone)]
pub(crate) enum Op {
    Matmul { a: usize, b: usize },
    Transpose { x: usize },
    Add { a: usize, b: usize },
    Mul { a: usize, b: usize },
    AddBias { x: usize, bias: usize },
    ScaleRows { x: usize, s: usize },
    ScaleConst { x: usize, c: f64 },
    Scale { x: usize, s: usize },
    Recip { x: usize },
    Sqrt { x: usize },
    Silu { x: usize },
    LayerNorm { x: usize, gain: usize, bias: usize, eps: f64 },
    Softmax { x: usize },
    CausalMask { x: usize },
    CrossEntropyMean { logits: usize, targets: Vec<usize> },
    Sum { x: usize },
    Mean { x: usize },
    Embedding { table: usize, ids: Vec<usize> },
    Dot { a: usize, b: usize },
    Gather { x: usize, src: Vec<usize> },
    GatherRows { x: usize, rows: Vec<usize> },
    ScatterAddRows { x: usize, rows: Vec<usize> },
    SliceCols { x: usize, start: usize },
    ConcatCols { parts: Vec<usize> },
}

pub(crate) struct Node {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub grad: Option<Vec<f64>>,
    pub requires_grad: bool,
    pub op: Option<Op>,
}

pub(crate) struct TapeInner {
    pub nodes: Vec<Node>,
}

/// Recording context for one forward/backward pass.
#[derive(Clone)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            inner: Rc::new(RefCell::new(TapeInner { nodes: Vec::new() })),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn push(&self, node: Node) -> Tensor {
        let mut inner = self.inner.borrow_mut();
        debug_assert_eq!(
            node.shape.iter().product::<usize>(),
            node.data.len(),
            "shape/data length mismatch"
        );
        let id = inner.nodes.len();
        let shape = node.shape.clone();
        inner.nodes.push(node);
        Tensor {
            tape: self.clone(),
            id,
            shape,
        }
    }

    /// Record a leaf tensor (input or parameter).
    pub fn leaf(&self, data: Vec<f64>, shape: &[usize], requires_grad: bool) -> Result<Tensor> {
        if shape.iter().product::<usize>() != data.len() {
            return Err(TensorError::Dimension(format!(
                "shape {:?} does not describe {} scalars",
                shape,
                data.len()
            )));
        }
        Ok(self.push(Node {
            shape: shape.to_vec(),
            data,
            grad: None,
            requires_grad,
            op: None,
        }))
    }

    pub fn scalar(&self, v: f64) -> Tensor {
        self.leaf(vec![v], &[1], false).expect("scalar leaf")
    }

    /// Reverse sweep from `loss`, accumulating into every requires_grad node.
    /// Repeated calls without clearing gradients accumulate.
    pub fn backward(&self, loss: &Tensor) -> Result<()> {
        if loss.len() != 1 {
            return Err(TensorError::Contract(
                "backward requires a scalar loss".into(),
            ));
        }
        let mut inner = self.inner.borrow_mut();
        let n = inner.nodes.len();
        // Local seed buffer: upstream gradients for this sweep only, so that
        // accumulated grads from earlier sweeps do not feed this one.
        let mut up: Vec<Option<Vec<f64>>> = (0..n).map(|_| None).collect();
        up[loss.id] = Some(vec![1.0]);
        for id in (0..n).rev() {
            let Some(g) = up[id].take() else { continue };
            if inner.nodes[id].requires_grad {
                let node = &mut inner.nodes[id];
                let grad = node.grad.get_or_insert_with(|| vec![0.0; node.data.len()]);
                for (acc, gi) in grad.iter_mut().zip(&g) {
                    *acc += gi;
                }
            }
            if let Some(op) = inner.nodes[id].op.clone() {
                ops::backward_step(&mut inner, &mut up, id, &op, &g);
            }
        }
        Ok(())
    }

    pub(crate) fn with_node<R>(&self, id: usize, f: impl FnOnce(&Node) -> R) -> R {
        f(&self.inner.borrow().nodes[id])
    }
}

/// Handle to one tape node. Cloning is cheap; the data lives on the tape.
#[derive(Clone)]
pub struct Tensor {
    tape: Tape,
    id: usize,
    shape: Vec<usize>,
}

impl Tensor {
    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn data(&self) -> Vec<f64> {
        self.tape.with_node(self.id, |n| n.data.clone())
    }

    /// Scalar value of a one-element tensor.
    pub fn value(&self) -> f64 {
        assert_eq!(self.len(), 1, "value() requires a one-element tensor");
        self.tape.with_node(self.id, |n| n.data[0])
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.tape.with_node(self.id, |n| n.grad.clone())
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.with_node(self.id, |n| n.requires_grad)
    }

    pub fn backward(&self) -> Result<()> {
        self.tape.backward(self)
    }

    pub fn has_nonfinite(&self) -> bool {
        self.tape
            .with_node(self.id, |n| n.data.iter().any(|v| !v.is_finite()))
    }

    pub(crate) fn rows_cols(&self) -> (usize, usize) {
        match self.shape.len() {
            1 => (self.shape[0], 1),
            2 => (self.shape[0], self.shape[1]),
            r => panic!("rank-{r} tensor where rank 1 or 2 expected"),
        }
    }
}
