//! Dense row-major tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is a cheap handle (`Arc`) to an immutable node holding its
//! values, an optional gradient slot and, for results of differentiable
//! operations, the operation record that links it to its parents. Leaves
//! created with [`Tensor::param`] collect gradients when
//! [`Tensor::backward`] is called on a scalar that depends on them; repeated
//! backward passes accumulate into those slots until they are cleared.
//!
//! Only first-order derivatives are supported. All arithmetic is `f64`.

mod conv;
mod elementwise;
mod gemm;
mod linalg;
pub mod mac;
mod shape;

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

pub(crate) use gemm::gemm;
pub use elementwise::ElementwiseOp;
pub use shape::GATHER_ZERO;

/// Handle to a tensor node. Cloning shares the node.
#[derive(Clone)]
pub struct Tensor(Arc<Node>);

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f64>>>,
    op: Option<Op>,
}

/// Backward-graph record: operation tag plus everything its vector-Jacobian
/// product needs.
pub(crate) enum Op {
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Div(Tensor, Tensor),
    /// `b` is broadcast over the leading axes of `a` (its shape is a suffix).
    AddBroadcast(Tensor, Tensor),
    MulBroadcast(Tensor, Tensor),
    AddScalar(Tensor),
    MulScalar(Tensor, f64),
    Neg(Tensor),
    Exp(Tensor),
    LeakyRelu(Tensor, f64),
    Clamp(Tensor, f64, f64),
    Sum(Tensor),
    Mean(Tensor),
    MatMul(linalg::MatMulRecord),
    Softmax(Tensor),
    LayerNorm(linalg::LayerNormRecord),
    Conv3d(conv::Conv3dRecord),
    Reshape(Tensor),
    Permute(Tensor, Vec<usize>),
    Narrow(Tensor, usize, usize),
    Concat(Vec<Tensor>, usize),
    Gather(Tensor, Arc<Vec<usize>>),
    Custom(Vec<Tensor>, Box<dyn CustomBackward>),
}

impl Op {
    fn tag(&self) -> &'static str {
        match self {
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::AddBroadcast(..) => "add_broadcast",
            Op::MulBroadcast(..) => "mul_broadcast",
            Op::AddScalar(..) => "add_scalar",
            Op::MulScalar(..) => "mul_scalar",
            Op::Neg(..) => "neg",
            Op::Exp(..) => "exp",
            Op::LeakyRelu(..) => "leaky_relu",
            Op::Clamp(..) => "clamp",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::MatMul(..) => "matmul",
            Op::Softmax(..) => "softmax",
            Op::LayerNorm(..) => "layer_norm",
            Op::Conv3d(..) => "conv3d",
            Op::Reshape(..) => "reshape",
            Op::Permute(..) => "permute",
            Op::Narrow(..) => "narrow",
            Op::Concat(..) => "concat",
            Op::Gather(..) => "gather",
            Op::Custom(_, b) => b.name(),
        }
    }

    fn parents(&self) -> Vec<&Tensor> {
        match self {
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::Div(a, b)
            | Op::AddBroadcast(a, b)
            | Op::MulBroadcast(a, b) => vec![a, b],
            Op::AddScalar(a)
            | Op::MulScalar(a, _)
            | Op::Neg(a)
            | Op::Exp(a)
            | Op::LeakyRelu(a, _)
            | Op::Clamp(a, _, _)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::Softmax(a)
            | Op::Reshape(a)
            | Op::Permute(a, _)
            | Op::Narrow(a, _, _)
            | Op::Gather(a, _) => vec![a],
            Op::MatMul(r) => vec![&r.a, &r.b],
            Op::LayerNorm(r) => vec![&r.input],
            Op::Conv3d(r) => {
                let mut v = vec![&r.input, &r.weight];
                if let Some(b) = &r.bias {
                    v.push(b);
                }
                v
            }
            Op::Concat(parts, _) | Op::Custom(parts, _) => parts.iter().collect(),
        }
    }

    /// Gradients for each parent (same order as [`Op::parents`]), given the
    /// output node and the gradient flowing into it.
    fn vjp(&self, out: &Node, g: &[f64]) -> Vec<Vec<f64>> {
        match self {
            Op::Add(..) => vec![g.to_vec(), g.to_vec()],
            Op::Sub(..) => vec![g.to_vec(), g.iter().map(|v| -v).collect()],
            Op::Mul(a, b) => vec![
                zip_map(g, b.data(), |g, b| g * b),
                zip_map(g, a.data(), |g, a| g * a),
            ],
            Op::Div(a, b) => {
                let ga = zip_map(g, b.data(), |g, b| g / b);
                let gb = g
                    .iter()
                    .zip(a.data())
                    .zip(b.data())
                    .map(|((g, a), b)| -g * a / (b * b))
                    .collect();
                vec![ga, gb]
            }
            Op::AddBroadcast(_, b) => {
                let n = b.numel();
                let mut gb = vec![0.0; n];
                for chunk in g.chunks_exact(n) {
                    for (acc, v) in gb.iter_mut().zip(chunk) {
                        *acc += v;
                    }
                }
                vec![g.to_vec(), gb]
            }
            Op::MulBroadcast(a, b) => {
                let n = b.numel();
                let bd = b.data();
                let mut ga = vec![0.0; g.len()];
                let mut gb = vec![0.0; n];
                for ((gc, ac), gac) in g
                    .chunks_exact(n)
                    .zip(a.data().chunks_exact(n))
                    .zip(ga.chunks_exact_mut(n))
                {
                    for i in 0..n {
                        gac[i] = gc[i] * bd[i];
                        gb[i] += gc[i] * ac[i];
                    }
                }
                vec![ga, gb]
            }
            Op::AddScalar(_) => vec![g.to_vec()],
            Op::MulScalar(_, s) => vec![g.iter().map(|v| v * s).collect()],
            Op::Neg(_) => vec![g.iter().map(|v| -v).collect()],
            Op::Exp(_) => vec![zip_map(g, &out.data, |g, y| g * y)],
            Op::LeakyRelu(a, slope) => vec![zip_map(g, a.data(), |g, x| {
                if x > 0.0 {
                    g
                } else {
                    g * slope
                }
            })],
            Op::Clamp(a, lo, hi) => vec![zip_map(g, a.data(), |g, x| {
                if x < *lo || x > *hi {
                    0.0
                } else {
                    g
                }
            })],
            Op::Sum(a) => vec![vec![g[0]; a.numel()]],
            Op::Mean(a) => {
                let n = a.numel();
                vec![vec![g[0] / n as f64; n]]
            }
            Op::MatMul(r) => r.vjp(g),
            Op::Softmax(_) => vec![linalg::softmax_vjp(&out.data, g, last_dim(&out.shape))],
            Op::LayerNorm(r) => vec![r.vjp(g)],
            Op::Conv3d(r) => r.vjp(g),
            Op::Reshape(_) => vec![g.to_vec()],
            Op::Permute(a, perm) => vec![shape::permute_grad(a.shape(), perm, g)],
            Op::Narrow(a, axis, start) => {
                vec![shape::narrow_grad(a.shape(), *axis, *start, &out.shape, g)]
            }
            Op::Concat(parts, axis) => shape::concat_grad(parts, *axis, g),
            Op::Gather(a, index) => vec![shape::gather_grad(a.numel(), index, g)],
            Op::Custom(parents, b) => b.vjp(parents, g),
        }
    }
}

/// Extension point for differentiable operations defined outside this module.
pub trait CustomBackward: Send + Sync {
    fn name(&self) -> &'static str;

    /// One gradient buffer per parent, each shaped like that parent.
    fn vjp(&self, parents: &[Tensor], grad_out: &[f64]) -> Vec<Vec<f64>>;
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

fn last_dim(shape: &[usize]) -> usize {
    shape.last().copied().unwrap_or(1)
}

impl Tensor {
    fn make(shape: Vec<usize>, data: Vec<f64>, requires_grad: bool, op: Option<Op>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor(Arc::new(Node {
            shape,
            data,
            requires_grad,
            grad: Mutex::new(None),
            op,
        }))
    }

    /// Constant (non-differentiable) tensor.
    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self::make(shape.to_vec(), data, false, None))
    }

    /// Leaf that accumulates gradients.
    pub fn param(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self::make(shape.to_vec(), data, true, None))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Self::make(shape.to_vec(), vec![0.0; n], false, None)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self::make(shape.to_vec(), vec![value; n], false, None)
    }

    pub fn ones_like(&self) -> Self {
        Self::full(self.shape(), 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Self::make(vec![1], vec![value], false, None)
    }

    /// Result of a differentiable op; the record is dropped when no parent
    /// needs gradients.
    pub(crate) fn from_op(shape: Vec<usize>, data: Vec<f64>, op: Op) -> Self {
        let requires_grad = op.parents().iter().any(|p| p.requires_grad());
        let op = requires_grad.then_some(op);
        Self::make(shape, data, requires_grad, op)
    }

    /// Wraps an externally computed result with a [`CustomBackward`] rule.
    pub fn from_custom(
        shape: &[usize],
        data: Vec<f64>,
        parents: Vec<Tensor>,
        backward: Box<dyn CustomBackward>,
    ) -> Result<Self> {
        check_shape(shape, data.len())?;
        Ok(Self::from_op(shape.to_vec(), data, Op::Custom(parents, backward)))
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    /// Tag of the operation that produced this tensor, if it is tracked.
    pub fn op_tag(&self) -> Option<&'static str> {
        self.0.op.as_ref().map(Op::tag)
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> f64 {
        self.0.data[0]
    }

    /// Same values, no graph history.
    pub fn detach(&self) -> Tensor {
        Self::make(self.0.shape.clone(), self.0.data.clone(), false, None)
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.lock().expect("grad lock poisoned") = None;
    }

    pub fn ptr_eq(&self, other: &Tensor) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    fn key(&self) -> usize {
        Arc::as_ptr(&self.0) as usize
    }

    /// Reverse-mode sweep from a scalar. Gradients of leaves created with
    /// [`Tensor::param`] are accumulated into their slots; intermediate
    /// gradients live only for the duration of the call.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        let order = self.topo_order();
        let mut grads: HashMap<usize, Vec<f64>> = HashMap::new();
        grads.insert(self.key(), vec![1.0]);

        for node in order.iter().rev() {
            let Some(g) = grads.remove(&node.key()) else {
                continue;
            };
            match &node.0.op {
                None => {
                    let mut slot = node.0.grad.lock().expect("grad lock poisoned");
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, v)| *a += v),
                        None => *slot = Some(g),
                    }
                }
                Some(op) => {
                    let parents = op.parents();
                    let pgrads = op.vjp(&node.0, &g);
                    debug_assert_eq!(parents.len(), pgrads.len());
                    for (p, pg) in parents.into_iter().zip(pgrads) {
                        if !p.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), p.numel(), "vjp of {}", op.tag());
                        match grads.get_mut(&p.key()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, v)| *a += v),
                            None => {
                                grads.insert(p.key(), pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Post-order over the differentiable subgraph; each node appears once.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut visited = std::collections::HashSet::new();
        let mut order = Vec::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.key()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(op) = &t.0.op {
                for p in op.parents() {
                    if p.requires_grad() && !visited.contains(&p.key()) {
                        stack.push((p.clone(), false));
                    }
                }
            }
        }
        order
    }
}

fn check_shape(shape: &[usize], len: usize) -> Result<()> {
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::dim(format!("zero extent in shape {shape:?}")));
    }
    let n: usize = shape.iter().product();
    if n != len {
        return Err(Error::dim(format!(
            "shape {shape:?} holds {n} values, got {len}"
        )));
    }
    Ok(())
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("op", &self.op_tag())
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}
