//! Minimal reverse-mode differentiation over small dense networks.
//!
//! A [`Tape`] is an append-only list of vector-valued nodes in topological
//! order (every node's inputs precede it by construction). The primitive set
//! is fixed to what the score model and the reconstruction-error estimator
//! need: affine maps, tanh / softplus / relu nonlinearities, elementwise
//! scale and add, sum of squares, and mean of scalars.
//!
//! One backward pass accumulates gradients with respect to both bound leaf
//! values and registered layer parameters; the caller reads whichever buffers
//! it wants. Parameter buffers are borrowed read-only, so a frozen network
//! can serve many tapes concurrently.
//!
//! Tapes may be re-run: `forward` recomputes every node from the current leaf
//! bindings and `backward` starts from freshly zeroed adjoints, so two passes
//! over identical inputs produce bitwise-identical gradients.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::linalg;

/// A dense layer `y = W x + b`, weight stored row-major (`out_dim` rows).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl DenseLayer {
    pub fn new(out_dim: usize, in_dim: usize, weight: Vec<f64>, bias: Vec<f64>) -> Result<Self, TapeError> {
        if weight.len() != out_dim * in_dim || bias.len() != out_dim {
            return Err(TapeError::ShapeMismatch {
                expected: out_dim * in_dim,
                got: weight.len(),
            });
        }
        if !linalg::all_finite(&weight) || !linalg::all_finite(&bias) {
            return Err(TapeError::NonFiniteParameter);
        }
        Ok(DenseLayer { weight, bias, in_dim, out_dim })
    }

    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        DenseLayer {
            weight: vec![0.0; out_dim * in_dim],
            bias: vec![0.0; out_dim],
            in_dim,
            out_dim,
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut l = Self::zeros(dim, dim);
        for i in 0..dim {
            l.weight[i * dim + i] = 1.0;
        }
        l
    }

    /// `W x + b` without a tape.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.in_dim);
        let mut y = self.bias.clone();
        for (r, yr) in y.iter_mut().enumerate() {
            let row = &self.weight[r * self.in_dim..(r + 1) * self.in_dim];
            *yr += linalg::dot(row, x);
        }
        y
    }

    /// `W^T v` without a tape (input-side pullback).
    pub fn apply_transpose(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.out_dim);
        let mut x = vec![0.0; self.in_dim];
        for (r, vr) in v.iter().enumerate() {
            let row = &self.weight[r * self.in_dim..(r + 1) * self.in_dim];
            linalg::axpy(&mut x, *vr, row);
        }
        x
    }
}

/// Accumulated parameter gradients for one registered layer.
#[derive(Debug, Clone)]
pub struct LayerGrad {
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Affine { param: usize, input: NodeId },
    Tanh { input: NodeId },
    Softplus { input: NodeId },
    Relu { input: NodeId },
    Scale { input: NodeId, factor: f64 },
    Add { a: NodeId, b: NodeId },
    SumSquares { input: NodeId },
    Mean { inputs: Vec<NodeId> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TapeError {
    ShapeMismatch { expected: usize, got: usize },
    RootNotScalar { dim: usize },
    NotALeaf,
    EmptyMean,
    NonFiniteParameter,
}

impl fmt::Display for TapeError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TapeError::ShapeMismatch { expected, got } => {
                write!(f, "shape mismatch: expected dimension {expected}, got {got}")
            }
            TapeError::RootNotScalar { dim } => {
                write!(f, "backward root must be scalar, has dimension {dim}")
            }
            TapeError::NotALeaf => write!(f, "values can only be bound to leaf nodes"),
            TapeError::EmptyMean => write!(f, "mean requires at least one input"),
            TapeError::NonFiniteParameter => write!(f, "layer parameters must be finite"),
        }
    }
}

/// Single-use, single-threaded differentiation tape borrowing frozen layers.
pub struct Tape<'p> {
    ops: Vec<Op>,
    dims: Vec<usize>,
    vals: Vec<Vec<f64>>,
    adjs: Vec<Vec<f64>>,
    params: Vec<&'p DenseLayer>,
    param_grads: Vec<LayerGrad>,
}

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Tape {
            ops: Vec::new(),
            dims: Vec::new(),
            vals: Vec::new(),
            adjs: Vec::new(),
            params: Vec::new(),
            param_grads: Vec::new(),
        }
    }

    fn push(&mut self, op: Op, dim: usize) -> NodeId {
        let id = NodeId(self.ops.len());
        self.ops.push(op);
        self.dims.push(dim);
        self.vals.push(vec![0.0; dim]);
        self.adjs.push(vec![0.0; dim]);
        id
    }

    /// A rebindable input node of the given dimension.
    pub fn leaf(&mut self, dim: usize) -> NodeId {
        self.push(Op::Leaf, dim)
    }

    /// A leaf pre-bound to fixed values.
    pub fn constant(&mut self, values: &[f64]) -> NodeId {
        let id = self.push(Op::Leaf, values.len());
        self.vals[id.0].copy_from_slice(values);
        id
    }

    pub fn register(&mut self, layer: &'p DenseLayer) -> ParamId {
        let id = ParamId(self.params.len());
        self.params.push(layer);
        self.param_grads.push(LayerGrad {
            weight: vec![0.0; layer.weight.len()],
            bias: vec![0.0; layer.bias.len()],
        });
        id
    }

    pub fn affine(&mut self, param: ParamId, input: NodeId) -> Result<NodeId, TapeError> {
        let layer = self.params[param.0];
        if self.dims[input.0] != layer.in_dim {
            return Err(TapeError::ShapeMismatch {
                expected: layer.in_dim,
                got: self.dims[input.0],
            });
        }
        Ok(self.push(Op::Affine { param: param.0, input }, layer.out_dim))
    }

    pub fn tanh(&mut self, input: NodeId) -> NodeId {
        let dim = self.dims[input.0];
        self.push(Op::Tanh { input }, dim)
    }

    pub fn softplus(&mut self, input: NodeId) -> NodeId {
        let dim = self.dims[input.0];
        self.push(Op::Softplus { input }, dim)
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let dim = self.dims[input.0];
        self.push(Op::Relu { input }, dim)
    }

    pub fn scale(&mut self, input: NodeId, factor: f64) -> NodeId {
        let dim = self.dims[input.0];
        self.push(Op::Scale { input, factor }, dim)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, TapeError> {
        if self.dims[a.0] != self.dims[b.0] {
            return Err(TapeError::ShapeMismatch {
                expected: self.dims[a.0],
                got: self.dims[b.0],
            });
        }
        let dim = self.dims[a.0];
        Ok(self.push(Op::Add { a, b }, dim))
    }

    pub fn sum_squares(&mut self, input: NodeId) -> NodeId {
        self.push(Op::SumSquares { input }, 1)
    }

    pub fn mean(&mut self, inputs: &[NodeId]) -> Result<NodeId, TapeError> {
        if inputs.is_empty() {
            return Err(TapeError::EmptyMean);
        }
        for id in inputs {
            if self.dims[id.0] != 1 {
                return Err(TapeError::RootNotScalar { dim: self.dims[id.0] });
            }
        }
        Ok(self.push(Op::Mean { inputs: inputs.to_vec() }, 1))
    }

    /// Bind values to a leaf. Rejects non-leaves and wrong dimensions.
    pub fn set(&mut self, leaf: NodeId, values: &[f64]) -> Result<(), TapeError> {
        if !matches!(self.ops[leaf.0], Op::Leaf) {
            return Err(TapeError::NotALeaf);
        }
        if values.len() != self.dims[leaf.0] {
            return Err(TapeError::ShapeMismatch {
                expected: self.dims[leaf.0],
                got: values.len(),
            });
        }
        self.vals[leaf.0].copy_from_slice(values);
        Ok(())
    }

    pub fn dim(&self, node: NodeId) -> usize {
        self.dims[node.0]
    }

    /// Recompute every node from the current leaf bindings, in tape order.
    pub fn forward(&mut self) {
        for i in 0..self.ops.len() {
            // Split so the output buffer can be written while inputs are read.
            let (done, rest) = self.vals.split_at_mut(i);
            let out = &mut rest[0];
            match &self.ops[i] {
                Op::Leaf => {}
                Op::Affine { param, input } => {
                    let layer = self.params[*param];
                    let x = &done[input.0];
                    out.copy_from_slice(&layer.bias);
                    for (r, yr) in out.iter_mut().enumerate() {
                        let row = &layer.weight[r * layer.in_dim..(r + 1) * layer.in_dim];
                        *yr += linalg::dot(row, x);
                    }
                }
                Op::Tanh { input } => {
                    for (o, x) in out.iter_mut().zip(&done[input.0]) {
                        *o = libm::tanh(*x);
                    }
                }
                Op::Softplus { input } => {
                    for (o, x) in out.iter_mut().zip(&done[input.0]) {
                        *o = softplus(*x);
                    }
                }
                Op::Relu { input } => {
                    for (o, x) in out.iter_mut().zip(&done[input.0]) {
                        *o = if *x > 0.0 { *x } else { 0.0 };
                    }
                }
                Op::Scale { input, factor } => {
                    for (o, x) in out.iter_mut().zip(&done[input.0]) {
                        *o = factor * x;
                    }
                }
                Op::Add { a, b } => {
                    for ((o, x), y) in out.iter_mut().zip(&done[a.0]).zip(&done[b.0]) {
                        *o = x + y;
                    }
                }
                Op::SumSquares { input } => {
                    out[0] = linalg::norm_sq(&done[input.0]);
                }
                Op::Mean { inputs } => {
                    let mut acc = 0.0;
                    for id in inputs {
                        acc += done[id.0][0];
                    }
                    out[0] = acc / inputs.len() as f64;
                }
            }
        }
    }

    pub fn value(&self, node: NodeId) -> &[f64] {
        &self.vals[node.0]
    }

    /// Reverse pass from a scalar root; the root's adjoint ends up exactly 1.
    pub fn backward(&mut self, root: NodeId) -> Result<(), TapeError> {
        if self.dims[root.0] != 1 {
            return Err(TapeError::RootNotScalar { dim: self.dims[root.0] });
        }
        self.backward_seeded(root, &[1.0])
    }

    /// Reverse pass with an explicit adjoint seed on `node` (vector-Jacobian
    /// product). Gradients w.r.t. leaves and parameters accumulate in one pass.
    pub fn backward_seeded(&mut self, node: NodeId, seed: &[f64]) -> Result<(), TapeError> {
        if seed.len() != self.dims[node.0] {
            return Err(TapeError::ShapeMismatch {
                expected: self.dims[node.0],
                got: seed.len(),
            });
        }
        for a in self.adjs.iter_mut() {
            a.iter_mut().for_each(|v| *v = 0.0);
        }
        for g in self.param_grads.iter_mut() {
            g.weight.iter_mut().for_each(|v| *v = 0.0);
            g.bias.iter_mut().for_each(|v| *v = 0.0);
        }
        self.adjs[node.0].copy_from_slice(seed);

        for i in (0..=node.0).rev() {
            let (before, at) = self.adjs.split_at_mut(i);
            let dy = &at[0];
            match &self.ops[i] {
                Op::Leaf => {}
                Op::Affine { param, input } => {
                    let layer = self.params[*param];
                    let x = &self.vals[input.0];
                    let grad = &mut self.param_grads[*param];
                    for (r, dyr) in dy.iter().enumerate() {
                        let row = &layer.weight[r * layer.in_dim..(r + 1) * layer.in_dim];
                        linalg::axpy(&mut before[input.0], *dyr, row);
                        let grow = &mut grad.weight[r * layer.in_dim..(r + 1) * layer.in_dim];
                        linalg::axpy(grow, *dyr, x);
                        grad.bias[r] += dyr;
                    }
                }
                Op::Tanh { input } => {
                    let y = &self.vals[i];
                    for ((dx, dyv), yv) in before[input.0].iter_mut().zip(dy).zip(y) {
                        *dx += dyv * (1.0 - yv * yv);
                    }
                }
                Op::Softplus { input } => {
                    let x = &self.vals[input.0];
                    for ((dx, dyv), xv) in before[input.0].iter_mut().zip(dy).zip(x) {
                        *dx += dyv * sigmoid(*xv);
                    }
                }
                Op::Relu { input } => {
                    let x = &self.vals[input.0];
                    for ((dx, dyv), xv) in before[input.0].iter_mut().zip(dy).zip(x) {
                        if *xv > 0.0 {
                            *dx += dyv;
                        }
                    }
                }
                Op::Scale { input, factor } => {
                    for (dx, dyv) in before[input.0].iter_mut().zip(dy) {
                        *dx += factor * dyv;
                    }
                }
                Op::Add { a, b } => {
                    for (dx, dyv) in before[a.0].iter_mut().zip(dy) {
                        *dx += dyv;
                    }
                    for (dx, dyv) in before[b.0].iter_mut().zip(dy) {
                        *dx += dyv;
                    }
                }
                Op::SumSquares { input } => {
                    let x = &self.vals[input.0];
                    let d = dy[0];
                    for (dx, xv) in before[input.0].iter_mut().zip(x) {
                        *dx += d * 2.0 * xv;
                    }
                }
                Op::Mean { inputs } => {
                    let d = dy[0] / inputs.len() as f64;
                    for id in inputs {
                        before[id.0][0] += d;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn adjoint(&self, node: NodeId) -> &[f64] {
        &self.adjs[node.0]
    }

    pub fn param_grad(&self, param: ParamId) -> &LayerGrad {
        &self.param_grads[param.0]
    }

    /// Consume the tape, handing back the accumulated parameter gradients in
    /// registration order.
    pub fn into_param_grads(self) -> Vec<LayerGrad> {
        self.param_grads
    }
}

impl Default for Tape<'_> {
    fn default() -> Self {
        Self::new()
    }
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}
