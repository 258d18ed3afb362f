//! Reverse-mode differentiation over a linear tape.
//!
//! Every operation on a [`Var`] evaluates eagerly and appends a node to the
//! owning [`Tape`]. Nodes are stored in execution order, so walking the tape
//! backwards visits each node after all of its consumers. A tape supports a
//! single backward pass; afterwards it refuses further recording.

use std::cell::RefCell;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::numerics::ops::{self, Activation, Elementwise, SparseMatrix};
use crate::numerics::Tensor;

/// Vector-Jacobian product of a user-supplied operation: receives the input
/// values, the output value and the output gradient, and returns one gradient
/// per input.
pub type CustomBackward = Box<dyn Fn(&[&Tensor], &Tensor, &[f64]) -> Vec<Vec<f64>>>;

enum Op {
    Leaf,
    MatMul(usize, usize),
    Binary(Elementwise, usize, usize),
    Scale(usize, f64),
    AddBias(usize, usize),
    Act(Activation, usize),
    Softmax(usize),
    Concat { inputs: Vec<usize>, axis: usize },
    Mean { input: usize, axis: usize },
    Sum(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        bias: usize,
    },
    Transpose(usize),
    Reshape(usize),
    SliceCols { input: usize, start: usize },
    GatherRows { input: usize, rows: Vec<usize> },
    SpMM { matrix: Arc<SparseMatrix>, input: usize },
    Pick { input: usize, index: usize },
    Custom { inputs: Vec<usize>, backward: CustomBackward },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

struct Inner {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Ordered record of executed operations.
pub struct Tape {
    inner: RefCell<Inner>,
}

impl Default for Tape {
    fn default() -> Self {
        Tape::new()
    }
}

impl fmt::Debug for Tape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let inner = self.inner.borrow();
        f.debug_struct("Tape")
            .field("nodes", &inner.nodes.len())
            .field("consumed", &inner.consumed)
            .finish()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

/// Gradients produced by [`Tape::backward`], indexed by variable.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `var`, or `None` when the loss does
    /// not depend on it (or it does not require gradients).
    pub fn get(&self, var: Var<'_>) -> Option<Tensor> {
        self.grads[var.id]
            .as_ref()
            .map(|g| Tensor::new(self.shapes[var.id].clone(), g.clone()).expect("shape recorded"))
    }

    pub fn get_data(&self, var: Var<'_>) -> Option<&[f64]> {
        self.grads[var.id].as_deref()
    }

    /// Accumulates the gradient for `var` into `target`'s gradient slot.
    pub fn write_into(&self, var: Var<'_>, target: &mut Tensor) -> Result<()> {
        if let Some(g) = &self.grads[var.id] {
            target.accumulate_grad(g)?;
        }
        Ok(())
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

/// Sums a full-size gradient down to a one-element operand that was broadcast.
fn reduce_for(operand_len: usize, g: Vec<f64>) -> Vec<f64> {
    if operand_len == 1 && g.len() != 1 {
        vec![g.iter().sum()]
    } else {
        g
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            inner: RefCell::new(Inner {
                nodes: Vec::new(),
                consumed: false,
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_consumed(&self) -> bool {
        self.inner.borrow().consumed
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Result<Var<'_>> {
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(Error::State(
                "tape already consumed by a backward pass".into(),
            ));
        }
        if !value.is_finite() {
            return Err(Error::NonFinite(format!(
                "operation produced a non-finite value (shape {:?})",
                value.shape()
            )));
        }
        let op = if requires_grad { op } else { Op::Leaf };
        inner.nodes.push(Node {
            value: value.with_requires_grad(false),
            op,
            requires_grad,
        });
        Ok(Var {
            tape: self,
            id: inner.nodes.len() - 1,
        })
    }

    /// Records a leaf. `requires_grad` is taken from the tensor's flag.
    pub fn leaf(&self, tensor: Tensor) -> Result<Var<'_>> {
        let rg = tensor.requires_grad();
        self.push(tensor, Op::Leaf, rg)
    }

    /// Records a trainable leaf (copy of `tensor`).
    pub fn param(&self, tensor: &Tensor) -> Result<Var<'_>> {
        self.push(tensor.clone(), Op::Leaf, true)
    }

    /// Records a leaf that never receives gradients.
    pub fn constant(&self, tensor: Tensor) -> Result<Var<'_>> {
        self.push(tensor, Op::Leaf, false)
    }

    /// Records an operation with caller-supplied forward value and backward rule.
    pub fn custom(
        &self,
        inputs: &[Var<'_>],
        value: Tensor,
        backward: CustomBackward,
    ) -> Result<Var<'_>> {
        let rg = self.any_requires_grad(inputs.iter().map(|v| v.id));
        self.push(
            value,
            Op::Custom {
                inputs: inputs.iter().map(|v| v.id).collect(),
                backward,
            },
            rg,
        )
    }

    fn any_requires_grad(&self, ids: impl IntoIterator<Item = usize>) -> bool {
        let inner = self.inner.borrow();
        ids.into_iter().any(|i| inner.nodes[i].requires_grad)
    }

    fn with_value<R>(&self, id: usize, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.inner.borrow().nodes[id].value)
    }

    /// Runs the reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let mut inner = self.inner.borrow_mut();
        if inner.consumed {
            return Err(Error::State("backward called twice on one tape".into()));
        }
        let loss_node = &inner.nodes[loss.id];
        if loss_node.value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss_node.value.shape()
            )));
        }
        inner.consumed = true;
        let nodes = &inner.nodes;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        if nodes[loss.id].requires_grad {
            grads[loss.id] = Some(vec![1.0]);
        }
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            propagate(nodes, node, &g, &mut grads)?;
            grads[id] = Some(g);
        }
        for (slot, node) in grads.iter_mut().zip(nodes) {
            if !node.requires_grad {
                *slot = None;
            }
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn propagate(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) -> Result<()> {
    let val = |i: usize| &nodes[i].value;
    let wants = |i: usize| nodes[i].requires_grad;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (m, k) = val(*a).dims2("matmul")?;
            let n = val(*b).shape()[1];
            let gt = Tensor::matrix(m, n, g.to_vec())?;
            if wants(*a) {
                let bt = ops::transpose(val(*b))?;
                accumulate(&mut grads[*a], ops::matmul(&gt, &bt)?.into_data());
            }
            if wants(*b) {
                let at = ops::transpose(val(*a))?;
                let gb = ops::matmul(&at, &gt)?;
                debug_assert_eq!(gb.len(), k * n);
                accumulate(&mut grads[*b], gb.into_data());
            }
        }
        Op::Binary(kind, a, b) => {
            let (xa, xb) = (val(*a).data(), val(*b).data());
            let at = |d: &[f64], i: usize| if d.len() == 1 { d[0] } else { d[i] };
            if wants(*a) {
                let ga: Vec<f64> = match kind {
                    Elementwise::Add | Elementwise::Sub => g.to_vec(),
                    Elementwise::Mul => g.iter().enumerate().map(|(i, gi)| gi * at(xb, i)).collect(),
                };
                accumulate(&mut grads[*a], reduce_for(xa.len(), ga));
            }
            if wants(*b) {
                let gb: Vec<f64> = match kind {
                    Elementwise::Add => g.to_vec(),
                    Elementwise::Sub => g.iter().map(|v| -v).collect(),
                    Elementwise::Mul => g.iter().enumerate().map(|(i, gi)| gi * at(xa, i)).collect(),
                };
                accumulate(&mut grads[*b], reduce_for(xb.len(), gb));
            }
        }
        Op::Scale(a, c) => {
            if wants(*a) {
                accumulate(&mut grads[*a], g.iter().map(|v| v * c).collect());
            }
        }
        Op::AddBias(x, b) => {
            if wants(*x) {
                accumulate(&mut grads[*x], g.to_vec());
            }
            if wants(*b) {
                let w = val(*b).len();
                let mut gb = vec![0.0; w];
                for row in g.chunks(w) {
                    gb.iter_mut().zip(row).for_each(|(a, r)| *a += r);
                }
                accumulate(&mut grads[*b], gb);
            }
        }
        Op::Act(kind, a) => {
            if wants(*a) {
                let x = val(*a).data();
                let y = node.value.data();
                let ga = g
                    .iter()
                    .zip(x.iter().zip(y))
                    .map(|(gi, (&xi, &yi))| gi * kind.derivative(xi, yi))
                    .collect();
                accumulate(&mut grads[*a], ga);
            }
        }
        Op::Softmax(a) => {
            if wants(*a) {
                let y = node.value.data();
                let w = *node.value.shape().last().expect("softmax rank >= 1");
                let mut ga = Vec::with_capacity(y.len());
                for (yr, gr) in y.chunks(w).zip(g.chunks(w)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    ga.extend(yr.iter().zip(gr).map(|(yi, gi)| yi * (gi - dot)));
                }
                accumulate(&mut grads[*a], ga);
            }
        }
        Op::Concat { inputs, axis } => {
            let shape = node.value.shape();
            let outer: usize = shape[..*axis].iter().product();
            let mut parts: Vec<Vec<f64>> = inputs.iter().map(|&i| Vec::with_capacity(val(i).len())).collect();
            let mut offset = 0;
            for _ in 0..outer.max(1) {
                for (k, &i) in inputs.iter().enumerate() {
                    let block = val(i).len() / outer.max(1);
                    parts[k].extend_from_slice(&g[offset..offset + block]);
                    offset += block;
                }
            }
            for (k, &i) in inputs.iter().enumerate() {
                if wants(i) {
                    accumulate(&mut grads[i], std::mem::take(&mut parts[k]));
                }
            }
        }
        Op::Mean { input, axis } => {
            if wants(*input) {
                let shape = val(*input).shape();
                let n = shape[*axis];
                let outer: usize = shape[..*axis].iter().product();
                let inner: usize = shape[axis + 1..].iter().product();
                let mut ga = vec![0.0; val(*input).len()];
                for o in 0..outer {
                    for a in 0..n {
                        for i in 0..inner {
                            ga[(o * n + a) * inner + i] = g[o * inner + i] / n as f64;
                        }
                    }
                }
                accumulate(&mut grads[*input], ga);
            }
        }
        Op::Sum(a) => {
            if wants(*a) {
                accumulate(&mut grads[*a], vec![g[0]; val(*a).len()]);
            }
        }
        Op::LayerNorm {
            x,
            gain,
            bias,
            xhat,
            inv_std,
        } => {
            let gd = val(*gain).data();
            let n = gd.len();
            if wants(*x) {
                let mut gx = Vec::with_capacity(xhat.len());
                for (r, (hr, gr)) in xhat.chunks(n).zip(g.chunks(n)).enumerate() {
                    let dxhat: Vec<f64> = gr.iter().zip(gd).map(|(a, b)| a * b).collect();
                    let mean_d = dxhat.iter().sum::<f64>() / n as f64;
                    let mean_dh = dxhat.iter().zip(hr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                    gx.extend(
                        dxhat
                            .iter()
                            .zip(hr)
                            .map(|(d, h)| inv_std[r] * (d - mean_d - h * mean_dh)),
                    );
                }
                accumulate(&mut grads[*x], gx);
            }
            if wants(*gain) {
                let mut gg = vec![0.0; n];
                for (hr, gr) in xhat.chunks(n).zip(g.chunks(n)) {
                    for j in 0..n {
                        gg[j] += gr[j] * hr[j];
                    }
                }
                accumulate(&mut grads[*gain], gg);
            }
            if wants(*bias) {
                let mut gb = vec![0.0; n];
                for gr in g.chunks(n) {
                    gb.iter_mut().zip(gr).for_each(|(a, b)| *a += b);
                }
                accumulate(&mut grads[*bias], gb);
            }
        }
        Op::Transpose(a) => {
            if wants(*a) {
                let (m, n) = node.value.dims2("transpose")?;
                let gt = Tensor::matrix(m, n, g.to_vec())?;
                accumulate(&mut grads[*a], ops::transpose(&gt)?.into_data());
            }
        }
        Op::Reshape(a) => {
            if wants(*a) {
                accumulate(&mut grads[*a], g.to_vec());
            }
        }
        Op::SliceCols { input, start } => {
            if wants(*input) {
                let (m, n) = val(*input).dims2("slice_cols")?;
                let w = node.value.shape()[1];
                let mut ga = vec![0.0; m * n];
                for i in 0..m {
                    ga[i * n + start..i * n + start + w].copy_from_slice(&g[i * w..(i + 1) * w]);
                }
                accumulate(&mut grads[*input], ga);
            }
        }
        Op::GatherRows { input, rows } => {
            if wants(*input) {
                let (m, n) = val(*input).dims2("gather_rows")?;
                let mut ga = vec![0.0; m * n];
                for (k, &r) in rows.iter().enumerate() {
                    for j in 0..n {
                        ga[r * n + j] += g[k * n + j];
                    }
                }
                accumulate(&mut grads[*input], ga);
            }
        }
        Op::SpMM { matrix, input } => {
            if wants(*input) {
                let n = node.value.shape()[1];
                accumulate(&mut grads[*input], matrix.transpose_matmul(g, n));
            }
        }
        Op::Pick { input, index } => {
            if wants(*input) {
                let mut ga = vec![0.0; val(*input).len()];
                ga[*index] = g[0];
                accumulate(&mut grads[*input], ga);
            }
        }
        Op::Custom { inputs, backward } => {
            let vals: Vec<&Tensor> = inputs.iter().map(|&i| val(i)).collect();
            let parts = backward(&vals, &node.value, g);
            if parts.len() != inputs.len() {
                return Err(Error::Contract(format!(
                    "custom backward returned {} gradients for {} inputs",
                    parts.len(),
                    inputs.len()
                )));
            }
            for (&i, gi) in inputs.iter().zip(parts) {
                if wants(i) {
                    if gi.len() != val(i).len() {
                        return Err(Error::dim("custom", "gradient length mismatch"));
                    }
                    accumulate(&mut grads[i], gi);
                }
            }
        }
    }
    Ok(())
}

impl<'t> Var<'t> {
    pub fn id(self) -> usize {
        self.id
    }

    pub fn tape(self) -> &'t Tape {
        self.tape
    }

    pub fn value(self) -> Tensor {
        self.tape.with_value(self.id, Tensor::clone)
    }

    pub fn data(self) -> Vec<f64> {
        self.tape.with_value(self.id, |t| t.data().to_vec())
    }

    pub fn shape(self) -> Vec<usize> {
        self.tape.with_value(self.id, |t| t.shape().to_vec())
    }

    pub fn len(self) -> usize {
        self.tape.with_value(self.id, Tensor::len)
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }

    pub fn item(self) -> Result<f64> {
        self.tape.with_value(self.id, Tensor::item)
    }

    pub fn requires_grad(self) -> bool {
        self.tape.inner.borrow().nodes[self.id].requires_grad
    }

    fn same_tape(self, other: Var<'_>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::Contract("operands recorded on different tapes".into()))
        }
    }

    fn unary(self, f: impl FnOnce(&Tensor) -> Result<Tensor>, op: Op) -> Result<Var<'t>> {
        let value = self.tape.with_value(self.id, f)?;
        let rg = self.requires_grad();
        self.tape.push(value, op, rg)
    }

    fn binary(
        self,
        other: Var<'t>,
        f: impl FnOnce(&Tensor, &Tensor) -> Result<Tensor>,
        op: Op,
    ) -> Result<Var<'t>> {
        self.same_tape(other)?;
        let value = {
            let inner = self.tape.inner.borrow();
            f(&inner.nodes[self.id].value, &inner.nodes[other.id].value)?
        };
        let rg = self.tape.any_requires_grad([self.id, other.id]);
        self.tape.push(value, op, rg)
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(other, ops::matmul, Op::MatMul(self.id, other.id))
    }

    pub fn elementwise(self, kind: Elementwise, other: Var<'t>) -> Result<Var<'t>> {
        self.binary(
            other,
            |a, b| ops::elementwise(kind, a, b),
            Op::Binary(kind, self.id, other.id),
        )
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(Elementwise::Add, other)
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(Elementwise::Sub, other)
    }

    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>> {
        self.elementwise(Elementwise::Mul, other)
    }

    /// Multiplies by a constant.
    pub fn scale(self, c: f64) -> Result<Var<'t>> {
        self.unary(
            |t| {
                Tensor::new(
                    t.shape().to_vec(),
                    t.data().iter().map(|v| v * c).collect(),
                )
            },
            Op::Scale(self.id, c),
        )
    }

    pub fn add_bias(self, bias: Var<'t>) -> Result<Var<'t>> {
        self.binary(bias, ops::add_bias, Op::AddBias(self.id, bias.id))
    }

    pub fn activation(self, kind: Activation) -> Result<Var<'t>> {
        self.unary(|t| Ok(ops::activation(kind, t)), Op::Act(kind, self.id))
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        self.activation(Activation::Sigmoid)
    }

    pub fn tanh(self) -> Result<Var<'t>> {
        self.activation(Activation::Tanh)
    }

    pub fn relu(self) -> Result<Var<'t>> {
        self.activation(Activation::Relu)
    }

    pub fn softplus(self) -> Result<Var<'t>> {
        self.activation(Activation::Softplus)
    }

    pub fn softmax(self) -> Result<Var<'t>> {
        self.unary(ops::rowwise_softmax, Op::Softmax(self.id))
    }

    pub fn concat(parts: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Degenerate("concat of zero tensors".into()))?;
        for p in parts {
            first.same_tape(*p)?;
        }
        let tape = first.tape;
        let value = {
            let inner = tape.inner.borrow();
            let vals: Vec<&Tensor> = parts.iter().map(|p| &inner.nodes[p.id].value).collect();
            ops::concat(&vals, axis)?
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        let rg = tape.any_requires_grad(ids.iter().copied());
        tape.push(value, Op::Concat { inputs: ids, axis }, rg)
    }

    pub fn mean(self, axis: usize) -> Result<Var<'t>> {
        self.unary(
            |t| ops::reduce_mean(t, axis),
            Op::Mean {
                input: self.id,
                axis,
            },
        )
    }

    pub fn sum(self) -> Result<Var<'t>> {
        self.unary(|t| Ok(ops::sum_all(t)), Op::Sum(self.id))
    }

    pub fn layer_norm(self, gain: Var<'t>, bias: Var<'t>) -> Result<Var<'t>> {
        self.same_tape(gain)?;
        self.same_tape(bias)?;
        let (value, cache) = {
            let inner = self.tape.inner.borrow();
            ops::layer_norm_with_cache(
                &inner.nodes[self.id].value,
                &inner.nodes[gain.id].value,
                &inner.nodes[bias.id].value,
            )?
        };
        let rg = self.tape.any_requires_grad([self.id, gain.id, bias.id]);
        self.tape.push(
            value,
            Op::LayerNorm {
                x: self.id,
                gain: gain.id,
                bias: bias.id,
                xhat: cache.xhat,
                inv_std: cache.inv_std,
            },
            rg,
        )
    }

    pub fn transpose(self) -> Result<Var<'t>> {
        self.unary(ops::transpose, Op::Transpose(self.id))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        self.unary(|t| t.clone().reshaped(shape.to_vec()), Op::Reshape(self.id))
    }

    pub fn slice_cols(self, start: usize, end: usize) -> Result<Var<'t>> {
        self.unary(
            |t| ops::slice_cols(t, start, end),
            Op::SliceCols {
                input: self.id,
                start,
            },
        )
    }

    pub fn gather_rows(self, rows: &[usize]) -> Result<Var<'t>> {
        self.unary(
            |t| ops::gather_rows(t, rows),
            Op::GatherRows {
                input: self.id,
                rows: rows.to_vec(),
            },
        )
    }

    /// Left-multiplies by a constant sparse matrix.
    pub fn spmm(self, matrix: &Arc<SparseMatrix>) -> Result<Var<'t>> {
        self.unary(
            |t| matrix.matmul_dense(t),
            Op::SpMM {
                matrix: Arc::clone(matrix),
                input: self.id,
            },
        )
    }

    /// Selects one element (flat index) as a scalar.
    pub fn pick(self, index: usize) -> Result<Var<'t>> {
        self.unary(
            |t| {
                t.data()
                    .get(index)
                    .map(|&v| Tensor::scalar(v))
                    .ok_or_else(|| Error::dim("pick", format!("index {index} of {}", t.len())))
            },
            Op::Pick {
                input: self.id,
                index,
            },
        )
    }

    /// Elementwise square.
    pub fn square(self) -> Result<Var<'t>> {
        self.mul(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        let tape = Tape::new();
        let x = tape.param(&Tensor::scalar(3.0)).unwrap();
        let loss = x.square().unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let tape = Tape::new();
        let x = tape.param(&Tensor::vector(vec![1.0, -2.0, 5.0])).unwrap();
        let g = tape.backward(x.sum().unwrap()).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn shared_subexpressions_accumulate() {
        // loss = x*x + x  ->  2x + 1
        let tape = Tape::new();
        let x = tape.param(&Tensor::scalar(2.0)).unwrap();
        let loss = x.mul(x).unwrap().add(x).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[5.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let tape = Tape::new();
        let x = tape.param(&Tensor::vector(vec![1.0, 2.0])).unwrap();
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn tape_is_single_use() {
        let tape = Tape::new();
        let x = tape.param(&Tensor::scalar(1.0)).unwrap();
        let y = x.square().unwrap();
        tape.backward(y).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::State(_))));
        assert!(matches!(x.square(), Err(Error::State(_))));
    }

    #[test]
    fn constants_receive_no_gradient() {
        let tape = Tape::new();
        let x = tape.param(&Tensor::scalar(2.0)).unwrap();
        let c = tape.constant(Tensor::scalar(4.0)).unwrap();
        let g = tape.backward(x.mul(c).unwrap()).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap().data(), &[4.0]);
    }

    #[test]
    fn write_into_populates_grad_slot() {
        let mut p = Tensor::vector(vec![1.0, 2.0]);
        let tape = Tape::new();
        let x = tape.param(&p).unwrap();
        let g = tape.backward(x.square().unwrap().sum().unwrap()).unwrap();
        g.write_into(x, &mut p).unwrap();
        assert_eq!(p.grad().unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn mixing_tapes_is_an_error() {
        let (t1, t2) = (Tape::new(), Tape::new());
        let a = t1.param(&Tensor::scalar(1.0)).unwrap();
        let b = t2.param(&Tensor::scalar(1.0)).unwrap();
        assert!(a.add(b).is_err());
    }
}
