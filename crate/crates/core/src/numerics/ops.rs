//! Eager forward kernels on [`Tensor`] values.
//!
//! These are the plain numeric definitions; [`crate::numerics::Var`] wraps them
//! with the matching reverse-mode rules.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Epsilon added to the variance inside [`layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Tanh,
    Relu,
    Softplus,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Sigmoid => sigmoid(x),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Softplus => softplus(x),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => sigmoid(x),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(Activation::Sigmoid),
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "softplus" => Ok(Activation::Softplus),
            other => Err(Error::Config(format!("unknown activation kind {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
}

impl Elementwise {
    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            Elementwise::Add => a + b,
            Elementwise::Sub => a - b,
            Elementwise::Mul => a * b,
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    // log(1 + e^x) without overflow
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2("matmul")?;
    let (k2, n) = b.dims2("matmul")?;
    if k != k2 {
        return Err(Error::dim(
            "matmul",
            format!("{:?} x {:?}", a.shape(), b.shape()),
        ));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = ad[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    Tensor::matrix(m, n, out)
}

pub fn transpose(a: &Tensor) -> Result<Tensor> {
    let (m, n) = a.dims2("transpose")?;
    let d = a.data();
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = d[i * n + j];
        }
    }
    Tensor::matrix(n, m, out)
}

pub fn activation(kind: Activation, x: &Tensor) -> Tensor {
    let data = x.data().iter().map(|&v| kind.apply(v)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("shape preserved")
}

/// Shape of the result of an elementwise op, allowing a one-element operand
/// to broadcast against any tensor.
pub(crate) fn broadcast_shape(op: &'static str, x: &Tensor, y: &Tensor) -> Result<Vec<usize>> {
    if x.shape() == y.shape() || y.is_scalar() {
        Ok(x.shape().to_vec())
    } else if x.is_scalar() {
        Ok(y.shape().to_vec())
    } else {
        Err(Error::dim(
            op,
            format!("{:?} vs {:?}", x.shape(), y.shape()),
        ))
    }
}

pub fn elementwise(kind: Elementwise, x: &Tensor, y: &Tensor) -> Result<Tensor> {
    let shape = broadcast_shape("elementwise", x, y)?;
    let n: usize = shape.iter().product();
    let (xd, yd) = (x.data(), y.data());
    let data = (0..n)
        .map(|i| {
            let a = if xd.len() == 1 { xd[0] } else { xd[i] };
            let b = if yd.len() == 1 { yd[0] } else { yd[i] };
            kind.apply(a, b)
        })
        .collect();
    Tensor::new(shape, data)
}

/// Softmax over each row of a matrix, or over the whole of a vector.
pub fn rowwise_softmax(x: &Tensor) -> Result<Tensor> {
    let width = match x.shape() {
        [n] => *n,
        [_, n] => *n,
        other => {
            return Err(Error::dim(
                "softmax",
                format!("expected rank 1 or 2, got {other:?}"),
            ))
        }
    };
    if width == 0 {
        return Err(Error::Degenerate("softmax over an empty row".into()));
    }
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(width) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Tensor::new(x.shape().to_vec(), out)
}

pub fn concat(tensors: &[&Tensor], axis: usize) -> Result<Tensor> {
    let first = tensors
        .first()
        .ok_or_else(|| Error::Degenerate("concat of zero tensors".into()))?;
    let rank = first.ndim();
    if axis >= rank.max(1) || rank == 0 {
        return Err(Error::dim(
            "concat",
            format!("axis {axis} invalid for shape {:?}", first.shape()),
        ));
    }
    for t in tensors {
        let compatible = t.ndim() == rank
            && t
                .shape()
                .iter()
                .zip(first.shape())
                .enumerate()
                .all(|(d, (a, b))| d == axis || a == b);
        if !compatible {
            return Err(Error::dim(
                "concat",
                format!(
                    "{:?} incompatible with {:?} along axis {axis}",
                    t.shape(),
                    first.shape()
                ),
            ));
        }
    }
    let mut shape = first.shape().to_vec();
    shape[axis] = tensors.iter().map(|t| t.shape()[axis]).sum();
    // outer = product of dims before axis; each input contributes a contiguous block per outer index
    let outer: usize = shape[..axis].iter().product();
    let mut data = Vec::with_capacity(shape.iter().product());
    for o in 0..outer {
        for t in tensors {
            let block = t.len() / outer.max(1);
            data.extend_from_slice(&t.data()[o * block..(o + 1) * block]);
        }
    }
    Tensor::new(shape, data)
}

/// Arithmetic mean along `axis`; the axis is removed from the result shape.
pub fn reduce_mean(x: &Tensor, axis: usize) -> Result<Tensor> {
    let shape = x.shape();
    if axis >= shape.len() {
        return Err(Error::dim(
            "reduce_mean",
            format!("axis {axis} invalid for shape {shape:?}"),
        ));
    }
    let n = shape[axis];
    if n == 0 {
        return Err(Error::Degenerate("mean over an empty axis".into()));
    }
    let outer: usize = shape[..axis].iter().product();
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = vec![0.0; outer * inner];
    let d = x.data();
    for o in 0..outer {
        for a in 0..n {
            let base = (o * n + a) * inner;
            for i in 0..inner {
                out[o * inner + i] += d[base + i];
            }
        }
    }
    out.iter_mut().for_each(|v| *v /= n as f64);
    let mut out_shape = shape.to_vec();
    out_shape.remove(axis);
    Tensor::new(out_shape, out)
}

pub fn sum_all(x: &Tensor) -> Tensor {
    Tensor::scalar(x.data().iter().sum())
}

/// Per-row normalization statistics kept for the backward pass.
pub(crate) struct LayerNormCache {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

pub(crate) fn layer_norm_with_cache(
    x: &Tensor,
    gain: &Tensor,
    bias: &Tensor,
) -> Result<(Tensor, LayerNormCache)> {
    let n = *x
        .shape()
        .last()
        .ok_or_else(|| Error::Degenerate("layer_norm of a scalar".into()))?;
    if x.ndim() > 2 {
        return Err(Error::dim(
            "layer_norm",
            format!("expected rank 1 or 2, got {:?}", x.shape()),
        ));
    }
    if n < 2 {
        return Err(Error::Degenerate(format!(
            "layer_norm needs at least 2 features, got {n}"
        )));
    }
    if gain.shape() != [n] || bias.shape() != [n] {
        return Err(Error::dim(
            "layer_norm",
            format!(
                "gain {:?} / bias {:?} for feature width {n}",
                gain.shape(),
                bias.shape()
            ),
        ));
    }
    let mut xhat = Vec::with_capacity(x.len());
    let mut inv_std = Vec::with_capacity(x.len() / n);
    let mut out = Vec::with_capacity(x.len());
    for row in x.data().chunks(n) {
        let mean = row.iter().sum::<f64>() / n as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std.push(inv);
        for (j, v) in row.iter().enumerate() {
            let h = (v - mean) * inv;
            xhat.push(h);
            out.push(gain.data()[j] * h + bias.data()[j]);
        }
    }
    Ok((
        Tensor::new(x.shape().to_vec(), out)?,
        LayerNormCache { xhat, inv_std },
    ))
}

/// `gain * (x - mean) / sqrt(var + 1e-5) + bias` over the last axis.
pub fn layer_norm(x: &Tensor, gain: &Tensor, bias: &Tensor) -> Result<Tensor> {
    layer_norm_with_cache(x, gain, bias).map(|(t, _)| t)
}

/// Adds a bias vector to every row of a matrix (or to a vector of equal length).
pub fn add_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let width = *x.shape().last().unwrap_or(&0);
    if x.ndim() == 0 || x.ndim() > 2 || bias.shape() != [width] {
        return Err(Error::dim(
            "add_bias",
            format!("{:?} + bias {:?}", x.shape(), bias.shape()),
        ));
    }
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(width) {
        row.iter_mut().zip(bias.data()).for_each(|(o, b)| *o += b);
    }
    Tensor::new(x.shape().to_vec(), out)
}

pub fn gather_rows(x: &Tensor, rows: &[usize]) -> Result<Tensor> {
    let (m, n) = x.dims2("gather_rows")?;
    let mut out = Vec::with_capacity(rows.len() * n);
    for &r in rows {
        if r >= m {
            return Err(Error::dim(
                "gather_rows",
                format!("row {r} out of range for {m} rows"),
            ));
        }
        out.extend_from_slice(x.row(r));
    }
    Tensor::matrix(rows.len(), n, out)
}

pub fn slice_cols(x: &Tensor, start: usize, end: usize) -> Result<Tensor> {
    let (m, n) = x.dims2("slice_cols")?;
    if start > end || end > n {
        return Err(Error::dim(
            "slice_cols",
            format!("columns {start}..{end} of width {n}"),
        ));
    }
    let w = end - start;
    let mut out = Vec::with_capacity(m * w);
    for i in 0..m {
        out.extend_from_slice(&x.row(i)[start..end]);
    }
    Tensor::matrix(m, w, out)
}

/// Compressed sparse row matrix used as a constant left operand.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    rows: usize,
    cols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseMatrix {
    /// Builds from `(row, col, value)` triplets; duplicate coordinates are summed
    /// in the order given.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        mut triplets: Vec<(usize, usize, f64)>,
    ) -> Result<Self> {
        if let Some(&(r, c, _)) = triplets.iter().find(|(r, c, _)| *r >= rows || *c >= cols) {
            return Err(Error::dim(
                "sparse",
                format!("entry ({r}, {c}) outside {rows}x{cols}"),
            ));
        }
        // stable: duplicates keep their relative order
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0; rows + 1];
        let mut col_idx: Vec<usize> = Vec::new();
        let mut values: Vec<f64> = Vec::new();
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            if last == Some((r, c)) {
                *values.last_mut().expect("entry exists") += v;
                continue;
            }
            col_idx.push(c);
            values.push(v);
            row_ptr[r + 1] += 1;
            last = Some((r, c));
        }
        for r in 0..rows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(SparseMatrix {
            rows,
            cols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Nonzero entries of one row as `(col, value)`.
    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        self.col_idx[span.clone()]
            .iter()
            .copied()
            .zip(self.values[span].iter().copied())
    }

    pub fn to_dense(&self) -> Tensor {
        let mut t = Tensor::zeros(vec![self.rows, self.cols]);
        for r in 0..self.rows {
            for (c, v) in self.row_entries(r) {
                t.data_mut()[r * self.cols + c] += v;
            }
        }
        t
    }

    pub fn matmul_dense(&self, x: &Tensor) -> Result<Tensor> {
        let (m, n) = x.dims2("spmm")?;
        if m != self.cols {
            return Err(Error::dim(
                "spmm",
                format!("sparse {}x{} times {:?}", self.rows, self.cols, x.shape()),
            ));
        }
        let mut out = vec![0.0; self.rows * n];
        for r in 0..self.rows {
            let orow = &mut out[r * n..(r + 1) * n];
            for (c, v) in self.row_entries(r) {
                for (o, xv) in orow.iter_mut().zip(x.row(c)) {
                    *o += v * xv;
                }
            }
        }
        Tensor::matrix(self.rows, n, out)
    }

    /// `selfᵀ · g`, the adjoint used by the backward pass.
    pub(crate) fn transpose_matmul(&self, g: &[f64], n: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.cols * n];
        for r in 0..self.rows {
            let grow = &g[r * n..(r + 1) * n];
            for (c, v) in self.row_entries(r) {
                for (o, gv) in out[c * n..(c + 1) * n].iter_mut().zip(grow) {
                    *o += v * gv;
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(matmul(&a, &Tensor::identity(2)).unwrap(), a);
        let c = matmul(&m(&[&[1.0, 2.0]]), &m(&[&[3.0], &[4.0]])).unwrap();
        assert_eq!(c.data(), &[11.0]);
    }

    #[test]
    fn matmul_zero_annihilates() {
        let a = m(&[&[1.5, -2.0, 3.0], &[0.25, 4.0, -1.0]]);
        let z = matmul(&a, &Tensor::zeros(vec![3, 4])).unwrap();
        assert_eq!(z, Tensor::zeros(vec![2, 4]));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&Tensor::zeros(vec![2, 3]), &Tensor::zeros(vec![2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3] x [2, 3]"), "{msg}");
    }

    #[test]
    fn softmax_examples() {
        let s = rowwise_softmax(&m(&[&[0.0, 0.0], &[2f64.ln(), 0.0]])).unwrap();
        assert!((s.at(0, 0) - 0.5).abs() < 1e-15);
        assert!((s.at(1, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((s.at(1, 1) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_survives_large_logits() {
        let s = rowwise_softmax(&Tensor::vector(vec![1000.0, 999.0, -1000.0])).unwrap();
        assert!(s.is_finite());
        assert!((s.data().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn activation_examples() {
        let x = Tensor::vector(vec![0.0]);
        assert_eq!(activation(Activation::Sigmoid, &x).data(), &[0.5]);
        assert_eq!(activation(Activation::Tanh, &x).data(), &[0.0]);
        let r = activation(Activation::Relu, &Tensor::vector(vec![-3.0, 2.0]));
        assert_eq!(r.data(), &[0.0, 2.0]);
        assert!(matches!("gelu".parse::<Activation>(), Err(Error::Config(_))));
    }

    #[test]
    fn elementwise_examples() {
        let x = Tensor::vector(vec![1.0, 2.0]);
        let y = Tensor::vector(vec![3.0, 4.0]);
        assert_eq!(elementwise(Elementwise::Add, &x, &y).unwrap().data(), &[4.0, 6.0]);
        let ones = Tensor::ones(vec![2]);
        assert_eq!(elementwise(Elementwise::Mul, &x, &ones).unwrap(), x);
        assert_eq!(
            elementwise(Elementwise::Sub, &x, &x).unwrap(),
            Tensor::zeros(vec![2])
        );
        let s = elementwise(Elementwise::Mul, &x, &Tensor::scalar(2.0)).unwrap();
        assert_eq!(s.data(), &[2.0, 4.0]);
        assert!(elementwise(Elementwise::Add, &x, &Tensor::zeros(vec![3])).is_err());
    }

    #[test]
    fn concat_examples() {
        let v = Tensor::vector(vec![1.0, 2.0, 3.0]);
        assert_eq!(concat(&[&v], 0).unwrap(), v);
        let a = m(&[&[1.0], &[2.0]]);
        let b = m(&[&[3.0], &[4.0]]);
        assert_eq!(concat(&[&a, &b], 1).unwrap(), m(&[&[1.0, 3.0], &[2.0, 4.0]]));
        assert_eq!(
            concat(&[&a, &b], 0).unwrap(),
            m(&[&[1.0], &[2.0], &[3.0], &[4.0]])
        );
        let f = Tensor::vector(vec![0.0; 4]);
        let h = Tensor::vector(vec![1.0; 6]);
        assert_eq!(concat(&[&f, &h], 0).unwrap().len(), 10);
        assert!(concat(&[&a, &Tensor::zeros(vec![3, 1])], 1).is_err());
    }

    #[test]
    fn reduce_mean_examples() {
        assert_eq!(reduce_mean(&Tensor::vector(vec![1.0, 3.0]), 0).unwrap().data(), &[2.0]);
        let c = m(&[&[5.0, 5.0, 5.0], &[5.0, 5.0, 5.0]]);
        assert_eq!(reduce_mean(&c, 1).unwrap().data(), &[5.0, 5.0]);
        assert_eq!(reduce_mean(&c, 0).unwrap().shape(), &[3]);
        assert_eq!(reduce_mean(&Tensor::vector(vec![7.0]), 0).unwrap().data(), &[7.0]);
        assert!(matches!(
            reduce_mean(&Tensor::zeros(vec![0]), 0),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn layer_norm_examples() {
        let ones = Tensor::ones(vec![4]);
        let zeros = Tensor::zeros(vec![4]);
        let c = layer_norm(&Tensor::filled(vec![4], 3.0), &ones, &zeros).unwrap();
        assert!(c.data().iter().all(|v| v.abs() < 1e-12));

        let (g, b) = (Tensor::ones(vec![2]), Tensor::zeros(vec![2]));
        let y = layer_norm(&Tensor::vector(vec![1.0, -1.0]), &g, &b).unwrap();
        let expected = 1.0 / (1.0 + LAYER_NORM_EPS).sqrt();
        assert!((y.data()[0] - expected).abs() < 1e-12);
        assert!((y.data()[1] + expected).abs() < 1e-12);

        let bias = Tensor::vector(vec![0.5, 1.5, -1.0]);
        let y = layer_norm(
            &Tensor::vector(vec![0.3, -2.0, 4.0]),
            &Tensor::filled(vec![3], 2.0),
            &bias,
        )
        .unwrap();
        let mean_out = y.data().iter().sum::<f64>() / 3.0;
        assert!((mean_out - 1.0 / 3.0).abs() < 1e-12);

        assert!(matches!(
            layer_norm(&Tensor::vector(vec![1.0]), &Tensor::ones(vec![1]), &Tensor::zeros(vec![1])),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn sparse_matches_dense() {
        let s = SparseMatrix::from_triplets(
            3,
            2,
            vec![(0, 1, 2.0), (2, 0, -1.0), (0, 1, 0.5), (1, 0, 3.0)],
        )
        .unwrap();
        assert_eq!(s.nnz(), 3);
        let x = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let dense = matmul(&s.to_dense(), &x).unwrap();
        assert_eq!(s.matmul_dense(&x).unwrap(), dense);
    }
}
