//! Forward evaluation and vector-Jacobian products for each primitive.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

use super::NodeId;

/// Probability floor applied before taking logs in [`Op::CrossEntropy`].
pub const LOG_FLOOR: f64 = 1e-12;

/// A recorded primitive together with its parent node ids.
#[derive(Clone, Debug, PartialEq)]
pub enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    /// Adds a bias vector to every row of a matrix.
    AddBias(NodeId, NodeId),
    Relu(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    /// Row-wise softmax.
    Softmax(NodeId),
    /// Row-wise log-softmax.
    LogSoftmax(NodeId),
    /// Concatenation along the last axis.
    Concat(Vec<NodeId>),
    /// Vertical stacking of matrices with equal column counts.
    StackRows(Vec<NodeId>),
    SliceCols {
        input: NodeId,
        start: usize,
        len: usize,
    },
    /// Embedding lookup: gathers rows of a table.
    RowSelect {
        table: NodeId,
        rows: Vec<usize>,
    },
    StopGradient(NodeId),
    /// Mean over rows of `-ln(max(p[row, target], LOG_FLOOR))`.
    CrossEntropy {
        probs: NodeId,
        targets: Vec<usize>,
    },
    /// Mean over rows of `-logp[row, target]`.
    Nll {
        log_probs: NodeId,
        targets: Vec<usize>,
    },
    Sum(NodeId),
    Mean(NodeId),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::AddBias(..) => "add_bias",
            Op::Relu(_) => "relu",
            Op::Sigmoid(_) => "sigmoid",
            Op::Tanh(_) => "tanh",
            Op::Softmax(_) => "softmax",
            Op::LogSoftmax(_) => "log_softmax",
            Op::Concat(_) => "concat",
            Op::StackRows(_) => "stack_rows",
            Op::SliceCols { .. } => "slice_cols",
            Op::RowSelect { .. } => "row_select",
            Op::StopGradient(_) => "stop_gradient",
            Op::CrossEntropy { .. } => "cross_entropy",
            Op::Nll { .. } => "nll",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
        }
    }

    pub fn parents(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf => Vec::new(),
            Op::MatMul(a, b) | Op::Add(a, b) | Op::Mul(a, b) | Op::AddBias(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::Relu(a)
            | Op::Sigmoid(a)
            | Op::Tanh(a)
            | Op::Softmax(a)
            | Op::LogSoftmax(a)
            | Op::StopGradient(a)
            | Op::Sum(a)
            | Op::Mean(a) => vec![*a],
            Op::Concat(parts) | Op::StackRows(parts) => parts.clone(),
            Op::SliceCols { input, .. } => vec![*input],
            Op::RowSelect { table, .. } => vec![*table],
            Op::CrossEntropy { probs, .. } => vec![*probs],
            Op::Nll { log_probs, .. } => vec![*log_probs],
        }
    }
}

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn check_targets(op: &str, t: &Tensor, targets: &[usize]) -> Result<()> {
    if targets.len() != t.rows() {
        return Err(Error::arg(format!(
            "{op}: {} targets for {} rows",
            targets.len(),
            t.rows()
        )));
    }
    if let Some(&bad) = targets.iter().find(|&&k| k >= t.cols()) {
        return Err(Error::arg(format!(
            "{op}: target index {bad} out of range for {} classes",
            t.cols()
        )));
    }
    Ok(())
}

fn softmax_rows(x: &Tensor) -> Tensor {
    let cols = x.cols();
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(cols) {
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
    Tensor::new(x.shape().to_vec(), out).expect("shape preserved")
}

fn log_softmax_rows(x: &Tensor) -> Tensor {
    let cols = x.cols();
    let mut out = x.data().to_vec();
    for row in out.chunks_mut(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for v in row.iter_mut() {
            *v -= lse;
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("shape preserved")
}

/// Computes the value of `op` given a lookup for parent values.
pub(crate) fn forward<'a>(op: &Op, value: impl Fn(NodeId) -> &'a Tensor) -> Result<Tensor> {
    let out = match op {
        Op::Leaf => return Err(Error::arg("leaf nodes carry their own value")),
        Op::MatMul(a, b) => value(*a).matmul(value(*b))?,
        Op::Add(a, b) => {
            let (a, b) = (value(*a), value(*b));
            same_shape("add", a, b)?;
            a.zip_map(b, |x, y| x + y)
        }
        Op::Mul(a, b) => {
            let (a, b) = (value(*a), value(*b));
            same_shape("mul", a, b)?;
            a.zip_map(b, |x, y| x * y)
        }
        Op::Scale(a, s) => value(*a).map(|x| x * s),
        Op::AddBias(a, b) => {
            let (a, b) = (value(*a), value(*b));
            if b.rows() != 1 || b.cols() != a.cols() {
                return Err(Error::Shape {
                    op: "add_bias",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            let mut out = a.clone();
            let cols = a.cols();
            for row in out.data_mut().chunks_mut(cols) {
                for (v, bias) in row.iter_mut().zip(b.data()) {
                    *v += bias;
                }
            }
            out
        }
        Op::Relu(a) => value(*a).map(|x| if x > 0.0 { x } else { 0.0 }),
        Op::Sigmoid(a) => value(*a).map(sigmoid),
        Op::Tanh(a) => value(*a).map(f64::tanh),
        Op::Softmax(a) => softmax_rows(value(*a)),
        Op::LogSoftmax(a) => log_softmax_rows(value(*a)),
        Op::Concat(parts) => {
            let first = parts.first().ok_or_else(|| Error::arg("concat of no parts"))?;
            let rows = value(*first).rows();
            let mut total = 0;
            let mut matrix = false;
            for p in parts {
                let t = value(*p);
                if t.rows() != rows {
                    return Err(Error::Shape {
                        op: "concat",
                        lhs: value(*first).shape().to_vec(),
                        rhs: t.shape().to_vec(),
                    });
                }
                matrix |= t.rank() == 2;
                total += t.cols();
            }
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for p in parts {
                    data.extend_from_slice(value(*p).row(r));
                }
            }
            let shape = if matrix { vec![rows, total] } else { vec![total] };
            Tensor::new(shape, data)?
        }
        Op::StackRows(parts) => {
            let first = parts
                .first()
                .ok_or_else(|| Error::arg("stack_rows of no parts"))?;
            let cols = value(*first).cols();
            let mut rows = 0;
            let mut data = Vec::new();
            for p in parts {
                let t = value(*p);
                if t.cols() != cols {
                    return Err(Error::Shape {
                        op: "stack_rows",
                        lhs: value(*first).shape().to_vec(),
                        rhs: t.shape().to_vec(),
                    });
                }
                rows += t.rows();
                data.extend_from_slice(t.data());
            }
            Tensor::matrix(rows, cols, data)?
        }
        Op::SliceCols { input, start, len } => {
            let t = value(*input);
            if *len == 0 || start + len > t.cols() {
                return Err(Error::arg(format!(
                    "slice_cols [{start}, {}) out of range for shape {:?}",
                    start + len,
                    t.shape()
                )));
            }
            let mut data = Vec::with_capacity(t.rows() * len);
            for r in 0..t.rows() {
                data.extend_from_slice(&t.row(r)[*start..start + len]);
            }
            let shape = if t.rank() == 2 {
                vec![t.rows(), *len]
            } else {
                vec![*len]
            };
            Tensor::new(shape, data)?
        }
        Op::RowSelect { table, rows } => {
            let t = value(*table);
            if rows.is_empty() {
                return Err(Error::arg("row_select with no rows"));
            }
            if let Some(&bad) = rows.iter().find(|&&r| r >= t.rows()) {
                return Err(Error::arg(format!(
                    "row_select index {bad} out of range for {} rows",
                    t.rows()
                )));
            }
            let mut data = Vec::with_capacity(rows.len() * t.cols());
            for &r in rows {
                data.extend_from_slice(t.row(r));
            }
            Tensor::matrix(rows.len(), t.cols(), data)?
        }
        Op::StopGradient(a) => value(*a).clone(),
        Op::CrossEntropy { probs, targets } => {
            let p = value(*probs);
            check_targets("cross_entropy", p, targets)?;
            let total: f64 = targets
                .iter()
                .enumerate()
                .map(|(r, &k)| -p.get(r, k).max(LOG_FLOOR).ln())
                .sum();
            Tensor::scalar(total / targets.len() as f64)
        }
        Op::Nll { log_probs, targets } => {
            let lp = value(*log_probs);
            check_targets("nll", lp, targets)?;
            let total: f64 = targets
                .iter()
                .enumerate()
                .map(|(r, &k)| -lp.get(r, k))
                .sum();
            Tensor::scalar(total / targets.len() as f64)
        }
        Op::Sum(a) => Tensor::scalar(value(*a).data().iter().sum()),
        Op::Mean(a) => {
            let t = value(*a);
            Tensor::scalar(t.data().iter().sum::<f64>() / t.numel() as f64)
        }
    };
    Ok(out)
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Adjoint contributions to each parent of a node with value `out` and
/// upstream adjoint `grad`.
pub(crate) fn backward<'a>(
    op: &Op,
    out: &Tensor,
    grad: &Tensor,
    value: impl Fn(NodeId) -> &'a Tensor,
) -> Vec<(NodeId, Tensor)> {
    match op {
        Op::Leaf | Op::StopGradient(_) => Vec::new(),
        Op::MatMul(a, b) => {
            let (av, bv) = (value(*a), value(*b));
            let da = grad
                .matmul(&bv.transpose())
                .expect("matmul adjoint shapes")
                .with_shape(av.shape());
            let db = av
                .transpose()
                .matmul(grad)
                .expect("matmul adjoint shapes")
                .with_shape(bv.shape());
            vec![(*a, da), (*b, db)]
        }
        Op::Add(a, b) => vec![(*a, grad.clone()), (*b, grad.clone())],
        Op::Mul(a, b) => {
            let (av, bv) = (value(*a), value(*b));
            vec![
                (*a, grad.zip_map(bv, |g, y| g * y)),
                (*b, grad.zip_map(av, |g, x| g * x)),
            ]
        }
        Op::Scale(a, s) => vec![(*a, grad.map(|g| g * s))],
        Op::AddBias(a, b) => {
            let bv = value(*b);
            let cols = grad.cols();
            let mut db = vec![0.0; cols];
            for row in grad.data().chunks(cols) {
                for (acc, g) in db.iter_mut().zip(row) {
                    *acc += g;
                }
            }
            let db = Tensor::new(bv.shape().to_vec(), db).expect("bias shape");
            vec![(*a, grad.clone()), (*b, db)]
        }
        Op::Relu(a) => {
            let x = value(*a);
            vec![(*a, grad.zip_map(x, |g, x| if x > 0.0 { g } else { 0.0 }))]
        }
        Op::Sigmoid(a) => vec![(*a, grad.zip_map(out, |g, y| g * y * (1.0 - y)))],
        Op::Tanh(a) => vec![(*a, grad.zip_map(out, |g, y| g * (1.0 - y * y)))],
        Op::Softmax(a) => {
            let cols = out.cols();
            let mut dx = Vec::with_capacity(out.numel());
            for (y, g) in out.data().chunks(cols).zip(grad.data().chunks(cols)) {
                let dot: f64 = y.iter().zip(g).map(|(y, g)| y * g).sum();
                dx.extend(y.iter().zip(g).map(|(y, g)| y * (g - dot)));
            }
            vec![(*a, Tensor::new(out.shape().to_vec(), dx).expect("shape"))]
        }
        Op::LogSoftmax(a) => {
            let cols = out.cols();
            let mut dx = Vec::with_capacity(out.numel());
            for (y, g) in out.data().chunks(cols).zip(grad.data().chunks(cols)) {
                let total: f64 = g.iter().sum();
                dx.extend(y.iter().zip(g).map(|(y, g)| g - y.exp() * total));
            }
            vec![(*a, Tensor::new(out.shape().to_vec(), dx).expect("shape"))]
        }
        Op::Concat(parts) => {
            let rows = grad.rows();
            let total = grad.cols();
            let mut offset = 0;
            let mut result = Vec::with_capacity(parts.len());
            for p in parts {
                let pv = value(*p);
                let w = pv.cols();
                let mut d = Vec::with_capacity(rows * w);
                for r in 0..rows {
                    let start = r * total + offset;
                    d.extend_from_slice(&grad.data()[start..start + w]);
                }
                offset += w;
                result.push((*p, Tensor::new(pv.shape().to_vec(), d).expect("shape")));
            }
            result
        }
        Op::StackRows(parts) => {
            let cols = grad.cols();
            let mut offset = 0;
            let mut result = Vec::with_capacity(parts.len());
            for p in parts {
                let pv = value(*p);
                let n = pv.rows() * cols;
                let d = grad.data()[offset..offset + n].to_vec();
                offset += n;
                result.push((*p, Tensor::new(pv.shape().to_vec(), d).expect("shape")));
            }
            result
        }
        Op::SliceCols { input, start, len } => {
            let x = value(*input);
            let mut d = x.zeros_like();
            let cols = x.cols();
            for r in 0..x.rows() {
                let dst = &mut d.data_mut()[r * cols + start..r * cols + start + len];
                dst.copy_from_slice(grad.row(r));
            }
            vec![(*input, d)]
        }
        Op::RowSelect { table, rows } => {
            let t = value(*table);
            let mut d = t.zeros_like();
            let cols = t.cols();
            for (i, &r) in rows.iter().enumerate() {
                let dst = &mut d.data_mut()[r * cols..(r + 1) * cols];
                for (acc, g) in dst.iter_mut().zip(grad.row(i)) {
                    *acc += g;
                }
            }
            vec![(*table, d)]
        }
        Op::CrossEntropy { probs, targets } => {
            let p = value(*probs);
            let g = grad.data()[0];
            let n = targets.len() as f64;
            let mut d = p.zeros_like();
            let cols = p.cols();
            for (r, &k) in targets.iter().enumerate() {
                let pk = p.get(r, k);
                if pk > LOG_FLOOR {
                    d.data_mut()[r * cols + k] = -g / (n * pk);
                }
            }
            vec![(*probs, d)]
        }
        Op::Nll { log_probs, targets } => {
            let lp = value(*log_probs);
            let g = grad.data()[0];
            let n = targets.len() as f64;
            let mut d = lp.zeros_like();
            let cols = lp.cols();
            for (r, &k) in targets.iter().enumerate() {
                d.data_mut()[r * cols + k] -= g / n;
            }
            vec![(*log_probs, d)]
        }
        Op::Sum(a) => {
            let x = value(*a);
            vec![(*a, Tensor::filled(x.shape(), grad.data()[0]))]
        }
        Op::Mean(a) => {
            let x = value(*a);
            vec![(*a, Tensor::filled(x.shape(), grad.data()[0] / x.numel() as f64))]
        }
    }
}
