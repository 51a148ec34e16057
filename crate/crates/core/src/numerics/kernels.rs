//! Forward and reverse-mode kernels for every primitive.
//!
//! Both the tape ([`super::Graph`]) and the gradient-free evaluator
//! ([`super::Eager`]) dispatch through [`forward`], so inference and training
//! compute bit-identical values.

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    /// `[r, c] x [c] -> [r]`
    MatVec,
    /// `[n, k] x [k, m] -> [n, m]`
    MatMul,
    Add,
    Mul,
    /// `[n, m] + [m]` broadcast over rows.
    AddRow,
    /// `[n] (x) [m] -> [n, m]`
    Outer,
    Tanh,
    Sigmoid,
    Softmax,
    /// `ln(max(x, floor))`
    Log { floor: f64 },
    Concat,
    Slice { start: usize, len: usize },
    /// Row `id` of a `[rows, d]` table.
    Embed { id: usize },
    /// `k` vectors of width `d` -> `[k, d]`
    Stack,
    /// `[n] , [n, d] -> [d]`, the attention-weighted row sum.
    WeightedSum,
    /// Elementwise minimum; ties route to the first operand.
    Min,
    Sum,
    /// `p * x + (1 - p) * y` for scalar `p`.
    ScalarMix,
    /// `sigmoid(z) * x + sigmoid(-z) * y` for scalar logit `z`; keeps both
    /// weights accurate when the gate saturates.
    GatedMix,
    Scale { factor: f64 },
    /// `out[index[i]] += x[i]`, output length `size`.
    ScatterAdd { index: Vec<usize>, size: usize },
    /// Zero-extend a vector to `size`.
    Pad { size: usize },
    Pick { index: usize },
    AddN,
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::MatVec => "matvec",
            Op::MatMul => "matmul",
            Op::Add => "add",
            Op::Mul => "mul",
            Op::AddRow => "add_row",
            Op::Outer => "outer",
            Op::Tanh => "tanh",
            Op::Sigmoid => "sigmoid",
            Op::Softmax => "softmax",
            Op::Log { .. } => "log",
            Op::Concat => "concat",
            Op::Slice { .. } => "slice",
            Op::Embed { .. } => "embed_lookup",
            Op::Stack => "stack",
            Op::WeightedSum => "weighted_sum",
            Op::Min => "elementwise_min",
            Op::Sum => "sum",
            Op::ScalarMix => "scalar_mix",
            Op::GatedMix => "gated_mix",
            Op::Scale { .. } => "scale",
            Op::ScatterAdd { .. } => "scatter_add",
            Op::Pad { .. } => "pad",
            Op::Pick { .. } => "pick",
            Op::AddN => "add_n",
        }
    }
}

fn arity(op: &Op, got: usize) -> Result<()> {
    let ok = match op {
        Op::Concat | Op::Stack | Op::AddN => got >= 1,
        Op::MatVec | Op::MatMul | Op::Add | Op::Mul | Op::AddRow | Op::Outer => got == 2,
        Op::WeightedSum | Op::Min => got == 2,
        Op::ScalarMix | Op::GatedMix => got == 3,
        _ => got == 1,
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Shape {
            op: op.name(),
            shapes: vec![vec![got]],
        })
    }
}

fn is_vector(t: &Tensor) -> bool {
    t.shape().len() == 1
}

fn is_matrix(t: &Tensor) -> bool {
    t.shape().len() == 2
}

fn shape_err(op: &Op, xs: &[&Tensor]) -> Error {
    Error::Shape {
        op: op.name(),
        shapes: xs.iter().map(|t| t.shape().to_vec()).collect(),
    }
}

pub fn softmax_slice(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Evaluate `op` on `xs`, checking shapes and finiteness.
pub fn forward(op: &Op, xs: &[&Tensor]) -> Result<Tensor> {
    arity(op, xs.len())?;
    let out = match op {
        Op::MatVec => {
            let (m, x) = (xs[0], xs[1]);
            if !is_matrix(m) || !is_vector(x) || m.cols() != x.len() {
                return Err(shape_err(op, xs));
            }
            let out = (0..m.rows())
                .map(|i| m.row(i).iter().zip(x.data()).map(|(a, b)| a * b).sum())
                .collect();
            Tensor::vector(out)
        }
        Op::MatMul => {
            let (a, b) = (xs[0], xs[1]);
            if !is_matrix(a) || !is_matrix(b) || a.cols() != b.rows() {
                return Err(shape_err(op, xs));
            }
            let (n, k, m) = (a.rows(), a.cols(), b.cols());
            let mut out = vec![0.0; n * m];
            for i in 0..n {
                let orow = &mut out[i * m..(i + 1) * m];
                for p in 0..k {
                    let av = a.data()[i * k + p];
                    for (o, bv) in orow.iter_mut().zip(b.row(p)) {
                        *o += av * bv;
                    }
                }
            }
            Tensor::new(vec![n, m], out)?
        }
        Op::Add | Op::Mul | Op::Min => {
            let (a, b) = (xs[0], xs[1]);
            if a.shape() != b.shape() {
                return Err(shape_err(op, xs));
            }
            let f: fn(f64, f64) -> f64 = match op {
                Op::Add => |x, y| x + y,
                Op::Mul => |x, y| x * y,
                _ => |x, y| if x <= y { x } else { y },
            };
            let data = a.data().iter().zip(b.data()).map(|(x, y)| f(*x, *y)).collect();
            Tensor::new(a.shape().to_vec(), data)?
        }
        Op::AddRow => {
            let (m, r) = (xs[0], xs[1]);
            if !is_matrix(m) || !is_vector(r) || m.cols() != r.len() {
                return Err(shape_err(op, xs));
            }
            let c = m.cols();
            let data = m
                .data()
                .iter()
                .enumerate()
                .map(|(i, v)| v + r.data()[i % c])
                .collect();
            Tensor::new(m.shape().to_vec(), data)?
        }
        Op::Outer => {
            let (x, y) = (xs[0], xs[1]);
            if !is_vector(x) || !is_vector(y) {
                return Err(shape_err(op, xs));
            }
            let mut data = Vec::with_capacity(x.len() * y.len());
            for a in x.data() {
                data.extend(y.data().iter().map(|b| a * b));
            }
            Tensor::new(vec![x.len(), y.len()], data)?
        }
        Op::Tanh => map(xs[0], f64::tanh),
        Op::Sigmoid => map(xs[0], sigmoid_scalar),
        Op::Softmax => {
            let x = xs[0];
            if !is_vector(x) || x.is_empty() {
                return Err(shape_err(op, xs));
            }
            Tensor::vector(softmax_slice(x.data()))
        }
        Op::Log { floor } => map(xs[0], |v| v.max(*floor).ln()),
        Op::Concat => {
            if !xs.iter().all(|t| is_vector(t)) {
                return Err(shape_err(op, xs));
            }
            Tensor::vector(xs.iter().flat_map(|t| t.data().iter().copied()).collect())
        }
        Op::Slice { start, len } => {
            let x = xs[0];
            if !is_vector(x) || start + len > x.len() {
                return Err(shape_err(op, xs));
            }
            Tensor::vector(x.data()[*start..start + len].to_vec())
        }
        Op::Embed { id } => {
            let t = xs[0];
            if !is_matrix(t) || *id >= t.rows() {
                return Err(Error::Shape {
                    op: op.name(),
                    shapes: vec![t.shape().to_vec(), vec![*id]],
                });
            }
            Tensor::vector(t.row(*id).to_vec())
        }
        Op::Stack => {
            let d = xs[0].len();
            if !xs.iter().all(|t| is_vector(t) && t.len() == d) {
                return Err(shape_err(op, xs));
            }
            let data = xs.iter().flat_map(|t| t.data().iter().copied()).collect();
            Tensor::new(vec![xs.len(), d], data)?
        }
        Op::WeightedSum => {
            let (a, m) = (xs[0], xs[1]);
            if !is_vector(a) || !is_matrix(m) || a.len() != m.rows() {
                return Err(shape_err(op, xs));
            }
            let mut out = vec![0.0; m.cols()];
            for (k, w) in a.data().iter().enumerate() {
                for (o, v) in out.iter_mut().zip(m.row(k)) {
                    *o += w * v;
                }
            }
            Tensor::vector(out)
        }
        Op::Sum => Tensor::scalar(xs[0].sum()),
        Op::ScalarMix => {
            let (p, x, y) = (xs[0], xs[1], xs[2]);
            if p.len() != 1 || x.shape() != y.shape() {
                return Err(shape_err(op, xs));
            }
            let p = p.data()[0];
            let q = 1.0 - p;
            let data = x.data().iter().zip(y.data()).map(|(a, b)| p * a + q * b).collect();
            Tensor::new(x.shape().to_vec(), data)?
        }
        Op::GatedMix => {
            let (z, x, y) = (xs[0], xs[1], xs[2]);
            if z.len() != 1 || x.shape() != y.shape() {
                return Err(shape_err(op, xs));
            }
            let (p, q) = (sigmoid_scalar(z.data()[0]), sigmoid_scalar(-z.data()[0]));
            let data = x.data().iter().zip(y.data()).map(|(a, b)| p * a + q * b).collect();
            Tensor::new(x.shape().to_vec(), data)?
        }
        Op::Scale { factor } => map(xs[0], |v| v * factor),
        Op::ScatterAdd { index, size } => {
            let x = xs[0];
            if !is_vector(x) || index.len() != x.len() || index.iter().any(|&i| i >= *size) {
                return Err(Error::Shape {
                    op: op.name(),
                    shapes: vec![x.shape().to_vec(), vec![index.len()], vec![*size]],
                });
            }
            let mut out = vec![0.0; *size];
            for (v, &i) in x.data().iter().zip(index) {
                out[i] += v;
            }
            Tensor::vector(out)
        }
        Op::Pad { size } => {
            let x = xs[0];
            if !is_vector(x) || x.len() > *size {
                return Err(shape_err(op, xs));
            }
            let mut out = x.data().to_vec();
            out.resize(*size, 0.0);
            Tensor::vector(out)
        }
        Op::Pick { index } => {
            let x = xs[0];
            if *index >= x.len() {
                return Err(Error::Shape {
                    op: op.name(),
                    shapes: vec![x.shape().to_vec(), vec![*index]],
                });
            }
            Tensor::scalar(x.data()[*index])
        }
        Op::AddN => {
            let shape = xs[0].shape();
            if !xs.iter().all(|t| t.shape() == shape) {
                return Err(shape_err(op, xs));
            }
            let mut out = xs[0].data().to_vec();
            for t in &xs[1..] {
                for (o, v) in out.iter_mut().zip(t.data()) {
                    *o += v;
                }
            }
            Tensor::new(shape.to_vec(), out)?
        }
    };
    if !out.is_finite() {
        return Err(Error::NonFinite { op: op.name() });
    }
    Ok(out)
}

fn map(x: &Tensor, f: impl Fn(f64) -> f64) -> Tensor {
    let data = x.data().iter().map(|v| f(*v)).collect();
    Tensor::new(x.shape().to_vec(), data).expect("same shape")
}

/// Gradients with respect to every input of `op`, given the forward inputs,
/// the forward output and the gradient flowing into the output.
pub fn backward(op: &Op, xs: &[&Tensor], out: &Tensor, g: &[f64]) -> Vec<Vec<f64>> {
    match op {
        Op::MatVec => {
            let (m, x) = (xs[0], xs[1]);
            let c = m.cols();
            let mut dm = vec![0.0; m.len()];
            let mut dx = vec![0.0; c];
            for (i, gi) in g.iter().enumerate() {
                let row = m.row(i);
                let drow = &mut dm[i * c..(i + 1) * c];
                for j in 0..c {
                    drow[j] = gi * x.data()[j];
                    dx[j] += row[j] * gi;
                }
            }
            vec![dm, dx]
        }
        Op::MatMul => {
            let (a, b) = (xs[0], xs[1]);
            let (n, k, m) = (a.rows(), a.cols(), b.cols());
            let mut da = vec![0.0; n * k];
            let mut db = vec![0.0; k * m];
            for i in 0..n {
                let grow = &g[i * m..(i + 1) * m];
                for p in 0..k {
                    let brow = b.row(p);
                    da[i * k + p] = grow.iter().zip(brow).map(|(x, y)| x * y).sum();
                    let av = a.data()[i * k + p];
                    for (d, gv) in db[p * m..(p + 1) * m].iter_mut().zip(grow) {
                        *d += av * gv;
                    }
                }
            }
            vec![da, db]
        }
        Op::Add => vec![g.to_vec(), g.to_vec()],
        Op::Mul => {
            let (a, b) = (xs[0].data(), xs[1].data());
            let da = g.iter().zip(b).map(|(g, y)| g * y).collect();
            let db = g.iter().zip(a).map(|(g, x)| g * x).collect();
            vec![da, db]
        }
        Op::Min => {
            let (a, b) = (xs[0].data(), xs[1].data());
            let mut da = vec![0.0; g.len()];
            let mut db = vec![0.0; g.len()];
            for i in 0..g.len() {
                if a[i] <= b[i] {
                    da[i] = g[i];
                } else {
                    db[i] = g[i];
                }
            }
            vec![da, db]
        }
        Op::AddRow => {
            let c = xs[0].cols();
            let mut dr = vec![0.0; c];
            for (i, gv) in g.iter().enumerate() {
                dr[i % c] += gv;
            }
            vec![g.to_vec(), dr]
        }
        Op::Outer => {
            let (x, y) = (xs[0].data(), xs[1].data());
            let m = y.len();
            let mut dx = vec![0.0; x.len()];
            let mut dy = vec![0.0; m];
            for i in 0..x.len() {
                let grow = &g[i * m..(i + 1) * m];
                dx[i] = grow.iter().zip(y).map(|(a, b)| a * b).sum();
                for (d, gv) in dy.iter_mut().zip(grow) {
                    *d += gv * x[i];
                }
            }
            vec![dx, dy]
        }
        Op::Tanh => vec![g
            .iter()
            .zip(out.data())
            .map(|(g, y)| g * (1.0 - y * y))
            .collect()],
        Op::Sigmoid => vec![g
            .iter()
            .zip(out.data())
            .map(|(g, y)| g * y * (1.0 - y))
            .collect()],
        Op::Softmax => {
            let y = out.data();
            let dot: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
            vec![y.iter().zip(g).map(|(y, g)| y * (g - dot)).collect()]
        }
        Op::Log { floor } => vec![g
            .iter()
            .zip(xs[0].data())
            .map(|(g, x)| if *x > *floor { g / x } else { 0.0 })
            .collect()],
        Op::Concat => {
            let mut offset = 0;
            xs.iter()
                .map(|t| {
                    let part = g[offset..offset + t.len()].to_vec();
                    offset += t.len();
                    part
                })
                .collect()
        }
        Op::Slice { start, len } => {
            let mut dx = vec![0.0; xs[0].len()];
            dx[*start..start + len].copy_from_slice(g);
            vec![dx]
        }
        Op::Embed { id } => {
            let t = xs[0];
            let c = t.cols();
            let mut dt = vec![0.0; t.len()];
            dt[id * c..(id + 1) * c].copy_from_slice(g);
            vec![dt]
        }
        Op::Stack => {
            let d = xs[0].len();
            (0..xs.len()).map(|k| g[k * d..(k + 1) * d].to_vec()).collect()
        }
        Op::WeightedSum => {
            let (a, m) = (xs[0], xs[1]);
            let c = m.cols();
            let da = (0..m.rows())
                .map(|k| m.row(k).iter().zip(g).map(|(x, y)| x * y).sum())
                .collect();
            let mut dm = vec![0.0; m.len()];
            for (k, w) in a.data().iter().enumerate() {
                for (d, gv) in dm[k * c..(k + 1) * c].iter_mut().zip(g) {
                    *d = w * gv;
                }
            }
            vec![da, dm]
        }
        Op::Sum => vec![vec![g[0]; xs[0].len()]],
        Op::GatedMix => {
            let z = xs[0].data()[0];
            let (p, q) = (sigmoid_scalar(z), sigmoid_scalar(-z));
            let (x, y) = (xs[1].data(), xs[2].data());
            let dz: f64 = g
                .iter()
                .zip(x.iter().zip(y))
                .map(|(g, (a, b))| g * (a - b))
                .sum::<f64>()
                * p
                * q;
            let dx = g.iter().map(|g| g * p).collect();
            let dy = g.iter().map(|g| g * q).collect();
            vec![vec![dz], dx, dy]
        }
        Op::ScalarMix => {
            let (p, x, y) = (xs[0].data()[0], xs[1].data(), xs[2].data());
            let dp: f64 = g
                .iter()
                .zip(x.iter().zip(y))
                .map(|(g, (a, b))| g * (a - b))
                .sum();
            let dx = g.iter().map(|g| g * p).collect();
            let dy = g.iter().map(|g| g * (1.0 - p)).collect();
            vec![vec![dp], dx, dy]
        }
        Op::Scale { factor } => vec![g.iter().map(|g| g * factor).collect()],
        Op::ScatterAdd { index, .. } => vec![index.iter().map(|&i| g[i]).collect()],
        Op::Pad { .. } => vec![g[..xs[0].len()].to_vec()],
        Op::Pick { index } => {
            let mut dx = vec![0.0; xs[0].len()];
            dx[*index] = g[0];
            vec![dx]
        }
        Op::AddN => vec![g.to_vec(); xs.len()],
    }
}
