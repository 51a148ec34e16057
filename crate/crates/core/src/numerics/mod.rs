//! Differentiable primitives, a reverse-mode tape, and a finite-difference
//! gradient checker.
//!
//! Model code is written once against the [`Ops`] trait and runs either on a
//! [`Graph`] (values plus exact reverse-mode gradients) or on [`Eager`]
//! (values only, no tape growth). Both route through the same forward
//! kernels, so they agree bit for bit.

mod eager;
mod gradcheck;
mod graph;
pub mod kernels;
mod params;
mod tensor;

pub use eager::{Eager, EagerVar};
pub use gradcheck::{grad_check, grad_check_inputs, relative_error, GradCheckReport, ParamCheck};
pub use graph::{Gradients, Graph, NodeId};
pub use kernels::Op;
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;

use crate::error::Result;

/// Floor applied to the argument of every `log` taken on a probability.
pub const LOG_FLOOR: f64 = 1e-12;

pub trait Ops {
    type Var: Clone;

    fn param(&mut self, id: ParamId) -> Self::Var;
    fn constant(&mut self, value: Tensor) -> Self::Var;
    fn value<'a>(&'a self, var: &'a Self::Var) -> &'a Tensor;
    fn apply(&mut self, op: Op, inputs: &[&Self::Var]) -> Result<Self::Var>;

    fn matvec(&mut self, m: &Self::Var, x: &Self::Var) -> Result<Self::Var> {
        self.apply(Op::MatVec, &[m, x])
    }

    fn matmul(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        self.apply(Op::MatMul, &[a, b])
    }

    fn add(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        self.apply(Op::Add, &[a, b])
    }

    fn mul(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        self.apply(Op::Mul, &[a, b])
    }

    /// `W x + b`.
    fn affine(&mut self, w: &Self::Var, x: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        let wx = self.matvec(w, x)?;
        self.add(&wx, b)
    }

    fn add_row(&mut self, m: &Self::Var, r: &Self::Var) -> Result<Self::Var> {
        self.apply(Op::AddRow, &[m, r])
    }

    fn outer(&mut self, x: &Self::Var, y: &Self::Var) -> Result<Self::Var> {
        self.apply(Op::Outer, &[x, y])
    }

    fn tanh(&mut self, x: &Self::Var) -> Result<Self::Var> {
        self.apply(Op::Tanh, &[x])
    }

    fn sigmoid(&mut self, x: &Self::Var) -> Result<Self::Var> {
        self.apply(Op::Sigmoid, &[x])
    }

    fn softmax(&mut self, x: &Self::Var) -> Result<Self::Var> {
        self.apply(Op::Softmax, &[x])
    }

    /// Natural log with the argument floored at [`LOG_FLOOR`].
    fn log(&mut self, x: &Self::Var) -> Result<Self::Var> {
        self.apply(Op::Log { floor: LOG_FLOOR }, &[x])
    }

    fn concat(&mut self, xs: &[&Self::Var]) -> Result<Self::Var> {
        self.apply(Op::Concat, xs)
    }

    fn slice(&mut self, x: &Self::Var, start: usize, len: usize) -> Result<Self::Var> {
        self.apply(Op::Slice { start, len }, &[x])
    }

    fn embed_lookup(&mut self, table: &Self::Var, id: usize) -> Result<Self::Var> {
        self.apply(Op::Embed { id }, &[table])
    }

    fn stack(&mut self, rows: &[&Self::Var]) -> Result<Self::Var> {
        self.apply(Op::Stack, rows)
    }

    fn weighted_sum(&mut self, weights: &Self::Var, rows: &Self::Var) -> Result<Self::Var> {
        self.apply(Op::WeightedSum, &[weights, rows])
    }

    fn elementwise_min(&mut self, a: &Self::Var, b: &Self::Var) -> Result<Self::Var> {
        self.apply(Op::Min, &[a, b])
    }

    fn sum(&mut self, x: &Self::Var) -> Result<Self::Var> {
        self.apply(Op::Sum, &[x])
    }

    fn scalar_mix(&mut self, p: &Self::Var, x: &Self::Var, y: &Self::Var) -> Result<Self::Var> {
        self.apply(Op::ScalarMix, &[p, x, y])
    }

    fn gated_mix(&mut self, z: &Self::Var, x: &Self::Var, y: &Self::Var) -> Result<Self::Var> {
        self.apply(Op::GatedMix, &[z, x, y])
    }

    fn scale(&mut self, x: &Self::Var, factor: f64) -> Result<Self::Var> {
        self.apply(Op::Scale { factor }, &[x])
    }

    fn scatter_add(&mut self, x: &Self::Var, index: &[usize], size: usize) -> Result<Self::Var> {
        self.apply(
            Op::ScatterAdd {
                index: index.to_vec(),
                size,
            },
            &[x],
        )
    }

    fn pad(&mut self, x: &Self::Var, size: usize) -> Result<Self::Var> {
        self.apply(Op::Pad { size }, &[x])
    }

    fn pick(&mut self, x: &Self::Var, index: usize) -> Result<Self::Var> {
        self.apply(Op::Pick { index }, &[x])
    }

    fn add_n(&mut self, xs: &[&Self::Var]) -> Result<Self::Var> {
        self.apply(Op::AddN, xs)
    }

    fn scalar_value(&self, x: &Self::Var) -> f64 {
        self.value(x).data()[0]
    }
}
