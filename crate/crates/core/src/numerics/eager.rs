use std::sync::Arc;

use super::kernels::{self, Op};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use super::Ops;
use crate::error::Result;

/// Value handle for [`Eager`]; parameters are referenced, never copied.
#[derive(Debug, Clone)]
pub enum EagerVar {
    Param(ParamId),
    Owned(Arc<Tensor>),
}

/// Gradient-free evaluator used for decoding.
pub struct Eager<'p> {
    params: &'p ParamStore,
}

impl<'p> Eager<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Eager { params }
    }
}

impl Ops for Eager<'_> {
    type Var = EagerVar;

    fn param(&mut self, id: ParamId) -> EagerVar {
        EagerVar::Param(id)
    }

    fn constant(&mut self, value: Tensor) -> EagerVar {
        EagerVar::Owned(Arc::new(value))
    }

    fn value<'a>(&'a self, var: &'a EagerVar) -> &'a Tensor {
        match var {
            EagerVar::Param(id) => self.params.get(*id),
            EagerVar::Owned(t) => t,
        }
    }

    fn apply(&mut self, op: Op, inputs: &[&EagerVar]) -> Result<EagerVar> {
        let xs: Vec<&Tensor> = inputs.iter().map(|v| self.value(v)).collect();
        Ok(EagerVar::Owned(Arc::new(kernels::forward(&op, &xs)?)))
    }
}
