use super::graph::{Graph, NodeId};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use super::Ops;
use crate::error::{Error, Result};

/// Worst element of one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub rel_error: f64,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// In registration order.
    pub per_param: Vec<ParamCheck>,
    pub max_rel_error: f64,
    /// Largest `|a - n|` over all elements.
    pub max_abs_error: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&ParamCheck> {
        self.per_param
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// `|a - n| / max(|a|, |n|, 1e-8)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn eval_scalar<F>(params: &ParamStore, f: &F) -> Result<f64>
where
    F: Fn(&mut Graph<'_>) -> Result<NodeId>,
{
    let mut g = Graph::new(params);
    let out = f(&mut g)?;
    let value = g.value(&out);
    if value.len() != 1 {
        return Err(Error::shape("grad_check", &[value.shape()]));
    }
    let v = value.data()[0];
    if !v.is_finite() {
        return Err(Error::NonFinite { op: "grad_check" });
    }
    Ok(v)
}

/// Compare reverse-mode gradients of the scalar built by `f` against central
/// differences with step `epsilon`, for every element of every parameter.
pub fn grad_check<F>(params: &ParamStore, epsilon: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>) -> Result<NodeId>,
{
    let analytic = {
        let mut g = Graph::new(params);
        let out = f(&mut g)?;
        if g.value(&out).len() != 1 {
            return Err(Error::shape("grad_check", &[g.value(&out).shape()]));
        }
        g.backward(out)
    };

    let mut probe = params.clone();
    let mut per_param = Vec::with_capacity(params.len());
    let mut max_rel_error = 0.0f64;
    let mut max_abs_error = 0.0f64;
    for id in params.ids() {
        let mut worst = ParamCheck {
            name: params.name(id).to_string(),
            rel_error: 0.0,
            index: 0,
            analytic: 0.0,
            numeric: 0.0,
        };
        for i in 0..params.get(id).len() {
            let numeric = central_difference(&mut probe, id, i, epsilon, &f)?;
            let a = analytic.get(id).map_or(0.0, |t| t.data()[i]);
            let rel = relative_error(a, numeric);
            max_abs_error = max_abs_error.max((a - numeric).abs());
            if rel > worst.rel_error || i == 0 {
                worst.rel_error = rel;
                worst.index = i;
                worst.analytic = a;
                worst.numeric = numeric;
            }
        }
        max_rel_error = max_rel_error.max(worst.rel_error);
        per_param.push(worst);
    }
    Ok(GradCheckReport {
        per_param,
        max_rel_error,
        max_abs_error,
    })
}

fn central_difference<F>(
    probe: &mut ParamStore,
    id: ParamId,
    i: usize,
    epsilon: f64,
    f: &F,
) -> Result<f64>
where
    F: Fn(&mut Graph<'_>) -> Result<NodeId>,
{
    let original = probe.get(id).data()[i];
    probe.get_mut(id).data_mut()[i] = original + epsilon;
    let plus = eval_scalar(probe, f)?;
    probe.get_mut(id).data_mut()[i] = original - epsilon;
    let minus = eval_scalar(probe, f)?;
    probe.get_mut(id).data_mut()[i] = original;
    Ok((plus - minus) / (2.0 * epsilon))
}

/// [`grad_check`] for a function of free-standing input tensors.
pub fn grad_check_inputs<F>(inputs: &[Tensor], epsilon: f64, f: F) -> Result<GradCheckReport>
where
    F: Fn(&mut Graph<'_>, &[NodeId]) -> Result<NodeId>,
{
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = inputs
        .iter()
        .enumerate()
        .map(|(i, t)| store.register(format!("input{i}"), t.clone()))
        .collect::<Result<_>>()?;
    grad_check(&store, epsilon, |g| {
        let vars: Vec<NodeId> = ids.iter().map(|&id| g.param(id)).collect();
        f(g, &vars)
    })
}
