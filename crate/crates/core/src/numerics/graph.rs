use std::collections::HashMap;

use super::kernels::{self, Op};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use super::Ops;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

enum Source {
    Param(ParamId),
    Constant,
    Op { op: Op, inputs: Vec<NodeId> },
}

struct Node {
    value: Option<Tensor>,
    source: Source,
}

/// Reverse-mode tape over a borrowed [`ParamStore`].
///
/// Nodes are appended in evaluation order; [`Graph::backward`] walks them in
/// reverse insertion order, which is a valid reverse topological order.
pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_nodes: HashMap<ParamId, NodeId>,
}

/// Result of a backward pass: one dense gradient per parameter that the loss
/// depends on.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    /// No gradients at all; [`Gradients::accumulate`] fills it lazily.
    pub fn empty() -> Self {
        Gradients { grads: Vec::new() }
    }

    pub fn zeros_like(params: &ParamStore) -> Self {
        Gradients {
            grads: params
                .ids()
                .map(|id| Some(Tensor::zeros(params.get(id).shape())))
                .collect(),
        }
    }

    /// `self += scale * other`, parameter by parameter.
    pub fn accumulate(&mut self, other: &Gradients, scale: f64) {
        if self.grads.len() < other.grads.len() {
            self.grads.resize(other.grads.len(), None);
        }
        for (mine, theirs) in self.grads.iter_mut().zip(&other.grads) {
            let Some(t) = theirs else { continue };
            match mine {
                Some(m) => {
                    for (a, b) in m.data_mut().iter_mut().zip(t.data()) {
                        *a += scale * b;
                    }
                }
                None => {
                    let data = t.data().iter().map(|b| scale * b).collect();
                    *mine = Some(Tensor::new(t.shape().to_vec(), data).expect("shape"));
                }
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.grads
            .iter()
            .flatten()
            .map(Tensor::squared_norm)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.grads.iter_mut().flatten() {
            for v in t.data_mut() {
                *v *= factor;
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|t| (ParamId(i), t)))
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
            param_nodes: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Option<Tensor>, source: Source) -> NodeId {
        self.nodes.push(Node { value, source });
        NodeId(self.nodes.len() - 1)
    }

    fn tensor(&self, id: NodeId) -> &Tensor {
        let node = &self.nodes[id.0];
        match (&node.value, &node.source) {
            (Some(t), _) => t,
            (None, Source::Param(p)) => self.params.get(*p),
            (None, _) => unreachable!("non-parameter node without value"),
        }
    }

    /// Back-propagate from the scalar node `loss`.
    pub fn backward(&self, loss: NodeId) -> Gradients {
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0; self.tensor(loss).len()]);
        let mut out = Gradients {
            grads: vec![None; self.params.len()],
        };
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.nodes[idx].source {
                Source::Constant => {}
                Source::Param(p) => {
                    let shape = self.params.get(*p).shape().to_vec();
                    out.grads[p.0] = Some(Tensor::new(shape, g).expect("param grad shape"));
                }
                Source::Op { op, inputs } => {
                    if let Op::Embed { id } = op {
                        // Row update straight into the table gradient.
                        let table = self.tensor(inputs[0]);
                        let c = table.cols();
                        let buf = grads[inputs[0].0].get_or_insert_with(|| vec![0.0; table.len()]);
                        for (b, v) in buf[id * c..(id + 1) * c].iter_mut().zip(&g) {
                            *b += v;
                        }
                        continue;
                    }
                    let xs: Vec<&Tensor> = inputs.iter().map(|&i| self.tensor(i)).collect();
                    let out_value = self.tensor(NodeId(idx));
                    let input_grads = kernels::backward(op, &xs, out_value, &g);
                    for (input, ig) in inputs.iter().zip(input_grads) {
                        match &mut grads[input.0] {
                            Some(buf) => {
                                for (b, v) in buf.iter_mut().zip(&ig) {
                                    *b += v;
                                }
                            }
                            slot @ None => *slot = Some(ig),
                        }
                    }
                }
            }
        }
        out
    }
}

impl Ops for Graph<'_> {
    type Var = NodeId;

    fn param(&mut self, id: ParamId) -> NodeId {
        if let Some(n) = self.param_nodes.get(&id) {
            return *n;
        }
        let n = self.push(None, Source::Param(id));
        self.param_nodes.insert(id, n);
        n
    }

    fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Some(value), Source::Constant)
    }

    fn value<'a>(&'a self, var: &'a NodeId) -> &'a Tensor {
        self.tensor(*var)
    }

    fn apply(&mut self, op: Op, inputs: &[&NodeId]) -> Result<NodeId> {
        let value = {
            let xs: Vec<&Tensor> = inputs.iter().map(|&&i| self.tensor(i)).collect();
            kernels::forward(&op, &xs)?
        };
        let inputs = inputs.iter().map(|&&i| i).collect();
        Ok(self.push(Some(value), Source::Op { op, inputs }))
    }
}
