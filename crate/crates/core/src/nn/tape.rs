//! Reverse-mode differentiation over vector-valued nodes.
//!
//! A [`ForwardTrace`] records one forward pass: every intermediate vector,
//! the op that produced it and any dropout mask that was drawn. Calling
//! [`ForwardTrace::backward`] walks the record in reverse and accumulates
//! `∂loss/∂param` into the [`ParamStore`].

use rand::Rng;

use super::layers::{self, Activation, DropoutMode};
use super::param::{ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Input,
    Embedding {
        table: ParamId,
        row: usize,
    },
    MeanPool(Vec<NodeId>),
    Concat(Vec<NodeId>),
    Dense {
        weights: ParamId,
        bias: ParamId,
        input: NodeId,
        activation: Activation,
    },
    Dropout {
        input: NodeId,
        mask: Vec<f64>,
    },
    Hadamard(NodeId, NodeId),
    /// Scalar node whose local gradients were computed when it was recorded.
    Loss(Vec<(NodeId, Vec<f64>)>),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Vec<f64>,
}

/// Ordered record of activations and dropout masks for one forward pass.
#[derive(Clone, Debug, Default)]
pub struct ForwardTrace {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl ForwardTrace {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, value: Vec<f64>) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    /// Which ReLU outputs are active, over every ReLU layer in order.
    pub fn relu_pattern(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter(|n| {
                matches!(
                    n.op,
                    Op::Dense {
                        activation: Activation::Relu,
                        ..
                    }
                )
            })
            .flat_map(|n| n.value.iter().map(|v| *v > 0.0))
            .collect()
    }

    /// Dropout masks in the order they were drawn.
    pub fn masks(&self) -> Vec<Vec<f64>> {
        self.nodes
            .iter()
            .filter_map(|n| match &n.op {
                Op::Dropout { mask, .. } => Some(mask.clone()),
                _ => None,
            })
            .collect()
    }

    pub fn input(&mut self, value: Vec<f64>) -> NodeId {
        self.push(Op::Input, value)
    }

    /// Looks up row `row` of an embedding table. `feature` names the lookup in errors.
    pub fn embedding(
        &mut self,
        store: &ParamStore,
        table: ParamId,
        row: usize,
        feature: &str,
    ) -> Result<NodeId> {
        let t = store.get(table);
        if row >= t.rows() {
            return Err(Error::data(format!(
                "feature {feature}: index {row} out of range for {} rows",
                t.rows()
            )));
        }
        let value = t.row(row).to_vec();
        Ok(self.push(Op::Embedding { table, row }, value))
    }

    pub fn mean_pool(&mut self, inputs: &[NodeId]) -> Result<NodeId> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::data("mean pooling over an empty list"))?;
        let dim = self.value(*first).len();
        let mut acc = vec![0.0; dim];
        for id in inputs {
            let v = self.value(*id);
            if v.len() != dim {
                return Err(Error::config("mean pooling over vectors of unequal length"));
            }
            acc.iter_mut().zip(v).for_each(|(a, b)| *a += b);
        }
        let n = inputs.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        Ok(self.push(Op::MeanPool(inputs.to_vec()), acc))
    }

    pub fn concat(&mut self, inputs: &[NodeId]) -> NodeId {
        let value = inputs
            .iter()
            .flat_map(|id| self.value(*id).iter().copied())
            .collect();
        self.push(Op::Concat(inputs.to_vec()), value)
    }

    pub fn dense(
        &mut self,
        store: &ParamStore,
        weights: ParamId,
        bias: ParamId,
        input: NodeId,
        activation: Activation,
    ) -> Result<NodeId> {
        let value = layers::dense_forward(
            self.value(input),
            store.get(weights),
            store.get(bias),
            activation,
        )?;
        Ok(self.push(
            Op::Dense {
                weights,
                bias,
                input,
                activation,
            },
            value,
        ))
    }

    /// Inverted dropout. Identity (no node recorded) in `Off` mode or at rate 0.
    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        input: NodeId,
        rate: f64,
        mode: DropoutMode,
        rng: &mut R,
    ) -> Result<NodeId> {
        match layers::dropout_mask(self.value(input).len(), rate, mode, rng)? {
            None => Ok(input),
            Some(mask) => Ok(self.dropout_with_mask(input, mask)),
        }
    }

    /// Applies a previously drawn mask (used to replay a trace).
    pub fn dropout_with_mask(&mut self, input: NodeId, mask: Vec<f64>) -> NodeId {
        let value = self
            .value(input)
            .iter()
            .zip(&mask)
            .map(|(x, m)| x * m)
            .collect();
        self.push(Op::Dropout { input, mask }, value)
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.len() != vb.len() {
            return Err(Error::config(format!(
                "element-wise product of lengths {} and {}",
                va.len(),
                vb.len()
            )));
        }
        let value = va.iter().zip(vb).map(|(x, y)| x * y).collect();
        Ok(self.push(Op::Hadamard(a, b), value))
    }

    /// Records a scalar loss with its gradients with respect to `inputs`.
    pub fn loss(&mut self, value: f64, grads: Vec<(NodeId, Vec<f64>)>) -> Result<NodeId> {
        for (id, g) in &grads {
            if g.len() != self.value(*id).len() {
                return Err(Error::config(
                    "loss gradient length does not match its input",
                ));
            }
        }
        Ok(self.push(Op::Loss(grads), vec![value]))
    }

    /// Accumulates `scale · ∂loss/∂param` into the gradients held by `store`.
    ///
    /// A trace can be differentiated once; a second call without a new
    /// forward pass is a usage error.
    pub fn backward(&mut self, store: &mut ParamStore, loss: NodeId, scale: f64) -> Result<()> {
        if self.backward_done {
            return Err(Error::usage(
                "backward called twice on the same forward trace",
            ));
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::usage("backward requires a scalar loss node"));
        }
        self.backward_done = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![scale]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Input => {}
                Op::Embedding { table, row } => {
                    let t = store.get_mut(*table);
                    let cols = t.cols();
                    let dst = &mut t.grad_mut()[row * cols..(row + 1) * cols];
                    dst.iter_mut().zip(&g).for_each(|(d, s)| *d += s);
                }
                Op::MeanPool(inputs) => {
                    let n = inputs.len() as f64;
                    let share: Vec<f64> = g.iter().map(|x| x / n).collect();
                    for id in inputs {
                        accumulate(&mut grads, *id, &share);
                    }
                }
                Op::Concat(inputs) => {
                    let mut offset = 0;
                    for id in inputs {
                        let len = self.nodes[id.0].value.len();
                        accumulate(&mut grads, *id, &g[offset..offset + len]);
                        offset += len;
                    }
                }
                Op::Dense {
                    weights,
                    bias,
                    input,
                    activation,
                } => {
                    let gz = activation_backward(&node.value, &g, *activation);
                    let x = &self.nodes[input.0].value;
                    let in_dim = x.len();
                    let mut gx = vec![0.0; in_dim];
                    {
                        let (w, gw) = store.get_mut(*weights).values_and_grad_mut();
                        for (o, &go) in gz.iter().enumerate() {
                            if go == 0.0 {
                                continue;
                            }
                            let row = &w[o * in_dim..(o + 1) * in_dim];
                            let grow = &mut gw[o * in_dim..(o + 1) * in_dim];
                            for ((gwi, gxi), (wi, xi)) in
                                grow.iter_mut().zip(gx.iter_mut()).zip(row.iter().zip(x))
                            {
                                *gwi += go * xi;
                                *gxi += go * wi;
                            }
                        }
                    }
                    let gb = store.get_mut(*bias).grad_mut();
                    gb.iter_mut().zip(&gz).for_each(|(d, s)| *d += s);
                    accumulate(&mut grads, *input, &gx);
                }
                Op::Dropout { input, mask } => {
                    let gx: Vec<f64> = g.iter().zip(mask).map(|(a, m)| a * m).collect();
                    accumulate(&mut grads, *input, &gx);
                }
                Op::Hadamard(a, b) => {
                    let va = &self.nodes[a.0].value;
                    let vb = &self.nodes[b.0].value;
                    let ga: Vec<f64> = g.iter().zip(vb).map(|(x, y)| x * y).collect();
                    let gb: Vec<f64> = g.iter().zip(va).map(|(x, y)| x * y).collect();
                    accumulate(&mut grads, *a, &ga);
                    accumulate(&mut grads, *b, &gb);
                }
                Op::Loss(inputs) => {
                    for (id, local) in inputs {
                        let scaled: Vec<f64> = local.iter().map(|l| l * g[0]).collect();
                        accumulate(&mut grads, *id, &scaled);
                    }
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: NodeId, g: &[f64]) {
    match &mut grads[id.0] {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        slot @ None => *slot = Some(g.to_vec()),
    }
}

/// Maps the gradient w.r.t. a dense layer's output onto its pre-activation.
fn activation_backward(output: &[f64], g: &[f64], activation: Activation) -> Vec<f64> {
    match activation {
        Activation::Identity => g.to_vec(),
        Activation::Relu => output
            .iter()
            .zip(g)
            .map(|(y, g)| if *y > 0.0 { *g } else { 0.0 })
            .collect(),
        Activation::Softplus => output
            .iter()
            .zip(g)
            .map(|(y, g)| g * layers::softplus_grad_from_output(*y))
            .collect(),
        Activation::Softmax => {
            let dot: f64 = output.iter().zip(g).map(|(y, g)| y * g).sum();
            output.iter().zip(g).map(|(y, g)| y * (g - dot)).collect()
        }
    }
}
