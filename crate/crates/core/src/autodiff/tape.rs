use super::RealTensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

/// A differentiable node with an analytic vector-Jacobian product.
///
/// `backward` returns one gradient per input (`None` for inputs that are not
/// differentiated, e.g. index tensors).
pub trait CustomOp {
    fn name(&self) -> &'static str;

    fn forward(&self, inputs: &[&RealTensor]) -> Result<RealTensor>;

    fn backward(
        &self,
        inputs: &[&RealTensor],
        output: &RealTensor,
        grad_output: &RealTensor,
    ) -> Vec<Option<RealTensor>>;
}

enum Op {
    Leaf,
    Dense {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    Relu(NodeId),
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Sum(NodeId),
    SoftmaxCe {
        logits: NodeId,
        targets: Vec<usize>,
        probs: RealTensor,
    },
    Custom {
        inputs: Vec<NodeId>,
        op: Box<dyn CustomOp>,
    },
}

struct Node {
    value: RealTensor,
    op: Op,
    requires_grad: bool,
}

/// Records a forward computation so that it can be differentiated once.
///
/// Nodes are appended in evaluation order, so the node list is already a
/// topological order and the backward sweep simply walks it in reverse.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    backward_done: bool,
}

/// Gradients of a scalar loss with respect to every recorded node.
pub struct Gradients {
    slots: Vec<Option<RealTensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `id`; nodes that do not influence the loss get zeros.
    pub fn wrt(&self, id: NodeId) -> RealTensor {
        match &self.slots[id.0] {
            Some(g) => g.clone(),
            None => RealTensor::zeros(&self.shapes[id.0]),
        }
    }

    pub fn get(&self, id: NodeId) -> Option<&RealTensor> {
        self.slots[id.0].as_ref()
    }
}

fn accumulate(slot: &mut Option<RealTensor>, g: RealTensor) {
    match slot {
        Some(acc) => acc
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .for_each(|(a, b)| *a += b),
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &RealTensor {
        &self.nodes[id.0].value
    }

    /// Softmax probabilities cached by a cross-entropy node.
    pub fn probabilities(&self, id: NodeId) -> Option<&RealTensor> {
        match &self.nodes[id.0].op {
            Op::SoftmaxCe { probs, .. } => Some(probs),
            _ => None,
        }
    }

    fn push(&mut self, value: RealTensor, op: Op, requires_grad: bool, name: &'static str) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        self.backward_done = false;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Constant input; never receives a gradient.
    pub fn constant(&mut self, value: RealTensor) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: false,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: RealTensor) -> NodeId {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad: true,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// `out[b] = weight · input[b] + bias`
    pub fn dense(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let x = self.value(input);
        let w = self.value(weight);
        let b = self.value(bias);
        if x.shape().len() != 2 || w.shape().len() != 2 || w.shape()[1] != x.shape()[1] {
            return Err(Error::dim("dense", x.shape(), w.shape()));
        }
        let (d_out, d_in) = (w.shape()[0], w.shape()[1]);
        if b.len() != d_out {
            return Err(Error::dim("dense bias", w.shape(), b.shape()));
        }
        let batch = x.rows();
        let mut out = vec![0.0; batch * d_out];
        for r in 0..batch {
            let xr = x.row(r);
            let orow = &mut out[r * d_out..(r + 1) * d_out];
            for (o, (wrow, bias)) in orow.iter_mut().zip(w.data().chunks(d_in).zip(b.data())) {
                *o = bias + wrow.iter().zip(xr).map(|(a, c)| a * c).sum::<f64>();
            }
        }
        let rg = self.needs(input) || self.needs(weight) || self.needs(bias);
        self.push(
            RealTensor::new(vec![batch, d_out], out)?,
            Op::Dense { input, weight, bias },
            rg,
            "dense",
        )
    }

    pub fn relu(&mut self, input: NodeId) -> Result<NodeId> {
        let x = self.value(input);
        let data = x.data().iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect();
        let value = RealTensor::new(x.shape().to_vec(), data)?;
        let rg = self.needs(input);
        self.push(value, Op::Relu(input), rg, "relu")
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::dim("add", x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let value = RealTensor::new(x.shape().to_vec(), data)?;
        let rg = self.needs(a) || self.needs(b);
        self.push(value, Op::Add(a, b), rg, "add")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::dim("mul", x.shape(), y.shape()));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let value = RealTensor::new(x.shape().to_vec(), data)?;
        let rg = self.needs(a) || self.needs(b);
        self.push(value, Op::Mul(a, b), rg, "mul")
    }

    /// Sum of all entries, as a `[1]` tensor.
    pub fn sum(&mut self, input: NodeId) -> Result<NodeId> {
        let s = self.value(input).data().iter().sum();
        let rg = self.needs(input);
        self.push(RealTensor::scalar(s), Op::Sum(input), rg, "sum")
    }

    /// Mean categorical cross-entropy of softmax(logits) against `targets`
    /// (0-based class per row).
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> Result<NodeId> {
        let z = self.value(logits);
        if z.shape().len() != 2 || z.rows() != targets.len() {
            return Err(Error::dim("softmax_cross_entropy", z.shape(), &[targets.len()]));
        }
        let m = z.cols();
        if let Some(&bad) = targets.iter().find(|&&t| t >= m) {
            return Err(Error::Argument(format!(
                "target index {bad} out of range for {m} classes"
            )));
        }
        let batch = z.rows();
        let mut probs = vec![0.0; batch * m];
        let mut loss = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = z.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let pr = &mut probs[r * m..(r + 1) * m];
            let mut denom = 0.0;
            for (p, &v) in pr.iter_mut().zip(row) {
                *p = (v - max).exp();
                denom += *p;
            }
            pr.iter_mut().for_each(|p| *p /= denom);
            loss += denom.ln() - (row[t] - max);
        }
        loss /= batch as f64;
        let probs = RealTensor::new(vec![batch, m], probs)?;
        let rg = self.needs(logits);
        self.push(
            RealTensor::scalar(loss),
            Op::SoftmaxCe {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
            "softmax_cross_entropy",
        )
    }

    pub fn custom(&mut self, inputs: &[NodeId], op: Box<dyn CustomOp>) -> Result<NodeId> {
        let values: Vec<&RealTensor> = inputs.iter().map(|&i| self.value(i)).collect();
        let value = op.forward(&values)?;
        let rg = inputs.iter().any(|&i| self.needs(i));
        let name = op.name();
        self.push(
            value,
            Op::Custom {
                inputs: inputs.to_vec(),
                op,
            },
            rg,
            name,
        )
    }

    /// Reverse sweep from the scalar node `loss`.
    ///
    /// A tape can be differentiated once per forward pass; recording any new
    /// node re-arms it.
    pub fn backward(&mut self, loss: NodeId) -> Result<Gradients> {
        if self.backward_done {
            return Err(Error::State(
                "backward already ran on this tape; record a new forward pass first".into(),
            ));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::dim("backward", self.value(loss).shape(), &[1]));
        }
        let n = self.nodes.len();
        let mut slots: Vec<Option<RealTensor>> = (0..n).map(|_| None).collect();
        slots[loss.0] = Some(RealTensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = slots[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                slots[idx] = Some(g);
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Dense { input, weight, bias } => {
                    let x = self.value(*input);
                    let w = self.value(*weight);
                    let (d_out, d_in) = (w.shape()[0], w.shape()[1]);
                    let batch = x.rows();
                    if self.needs(*input) {
                        let mut gx = vec![0.0; batch * d_in];
                        for r in 0..batch {
                            let gr = g.row(r);
                            let dst = &mut gx[r * d_in..(r + 1) * d_in];
                            for (o, &go) in gr.iter().enumerate() {
                                if go == 0.0 {
                                    continue;
                                }
                                for (d, wv) in dst.iter_mut().zip(&w.data()[o * d_in..(o + 1) * d_in]) {
                                    *d += go * wv;
                                }
                            }
                        }
                        accumulate(&mut slots[input.0], RealTensor::new(vec![batch, d_in], gx)?);
                    }
                    if self.needs(*weight) {
                        let mut gw = vec![0.0; d_out * d_in];
                        for r in 0..batch {
                            let xr = x.row(r);
                            for (o, &go) in g.row(r).iter().enumerate() {
                                if go == 0.0 {
                                    continue;
                                }
                                for (d, xv) in gw[o * d_in..(o + 1) * d_in].iter_mut().zip(xr) {
                                    *d += go * xv;
                                }
                            }
                        }
                        accumulate(&mut slots[weight.0], RealTensor::new(vec![d_out, d_in], gw)?);
                    }
                    if self.needs(*bias) {
                        let mut gb = vec![0.0; d_out];
                        for r in 0..batch {
                            gb.iter_mut().zip(g.row(r)).for_each(|(a, b)| *a += b);
                        }
                        let shape = self.value(*bias).shape().to_vec();
                        accumulate(&mut slots[bias.0], RealTensor::new(shape, gb)?);
                    }
                }
                Op::Relu(input) => {
                    // Subgradient at exactly zero is taken as zero.
                    let x = self.value(*input);
                    let data = g
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                        .collect();
                    accumulate(&mut slots[input.0], RealTensor::new(x.shape().to_vec(), data)?);
                }
                Op::Add(a, b) => {
                    if self.needs(*a) {
                        accumulate(&mut slots[a.0], g.clone());
                    }
                    if self.needs(*b) {
                        accumulate(&mut slots[b.0], g.clone());
                    }
                }
                Op::Mul(a, b) => {
                    let (x, y) = (self.value(*a), self.value(*b));
                    if self.needs(*a) {
                        let d = g.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
                        accumulate(&mut slots[a.0], RealTensor::new(x.shape().to_vec(), d)?);
                    }
                    if self.needs(*b) {
                        let d = g.data().iter().zip(x.data()).map(|(p, q)| p * q).collect();
                        accumulate(&mut slots[b.0], RealTensor::new(y.shape().to_vec(), d)?);
                    }
                }
                Op::Sum(input) => {
                    let shape = self.value(*input).shape().to_vec();
                    let n = self.value(*input).len();
                    accumulate(&mut slots[input.0], RealTensor::new(shape, vec![g.data()[0]; n])?);
                }
                Op::SoftmaxCe { logits, targets, probs } => {
                    let scale = g.data()[0] / targets.len() as f64;
                    let mut d = probs.clone();
                    let m = d.cols();
                    for (r, &t) in targets.iter().enumerate() {
                        d.data_mut()[r * m + t] -= 1.0;
                    }
                    d.data_mut().iter_mut().for_each(|v| *v *= scale);
                    accumulate(&mut slots[logits.0], d);
                }
                Op::Custom { inputs, op } => {
                    let values: Vec<&RealTensor> = inputs.iter().map(|&i| self.value(i)).collect();
                    let grads = op.backward(&values, &node.value, &g);
                    for (&id, grad) in inputs.iter().zip(grads) {
                        if let Some(grad) = grad {
                            if self.needs(id) {
                                accumulate(&mut slots[id.0], grad);
                            }
                        }
                    }
                }
            }
            slots[idx] = Some(g);
        }

        for (i, s) in slots.iter().enumerate() {
            if let Some(g) = s {
                if !g.is_finite() {
                    return Err(Error::NonFinite(format!("gradient of node {i}")));
                }
            }
        }
        self.backward_done = true;
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        // Only nodes that require gradients keep their slot.
        let slots = slots
            .into_iter()
            .zip(&self.nodes)
            .map(|(s, n)| if n.requires_grad { s } else { None })
            .collect();
        Ok(Gradients { slots, shapes })
    }
}
