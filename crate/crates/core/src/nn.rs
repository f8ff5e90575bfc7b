//! Fully-connected ReLU networks shared by the autoprecoder and the DPD.

use rand::Rng;

use crate::autodiff::{Gradients, NodeId, RealTensor, Tape};
use crate::error::{Error, Result};

/// Dense layer `y = K x + n` with `K: [d_out × d_in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: RealTensor,
    pub bias: RealTensor,
}

impl DenseLayer {
    /// Glorot-uniform weights and zero bias.
    pub fn glorot<R: Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (d_in + d_out) as f64).sqrt();
        let w = (0..d_in * d_out).map(|_| rng.random_range(-limit..limit)).collect();
        Self {
            weight: RealTensor::new(vec![d_out, d_in], w).expect("shape"),
            bias: RealTensor::zeros(&[d_out]),
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn d_out(&self) -> usize {
        self.weight.shape()[0]
    }
}

/// Stack of dense layers with ReLU after every layer but the last.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
}

/// Tape handles for one registration of an [`Mlp`]'s parameters.
#[derive(Debug, Clone)]
pub struct MlpNodes {
    params: Vec<(NodeId, NodeId)>,
}

impl MlpNodes {
    /// Gradients in the same order as [`Mlp::params_mut`].
    pub fn gradients(&self, grads: &Gradients) -> Vec<RealTensor> {
        self.params
            .iter()
            .flat_map(|&(w, b)| [grads.wrt(w), grads.wrt(b)])
            .collect()
    }

    pub fn weight(&self, layer: usize) -> NodeId {
        self.params[layer].0
    }
}

impl Mlp {
    /// `widths = [d_in, hidden..., d_out]`.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], rng: &mut R) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!("invalid layer widths {widths:?}")));
        }
        let layers = widths.windows(2).map(|w| DenseLayer::glorot(w[0], w[1], rng)).collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].d_out() != pair[1].d_in() {
                return Err(Error::dim("Mlp::from_layers", pair[0].weight.shape(), pair[1].weight.shape()));
            }
        }
        for l in &layers {
            if l.bias.len() != l.d_out() {
                return Err(Error::dim("Mlp::from_layers bias", l.weight.shape(), l.bias.shape()));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers[0].d_in()];
        w.extend(self.layers.iter().map(DenseLayer::d_out));
        w
    }

    pub fn d_in(&self) -> usize {
        self.layers[0].d_in()
    }

    pub fn d_out(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::d_out)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Real multiplications for one forward pass (weights only).
    pub fn multiplications(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len()).sum()
    }

    pub fn params_mut(&mut self) -> Vec<&mut RealTensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn register(&self, tape: &mut Tape) -> MlpNodes {
        MlpNodes {
            params: self
                .layers
                .iter()
                .map(|l| (tape.param(l.weight.clone()), tape.param(l.bias.clone())))
                .collect(),
        }
    }

    /// Records the forward pass of `input: [batch × d_in]`; returns the
    /// pre-activation output of the last layer.
    pub fn forward_tape(&self, tape: &mut Tape, nodes: &MlpNodes, input: NodeId) -> Result<NodeId> {
        let mut h = input;
        let last = nodes.params.len() - 1;
        for (i, &(w, b)) in nodes.params.iter().enumerate() {
            h = tape.dense(h, w, b)?;
            if i < last {
                h = tape.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Forward pass of a single input vector.
    pub fn forward_one(&self, input: &[f64]) -> Vec<f64> {
        let mut h = input.to_vec();
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let d_in = l.d_in();
            let mut out: Vec<f64> = l
                .weight
                .data()
                .chunks(d_in)
                .zip(l.bias.data())
                .map(|(row, b)| b + row.iter().zip(&h).map(|(w, x)| w * x).sum::<f64>())
                .collect();
            if i < last {
                out.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            h = out;
        }
        h
    }

    /// Forward pass of every row of `input`.
    pub fn forward(&self, input: &RealTensor) -> Result<RealTensor> {
        if input.cols() != self.d_in() {
            return Err(Error::dim("Mlp::forward", input.shape(), self.layers[0].weight.shape()));
        }
        let mut data = Vec::with_capacity(input.rows() * self.d_out());
        for r in 0..input.rows() {
            data.extend(self.forward_one(input.row(r)));
        }
        RealTensor::new(vec![input.rows(), self.d_out()], data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    #[test]
    fn tape_and_direct_forward_agree() {
        let mut rng = stream_rng(1, Stream::Init, &[]);
        let net = Mlp::new(&[3, 5, 4, 2], &mut rng).unwrap();
        let x = RealTensor::from_rows(&[vec![0.1, -0.2, 0.3], vec![1.0, 0.5, -1.5]]).unwrap();
        let mut tape = Tape::new();
        let nodes = net.register(&mut tape);
        let xi = tape.constant(x.clone());
        let y = net.forward_tape(&mut tape, &nodes, xi).unwrap();
        let direct = net.forward(&x).unwrap();
        for (a, b) in tape.value(y).data().iter().zip(direct.data()) {
            assert!((a - b).abs() < 1e-14);
        }
        assert_eq!(net.widths(), vec![3, 5, 4, 2]);
        assert_eq!(net.param_count(), 3 * 5 + 5 + 5 * 4 + 4 + 4 * 2 + 2);
    }

    #[test]
    fn dpd_shaped_network_multiplications() {
        let net = Mlp::new(&[2, 32, 2], &mut stream_rng(0, Stream::Init, &[])).unwrap();
        assert_eq!(net.multiplications(), 128);
    }
}
