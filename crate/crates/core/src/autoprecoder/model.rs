use num_complex::Complex64;
use rand::Rng;

use crate::autodiff::RealTensor;
use crate::error::{Error, Result};
use crate::nn::Mlp;

/// A transmitted message, 1-based at the interface and 0-based inside.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Message {
    index: usize,
    order: usize,
}

impl Message {
    /// `c ∈ {1..order}`.
    pub fn new(c: usize, order: usize) -> Result<Self> {
        if c == 0 || c > order {
            return Err(Error::Argument(format!("message {c} outside 1..={order}")));
        }
        Ok(Self { index: c - 1, order })
    }

    pub(crate) fn from_zero_based(index: usize, order: usize) -> Self {
        debug_assert!(index < order);
        Self { index, order }
    }

    pub fn from_one_hot(v: &[f64]) -> Result<Self> {
        let mut hot = None;
        for (i, &x) in v.iter().enumerate() {
            if x == 1.0 && hot.is_none() {
                hot = Some(i);
            } else if x != 0.0 {
                return Err(Error::Argument(format!("not a one-hot vector: entry {i} = {x}")));
            }
        }
        hot.map(|i| Self::from_zero_based(i, v.len()))
            .ok_or_else(|| Error::Argument("one-hot vector has no active entry".into()))
    }

    /// 1-based index.
    pub fn index(&self) -> usize {
        self.index + 1
    }

    pub fn zero_based(&self) -> usize {
        self.index
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn one_hot(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.order];
        v[self.index] = 1.0;
        v
    }
}

/// Argmax of a probability row, 1-based; ties go to the lowest index.
pub fn decode(probabilities: &[f64]) -> usize {
    argmax(probabilities) + 1
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn softmax_rows(logits: &RealTensor) -> RealTensor {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    out
}

/// NN-precoder (`M → ℓ_t… → 2`) and NN-decoder (`2 → ℓ_r… → M`), shared by
/// all users.
#[derive(Debug, Clone, PartialEq)]
pub struct NnModel {
    precoder: Mlp,
    decoder: Mlp,
}

impl NnModel {
    pub fn new<R: Rng + ?Sized>(order: usize, hidden_tx: &[usize], hidden_rx: &[usize], rng: &mut R) -> Result<Self> {
        if order < 2 {
            return Err(Error::Config(format!("constellation order must be at least 2, got {order}")));
        }
        let mut tx = vec![order];
        tx.extend_from_slice(hidden_tx);
        tx.push(2);
        let mut rx = vec![2];
        rx.extend_from_slice(hidden_rx);
        rx.push(order);
        Self::from_parts(Mlp::new(&tx, rng)?, Mlp::new(&rx, rng)?)
    }

    pub fn from_parts(precoder: Mlp, decoder: Mlp) -> Result<Self> {
        let m = precoder.d_in();
        if precoder.d_out() != 2 || decoder.d_in() != 2 || decoder.d_out() != m {
            return Err(Error::Config(format!(
                "incompatible networks: precoder {:?}, decoder {:?}",
                precoder.widths(),
                decoder.widths()
            )));
        }
        Ok(Self { precoder, decoder })
    }

    pub fn order(&self) -> usize {
        self.precoder.d_in()
    }

    pub fn precoder(&self) -> &Mlp {
        &self.precoder
    }

    pub fn decoder(&self) -> &Mlp {
        &self.decoder
    }

    pub fn precoder_mut(&mut self) -> &mut Mlp {
        &mut self.precoder
    }

    pub fn decoder_mut(&mut self) -> &mut Mlp {
        &mut self.decoder
    }

    /// Precoder then decoder parameters, in [`Mlp::params_mut`] order.
    pub fn params_mut(&mut self) -> Vec<&mut RealTensor> {
        let mut p = self.precoder.params_mut();
        p.extend(self.decoder.params_mut());
        p
    }

    pub fn precoder_param_count(&self) -> usize {
        self.precoder.param_count()
    }

    pub fn decoder_param_count(&self) -> usize {
        self.decoder.param_count()
    }

    /// Raw precoder outputs for every message, `[M × 2]`.
    pub fn raw_codebook(&self) -> RealTensor {
        self.precoder
            .forward(&RealTensor::identity(self.order()))
            .expect("identity matches precoder input")
    }

    /// The learned constellation, scaled to unit mean power over the codebook.
    pub fn constellation(&self) -> Result<Vec<Complex64>> {
        let raw = self.raw_codebook();
        let points: Vec<Complex64> = (0..raw.rows()).map(|r| Complex64::new(raw.row(r)[0], raw.row(r)[1])).collect();
        let p = points.iter().map(|c| c.norm_sqr()).sum::<f64>() / points.len() as f64;
        if !(p > 0.0) || !p.is_finite() {
            return Err(Error::Degenerate("precoder maps every message to zero".into()));
        }
        let k = 1.0 / p.sqrt();
        Ok(points.into_iter().map(|c| c * k).collect())
    }

    /// Normalized precoder outputs for a batch of one-hot rows, `[batch × 2]`.
    ///
    /// In strict mode every row must be one-hot. Otherwise rows are fed to the
    /// network as-is and scaled by the codebook normalization.
    pub fn precoder_forward(&self, one_hot: &RealTensor, strict: bool) -> Result<RealTensor> {
        let m = self.order();
        if one_hot.shape().len() != 2 || one_hot.cols() != m {
            return Err(Error::dim("precoder_forward", one_hot.shape(), &[one_hot.rows(), m]));
        }
        let codebook = self.constellation()?;
        let mut data = Vec::with_capacity(one_hot.rows() * 2);
        if strict {
            for r in 0..one_hot.rows() {
                let c = codebook[Message::from_one_hot(one_hot.row(r))?.zero_based()];
                data.extend([c.re, c.im]);
            }
        } else {
            let raw = self.raw_codebook();
            let scale = (raw.rows() as f64 / raw.data().iter().map(|v| v * v).sum::<f64>()).sqrt();
            let out = self.precoder.forward(one_hot)?;
            data.extend(out.data().iter().map(|v| v * scale));
        }
        RealTensor::new(vec![one_hot.rows(), 2], data)
    }

    /// Softmax probabilities for received points `[batch × 2]`.
    pub fn decoder_forward(&self, received: &RealTensor) -> Result<RealTensor> {
        Ok(softmax_rows(&self.decoder.forward(received)?))
    }
}
