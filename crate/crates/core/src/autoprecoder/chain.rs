//! The end-to-end chain: NN-precoder, linear precoder, PAs, channel, noise,
//! gain compensation and NN-decoder.

use std::sync::Arc;

use num_complex::Complex64;

use super::model::{softmax_rows, Message, NnModel};
use super::ops::{BatchComplexLinear, CodebookNormalize, GatherRows, Reshape, ScaleRows};
use crate::autodiff::{NodeId, RealTensor, Tape};
use crate::error::{Error, Result};
use crate::linalg::{CMatrix, ComplexMap};
use crate::nn::MlpNodes;
use crate::pa::{Amplifier, AmplifierOp};
use crate::precoding::PrecoderState;

/// Receiver-side options.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainOptions {
    /// Divide the received sample by `ĝ = G·α/√ς_W` before decoding.
    pub gain_compensation: bool,
}

impl Default for ChainOptions {
    fn default() -> Self {
        Self { gain_compensation: true }
    }
}

/// `ĝ = G·α/√ς_W`
pub fn receiver_gain(amplifier: &Amplifier, precoder: &PrecoderState) -> f64 {
    amplifier.small_signal_gain() / precoder.varsigma().sqrt()
}

fn check_shapes(channel: &CMatrix, precoder: &PrecoderState, users: usize) -> Result<()> {
    if channel.rows() != precoder.users() || channel.cols() != precoder.antennas() || users != channel.rows() {
        return Err(Error::Config(format!(
            "inconsistent chain: H is {}x{}, precoder serves {} users on {} antennas, {} messages",
            channel.rows(),
            channel.cols(),
            precoder.users(),
            precoder.antennas(),
            users
        )));
    }
    Ok(())
}

/// Result of one pass through the chain for a single channel use.
#[derive(Debug, Clone)]
pub struct ChainOutput {
    /// Per-user samples fed to the decoder.
    pub decoder_inputs: Vec<Complex64>,
    /// Per-user probability vectors.
    pub probabilities: Vec<Vec<f64>>,
}

/// Runs one channel use through the chain. `noise` holds the already scaled
/// per-user noise samples.
#[allow(clippy::too_many_arguments)]
pub fn end_to_end_forward(
    model: &NnModel,
    messages: &[Message],
    channel: &CMatrix,
    precoder: &PrecoderState,
    amplifier: &Amplifier,
    noise: &[Complex64],
    options: ChainOptions,
) -> Result<ChainOutput> {
    check_shapes(channel, precoder, messages.len())?;
    if noise.len() != messages.len() {
        return Err(Error::dim("end_to_end_forward noise", &[noise.len()], &[messages.len()]));
    }
    let codebook = model.constellation()?;
    let s: Vec<Complex64> = messages.iter().map(|m| codebook[m.zero_based()]).collect();
    let decoder_inputs = received_samples(&s, channel, precoder, amplifier, noise, options);
    let flat: Vec<f64> = decoder_inputs.iter().flat_map(|z| [z.re, z.im]).collect();
    let probs = model.decoder_forward(&RealTensor::new(vec![messages.len(), 2], flat)?)?;
    Ok(ChainOutput {
        decoder_inputs,
        probabilities: (0..probs.rows()).map(|r| probs.row(r).to_vec()).collect(),
    })
}

/// Linear part of the chain from user symbols to decoder inputs.
pub fn received_samples(
    symbols: &[Complex64],
    channel: &CMatrix,
    precoder: &PrecoderState,
    amplifier: &Amplifier,
    noise: &[Complex64],
    options: ChainOptions,
) -> Vec<Complex64> {
    let x = precoder.precode(symbols);
    let y = amplifier.amplify(&x);
    let mut r = channel.mul_vec(&y);
    let k = if options.gain_compensation {
        1.0 / receiver_gain(amplifier, precoder)
    } else {
        1.0
    };
    r.iter_mut().zip(noise).for_each(|(v, n)| *v = (*v + n) * k);
    r
}

/// One training sample: a channel realization with its precoder, the users'
/// 0-based messages and unit-variance noise draws.
#[derive(Clone)]
pub struct ChainSample {
    pub channel: Arc<CMatrix>,
    pub precoder: Arc<PrecoderState>,
    pub messages: Vec<usize>,
    pub noise: Vec<Complex64>,
}

/// How the unit-variance noise draws are scaled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseLevel {
    /// Fixed per-user variance σ_b².
    Variance(f64),
    /// Linear SNR; `σ_b² = E‖y‖²/snr` with `E‖y‖²` the batch mean PA output
    /// power, treated as a constant.
    Snr(f64),
}

/// Tape handles for both networks.
#[derive(Debug, Clone)]
pub struct ModelNodes {
    pub precoder: MlpNodes,
    pub decoder: MlpNodes,
}

impl ModelNodes {
    pub fn register(model: &NnModel, tape: &mut Tape) -> Self {
        Self {
            precoder: model.precoder().register(tape),
            decoder: model.decoder().register(tape),
        }
    }
}

/// Nodes of a recorded batch.
#[derive(Debug, Clone, Copy)]
pub struct ChainNodes {
    pub constellation: NodeId,
    pub pa_output: NodeId,
    pub decoder_input: NodeId,
    pub logits: NodeId,
    pub loss: NodeId,
    pub noise_variance: f64,
}

/// Records the whole chain for a batch and its mean cross-entropy loss.
pub fn record_chain(
    tape: &mut Tape,
    model: &NnModel,
    nodes: &ModelNodes,
    batch: &[ChainSample],
    amplifier: &Amplifier,
    noise: NoiseLevel,
    options: ChainOptions,
) -> Result<ChainNodes> {
    let first = batch.first().ok_or_else(|| Error::Argument("empty batch".into()))?;
    let users = first.messages.len();
    for s in batch {
        check_shapes(&s.channel, &s.precoder, s.messages.len())?;
        if s.messages.len() != users || s.noise.len() != users {
            return Err(Error::Config("batch samples disagree on the number of users".into()));
        }
    }
    let m = model.order();
    let b = batch.len();

    let eye = tape.constant(RealTensor::identity(m));
    let raw = model.precoder().forward_tape(tape, &nodes.precoder, eye)?;
    let constellation = tape.custom(&[raw], Box::new(CodebookNormalize))?;

    let targets: Vec<usize> = batch.iter().flat_map(|s| s.messages.iter().copied()).collect();
    let symbols = tape.custom(&[constellation], Box::new(GatherRows { indices: targets.clone() }))?;
    let s = tape.custom(&[symbols], Box::new(Reshape { shape: vec![b, 2 * users] }))?;

    let precoders: Vec<Arc<dyn ComplexMap>> = batch.iter().map(|s| s.precoder.clone() as Arc<dyn ComplexMap>).collect();
    let x = tape.custom(&[s], Box::new(BatchComplexLinear { maps: precoders }))?;
    let y = tape.custom(&[x], Box::new(AmplifierOp(*amplifier)))?;
    let channels: Vec<Arc<dyn ComplexMap>> = batch.iter().map(|s| s.channel.clone() as Arc<dyn ComplexMap>).collect();
    let hy = tape.custom(&[y], Box::new(BatchComplexLinear { maps: channels }))?;

    let variance = match noise {
        NoiseLevel::Variance(v) => v,
        NoiseLevel::Snr(snr) => {
            let yv = tape.value(y);
            yv.data().iter().map(|v| v * v).sum::<f64>() / b as f64 / snr
        }
    };
    let sigma = variance.sqrt();
    let noise_data: Vec<f64> = batch
        .iter()
        .flat_map(|s| s.noise.iter().flat_map(|n| [n.re * sigma, n.im * sigma]))
        .collect();
    let noise_node = tape.constant(RealTensor::new(vec![b, 2 * users], noise_data)?);
    let r = tape.add(hy, noise_node)?;

    let r = if options.gain_compensation {
        let factors = batch.iter().map(|s| 1.0 / receiver_gain(amplifier, &s.precoder)).collect();
        tape.custom(&[r], Box::new(ScaleRows { factors }))?
    } else {
        r
    };
    let decoder_input = tape.custom(&[r], Box::new(Reshape { shape: vec![b * users, 2] }))?;
    let logits = model.decoder().forward_tape(tape, &nodes.decoder, decoder_input)?;
    let loss = tape.softmax_cross_entropy(logits, &targets)?;
    Ok(ChainNodes {
        constellation,
        pa_output: y,
        decoder_input,
        logits,
        loss,
        noise_variance: variance,
    })
}

/// Probabilities implied by recorded logits.
pub fn chain_probabilities(tape: &Tape, nodes: &ChainNodes) -> RealTensor {
    softmax_rows(tape.value(nodes.logits))
}
