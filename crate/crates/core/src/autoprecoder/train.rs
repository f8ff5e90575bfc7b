use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::chain::{record_chain, ChainOptions, ChainSample, ModelNodes, NoiseLevel};
use super::model::NnModel;
use crate::autodiff::{Adamax, AdamaxConfig, RealTensor, Tape};
use crate::channel::{sample_channel, ChannelRealization};
use crate::error::{Error, Result};
use crate::pa::{Amplifier, PaSetup};
use crate::precoding::{mp_precoder, zf_precoder, PrecoderKind, PrecoderState};
use crate::rng::{complex_gaussian, stream_rng, Stream};

/// Redraws allowed before a channel index is declared unusable.
pub const MAX_CHANNEL_DRAWS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub antennas: usize,
    pub users: usize,
    pub order: usize,
    pub hidden_tx: Vec<usize>,
    pub hidden_rx: Vec<usize>,
    pub ibo_db: f64,
    /// Training SNR range in dB; one SNR is drawn uniformly per batch.
    pub snr_db: [f64; 2],
    pub batch_size: usize,
    pub num_channels: usize,
    /// Passes over the channel pool.
    pub epochs: usize,
    pub optimizer: AdamaxConfig,
    pub seed: u64,
    pub linear_precoder: PrecoderKind,
    pub gain_compensation: bool,
    /// Window (in steps) over which the loss must improve.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            antennas: 100,
            users: 10,
            order: 16,
            hidden_tx: vec![16],
            hidden_rx: vec![16],
            ibo_db: 1.0,
            snr_db: [0.0, 30.0],
            batch_size: 512,
            num_channels: 100_000,
            epochs: 10,
            optimizer: AdamaxConfig::default(),
            seed: 0,
            linear_precoder: PrecoderKind::Zf,
            gain_compensation: true,
            patience: 200,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("antennas", self.antennas),
            ("users", self.users),
            ("order", self.order),
            ("batch_size", self.batch_size),
            ("num_channels", self.num_channels),
            ("epochs", self.epochs),
            ("patience", self.patience),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("`{k}` must be positive")));
            }
        }
        if self.users > self.antennas {
            return Err(Error::Config(format!(
                "`users` ({}) exceeds `antennas` ({})",
                self.users, self.antennas
            )));
        }
        let root = (self.order as f64).sqrt().round() as usize;
        if root * root != self.order || self.order < 4 {
            return Err(Error::Config(format!("`order` must be a square QAM order, got {}", self.order)));
        }
        if self.hidden_tx.contains(&0) || self.hidden_rx.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        if !(self.snr_db[0] <= self.snr_db[1]) || !self.ibo_db.is_finite() {
            return Err(Error::Config(format!("invalid `snr_db` range {:?}", self.snr_db)));
        }
        let o = &self.optimizer;
        if !(o.lr >= 0.0 && (0.0..1.0).contains(&o.beta1) && (0.0..1.0).contains(&o.beta2) && o.eps > 0.0) {
            return Err(Error::Config(format!("invalid optimizer settings {o:?}")));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self) -> usize {
        self.num_channels.div_ceil(self.batch_size)
    }

    pub fn total_steps(&self) -> usize {
        self.epochs * self.steps_per_epoch()
    }
}

/// Draws channel `index` of the pool together with its precoder, redrawing
/// from the same stream while the channel is rejected. Returns the number of
/// redraws.
pub fn pooled_channel(
    seed: u64,
    stream: Stream,
    index: u64,
    users: usize,
    antennas: usize,
    kind: PrecoderKind,
    mu: &[f64],
) -> Result<(ChannelRealization, PrecoderState, usize)> {
    let mut rng = stream_rng(seed, stream, &[index]);
    let mut last = None;
    for redraws in 0..MAX_CHANNEL_DRAWS {
        let channel = sample_channel(users, antennas, 1, &mut rng)?;
        let precoder = match kind {
            PrecoderKind::Zf => zf_precoder(&channel),
            PrecoderKind::Mp => mp_precoder(&channel, mu),
        };
        match precoder {
            Ok(p) => return Ok((channel, p, redraws)),
            Err(e @ (Error::Singular { .. } | Error::Degenerate(_))) => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one draw"))
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: NnModel,
    pub constellation: Vec<Complex64>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub losses: Vec<f64>,
    pub steps: usize,
    pub resampled_channels: usize,
    pub warning: Option<String>,
}

/// Initial parameters: Glorot everywhere except a zero output layer in the
/// decoder, so the untrained receiver predicts the uniform distribution.
pub fn initial_model(config: &TrainConfig) -> Result<NnModel> {
    let mut rng = stream_rng(config.seed, Stream::Init, &[]);
    let mut model = NnModel::new(config.order, &config.hidden_tx, &config.hidden_rx, &mut rng)?;
    if let Some(last) = model.decoder_mut().layers_mut().last_mut() {
        last.weight.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    Ok(model)
}

/// Builds batch `step`: fresh messages and noise per sample, channels cycled
/// through the pool.
pub fn training_batch(config: &TrainConfig, mu: &[f64], step: usize) -> Result<(Vec<ChainSample>, usize)> {
    let mut redraws = 0;
    let mut batch = Vec::with_capacity(config.batch_size);
    for b in 0..config.batch_size {
        let g = (step * config.batch_size + b) as u64;
        let (channel, precoder, r) = pooled_channel(
            config.seed,
            Stream::Channel,
            g % config.num_channels as u64,
            config.users,
            config.antennas,
            config.linear_precoder,
            mu,
        )?;
        redraws += r;
        let mut data = stream_rng(config.seed, Stream::Data, &[g]);
        let messages = (0..config.users).map(|_| data.random_range(0..config.order)).collect();
        let mut noise_rng = stream_rng(config.seed, Stream::Noise, &[g]);
        let noise = (0..config.users).map(|_| complex_gaussian(&mut noise_rng, 1.0)).collect();
        batch.push(ChainSample {
            channel: Arc::new(channel.matrix().clone()),
            precoder: Arc::new(precoder),
            messages,
            noise,
        });
    }
    Ok((batch, redraws))
}

/// Linear SNR of batch `step`.
pub fn training_snr(config: &TrainConfig, step: usize) -> f64 {
    let [lo, hi] = config.snr_db;
    let db = if hi > lo {
        stream_rng(config.seed, Stream::Snr, &[step as u64]).random_range(lo..hi)
    } else {
        lo
    };
    10f64.powf(db / 10.0)
}

/// Trains the NN-precoder and NN-decoder jointly through the full chain.
///
/// `mu` is required when training with the matrix-polynomial precoder.
pub fn train(config: &TrainConfig, pa: &PaSetup, mu: Option<&[f64]>) -> Result<TrainOutcome> {
    config.validate()?;
    pa.params.validate()?;
    let mu = match (config.linear_precoder, mu) {
        (PrecoderKind::Mp, None) => {
            return Err(Error::Config("training with `mp` needs polynomial coefficients".into()))
        }
        (_, m) => m.unwrap_or(&[]),
    };
    let amplifier = pa.amplifier(config.ibo_db, config.antennas)?;
    let options = ChainOptions {
        gain_compensation: config.gain_compensation,
    };
    let mut model = initial_model(config)?;
    let mut optimizer = Adamax::new(config.optimizer);
    let steps = config.total_steps();
    let mut losses = Vec::with_capacity(steps);
    let mut resampled = 0;

    for step in 0..steps {
        let (batch, r) = training_batch(config, mu, step)?;
        resampled += r;
        let snr = training_snr(config, step);
        let (loss, grads) = loss_and_gradients(&model, &batch, &amplifier, NoiseLevel::Snr(snr), options)
            .map_err(|e| match e {
                Error::NonFinite(_) => Error::Divergence { step, loss: f64::NAN },
                other => other,
            })?;
        if !loss.is_finite() {
            return Err(Error::Divergence { step, loss });
        }
        losses.push(loss);
        optimizer.step(&mut model.params_mut(), &grads)?;
    }

    let warning = stalled(&losses, config.patience);
    Ok(TrainOutcome {
        constellation: model.constellation()?,
        model,
        initial_loss: losses.first().copied().unwrap_or(f64::NAN),
        final_loss: losses.last().copied().unwrap_or(f64::NAN),
        losses,
        steps,
        resampled_channels: resampled,
        warning,
    })
}

/// Mean cross-entropy of a batch and its gradient with respect to every
/// model parameter (precoder first, then decoder).
pub fn loss_and_gradients(
    model: &NnModel,
    batch: &[ChainSample],
    amplifier: &Amplifier,
    noise: NoiseLevel,
    options: ChainOptions,
) -> Result<(f64, Vec<RealTensor>)> {
    let mut tape = Tape::new();
    let nodes = ModelNodes::register(model, &mut tape);
    let chain = record_chain(&mut tape, model, &nodes, batch, amplifier, noise, options)?;
    let loss = tape.value(chain.loss).data()[0];
    let grads = tape.backward(chain.loss)?;
    let mut g = nodes.precoder.gradients(&grads);
    g.extend(nodes.decoder.gradients(&grads));
    Ok((loss, g))
}

fn stalled(losses: &[f64], patience: usize) -> Option<String> {
    if losses.len() < 2 * patience {
        return None;
    }
    let mean = |w: &[f64]| w.iter().sum::<f64>() / w.len() as f64;
    let (head, tail) = losses.split_at(losses.len() - patience);
    let best = head.windows(patience).step_by(patience).map(mean).fold(f64::INFINITY, f64::min);
    let last = mean(tail);
    (last >= best).then(|| {
        format!("loss did not improve over the last {patience} steps (window mean {last:.6} vs best {best:.6})")
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pa::PaParams;

    fn tiny() -> TrainConfig {
        TrainConfig {
            antennas: 8,
            users: 2,
            batch_size: 16,
            num_channels: 64,
            epochs: 2,
            patience: 4,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn initial_loss_is_uniform() {
        let out = train(&tiny(), &PaSetup::new(PaParams::rapp_3gpp_nr()), None).unwrap();
        assert!((out.initial_loss - 16f64.ln()).abs() < 1e-12);
        assert_eq!(out.steps, 8);
        assert_eq!(out.losses.len(), 8);
    }

    #[test]
    fn training_is_deterministic() {
        let pa = PaSetup::new(PaParams::rapp_3gpp_nr());
        let a = train(&tiny(), &pa, None).unwrap();
        let b = train(&tiny(), &pa, None).unwrap();
        assert_eq!(a.model, b.model);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.losses), bits(&b.losses));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let pa = PaSetup::new(PaParams::rapp_3gpp_nr());
        for bad in [
            TrainConfig { order: 8, ..tiny() },
            TrainConfig { users: 9, ..tiny() },
            TrainConfig { batch_size: 0, ..tiny() },
            TrainConfig { snr_db: [10.0, 0.0], ..tiny() },
        ] {
            assert!(matches!(train(&bad, &pa, None), Err(Error::Config(_))));
        }
        let mp = TrainConfig { linear_precoder: PrecoderKind::Mp, ..tiny() };
        assert!(matches!(train(&mp, &pa, None), Err(Error::Config(_))));
    }

    #[test]
    fn stall_detection() {
        let falling: Vec<f64> = (0..20).map(|i| 10.0 - i as f64).collect();
        assert!(stalled(&falling, 5).is_none());
        let flat = vec![1.0; 20];
        assert!(stalled(&flat, 5).is_some());
    }
}
