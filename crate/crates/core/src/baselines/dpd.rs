//! MLP predistorter fitted by indirect learning.
//!
//! The network sees one complex sample as `(Re, Im)` and outputs a
//! correction added to its input, `DPD(x) = x + R(x)`. Samples are rotated
//! into the first quadrant by a multiple of 90° before `R` and rotated back
//! afterwards, which uses no multiplications.

use std::f64::consts::PI;
use std::path::Path;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adamax, AdamaxConfig, RealTensor, Tape};
use crate::container::Container;
use crate::error::{Error, Result};
use crate::nn::{DenseLayer, Mlp};
use crate::pa::{Amplifier, PaSetup};
use crate::rng::{complex_gaussian, stream_rng, Stream};

pub const DPD_KIND: &str = "dpd";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpdConfig {
    pub hidden: usize,
    /// Largest PA output the cascade is asked to produce, as a fraction of
    /// the saturation level. Larger requests are clipped to it.
    pub max_output_fraction: f64,
    pub samples: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub final_lr: f64,
    pub seed: u64,
}

impl Default for DpdConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            max_output_fraction: 0.95,
            samples: 20_000,
            steps: 6_000,
            batch_size: 1024,
            lr: 1e-2,
            final_lr: 1e-4,
            seed: 0,
        }
    }
}

impl DpdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.samples == 0 || self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("dpd sizes must be positive".into()));
        }
        if !(self.max_output_fraction > 0.0 && self.max_output_fraction < 1.0) {
            return Err(Error::Config(format!(
                "`max_output_fraction` must lie in (0, 1), got {}",
                self.max_output_fraction
            )));
        }
        if !(self.lr > 0.0 && self.final_lr > 0.0) {
            return Err(Error::Config("dpd learning rates must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpdMetadata {
    pub ibo_db: f64,
    /// Small-signal PA gain `G·α` the cascade is linearized to.
    pub gain: f64,
    /// Input amplitudes above this are clipped before predistortion.
    pub max_input_amplitude: f64,
    /// RMS residual error on the training set, relative to the RMS target.
    pub train_relative_rmse: f64,
    pub steps: usize,
    pub samples: usize,
    pub seed: u64,
}

/// Trained predistorter shared by all antenna branches.
#[derive(Debug, Clone, PartialEq)]
pub struct DpdModel {
    mlp: Mlp,
    metadata: DpdMetadata,
}

fn fold(x: Complex64) -> (Complex64, u8) {
    let (re, im) = (x.re, x.im);
    if re > 0.0 && im >= 0.0 || re == 0.0 && im == 0.0 {
        (x, 0)
    } else if re <= 0.0 && im > 0.0 {
        (Complex64::new(im, -re), 1)
    } else if re < 0.0 && im <= 0.0 {
        (Complex64::new(-re, -im), 2)
    } else {
        (Complex64::new(-im, re), 3)
    }
}

fn unfold(x: Complex64, k: u8) -> Complex64 {
    match k {
        0 => x,
        1 => Complex64::new(-x.im, x.re),
        2 => Complex64::new(-x.re, -x.im),
        _ => Complex64::new(x.im, -x.re),
    }
}

/// Counts of clipped samples.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipStats {
    pub samples: u64,
    pub clipped: u64,
}

impl ClipStats {
    pub fn merge(&mut self, other: ClipStats) {
        self.samples += other.samples;
        self.clipped += other.clipped;
    }

    pub fn fraction(&self) -> f64 {
        if self.samples == 0 {
            0.0
        } else {
            self.clipped as f64 / self.samples as f64
        }
    }
}

impl DpdModel {
    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub fn metadata(&self) -> &DpdMetadata {
        &self.metadata
    }

    /// Real multiplications per predistorted sample.
    pub fn multiplications(&self) -> usize {
        self.mlp.multiplications()
    }

    /// Predistorts one sample; the flag reports clipping.
    pub fn apply_sample(&self, x: Complex64) -> (Complex64, bool) {
        let limit = self.metadata.max_input_amplitude;
        let rho = x.norm();
        let (x, clipped) = if rho > limit { (x * (limit / rho), true) } else { (x, false) };
        let (u, k) = fold(x);
        let r = self.mlp.forward_one(&[u.re, u.im]);
        (x + unfold(Complex64::new(r[0], r[1]), k), clipped)
    }

    pub fn apply(&self, x: &[Complex64]) -> (Vec<Complex64>, ClipStats) {
        let mut stats = ClipStats {
            samples: x.len() as u64,
            clipped: 0,
        };
        let out = x
            .iter()
            .map(|&v| {
                let (y, c) = self.apply_sample(v);
                stats.clipped += u64::from(c);
                y
            })
            .collect();
        (out, stats)
    }

    pub fn to_container(&self) -> Result<Container> {
        let metadata = toml::to_string(&self.metadata).map_err(|e| Error::Format(e.to_string()))?;
        let mut c = Container::new(DPD_KIND, String::new(), metadata);
        for (i, l) in self.mlp.layers().iter().enumerate() {
            c.push(format!("mlp.{i}.weight"), l.weight.clone());
            c.push(format!("mlp.{i}.bias"), l.bias.clone());
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != DPD_KIND {
            return Err(Error::Format(format!("container holds a `{}`, expected `{DPD_KIND}`", c.kind)));
        }
        let metadata = toml::from_str(&c.metadata).map_err(|e| Error::Format(format!("metadata block: {e}")))?;
        let mut layers = Vec::new();
        while let Ok(w) = c.tensor(&format!("mlp.{}.weight", layers.len())) {
            let b = c.tensor(&format!("mlp.{}.bias", layers.len()))?;
            layers.push(DenseLayer {
                weight: w.clone(),
                bias: b.clone(),
            });
        }
        let mlp = Mlp::from_layers(layers).map_err(|e| Error::Format(e.to_string()))?;
        if mlp.d_in() != 2 || mlp.d_out() != 2 {
            return Err(Error::Format(format!("dpd network has widths {:?}", mlp.widths())));
        }
        Ok(Self { mlp, metadata })
    }

    /// Saves with the training settings in the config block.
    pub fn save(&self, path: &Path, config: &DpdConfig) -> Result<()> {
        let mut c = self.to_container()?;
        c.config = toml::to_string(config).map_err(|e| Error::Format(e.to_string()))?;
        c.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }

    /// Cascade linearity over input amplitudes up to the clipping limit.
    pub fn linearity(&self, amplifier: &Amplifier, samples: usize, seed: u64) -> Linearity {
        let gain = self.metadata.gain;
        let limit = self.metadata.max_input_amplitude;
        let mut rng = stream_rng(seed, Stream::Dpd, &[u64::MAX]);
        let (mut err, mut norm, mut phase) = (0.0, 0.0, 0.0);
        for _ in 0..samples {
            let x = Complex64::from_polar(limit * rng.random::<f64>().sqrt(), rng.random_range(-PI..PI));
            let y = amplifier.amplify_sample(self.apply_sample(x).0) / gain;
            err += (y - x).norm_sqr();
            norm += x.norm_sqr();
            let d = (y / x).arg().to_degrees();
            phase += d * d;
        }
        Linearity {
            relative_rms_error: (err / norm).sqrt(),
            am_pm_rms_degrees: (phase / samples as f64).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linearity {
    pub relative_rms_error: f64,
    pub am_pm_rms_degrees: f64,
}

// Input amplitude whose output magnitude reaches `target`.
fn inverse_amplitude(amplifier: &Amplifier, target: f64) -> f64 {
    let out = |r: f64| amplifier.amplify_sample(Complex64::new(r, 0.0)).norm();
    let mut hi = target / amplifier.small_signal_gain();
    while out(hi) < target {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if out(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Fits a predistorter for the Rapp PA of `pa` at the given back-off.
pub fn train_dpd(pa: &PaSetup, ibo_db: f64, antennas: usize, config: &DpdConfig) -> Result<DpdModel> {
    let op = pa.operating_point(ibo_db, antennas)?;
    let amplifier = Amplifier::rapp(pa.params, &op);
    let mut model = train_dpd_for(&amplifier, pa.params.v_sat, op.p_t, config)?;
    model.metadata.ibo_db = ibo_db;
    Ok(model)
}

/// Indirect learning for any memoryless amplifier: a post-inverse mapping
/// the normalized output back to the input is fitted on the training set
/// and used as the predistorter.
///
/// `v_sat` sets the output scale; `input_power` is the average input power
/// of the signal the predistorter will see.
pub fn train_dpd_for(amplifier: &Amplifier, v_sat: f64, input_power: f64, config: &DpdConfig) -> Result<DpdModel> {
    config.validate()?;
    let gain = amplifier.small_signal_gain();
    // Normalized units: x_n = x·gain/v_sat, so the ideal cascade is the identity.
    let scale = gain / v_sat;
    let max_out = config.max_output_fraction * v_sat;
    let r_max = inverse_amplitude(amplifier, max_out);
    let operating_var = input_power * scale * scale;

    let mut rng = stream_rng(config.seed, Stream::Dpd, &[]);
    let mut inputs = Vec::with_capacity(config.samples * 2);
    let mut targets = Vec::with_capacity(config.samples * 2);
    let mut weights = Vec::with_capacity(config.samples * 2);
    let floor = (0.05 * config.max_output_fraction).powi(2);
    let mut target_power = 0.0;
    for i in 0..config.samples {
        let z = if i % 2 == 0 {
            Complex64::from_polar(r_max * scale * rng.random::<f64>().sqrt(), rng.random_range(-PI..PI))
        } else {
            loop {
                let z = complex_gaussian(&mut rng, operating_var);
                if z.norm() <= r_max * scale {
                    break z;
                }
            }
        };
        let w = amplifier.amplify_sample(z / scale) / v_sat;
        let (wf, k) = fold(w);
        let (zf, _) = fold_with(z, k);
        inputs.extend([wf.re, wf.im]);
        let d = zf - wf;
        targets.extend([d.re, d.im]);
        let wt = (1.0 / (w.norm_sqr() + floor)).sqrt();
        weights.extend([wt, wt]);
        target_power += zf.norm_sqr();
    }
    let target_rms = (target_power / config.samples as f64).sqrt();

    let mut mlp = Mlp::new(&[2, config.hidden, 2], &mut rng)?;
    {
        // Spread the first layer's kinks over the input disk.
        let layers = mlp.layers_mut();
        let (w0, rest) = layers.split_at_mut(1);
        let first = &mut w0[0];
        for i in 0..config.hidden {
            let row = first.weight.row(i);
            let norm = (row[0] * row[0] + row[1] * row[1]).sqrt();
            first.bias.data_mut()[i] = -norm * config.max_output_fraction * rng.random::<f64>();
        }
        if let Some(last) = rest.last_mut() {
            last.weight.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let mut opt = Adamax::new(AdamaxConfig {
        lr: config.lr,
        ..AdamaxConfig::default()
    });
    let n = config.samples;
    for step in 0..config.steps {
        let progress = step as f64 / config.steps as f64;
        let lr = config.final_lr + 0.5 * (config.lr - config.final_lr) * (1.0 + (PI * progress).cos());
        opt.set_learning_rate(lr);
        let idx: Vec<usize> = (0..config.batch_size.min(n)).map(|_| rng.random_range(0..n)).collect();
        let xb: Vec<f64> = idx.iter().flat_map(|&i| [inputs[2 * i], inputs[2 * i + 1]]).collect();
        let tb: Vec<f64> = idx.iter().flat_map(|&i| [targets[2 * i], targets[2 * i + 1]]).collect();
        let wb: Vec<f64> = idx.iter().flat_map(|&i| [weights[2 * i], weights[2 * i + 1]]).collect();
        let grads = mse_gradients(&mlp, xb, tb, wb)?;
        opt.step(&mut mlp.params_mut(), &grads)?;
    }

    let x = RealTensor::new(vec![n, 2], inputs)?;
    let pred = mlp.forward(&x)?;
    let sq: f64 = pred.data().iter().zip(&targets).map(|(p, t)| (p - t) * (p - t)).sum();
    let train_relative_rmse = (sq / n as f64).sqrt() / target_rms;

    // Fold the normalization into the network: R(x) = R_n(x·s)/s.
    let layers = mlp.layers_mut();
    layers[0].weight.data_mut().iter_mut().for_each(|v| *v *= scale);
    let last = layers.len() - 1;
    layers[last].weight.data_mut().iter_mut().for_each(|v| *v /= scale);
    layers[last].bias.data_mut().iter_mut().for_each(|v| *v /= scale);

    Ok(DpdModel {
        mlp,
        metadata: DpdMetadata {
            ibo_db: f64::NAN,
            gain,
            max_input_amplitude: config.max_output_fraction * v_sat / gain,
            train_relative_rmse,
            steps: config.steps,
            samples: config.samples,
            seed: config.seed,
        },
    })
}

fn fold_with(x: Complex64, k: u8) -> (Complex64, u8) {
    // Inverse of `unfold`: rotate by −90°·k.
    let r = match k {
        0 => x,
        1 => Complex64::new(x.im, -x.re),
        2 => Complex64::new(-x.re, -x.im),
        _ => Complex64::new(-x.im, x.re),
    };
    (r, k)
}

fn mse_gradients(mlp: &Mlp, inputs: Vec<f64>, targets: Vec<f64>, weights: Vec<f64>) -> Result<Vec<RealTensor>> {
    let b = inputs.len() / 2;
    let mut tape = Tape::new();
    let nodes = mlp.register(&mut tape);
    let x = tape.constant(RealTensor::new(vec![b, 2], inputs)?);
    let y = mlp.forward_tape(&mut tape, &nodes, x)?;
    let neg_t = tape.constant(RealTensor::new(vec![b, 2], targets.iter().map(|v| -v).collect())?);
    let e = tape.add(y, neg_t)?;
    let w = tape.constant(RealTensor::new(vec![b, 2], weights)?);
    let e = tape.mul(e, w)?;
    let e2 = tape.mul(e, e)?;
    let s = tape.sum(e2)?;
    let k = tape.constant(RealTensor::scalar(1.0 / b as f64));
    let loss = tape.mul(s, k)?;
    let grads = tape.backward(loss)?;
    Ok(nodes.gradients(&grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pa::PaParams;

    #[test]
    fn fold_roundtrip_lands_in_first_quadrant() {
        for &(re, im) in &[(1.0, 0.0), (0.0, 1.0), (-1.0, 0.5), (-0.3, -2.0), (0.2, -0.1), (0.0, -1.0), (-1.0, 0.0)] {
            let x = Complex64::new(re, im);
            let (f, k) = fold(x);
            assert!(f.re > 0.0 && f.im >= 0.0, "{x} -> {f}");
            assert_eq!(unfold(f, k), x);
            assert_eq!(fold_with(x, k).0, f);
        }
    }

    #[test]
    fn architecture_costs_128_multiplications() {
        let config = DpdConfig {
            steps: 1,
            samples: 10,
            ..DpdConfig::default()
        };
        let dpd = train_dpd(&PaSetup::new(PaParams::rapp_3gpp_nr()), 3.0, 16, &config).unwrap();
        assert_eq!(dpd.mlp().widths(), vec![2, 32, 2]);
        assert_eq!(dpd.multiplications(), 128);
    }

    #[test]
    fn ideal_pa_gives_identity() {
        let amp = Amplifier::Ideal { gain: 17.0 };
        let config = DpdConfig {
            steps: 500,
            ..DpdConfig::default()
        };
        let dpd = train_dpd_for(&amp, 1.9, 0.01, &config).unwrap();
        let mut rng = stream_rng(5, Stream::Dpd, &[1]);
        let (mut err, mut norm) = (0.0, 0.0);
        for _ in 0..1000 {
            let r = dpd.metadata().max_input_amplitude * rng.random::<f64>().sqrt();
            let x = Complex64::from_polar(r, rng.random_range(-PI..PI));
            err += (dpd.apply_sample(x).0 - x).norm_sqr();
            norm += x.norm_sqr();
        }
        assert!((err / norm).sqrt() < 0.01);
    }

    #[test]
    fn cascade_is_linear_at_three_db_back_off() {
        let pa = PaSetup::new(PaParams::rapp_3gpp_nr());
        let dpd = train_dpd(&pa, 3.0, 100, &DpdConfig::default()).unwrap();
        let amp = pa.amplifier(3.0, 100).unwrap();
        let lin = dpd.linearity(&amp, 20_000, 7);
        assert!(lin.relative_rms_error < 0.02, "{lin:?}");
        // Zero residual: the uncorrected PA.
        let mut raw = dpd.clone();
        for t in raw.mlp.layers_mut().last_mut().unwrap().weight.data_mut() {
            *t = 0.0;
        }
        raw.mlp.layers_mut().last_mut().unwrap().bias.data_mut().fill(0.0);
        assert!(raw.linearity(&amp, 20_000, 7).relative_rms_error > lin.relative_rms_error);
    }

    #[test]
    fn container_roundtrip() {
        let config = DpdConfig {
            steps: 20,
            samples: 100,
            ..DpdConfig::default()
        };
        let dpd = train_dpd(&PaSetup::new(PaParams::rapp_3gpp_nr()), 1.0, 100, &config).unwrap();
        let back = DpdModel::from_container(&Container::from_bytes(&dpd.to_container().unwrap().to_bytes()).unwrap());
        assert_eq!(back.unwrap(), dpd);
    }
}
