use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::stats::{analytic_qam_ser, confidence_interval, sigma_from_snr};
use crate::autoprecoder::{pooled_channel, received_samples, ChainOptions, Checkpoint};
use crate::baselines::{baseline_received, BaselineFrontEnd, BaselineKind, ClipStats, DpdModel, QamConstellation};
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::pa::{Amplifier, PaSetup};
use crate::precoding::PrecoderKind;
use crate::rng::{complex_gaussian, stream_rng, Stream};

pub const CSV_HEADER: &str = "scheme,snr_db,ibo_db,num_symbols,num_errors,ser,ci95_low,ci95_high";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Linear,
    NoCorrection,
    ZfDpd,
    ApZf,
    ApMp,
}

impl Scheme {
    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Linear => "linear",
            Scheme::NoCorrection => "no_correction",
            Scheme::ZfDpd => "zf_dpd",
            Scheme::ApZf => "ap_zf",
            Scheme::ApMp => "ap_mp",
        }
    }

    pub fn is_autoprecoder(&self) -> bool {
        matches!(self, Scheme::ApZf | Scheme::ApMp)
    }

    fn precoder_kind(&self) -> PrecoderKind {
        match self {
            Scheme::ApMp => PrecoderKind::Mp,
            _ => PrecoderKind::Zf,
        }
    }

    fn baseline(&self) -> Option<BaselineKind> {
        match self {
            Scheme::Linear => Some(BaselineKind::Linear),
            Scheme::NoCorrection => Some(BaselineKind::NoCorrection),
            Scheme::ZfDpd => Some(BaselineKind::ZfDpd),
            _ => None,
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Scheme::Linear, Scheme::NoCorrection, Scheme::ZfDpd, Scheme::ApZf, Scheme::ApMp]
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown scheme `{s}`")))
    }
}

/// Which output power the SNR refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerReference {
    /// Total PA output power summed over antennas.
    #[default]
    Total,
    /// Average PA output power per antenna.
    PerAntenna,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub schemes: Vec<Scheme>,
    pub snr_db: Vec<f64>,
    pub ibo_db: Vec<f64>,
    /// Maximum channel realizations per grid point.
    pub channels_per_point: usize,
    /// Channel uses per realization.
    pub symbols_per_channel: usize,
    /// A point stops once this many symbol errors are counted.
    pub target_errors: u64,
    pub seed: u64,
    pub calibration_symbols: usize,
    /// Realizations per scheduling chunk; early stopping is checked between chunks.
    pub chunk: usize,
    pub power_reference: PowerReference,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            schemes: vec![Scheme::Linear, Scheme::NoCorrection, Scheme::ZfDpd, Scheme::ApZf],
            snr_db: (0..=6).map(|i| 5.0 * i as f64).collect(),
            ibo_db: vec![1.0, 3.0],
            channels_per_point: 100_000,
            symbols_per_channel: 5,
            target_errors: 400,
            seed: 0,
            calibration_symbols: 10_000,
            chunk: 256,
            power_reference: PowerReference::Total,
        }
    }
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.schemes.is_empty() || self.snr_db.is_empty() || self.ibo_db.is_empty() {
            return Err(Error::Config("`schemes`, `snr_db` and `ibo_db` must be non-empty".into()));
        }
        if self.channels_per_point == 0 || self.symbols_per_channel == 0 || self.chunk == 0 {
            return Err(Error::Config(
                "`channels_per_point`, `symbols_per_channel` and `chunk` must be positive".into(),
            ));
        }
        if self.calibration_symbols == 0 {
            return Err(Error::Config("`calibration_symbols` must be positive".into()));
        }
        if self.snr_db.iter().chain(&self.ibo_db).any(|v| !v.is_finite()) {
            return Err(Error::Config("grid values must be finite".into()));
        }
        Ok(())
    }
}

/// System dimensions and PA shared by every scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    pub antennas: usize,
    pub users: usize,
    pub order: usize,
    pub pa: PaSetup,
    pub gain_compensation: bool,
    /// Matrix-polynomial order J used by `ap_mp`.
    pub mp_order: usize,
}

/// Trained artifacts, keyed by back-off.
#[derive(Debug, Clone, Default)]
pub struct SweepModels {
    pub autoprecoders: Vec<(f64, Arc<Checkpoint>)>,
    pub dpds: Vec<(f64, Arc<DpdModel>)>,
    /// Overrides the coefficient table stored in the checkpoint.
    pub mu: Option<Vec<f64>>,
}

fn lookup<'a, T>(items: &'a [(f64, T)], ibo: f64) -> Option<&'a T> {
    items.iter().find(|(k, _)| (k - ibo).abs() < 1e-9).map(|(_, v)| v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerRecord {
    pub scheme: Scheme,
    pub snr_db: f64,
    pub ibo_db: f64,
    pub num_symbols: u64,
    pub num_errors: u64,
    pub ser: f64,
    pub ci95_low: f64,
    pub ci95_high: f64,
    pub resampled_channels: u64,
    pub channels: u64,
    pub early_stopped: bool,
    /// Closed-form QAM SER averaged over the realized channels (`linear` only).
    pub analytic_ser: Option<f64>,
    pub clip: ClipStats,
}

impl SerRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.scheme, self.snr_db, self.ibo_db, self.num_symbols, self.num_errors, self.ser, self.ci95_low, self.ci95_high
        )
    }

    pub fn overlaps(&self, other: &SerRecord) -> bool {
        self.ci95_low <= other.ci95_high && other.ci95_low <= self.ci95_high
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub scheme: Scheme,
    pub ibo_db: f64,
    pub mean_output_power: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMetadata {
    pub scheme: Scheme,
    pub snr_db: f64,
    pub ibo_db: f64,
    pub channels: u64,
    pub resampled_channels: u64,
    pub early_stopped: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub analytic_ser: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dpd_clipped_fraction: Option<f64>,
}

/// Contents of the JSON sidecar written next to the CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepMetadata {
    pub seed: u64,
    pub config_hash: String,
    pub power_reference: PowerReference,
    pub calibration: Vec<Calibration>,
    pub points: Vec<PointMetadata>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub records: Vec<SerRecord>,
    pub calibration: Vec<Calibration>,
}

impl SweepResult {
    pub fn csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.records {
            s.push_str(&r.csv_row());
            s.push('\n');
        }
        s
    }

    pub fn metadata(&self, spec: &SweepSpec, config_hash: &str) -> SweepMetadata {
        SweepMetadata {
            seed: spec.seed,
            config_hash: config_hash.to_string(),
            power_reference: spec.power_reference,
            calibration: self.calibration.clone(),
            points: self
                .records
                .iter()
                .map(|r| PointMetadata {
                    scheme: r.scheme,
                    snr_db: r.snr_db,
                    ibo_db: r.ibo_db,
                    channels: r.channels,
                    resampled_channels: r.resampled_channels,
                    early_stopped: r.early_stopped,
                    analytic_ser: r.analytic_ser,
                    dpd_clipped_fraction: (r.scheme == Scheme::ZfDpd).then(|| r.clip.fraction()),
                })
                .collect(),
        }
    }

    pub fn get(&self, scheme: Scheme, snr_db: f64, ibo_db: f64) -> Option<&SerRecord> {
        self.records
            .iter()
            .find(|r| r.scheme == scheme && (r.snr_db - snr_db).abs() < 1e-9 && (r.ibo_db - ibo_db).abs() < 1e-9)
    }
}

/// 64-bit FNV-1a digest as 16 hex digits.
pub fn fnv1a_hex(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{h:016x}")
}

enum Detector<'a> {
    Qam(&'a QamConstellation),
    Network { constellation: &'a [Complex64], decoder: &'a Mlp },
}

/// Everything a worker needs for one (scheme, IBO) pair.
struct SchemeRunner<'a> {
    scheme: Scheme,
    system: &'a SystemSpec,
    amplifier: Amplifier,
    dpd: Option<&'a DpdModel>,
    detector: Detector<'a>,
    mu: Vec<f64>,
    options: ChainOptions,
}

#[derive(Debug, Clone, Copy, Default)]
struct TrialStats {
    symbols: u64,
    errors: u64,
    resampled: u64,
    analytic: f64,
    clip: ClipStats,
}

impl SchemeRunner<'_> {
    fn symbols(&self, messages: &[usize]) -> Vec<Complex64> {
        match &self.detector {
            Detector::Qam(q) => messages.iter().map(|&m| q.points()[m]).collect(),
            Detector::Network { constellation, .. } => messages.iter().map(|&m| constellation[m]).collect(),
        }
    }

    fn detect(&self, r: Complex64) -> usize {
        match &self.detector {
            Detector::Qam(q) => q.nearest(r),
            Detector::Network { decoder, .. } => {
                let logits = decoder.forward_one(&[r.re, r.im]);
                let mut best = 0;
                for (i, &v) in logits.iter().enumerate().skip(1) {
                    if v > logits[best] {
                        best = i;
                    }
                }
                best
            }
        }
    }

    fn front_end(&self) -> Option<BaselineFrontEnd<'_>> {
        self.scheme.baseline().map(|kind| BaselineFrontEnd {
            kind,
            amplifier: &self.amplifier,
            dpd: self.dpd,
        })
    }

    /// Decoder inputs for one channel use.
    fn receive(
        &self,
        symbols: &[Complex64],
        channel: &crate::linalg::CMatrix,
        precoder: &crate::precoding::PrecoderState,
        noise: &[Complex64],
    ) -> (Vec<Complex64>, ClipStats) {
        match self.front_end() {
            Some(front) => baseline_received(&front, symbols, channel, precoder, noise),
            None => (
                received_samples(symbols, channel, precoder, &self.amplifier, noise, self.options),
                ClipStats::default(),
            ),
        }
    }

    fn calibrate(&self, seed: u64, uses: usize) -> Result<f64> {
        let sys = self.system;
        let powers = (0..uses as u64)
            .into_par_iter()
            .map(|t| {
                let (_, pre, _) = pooled_channel(
                    seed,
                    Stream::Calibration,
                    t,
                    sys.users,
                    sys.antennas,
                    self.scheme.precoder_kind(),
                    &self.mu,
                )?;
                let mut rng = stream_rng(seed, Stream::Calibration, &[t, 1]);
                let msgs: Vec<usize> = (0..sys.users).map(|_| rng.random_range(0..sys.order)).collect();
                let x = pre.precode(&self.symbols(&msgs));
                let y = match self.front_end() {
                    Some(front) => front.transmit(&x).0,
                    None => self.amplifier.amplify(&x),
                };
                Ok(y.iter().map(|v| v.norm_sqr()).sum::<f64>())
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(powers.iter().sum::<f64>() / uses as f64)
    }

    fn trial(&self, spec: &SweepSpec, t: u64, noise_var: f64) -> Result<TrialStats> {
        let sys = self.system;
        let (channel, precoder, redraws) = pooled_channel(
            spec.seed,
            Stream::TestChannel,
            t,
            sys.users,
            sys.antennas,
            self.scheme.precoder_kind(),
            &self.mu,
        )?;
        let mut data = stream_rng(spec.seed, Stream::TestData, &[t]);
        let mut noise_rng = stream_rng(spec.seed, Stream::TestNoise, &[t]);
        let mut stats = TrialStats {
            resampled: redraws as u64,
            ..TrialStats::default()
        };
        let h = channel.matrix();
        for _ in 0..spec.symbols_per_channel {
            let msgs: Vec<usize> = (0..sys.users).map(|_| data.random_range(0..sys.order)).collect();
            let noise: Vec<Complex64> = (0..sys.users).map(|_| complex_gaussian(&mut noise_rng, noise_var)).collect();
            let (r, clip) = self.receive(&self.symbols(&msgs), h, &precoder, &noise);
            stats.clip.merge(clip);
            for (&m, &v) in msgs.iter().zip(&r) {
                stats.errors += u64::from(self.detect(v) != m);
            }
            stats.symbols += sys.users as u64;
        }
        if self.scheme == Scheme::Linear {
            let g = self.amplifier.small_signal_gain();
            let snr_eff = g * g / (precoder.varsigma() * noise_var);
            stats.analytic = analytic_qam_ser(snr_eff, sys.order)? * stats.symbols as f64;
        }
        Ok(stats)
    }
}

fn runner<'a>(
    scheme: Scheme,
    ibo: f64,
    system: &'a SystemSpec,
    models: &'a SweepModels,
    qam: &'a QamConstellation,
) -> Result<SchemeRunner<'a>> {
    let amplifier = match scheme {
        Scheme::Linear => system.pa.ideal_amplifier(ibo, system.antennas)?,
        _ => system.pa.amplifier(ibo, system.antennas)?,
    };
    let mut dpd = None;
    let mut mu = Vec::new();
    let detector = if scheme.is_autoprecoder() {
        let ck = lookup(&models.autoprecoders, ibo)
            .ok_or_else(|| Error::Config(format!("scheme `{scheme}` needs a checkpoint trained at IBO {ibo} dB")))?;
        let t = &ck.config.train;
        if t.antennas != system.antennas || t.users != system.users || t.order != system.order {
            return Err(Error::Config(format!(
                "checkpoint for `{scheme}` at IBO {ibo} dB was trained for {}x{} with M={}, sweep is {}x{} with M={}",
                t.antennas, t.users, t.order, system.antennas, system.users, system.order
            )));
        }
        if scheme == Scheme::ApMp {
            mu = match &models.mu {
                Some(m) => m.clone(),
                None => ck
                    .mu_for(system.users, system.antennas, system.mp_order)
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "scheme `ap_mp` needs polynomial coefficients for J={}",
                            system.mp_order
                        ))
                    })?
                    .to_vec(),
            };
        }
        Detector::Network {
            constellation: &ck.constellation,
            decoder: ck.model.decoder(),
        }
    } else {
        if scheme == Scheme::ZfDpd {
            dpd = Some(
                lookup(&models.dpds, ibo)
                    .ok_or_else(|| Error::Config(format!("scheme `zf_dpd` needs a predistorter for IBO {ibo} dB")))?
                    .as_ref(),
            );
        }
        Detector::Qam(qam)
    };
    Ok(SchemeRunner {
        scheme,
        system,
        amplifier,
        dpd,
        detector,
        mu,
        options: ChainOptions {
            gain_compensation: system.gain_compensation,
        },
    })
}

/// Runs every (IBO, scheme, SNR) point of the grid.
///
/// Channels, messages and noise are drawn per realization index from the
/// seed, so all schemes and SNR points see the same realizations, and the
/// result does not depend on the number of worker threads.
pub fn run_sweep(spec: &SweepSpec, system: &SystemSpec, models: &SweepModels) -> Result<SweepResult> {
    spec.validate()?;
    let qam = QamConstellation::new(system.order)?;
    let mut records = Vec::new();
    let mut calibration = Vec::new();
    for &ibo in &spec.ibo_db {
        for &scheme in &spec.schemes {
            let run = runner(scheme, ibo, system, models, &qam)?;
            let power = run.calibrate(spec.seed, spec.calibration_symbols)?;
            calibration.push(Calibration {
                scheme,
                ibo_db: ibo,
                mean_output_power: power,
            });
            let reference = match spec.power_reference {
                PowerReference::Total => power,
                PowerReference::PerAntenna => power / system.antennas as f64,
            };
            for &snr_db in &spec.snr_db {
                let noise_var = sigma_from_snr(snr_db, reference)?;
                records.push(run_point(&run, spec, snr_db, ibo, noise_var)?);
            }
        }
    }
    Ok(SweepResult { records, calibration })
}

fn run_point(run: &SchemeRunner<'_>, spec: &SweepSpec, snr_db: f64, ibo_db: f64, noise_var: f64) -> Result<SerRecord> {
    let mut total = TrialStats::default();
    let mut done = 0u64;
    let limit = spec.channels_per_point as u64;
    while done < limit && total.errors < spec.target_errors {
        let end = (done + spec.chunk as u64).min(limit);
        let chunk = (done..end)
            .into_par_iter()
            .map(|t| run.trial(spec, t, noise_var))
            .collect::<Result<Vec<_>>>()?;
        for s in chunk {
            total.symbols += s.symbols;
            total.errors += s.errors;
            total.resampled += s.resampled;
            total.analytic += s.analytic;
            total.clip.merge(s.clip);
        }
        done = end;
    }
    let (lo, hi) = confidence_interval(total.errors, total.symbols)?;
    Ok(SerRecord {
        scheme: run.scheme,
        snr_db,
        ibo_db,
        num_symbols: total.symbols,
        num_errors: total.errors,
        ser: total.errors as f64 / total.symbols as f64,
        ci95_low: lo,
        ci95_high: hi,
        resampled_channels: total.resampled,
        channels: done,
        early_stopped: total.errors >= spec.target_errors,
        analytic_ser: (run.scheme == Scheme::Linear).then(|| total.analytic / total.symbols as f64),
        clip: total.clip,
    })
}
