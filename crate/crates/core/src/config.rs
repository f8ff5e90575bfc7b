//! Experiment configuration files (TOML).
//!
//! `[system]` and `[pa]` are required; every other block falls back to
//! defaults. [`ExperimentConfig::resolved_toml`] writes the configuration
//! back with every default filled in.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::AdamaxConfig;
use crate::autoprecoder::TrainConfig;
use crate::baselines::DpdConfig;
use crate::complexity::ComplexityParams;
use crate::error::{io_error, Error, Result};
use crate::evaluation::{PowerReference, Scheme, SweepSpec, SystemSpec};
use crate::pa::{PaParams, PaSetup};
use crate::precoding::{MpObjective, PrecoderKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub system: SystemBlock,
    pub pa: PaBlock,
    #[serde(default)]
    pub train: TrainBlock,
    #[serde(default)]
    pub eval: EvalBlock,
    #[serde(default)]
    pub mp: MpBlock,
    /// `dpd.seed` always follows the top-level seed.
    #[serde(default)]
    pub dpd: DpdConfig,
    #[serde(default)]
    pub complexity: ComplexityBlock,
    #[serde(default)]
    pub paths: PathsBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemBlock {
    pub antennas: usize,
    pub users: usize,
    #[serde(default = "default_order")]
    pub order: usize,
    /// Channel uses per realization.
    #[serde(default = "default_tau")]
    pub tau: usize,
}

fn default_order() -> usize {
    16
}

fn default_tau() -> usize {
    5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PaBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<String>,
    pub gain: Option<f64>,
    pub v_sat: Option<f64>,
    pub smoothness: Option<f64>,
    pub am_pm_a: Option<f64>,
    pub am_pm_b: Option<f64>,
    pub am_pm_q: Option<f64>,
    pub ibo_db: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_sat: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_t: Option<f64>,
}

impl PaBlock {
    /// Preset values overridden by any explicitly given parameter.
    pub fn params(&self) -> Result<PaParams> {
        let base = match &self.preset {
            Some(name) => Some(
                PaParams::preset(name).ok_or_else(|| Error::Config(format!("pa.preset: unknown preset `{name}`")))?,
            ),
            None => None,
        };
        let pick = |v: Option<f64>, from: Option<f64>, key: &str| {
            v.or(from)
                .ok_or_else(|| Error::Config(format!("pa: missing field `{key}` (give it or a `preset`)")))
        };
        let params = PaParams {
            gain: pick(self.gain, base.map(|b| b.gain), "gain")?,
            v_sat: pick(self.v_sat, base.map(|b| b.v_sat), "v_sat")?,
            smoothness: pick(self.smoothness, base.map(|b| b.smoothness), "smoothness")?,
            am_pm_a: pick(self.am_pm_a, base.map(|b| b.am_pm_a), "am_pm_a")?,
            am_pm_b: pick(self.am_pm_b, base.map(|b| b.am_pm_b), "am_pm_b")?,
            am_pm_q: pick(self.am_pm_q, base.map(|b| b.am_pm_q), "am_pm_q")?,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn setup(&self) -> Result<PaSetup> {
        Ok(PaSetup {
            params: self.params()?,
            p_sat: self.p_sat,
            p_t: self.p_t,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainBlock {
    pub hidden_tx: Vec<usize>,
    pub hidden_rx: Vec<usize>,
    pub snr_db: [f64; 2],
    pub batch_size: usize,
    pub num_channels: usize,
    pub epochs: usize,
    pub optimizer: AdamaxConfig,
    pub linear_precoder: PrecoderKind,
    pub gain_compensation: bool,
    pub patience: usize,
}

impl Default for TrainBlock {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            hidden_tx: t.hidden_tx,
            hidden_rx: t.hidden_rx,
            snr_db: t.snr_db,
            batch_size: t.batch_size,
            num_channels: t.num_channels,
            epochs: t.epochs,
            optimizer: t.optimizer,
            linear_precoder: t.linear_precoder,
            gain_compensation: t.gain_compensation,
            patience: t.patience,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalBlock {
    pub schemes: Vec<Scheme>,
    pub snr_db: Vec<f64>,
    pub channels_per_point: usize,
    /// Channel uses per realization; defaults to `system.tau`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub symbols_per_channel: Option<usize>,
    pub target_errors: u64,
    pub calibration_symbols: usize,
    pub chunk: usize,
    pub power_reference: PowerReference,
}

impl Default for EvalBlock {
    fn default() -> Self {
        let s = SweepSpec::default();
        Self {
            schemes: s.schemes,
            snr_db: s.snr_db,
            channels_per_point: s.channels_per_point,
            symbols_per_channel: None,
            target_errors: s.target_errors,
            calibration_symbols: s.calibration_symbols,
            chunk: s.chunk,
            power_reference: s.power_reference,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpBlock {
    /// Polynomial order J.
    pub order: usize,
    pub fit_channels: usize,
    pub objective: MpObjective,
}

impl Default for MpBlock {
    fn default() -> Self {
        Self {
            order: 5,
            fit_channels: 2000,
            objective: MpObjective::InverseError,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ComplexityBlock {
    /// Inclusive τ range of the sweep.
    pub tau: [u64; 2],
    pub n_iter: u64,
    pub presets: Vec<String>,
}

impl Default for ComplexityBlock {
    fn default() -> Self {
        Self {
            tau: [1, 30],
            n_iter: 6,
            presets: vec![
                ComplexityParams::TABLE1_J5.to_string(),
                ComplexityParams::FIG4_CONSISTENT_J1.to_string(),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsBlock {
    pub checkpoint_dir: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for PathsBlock {
    fn default() -> Self {
        Self {
            checkpoint_dir: PathBuf::from("checkpoints"),
            output_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_toml_with_seed(text, None)
    }

    /// Parses and resolves, replacing the file's `seed` when `seed` is given.
    pub fn from_toml_with_seed(text: &str, seed: Option<u64>) -> Result<Self> {
        let mut c: Self = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        if let Some(seed) = seed {
            c.seed = seed;
        }
        c.resolve()?;
        Ok(c)
    }

    pub fn load(path: &Path, seed: Option<u64>) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_with_seed(&text, seed).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Fills derived defaults and validates every block.
    fn resolve(&mut self) -> Result<()> {
        self.dpd.seed = self.seed;
        let params = self.pa.params()?;
        self.pa.gain = Some(params.gain);
        self.pa.v_sat = Some(params.v_sat);
        self.pa.smoothness = Some(params.smoothness);
        self.pa.am_pm_a = Some(params.am_pm_a);
        self.pa.am_pm_b = Some(params.am_pm_b);
        self.pa.am_pm_q = Some(params.am_pm_q);
        if self.pa.ibo_db.is_empty() {
            return Err(Error::Config("pa.ibo_db must list at least one back-off".into()));
        }
        for (key, v) in [("pa.p_sat", self.pa.p_sat), ("pa.p_t", self.pa.p_t)] {
            if v.is_some_and(|v| !(v > 0.0)) {
                return Err(Error::Config(format!("{key} must be positive")));
            }
        }
        if self.system.tau == 0 {
            return Err(Error::Config("system.tau must be positive".into()));
        }
        self.eval.symbols_per_channel.get_or_insert(self.system.tau);
        for ibo in &self.pa.ibo_db {
            self.train_config(*ibo).validate()?;
        }
        self.sweep_spec().validate()?;
        self.dpd.validate()?;
        if self.mp.fit_channels == 0 {
            return Err(Error::Config("mp.fit_channels must be positive".into()));
        }
        let [lo, hi] = self.complexity.tau;
        if lo == 0 || lo > hi {
            return Err(Error::Config(format!("complexity.tau range {lo}..={hi} is invalid")));
        }
        for p in &self.complexity.presets {
            if ComplexityParams::preset(p).is_none() {
                return Err(Error::Config(format!("complexity.presets: unknown preset `{p}`")));
            }
        }
        Ok(())
    }

    /// The configuration with every default spelled out.
    pub fn resolved_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn train_config(&self, ibo_db: f64) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            antennas: self.system.antennas,
            users: self.system.users,
            order: self.system.order,
            hidden_tx: t.hidden_tx.clone(),
            hidden_rx: t.hidden_rx.clone(),
            ibo_db,
            snr_db: t.snr_db,
            batch_size: t.batch_size,
            num_channels: t.num_channels,
            epochs: t.epochs,
            optimizer: t.optimizer,
            seed: self.seed,
            linear_precoder: t.linear_precoder,
            gain_compensation: t.gain_compensation,
            patience: t.patience,
        }
    }

    pub fn sweep_spec(&self) -> SweepSpec {
        let e = &self.eval;
        SweepSpec {
            schemes: e.schemes.clone(),
            snr_db: e.snr_db.clone(),
            ibo_db: self.pa.ibo_db.clone(),
            channels_per_point: e.channels_per_point,
            symbols_per_channel: e.symbols_per_channel.unwrap_or(self.system.tau),
            target_errors: e.target_errors,
            seed: self.seed,
            calibration_symbols: e.calibration_symbols,
            chunk: e.chunk,
            power_reference: e.power_reference,
        }
    }

    pub fn system_spec(&self) -> Result<SystemSpec> {
        Ok(SystemSpec {
            antennas: self.system.antennas,
            users: self.system.users,
            order: self.system.order,
            pa: self.pa.setup()?,
            gain_compensation: self.train.gain_compensation,
            mp_order: self.mp.order,
        })
    }

    /// Complexity parameters of each configured preset, with this system's
    /// N_iter and the sweep's τ range.
    pub fn complexity_presets(&self) -> Vec<(String, ComplexityParams)> {
        self.complexity
            .presets
            .iter()
            .filter_map(|name| {
                ComplexityParams::preset(name).map(|p| {
                    (
                        name.clone(),
                        ComplexityParams {
                            n_iter: self.complexity.n_iter,
                            ..p
                        },
                    )
                })
            })
            .collect()
    }
}

/// Writes `text` to `dir/name`, creating `dir`.
pub fn write_output(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| io_error(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[system]
antennas = 16
users = 4

[pa]
preset = "rapp-3gpp-nr"
ibo_db = [1.0]
"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.pa.params().unwrap(), PaParams::rapp_3gpp_nr());
        assert_eq!(c.sweep_spec().symbols_per_channel, 5);
        assert_eq!(c.train_config(1.0).num_channels, 100_000);
    }

    #[test]
    fn resolved_config_roundtrips() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let text = c.resolved_toml();
        assert!(text.contains("v_sat = 1.9"));
        assert!(text.contains("symbols_per_channel = 5"));
        let again = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.resolved_toml(), text);
    }

    #[test]
    fn missing_pa_block_is_named() {
        let err = ExperimentConfig::from_toml("[system]\nantennas = 16\nusers = 4\n").unwrap_err();
        assert!(matches!(&err, Error::Config(m) if m.contains("`pa`")), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let err = ExperimentConfig::from_toml(&format!("{MINIMAL}\n[train]\nepochz = 3\n")).unwrap_err();
        assert!(err.to_string().contains("epochz"), "{err}");
        let err = ExperimentConfig::from_toml(&MINIMAL.replace("users = 4", "users = 4\nbogus = 1")).unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn explicit_pa_parameters_override_preset() {
        let text = MINIMAL.replace("preset = \"rapp-3gpp-nr\"", "preset = \"rapp-3gpp-nr\"\ngain = 10.0");
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap().pa.params().unwrap().gain, 10.0);
        let text = MINIMAL.replace("preset = \"rapp-3gpp-nr\"", "gain = 10.0");
        let err = ExperimentConfig::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("v_sat"), "{err}");
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for (from, to) in [
            ("users = 4", "users = 40"),
            ("ibo_db = [1.0]", "ibo_db = []"),
            ("preset = \"rapp-3gpp-nr\"", "preset = \"nope\""),
        ] {
            let err = ExperimentConfig::from_toml(&MINIMAL.replace(from, to)).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{err}");
        }
    }
}
