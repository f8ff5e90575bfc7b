use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::model::NnModel;
use super::train::{TrainConfig, TrainOutcome};
use crate::autodiff::RealTensor;
use crate::container::Container;
use crate::error::{Error, Result};
use crate::nn::{DenseLayer, Mlp};
use crate::pa::{PaParams, PaSetup};
use crate::precoding::MpCoefficients;

pub const CHECKPOINT_KIND: &str = "autoprecoder";

/// Training settings stored in the checkpoint's config block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointConfig {
    pub train: TrainConfig,
    pub pa: PaParams,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_sat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_t: Option<f64>,
}

impl CheckpointConfig {
    pub fn pa_setup(&self) -> PaSetup {
        PaSetup {
            params: self.pa,
            p_sat: self.p_sat,
            p_t: self.p_t,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainMetadata {
    pub seed: u64,
    pub steps: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub resampled_channels: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// A trained autoprecoder with everything needed to evaluate it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: NnModel,
    pub config: CheckpointConfig,
    pub mu_tables: Vec<MpCoefficients>,
    pub constellation: Vec<Complex64>,
    pub metadata: TrainMetadata,
}

fn mu_name(t: &MpCoefficients) -> String {
    format!("mu.mr{}.mt{}.j{}", t.users, t.antennas, t.order)
}

fn parse_mu_name(name: &str) -> Option<(usize, usize, usize)> {
    let rest = name.strip_prefix("mu.mr")?;
    let (mr, rest) = rest.split_once(".mt")?;
    let (mt, j) = rest.split_once(".j")?;
    Some((mr.parse().ok()?, mt.parse().ok()?, j.parse().ok()?))
}

fn push_mlp(c: &mut Container, prefix: &str, mlp: &Mlp) {
    for (i, l) in mlp.layers().iter().enumerate() {
        c.push(format!("{prefix}.{i}.weight"), l.weight.clone());
        c.push(format!("{prefix}.{i}.bias"), l.bias.clone());
    }
}

fn read_mlp(c: &Container, prefix: &str) -> Result<Mlp> {
    let mut layers = Vec::new();
    while let Ok(w) = c.tensor(&format!("{prefix}.{}.weight", layers.len())) {
        let b = c.tensor(&format!("{prefix}.{}.bias", layers.len()))?;
        if w.shape().len() != 2 {
            return Err(Error::Format(format!("{prefix} weight must be a matrix")));
        }
        layers.push(DenseLayer {
            weight: w.clone(),
            bias: b.clone(),
        });
    }
    if layers.is_empty() {
        return Err(Error::Format(format!("missing tensor `{prefix}.0.weight`")));
    }
    Mlp::from_layers(layers).map_err(|e| Error::Format(e.to_string()))
}

impl Checkpoint {
    pub fn from_outcome(outcome: &TrainOutcome, config: CheckpointConfig, mu_tables: Vec<MpCoefficients>) -> Self {
        let metadata = TrainMetadata {
            seed: config.train.seed,
            steps: outcome.steps,
            initial_loss: outcome.initial_loss,
            final_loss: outcome.final_loss,
            resampled_channels: outcome.resampled_channels,
            warning: outcome.warning.clone(),
        };
        Self {
            model: outcome.model.clone(),
            config,
            mu_tables,
            constellation: outcome.constellation.clone(),
            metadata,
        }
    }

    pub fn mu_for(&self, users: usize, antennas: usize, order: usize) -> Option<&[f64]> {
        self.mu_tables
            .iter()
            .find(|t| t.users == users && t.antennas == antennas && t.order == order)
            .map(|t| t.mu.as_slice())
    }

    pub fn to_container(&self) -> Result<Container> {
        let config = toml::to_string(&self.config).map_err(|e| Error::Format(e.to_string()))?;
        let metadata = toml::to_string(&self.metadata).map_err(|e| Error::Format(e.to_string()))?;
        let mut c = Container::new(CHECKPOINT_KIND, config, metadata);
        push_mlp(&mut c, "precoder", self.model.precoder());
        push_mlp(&mut c, "decoder", self.model.decoder());
        let points = self.constellation.iter().flat_map(|z| [z.re, z.im]).collect();
        c.push("constellation", RealTensor::new(vec![self.constellation.len(), 2], points)?);
        for t in &self.mu_tables {
            c.push(mu_name(t), RealTensor::new(vec![t.mu.len()], t.mu.clone())?);
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != CHECKPOINT_KIND {
            return Err(Error::Format(format!("container holds a `{}`, expected `{CHECKPOINT_KIND}`", c.kind)));
        }
        let config: CheckpointConfig = toml::from_str(&c.config).map_err(|e| Error::Format(format!("config block: {e}")))?;
        let metadata: TrainMetadata =
            toml::from_str(&c.metadata).map_err(|e| Error::Format(format!("metadata block: {e}")))?;
        let model = NnModel::from_parts(read_mlp(c, "precoder")?, read_mlp(c, "decoder")?)
            .map_err(|e| Error::Format(e.to_string()))?;
        let table = c.tensor("constellation")?;
        if table.shape() != [model.order(), 2] {
            return Err(Error::Format(format!("constellation has shape {:?}", table.shape())));
        }
        let constellation = table.data().chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
        let mu_tables = c
            .tensors
            .iter()
            .filter_map(|(name, t)| {
                parse_mu_name(name).map(|(users, antennas, order)| MpCoefficients {
                    users,
                    antennas,
                    order,
                    mu: t.data().to_vec(),
                })
            })
            .collect();
        Ok(Self {
            model,
            config,
            mu_tables,
            constellation,
            metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }

    /// CSV with one `index,re,im` row per constellation point (1-based).
    pub fn constellation_csv(&self) -> String {
        let mut s = String::from("index,re,im\n");
        for (i, z) in self.constellation.iter().enumerate() {
            s.push_str(&format!("{},{:e},{:e}\n", i + 1, z.re, z.im));
        }
        s
    }
}
