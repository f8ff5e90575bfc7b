//! Reference chains: an ideal-PA system, ZF with uncorrected PAs, and ZF
//! with an MLP predistorter in every antenna branch.

mod dpd;
mod qam;

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use dpd::{train_dpd, train_dpd_for, ClipStats, DpdConfig, DpdMetadata, DpdModel, Linearity, DPD_KIND};
pub use qam::QamConstellation;

use crate::autoprecoder::Message;
use crate::error::{Error, Result};
use crate::linalg::CMatrix;
use crate::pa::Amplifier;
use crate::precoding::PrecoderState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// Ideal PAs.
    Linear,
    /// Rapp PAs, no correction.
    NoCorrection,
    /// Rapp PAs behind a shared predistorter.
    ZfDpd,
}

impl BaselineKind {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineKind::Linear => "linear",
            BaselineKind::NoCorrection => "no_correction",
            BaselineKind::ZfDpd => "zf_dpd",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BaselineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(BaselineKind::Linear),
            "no_correction" => Ok(BaselineKind::NoCorrection),
            "zf_dpd" => Ok(BaselineKind::ZfDpd),
            _ => Err(Error::Argument(format!("unknown baseline `{s}`"))),
        }
    }
}

/// The PA branch of a baseline. For [`BaselineKind::Linear`] pass the
/// ideal amplifier with the Rapp model's small-signal gain.
#[derive(Debug, Clone, Copy)]
pub struct BaselineFrontEnd<'a> {
    pub kind: BaselineKind,
    pub amplifier: &'a Amplifier,
    pub dpd: Option<&'a DpdModel>,
}

impl BaselineFrontEnd<'_> {
    pub fn check(&self) -> Result<()> {
        match (self.kind, self.dpd, self.amplifier) {
            (BaselineKind::ZfDpd, None, _) => Err(Error::Config("`zf_dpd` needs a trained predistorter".into())),
            (BaselineKind::Linear, _, Amplifier::Rapp { .. }) => {
                Err(Error::Config("`linear` runs with an ideal amplifier".into()))
            }
            _ => Ok(()),
        }
    }

    /// PA output for precoded antenna samples, with clipping statistics.
    pub fn transmit(&self, x: &[Complex64]) -> (Vec<Complex64>, ClipStats) {
        match (self.kind, self.dpd) {
            (BaselineKind::ZfDpd, Some(dpd)) => {
                let (pre, stats) = dpd.apply(x);
                (self.amplifier.amplify(&pre), stats)
            }
            _ => (self.amplifier.amplify(x), ClipStats::default()),
        }
    }
}

/// Decoder inputs of a baseline chain: precode, amplify, propagate, add the
/// already scaled noise and divide by `ĝ = G·α/√ς_W`.
pub fn baseline_received(
    front: &BaselineFrontEnd<'_>,
    symbols: &[Complex64],
    channel: &CMatrix,
    precoder: &PrecoderState,
    noise: &[Complex64],
) -> (Vec<Complex64>, ClipStats) {
    let x = precoder.precode(symbols);
    let (y, stats) = front.transmit(&x);
    let mut r = channel.mul_vec(&y);
    let k = precoder.varsigma().sqrt() / front.amplifier.small_signal_gain();
    r.iter_mut().zip(noise).for_each(|(v, n)| *v = (*v + n) * k);
    (r, stats)
}

/// Runs one channel use of a baseline and returns the detected 1-based
/// message per user.
pub fn run_baseline_chain(
    front: &BaselineFrontEnd<'_>,
    qam: &QamConstellation,
    channel: &CMatrix,
    precoder: &PrecoderState,
    messages: &[Message],
    noise: &[Complex64],
) -> Result<Vec<usize>> {
    front.check()?;
    if channel.rows() != messages.len() || noise.len() != messages.len() || precoder.users() != messages.len() {
        return Err(Error::Config(format!(
            "inconsistent chain: {} messages, {} noise samples, H is {}x{}",
            messages.len(),
            noise.len(),
            channel.rows(),
            channel.cols()
        )));
    }
    let symbols = messages
        .iter()
        .map(|m| qam.modulate(m.index()))
        .collect::<Result<Vec<_>>>()?;
    let (r, _) = baseline_received(front, &symbols, channel, precoder, noise);
    Ok(r.into_iter().map(|v| qam.demodulate(v)).collect())
}
