//! Memoryless power-amplifier models: the modified Rapp AM-AM/AM-PM
//! characteristic, input back-off scaling, and an ideal linear stand-in.
//!
//! Both models are differentiable; [`AmplifierOp`] records them on an
//! autodiff tape with an analytic vector-Jacobian product.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::autodiff::{CustomOp, RealTensor};
use crate::error::{Error, Result};

/// Modified Rapp parameters. The AM-PM output of `A ρ^q / (1 + (ρ/B)^q)` is in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PaParams {
    /// Small-signal gain G.
    pub gain: f64,
    /// Output saturation level V_sat.
    pub v_sat: f64,
    /// Smoothness factor p.
    pub smoothness: f64,
    pub am_pm_a: f64,
    pub am_pm_b: f64,
    pub am_pm_q: f64,
}

impl PaParams {
    pub const PRESET_3GPP_NR: &'static str = "rapp-3gpp-nr";

    /// Modified Rapp parameters used for NR evaluation.
    pub fn rapp_3gpp_nr() -> Self {
        Self {
            gain: 16.0,
            v_sat: 1.9,
            smoothness: 1.1,
            am_pm_a: -345.0,
            am_pm_b: 0.17,
            am_pm_q: 4.0,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        (name == Self::PRESET_3GPP_NR).then(Self::rapp_3gpp_nr)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.gain > 0.0 && self.v_sat > 0.0 && self.smoothness > 0.0 && self.am_pm_b > 0.0 && self.am_pm_q > 0.0;
        if !ok || !self.am_pm_a.is_finite() {
            return Err(Error::Config(format!(
                "PA parameters need G, V_sat, p, B, q > 0 (got {self:?})"
            )));
        }
        Ok(())
    }

    /// Input-referred saturation power `(V_sat / G)²`.
    pub fn saturation_input_power(&self) -> f64 {
        (self.v_sat / self.gain).powi(2)
    }
}

/// AM-AM conversion `g(ρ) = Gρ / (1 + |Gρ/V_sat|^{2p})^{1/(2p)}`.
pub fn am_am(rho: f64, params: &PaParams) -> Result<f64> {
    if rho < 0.0 {
        return Err(Error::Argument(format!("amplitude must be non-negative, got {rho}")));
    }
    Ok(am_am_unchecked(rho, params))
}

fn am_am_unchecked(rho: f64, p: &PaParams) -> f64 {
    let two_p = 2.0 * p.smoothness;
    p.gain * rho / (1.0 + (p.gain * rho / p.v_sat).powf(two_p)).powf(1.0 / two_p)
}

/// AM-PM conversion in degrees.
pub fn am_pm_degrees(rho: f64, params: &PaParams) -> Result<f64> {
    if rho < 0.0 {
        return Err(Error::Argument(format!("amplitude must be non-negative, got {rho}")));
    }
    Ok(am_pm_deg_unchecked(rho, params))
}

fn am_pm_deg_unchecked(rho: f64, p: &PaParams) -> f64 {
    p.am_pm_a * rho.powf(p.am_pm_q) / (1.0 + (rho / p.am_pm_b).powf(p.am_pm_q))
}

/// AM-PM conversion in radians.
pub fn am_pm(rho: f64, params: &PaParams) -> Result<f64> {
    am_pm_degrees(rho, params).map(|d| d * PI / 180.0)
}

/// Input scaling `α = √(P_sat / (10^{IBO/10} P_t))`.
pub fn compute_alpha(ibo_db: f64, p_sat: f64, p_t: f64) -> Result<f64> {
    if !(p_t > 0.0) {
        return Err(Error::Argument(format!("transmit power must be positive, got {p_t}")));
    }
    if !(p_sat > 0.0) {
        return Err(Error::Argument(format!("saturation power must be positive, got {p_sat}")));
    }
    Ok((p_sat / (10f64.powf(ibo_db / 10.0) * p_t)).sqrt())
}

/// PA operating point for a given input back-off.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaOperatingPoint {
    pub ibo_db: f64,
    pub alpha: f64,
    pub p_sat: f64,
    pub p_t: f64,
}

impl PaOperatingPoint {
    /// `p_sat` defaults to the input-referred saturation power of `params`.
    pub fn new(ibo_db: f64, params: &PaParams, p_t: f64, p_sat: Option<f64>) -> Result<Self> {
        let p_sat = p_sat.unwrap_or_else(|| params.saturation_input_power());
        let alpha = compute_alpha(ibo_db, p_sat, p_t)?;
        Ok(Self {
            ibo_db,
            alpha,
            p_sat,
            p_t,
        })
    }
}

/// PA parameters plus optional overrides of the operating-point powers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PaSetup {
    pub params: PaParams,
    /// Saturation input power; defaults to `(V_sat/G)²`.
    pub p_sat: Option<f64>,
    /// Per-antenna average input power; defaults to `1/M_t`.
    pub p_t: Option<f64>,
}

impl PaSetup {
    pub fn new(params: PaParams) -> Self {
        Self {
            params,
            p_sat: None,
            p_t: None,
        }
    }

    pub fn operating_point(&self, ibo_db: f64, antennas: usize) -> Result<PaOperatingPoint> {
        let p_t = self.p_t.unwrap_or(1.0 / antennas as f64);
        PaOperatingPoint::new(ibo_db, &self.params, p_t, self.p_sat)
    }

    pub fn amplifier(&self, ibo_db: f64, antennas: usize) -> Result<Amplifier> {
        Ok(Amplifier::rapp(self.params, &self.operating_point(ibo_db, antennas)?))
    }

    /// Ideal PA with the Rapp model's small-signal gain at this back-off.
    pub fn ideal_amplifier(&self, ibo_db: f64, antennas: usize) -> Result<Amplifier> {
        Ok(Amplifier::ideal(&self.params, &self.operating_point(ibo_db, antennas)?))
    }
}

/// A per-antenna amplifier; every antenna branch uses the same model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Amplifier {
    /// `y = g(αρ) e^{j(φ + Ψ(αρ))}`
    Rapp { params: PaParams, alpha: f64 },
    /// `y = gain · x`
    Ideal { gain: f64 },
}

impl Amplifier {
    pub fn rapp(params: PaParams, op: &PaOperatingPoint) -> Self {
        Amplifier::Rapp {
            params,
            alpha: op.alpha,
        }
    }

    /// Ideal PA with the same small-signal gain `G·α` as the Rapp model.
    pub fn ideal(params: &PaParams, op: &PaOperatingPoint) -> Self {
        Amplifier::Ideal {
            gain: params.gain * op.alpha,
        }
    }

    /// Small-signal gain `G·α`.
    pub fn small_signal_gain(&self) -> f64 {
        match *self {
            Amplifier::Rapp { params, alpha } => params.gain * alpha,
            Amplifier::Ideal { gain } => gain,
        }
    }

    // y = x·K(ρ) with K(ρ) = a(ρ)·e^{jΨ(αρ)} and a(ρ) = g(αρ)/ρ.
    fn rapp_factor(params: &PaParams, alpha: f64, rho: f64) -> Complex64 {
        let ga = params.gain * alpha;
        let two_p = 2.0 * params.smoothness;
        let u = ga * rho / params.v_sat;
        let a = ga / (1.0 + u.powf(two_p)).powf(1.0 / two_p);
        let psi = am_pm_deg_unchecked(alpha * rho, params) * PI / 180.0;
        Complex64::from_polar(a, psi)
    }

    pub fn amplify_sample(&self, x: Complex64) -> Complex64 {
        match *self {
            Amplifier::Rapp { params, alpha } => x * Self::rapp_factor(&params, alpha, x.norm()),
            Amplifier::Ideal { gain } => x * gain,
        }
    }

    pub fn amplify(&self, x: &[Complex64]) -> Vec<Complex64> {
        x.iter().map(|&v| self.amplify_sample(v)).collect()
    }

    /// Vector-Jacobian product: maps `∂L/∂y` (as `∂L/∂Re + j∂L/∂Im`) to `∂L/∂x`.
    pub fn vjp_sample(&self, x: Complex64, grad_y: Complex64) -> Complex64 {
        match *self {
            Amplifier::Ideal { gain } => grad_y * gain,
            Amplifier::Rapp { params, alpha } => {
                let rho = x.norm();
                let k = Self::rapp_factor(&params, alpha, rho);
                let mut grad = k.conj() * grad_y;
                if rho > 0.0 {
                    let ga = params.gain * alpha;
                    let two_p = 2.0 * params.smoothness;
                    let u = ga * rho / params.v_sat;
                    let base = 1.0 + u.powf(two_p);
                    let a = ga / base.powf(1.0 / two_p);
                    let da = -ga * (ga / params.v_sat) * u.powf(two_p - 1.0) * base.powf(-1.0 / two_p - 1.0);
                    let v = alpha * rho;
                    let (am, bm, q) = (params.am_pm_a, params.am_pm_b, params.am_pm_q);
                    let dpsi = alpha * (PI / 180.0) * am * q * v.powf(q - 1.0) / (1.0 + (v / bm).powf(q)).powi(2);
                    let dk = Complex64::from_polar(1.0, k.arg()) * Complex64::new(da, a * dpsi);
                    let radial = (grad_y.conj() * x * dk).re;
                    grad += x * (radial / rho);
                }
                grad
            }
        }
    }
}

/// Ideal PA `y = G·α·x` on a slice.
pub fn ideal_pa(x: &[Complex64], gain_alpha: f64) -> Vec<Complex64> {
    Amplifier::Ideal { gain: gain_alpha }.amplify(x)
}

/// Rapp amplification of a complex vector at an operating point.
pub fn amplify(x: &[Complex64], params: &PaParams, op: &PaOperatingPoint) -> Vec<Complex64> {
    Amplifier::rapp(*params, op).amplify(x)
}

/// Tape node applying an [`Amplifier`] to interleaved `(Re, Im)` data.
pub struct AmplifierOp(pub Amplifier);

impl CustomOp for AmplifierOp {
    fn name(&self) -> &'static str {
        "amplifier"
    }

    fn forward(&self, inputs: &[&RealTensor]) -> Result<RealTensor> {
        let x = inputs[0];
        if x.len() % 2 != 0 {
            return Err(Error::dim("amplifier", x.shape(), &[x.len() + 1]));
        }
        let mut out = Vec::with_capacity(x.len());
        for pair in x.data().chunks_exact(2) {
            let y = self.0.amplify_sample(Complex64::new(pair[0], pair[1]));
            out.push(y.re);
            out.push(y.im);
        }
        RealTensor::new(x.shape().to_vec(), out)
    }

    fn backward(&self, inputs: &[&RealTensor], _output: &RealTensor, grad: &RealTensor) -> Vec<Option<RealTensor>> {
        let x = inputs[0];
        let mut gx = Vec::with_capacity(x.len());
        for (xp, gp) in x.data().chunks_exact(2).zip(grad.data().chunks_exact(2)) {
            let g = self.0.vjp_sample(Complex64::new(xp[0], xp[1]), Complex64::new(gp[0], gp[1]));
            gx.push(g.re);
            gx.push(g.im);
        }
        vec![RealTensor::new(x.shape().to_vec(), gx).ok()]
    }
}
