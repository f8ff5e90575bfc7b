use crate::error::{Error, Result};

/// Two-sided 95% standard normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

/// Gaussian tail probability `Q(x)`.
pub fn q_function(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Symbol error probability of square M-QAM with Gray labels in AWGN at
/// symbol SNR `snr`.
pub fn analytic_qam_ser(snr: f64, order: usize) -> Result<f64> {
    let side = (order as f64).sqrt().round() as usize;
    if side < 2 || side * side != order {
        return Err(Error::Argument(format!("{order}-QAM is not square")));
    }
    if !(snr >= 0.0) {
        return Err(Error::Argument(format!("snr must be non-negative, got {snr}")));
    }
    let ps = 2.0 * (1.0 - 1.0 / side as f64) * q_function((3.0 * snr / (order as f64 - 1.0)).sqrt());
    Ok(1.0 - (1.0 - ps) * (1.0 - ps))
}

/// Wilson score interval at 95% confidence.
pub fn confidence_interval(errors: u64, trials: u64) -> Result<(f64, f64)> {
    if trials == 0 {
        return Err(Error::Argument("confidence interval needs at least one trial".into()));
    }
    if errors > trials {
        return Err(Error::Argument(format!("{errors} errors in {trials} trials")));
    }
    let n = trials as f64;
    let p = errors as f64 / n;
    let z2 = Z95 * Z95;
    let d = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / d;
    let half = Z95 / d * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    let low = if errors == 0 { 0.0 } else { (center - half).max(0.0) };
    let high = if errors == trials { 1.0 } else { (center + half).min(1.0) };
    Ok((low, high))
}

/// `σ_b² = E‖y‖² / 10^{snr/10}`
pub fn sigma_from_snr(snr_db: f64, output_power: f64) -> Result<f64> {
    if !(output_power > 0.0) {
        return Err(Error::Argument(format!("output power must be positive, got {output_power}")));
    }
    Ok(output_power / 10f64.powf(snr_db / 10.0))
}
