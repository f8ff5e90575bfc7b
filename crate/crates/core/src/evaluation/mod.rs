//! Monte-Carlo symbol-error-rate sweeps over SNR and back-off grids.

mod stats;
mod sweep;

pub use stats::{analytic_qam_ser, confidence_interval, q_function, sigma_from_snr, Z95};
pub use sweep::{
    fnv1a_hex, run_sweep, Calibration, PointMetadata, PowerReference, Scheme, SerRecord, SweepMetadata, SweepModels,
    SweepResult, SweepSpec, SystemSpec, CSV_HEADER,
};
