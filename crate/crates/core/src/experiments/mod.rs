//! Configuration-driven stability sweeps, η-scaling tables and exponent fits.

mod config;
mod fit;
mod scaling;
mod sweep;

pub use config::{default_widths, ExperimentConfig, MediumEntry, PerturbationSchedule, Prepared, Probe, QuadratureSettings};
pub use fit::{fit_exponent, log_factor, ExponentFit};
pub use scaling::{run_eta_scaling, theory_rate, EtaScaling, EtaScalingRow, ShapeKind, SlopeSummary};
pub use sweep::{
    chord_integral, envelope, measurement_error, read_records, run_ballistic_sweep, run_singlescatter_sweep, write_records,
    EpsilonMethod, PerturbationKind, StabilityRecord, LP_SIZE_LIMIT, STABILITY_SCHEMA,
};
