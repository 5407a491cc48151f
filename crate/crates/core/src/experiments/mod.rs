//! Configuration, eps sweeps, rate fitting, the attractor-rate pipeline and reports.

pub mod claims;
pub mod config;
pub mod fit;
pub mod report;
pub mod sweep;

pub use config::{ExperimentConfig, ModeCount};
pub use fit::{fit_rate, ModelFit, RateFit, RateModel};
pub use report::{emit_report, ReportFormat};
pub use sweep::{
    attractor_pipeline, build_report, run_sweep, run_sweep_detailed, AttractorReport, ConvergenceMetrics, SweepRow,
    SweepTable,
};
