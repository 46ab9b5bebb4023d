//! Sweep orchestration, smoothing, curve fitting and trend analysis.

mod curve_fit;
mod savgol;
mod sweep;
mod trend;

pub use curve_fit::{
    least_curve_fit, least_curve_fit_with, CurvePoint, ParametricFit, DEFAULT_MAX_ITERATIONS, DEFAULT_TOLERANCE,
};
pub use savgol::{savgol_coefficients, savgol_smooth};
pub use sweep::{
    load_sweep_manifest, run_sweep, CellKey, CellOutcome, CellRunner, CellStatus, ModelKind, SweepCell,
    SweepParameter, SweepResult, SweepSpec,
};
pub use trend::{trend_report, Extremum, MetricTrend, SeedTrend, Trend, TrendReport, MONOTONE_THRESHOLD};
