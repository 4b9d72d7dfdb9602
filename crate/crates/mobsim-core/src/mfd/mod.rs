//! Network-level flow analytics: accumulation/production observables,
//! exponential production models at vehicle and passenger level, hysteresis
//! quantification and constrained least-squares model fitting.

mod fit;
mod hysteresis;
mod metrics;
mod model;
mod series;
mod spline;

pub use fit::{fit_mfd, ConstraintFlags, FitConfig, FitReport};
pub use hysteresis::{
    hysteresis, split_branches, Branch, Episode, HysteresisResult, SplineConfig,
};
pub use metrics::{
    accumulation, accumulation_by_mode, gamma, ivd, passenger_accumulation,
    passenger_production, production, rmsn, trip_principal_mode, tsi, IvdValue, TripSpeedRecord,
};
pub use model::{eval_pmfd, eval_vmfd, vmfd_slope, MfdKind, MfdParams};
pub use series::{build_samples, load_samples, save_samples, MfdSample};
pub use spline::{Smoothing, SmoothingSpline};
