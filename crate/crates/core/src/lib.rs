//! Segmentation-guided recurrence-free-survival modeling.
//!
//! The crate covers the full analysis chain downstream of tumor segmentation:
//!
//! - [`survstat`] — Kaplan–Meier curves, the two-sample log-rank test,
//!   Harrell's concordance index, and the chi-square tail probability
//! - [`coxph`] — Cox proportional-hazards regression (partial likelihood,
//!   analytic derivatives, Newton fitting with step-halving)
//! - [`volume`] — 3D voxel grids, connected components, centroid-distance
//!   node filtering, Dice, resampling, and z-score normalization
//! - [`radiomics`] — first-order, shape, and GLCM texture features over a
//!   labeled tumor region
//! - [`pipeline`] — clinical encoding, seeded repeated cross-validation,
//!   univariate screening, correlation pruning, step-forward selection,
//!   per-fold model training, risk fusion, and stratification
//! - [`synth`] — seeded synthetic survival cohorts and geometric volume
//!   phantoms used by the test suites

pub mod coxph;
pub mod error;
pub mod pipeline;
pub mod radiomics;
pub mod survstat;
pub mod synth;
pub mod volume;

pub use error::{Error, Result};
