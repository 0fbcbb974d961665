//! Approximate Brown–Resnick space-time max-stable fields on regular grids and
//! weighted pairwise-likelihood estimation of their dependence parameters.
//!
//! The dependence function is `δ(h, u) = θ₁‖h‖^α₁ + θ₂|u|^α₂`; every pair of
//! observations at lag `(h, u)` follows a bivariate Hüsler–Reiss law with that δ.

pub mod delta;
pub mod diagnostics;
pub mod error;
pub mod fit;
pub mod huesler_reiss;
pub mod likelihood;
pub mod normal;
pub mod optimize;
pub mod pairs;
pub mod params;
pub mod rng;
pub mod simulate;
pub mod study;

pub use delta::{chi, delta, grad_delta, CorrelationFamily, CorrelationModel, SpaceTimeLag};
pub use error::{Error, Result};
pub use fit::{
    estimate_sandwich, fit, mixing_bound, EstimateResult, FitOptions, SandwichParts, ScoreVariance,
};
pub use likelihood::{pairwise_loglik, score, LagTable, Objective, Reduction};
pub use pairs::{boundary_set, build_mask, enumerate_pairs, BoundarySet, DesignMask, PairSet};
pub use params::{identifiability_mask, IdentifiabilityMask, Param, ParamBox, ParamVector};
pub use simulate::{simulate_field, FieldSample, GridSpec};
pub use study::{emit_outputs, run_study, StudyConfig, StudyResult};
