//! Risk-weighted pseudo posterior mechanism for differentially private
//! Bayesian synthetic data.
//!
//! A Bayesian synthesizer becomes a release mechanism with a reported local
//! Lipschitz bound `Δ` and privacy expenditure `ε = 2Δ` per released
//! database:
//!
//! 1. fit the unweighted synthesizer and tabulate per-record
//!    log-likelihoods over the retained draws ([`models`], [`risk`]);
//! 2. turn each record's worst-case |log-likelihood| into a weight
//!    `α_i ∈ [0, 1]`, optionally zeroing records above a threshold `M`;
//! 3. refit the α-weighted pseudo posterior, recompute `Δ`, and draw `m`
//!    synthetic databases from `m` distinct retained draws ([`mechanism`]).
//!
//! [`contraction`] replicates the Poisson simulation that tracks how local
//! bounds contract with sample size, and [`utility`] measures how well
//! releases preserve statistics of the confidential data.
//!
//! The weight and Lipschitz kernels are generic over [`Real`]; the aliases
//! at the crate root fix the scalar to `f64`.

pub mod contraction;
pub mod error;
pub mod mechanism;
pub mod models;
pub mod report;
pub mod risk;
pub mod rng;
pub mod scalar;
pub mod utility;

pub use error::{Error, Result};
pub use scalar::Real;

pub use mechanism::{MechanismKind, ReleaseSettings, SyntheticRelease};
pub use models::{FitSettings, ModelBackend, ParamDraws};
pub use report::ReleaseReport;

pub type LogLikMatrix = risk::LogLikMatrix<f64>;
pub type RiskScores = risk::RiskScores<f64>;
pub type WeightConfig = risk::WeightConfig<f64>;
pub type Weights = risk::Weights<f64>;
pub type LipschitzSummary = risk::LipschitzSummary<f64>;
