//! Bayesian synthesizer backends.
//!
//! A backend fits the α-weighted pseudo posterior
//! `ξ^α(θ | x) ∝ ∏_i p(x_i | θ)^{α_i} ξ(θ)`, evaluates per-record
//! log-likelihoods under a retained draw, and generates predictive records.
//! With `α ≡ 1` the fit is the ordinary posterior.

mod mixture;
mod poisson;

pub use mixture::{MixtureModel, MixturePrior, MixtureRegressionState, RegressionData, Standardization};
pub use poisson::{poisson_loglik, GammaPrior, PoissonData, PoissonMeanState, PoissonModel};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::risk::LogLikMatrix;
use crate::rng::Rng;

/// MCMC lengths shared by all backends.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSettings {
    /// Retained draws S.
    pub draws: usize,
    pub burn_in: usize,
    pub thin: usize,
}

impl Default for FitSettings {
    fn default() -> Self {
        Self { draws: 1000, burn_in: 1000, thin: 1 }
    }
}

impl FitSettings {
    pub fn new(draws: usize, burn_in: usize) -> Self {
        Self { draws, burn_in, thin: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.draws == 0 {
            return Err(Error::param("draws", "must be at least 1"));
        }
        if self.thin == 0 {
            return Err(Error::param("thin", "must be at least 1"));
        }
        Ok(())
    }
}

/// Retained (post burn-in) parameter draws from one fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamDraws<S> {
    pub draws: Vec<S>,
    pub model_id: String,
    pub seed: u64,
    pub burn_in: usize,
}

impl<S> ParamDraws<S> {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }
}

/// Contract every synthesizer implements.
pub trait ModelBackend: Send + Sync {
    /// Confidential database.
    type Data: Send + Sync;
    /// One parameter state θ_s.
    type State: Clone + Send + Sync;
    /// One synthetic record.
    type Record: Clone + Send + Sync;

    fn model_id(&self) -> &'static str;

    fn n_records(&self, data: &Self::Data) -> usize;

    /// Draws from the α-weighted pseudo posterior. `alpha` has one entry in
    /// [0, 1] per record.
    fn fit(&self, data: &Self::Data, alpha: &[f64], settings: &FitSettings, seed: u64)
        -> Result<ParamDraws<Self::State>>;

    /// Log-likelihood of record `i` under `state`; deterministic.
    fn loglik(&self, state: &Self::State, data: &Self::Data, i: usize) -> f64;

    /// One predictive record for row `i` (row `i` supplies covariates when
    /// the model has any).
    fn predict(&self, state: &Self::State, data: &Self::Data, i: usize, rng: &mut Rng) -> Result<Self::Record>;

    /// Scalar response of a record, used for utility statistics.
    fn response(&self, record: &Self::Record) -> f64;

    /// Confidential responses in record order.
    fn confidential_responses(&self, data: &Self::Data) -> Vec<f64>;
}

pub(crate) fn check_alpha(alpha: &[f64], n: usize) -> Result<()> {
    if alpha.len() != n {
        return Err(Error::DimensionMismatch(format!("{} weights for {n} records", alpha.len())));
    }
    if let Some(a) = alpha.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::param("alpha", format!("weights must lie in [0, 1], found {a}")));
    }
    Ok(())
}

/// S×n log-likelihood matrix of `data` under every retained draw.
/// Rows are evaluated in parallel; the result does not depend on the
/// number of workers.
pub fn loglik_matrix<B: ModelBackend>(
    model: &B,
    draws: &ParamDraws<B::State>,
    data: &B::Data,
) -> Result<LogLikMatrix<f64>> {
    let n = model.n_records(data);
    let rows: Vec<Vec<f64>> = draws
        .draws
        .par_iter()
        .map(|state| (0..n).map(|i| model.loglik(state, data, i)).collect())
        .collect();
    LogLikMatrix::new(rows.len(), n, rows.concat())
}
