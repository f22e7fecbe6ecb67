//! Poisson means model with a conjugate Gamma prior.
//!
//! The pseudo posterior is available in closed form,
//! `Gamma(a0 + Σ α_i y_i, b0 + Σ α_i)`, so draws are exact and
//! independent; there is no burn-in.

use rand::Rng as _;
use rand_distr::{Distribution, Gamma, Poisson};
use serde::{Deserialize, Serialize};

use super::{check_alpha, FitSettings, ModelBackend, ParamDraws};
use crate::error::{Error, Result};
use crate::rng::{rng_from, Rng};

/// Gamma(shape, rate) prior on the Poisson mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl Default for GammaPrior {
    fn default() -> Self {
        Self { shape: 1.0, rate: 1.0 }
    }
}

impl GammaPrior {
    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn variance(&self) -> f64 {
        self.shape / (self.rate * self.rate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoissonMeanState {
    pub mu: f64,
}

/// Counts with `ln(y!)` cached per record.
#[derive(Debug, Clone, PartialEq)]
pub struct PoissonData {
    counts: Vec<u64>,
    ln_factorial: Vec<f64>,
}

impl PoissonData {
    pub fn new(counts: Vec<u64>) -> Result<Self> {
        if counts.is_empty() {
            return Err(Error::InvalidData("no records".into()));
        }
        let ln_factorial = counts.iter().map(|&y| libm::lgamma(y as f64 + 1.0)).collect();
        Ok(Self { counts, ln_factorial })
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PoissonModel {
    pub prior: GammaPrior,
}

/// `y ln μ − μ − ln y!`.
pub fn poisson_loglik(state: &PoissonMeanState, y: u64) -> f64 {
    let y = y as f64;
    y * state.mu.ln() - state.mu - libm::lgamma(y + 1.0)
}

impl PoissonModel {
    pub fn new(prior: GammaPrior) -> Result<Self> {
        if !(prior.shape >= 0.0 && prior.rate >= 0.0) || !prior.shape.is_finite() || !prior.rate.is_finite() {
            return Err(Error::param("prior", "Gamma shape and rate must be finite and non-negative"));
        }
        Ok(Self { prior })
    }

    /// Closed-form pseudo posterior `Gamma(a0 + Σ α_i y_i, b0 + Σ α_i)`.
    pub fn posterior(&self, data: &PoissonData, alpha: &[f64]) -> Result<GammaPrior> {
        check_alpha(alpha, data.len())?;
        let (sum_ay, sum_a) = data
            .counts
            .iter()
            .zip(alpha)
            .fold((0.0, 0.0), |(sy, sa), (&y, &a)| (sy + a * y as f64, sa + a));
        let post = GammaPrior { shape: self.prior.shape + sum_ay, rate: self.prior.rate + sum_a };
        if !(post.shape > 0.0 && post.rate > 0.0) {
            return Err(Error::PosteriorImproper(format!(
                "Gamma({}, {}) after weighting",
                post.shape, post.rate
            )));
        }
        Ok(post)
    }
}

impl ModelBackend for PoissonModel {
    type Data = PoissonData;
    type State = PoissonMeanState;
    type Record = u64;

    fn model_id(&self) -> &'static str {
        "poisson"
    }

    fn n_records(&self, data: &PoissonData) -> usize {
        data.len()
    }

    fn fit(&self, data: &PoissonData, alpha: &[f64], settings: &FitSettings, seed: u64)
        -> Result<ParamDraws<PoissonMeanState>> {
        settings.validate()?;
        let post = self.posterior(data, alpha)?;
        let gamma = Gamma::new(post.shape, 1.0 / post.rate)
            .map_err(|e| Error::Numerical(format!("gamma posterior: {e}")))?;
        let mut rng = rng_from(seed);
        let draws = (0..settings.draws)
            .map(|_| PoissonMeanState { mu: gamma.sample(&mut rng).max(f64::MIN_POSITIVE) })
            .collect();
        Ok(ParamDraws { draws, model_id: self.model_id().into(), seed, burn_in: 0 })
    }

    fn loglik(&self, state: &PoissonMeanState, data: &PoissonData, i: usize) -> f64 {
        let y = data.counts[i] as f64;
        y * state.mu.ln() - state.mu - data.ln_factorial[i]
    }

    fn predict(&self, state: &PoissonMeanState, _data: &PoissonData, _i: usize, rng: &mut Rng) -> Result<u64> {
        let pois = Poisson::new(state.mu).map_err(|e| Error::Numerical(format!("poisson predictive: {e}")))?;
        let draw: f64 = rng.sample(pois);
        Ok(draw as u64)
    }

    fn response(&self, record: &u64) -> f64 {
        *record as f64
    }

    fn confidential_responses(&self, data: &PoissonData) -> Vec<f64> {
        data.counts.iter().map(|&y| y as f64).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn data(y: &[u64]) -> PoissonData {
        PoissonData::new(y.to_vec()).unwrap()
    }

    #[test]
    fn conjugate_bookkeeping() {
        let m = PoissonModel::default();
        assert_eq!(m.posterior(&data(&[2, 4]), &[1.0, 1.0]).unwrap(), GammaPrior { shape: 7.0, rate: 3.0 });
        assert_eq!(m.posterior(&data(&[2, 4]), &[0.5, 0.5]).unwrap(), GammaPrior { shape: 4.0, rate: 2.0 });
    }

    #[test]
    fn doubling_weight_equals_duplicating_record() {
        let m = PoissonModel::default();
        let doubled = m.posterior(&data(&[3, 9]), &[0.4, 0.6]).unwrap();
        let dup = m.posterior(&data(&[3, 3, 9]), &[0.2, 0.2, 0.6]).unwrap();
        assert_eq!(doubled, dup);
    }

    #[test]
    fn improper_posterior() {
        let m = PoissonModel::new(GammaPrior { shape: 0.0, rate: 0.0 }).unwrap();
        assert!(matches!(m.posterior(&data(&[1, 2]), &[0.0, 0.0]), Err(Error::PosteriorImproper(_))));
        assert!(m.posterior(&data(&[1, 2]), &[1.0, 0.0]).is_ok());
    }

    #[test]
    fn rejects_bad_alpha() {
        let m = PoissonModel::default();
        assert!(m.posterior(&data(&[1]), &[1.5]).is_err());
        assert!(m.posterior(&data(&[1]), &[1.0, 1.0]).is_err());
    }

    #[test]
    fn loglik_examples() {
        assert_relative_eq!(poisson_loglik(&PoissonMeanState { mu: 1.0 }, 0), -1.0, max_relative = 1e-15);
        assert_relative_eq!(poisson_loglik(&PoissonMeanState { mu: 100.0 }, 0), -100.0, max_relative = 1e-15);
        // 100 ln 100 - 100 - lnΓ(101), evaluated to 40 digits with mpmath
        assert_relative_eq!(
            poisson_loglik(&PoissonMeanState { mu: 100.0 }, 100),
            -3.222_356_956_754_353,
            max_relative = 1e-12
        );
        let m = PoissonModel::default();
        let d = data(&[100]);
        assert_eq!(m.loglik(&PoissonMeanState { mu: 100.0 }, &d, 0), poisson_loglik(&PoissonMeanState { mu: 100.0 }, 100));
    }

    #[test]
    fn sampler_matches_gamma_moments() {
        let m = PoissonModel::default();
        let s = 10_000;
        let draws = m.fit(&data(&[2, 4]), &[1.0, 1.0], &FitSettings::new(s, 0), 11).unwrap();
        let mus: Vec<f64> = draws.draws.iter().map(|d| d.mu).collect();
        let mean = mus.iter().sum::<f64>() / s as f64;
        let (a, b) = (7.0, 3.0);
        let se = (a / (b * b) / s as f64).sqrt();
        assert!((mean - a / b).abs() < 3.0 * se, "mean {mean} vs {}", a / b);
        assert_eq!(draws.burn_in, 0);
    }

    #[test]
    fn predictive_law_of_large_numbers() {
        let m = PoissonModel::default();
        let d = data(&[0]);
        let state = PoissonMeanState { mu: 42.0 };
        let mut rng = rng_from(3);
        let k = 100_000;
        let mean = (0..k).map(|_| m.predict(&state, &d, 0, &mut rng).unwrap() as f64).sum::<f64>() / k as f64;
        assert!((mean - 42.0).abs() < 3.0 * (42.0 / k as f64).sqrt());

        let a = m.predict(&state, &d, 0, &mut rng_from(9)).unwrap();
        let b = m.predict(&state, &d, 0, &mut rng_from(9)).unwrap();
        assert_eq!(a, b);
    }
}
