//! Finite mixture of normal linear regressions, fitted by an α-weighted
//! Gibbs sampler.
//!
//! ```text
//! y_i | x_i, z_i, β, σ ~ Normal(x_i'β_{z_i}, σ_{z_i})
//! z_i | π             ~ Categorical(π_1, …, π_K)
//! π                   ~ Dirichlet(a/K, …, a/K)
//! β_k                 ~ Normal(0, τ² I_R)
//! σ_k²                ~ InverseGamma(a_σ, b_σ)
//! ```
//!
//! Each record's likelihood enters every full conditional raised to its
//! weight α_i, so all updates stay conjugate: weighted ridge for β_k,
//! weighted residual sums for σ_k², and α-weighted counts for π. The
//! response is standardized internally and log-likelihoods are reported on
//! the standardized scale.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng as _;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{check_alpha, FitSettings, ModelBackend, ParamDraws};
use crate::error::{Error, Result};
use crate::rng::{rng_from, Rng};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub center: f64,
    pub scale: f64,
}

impl Standardization {
    pub fn fit(y: &[f64]) -> Self {
        let n = y.len() as f64;
        let center = y.iter().sum::<f64>() / n;
        let var = if y.len() > 1 {
            y.iter().map(|v| (v - center).powi(2)).sum::<f64>() / (n - 1.0)
        } else {
            0.0
        };
        let scale = if var > 0.0 && var.is_finite() { var.sqrt() } else { 1.0 };
        Self { center, scale }
    }

    pub fn forward(&self, y: f64) -> f64 {
        (y - self.center) / self.scale
    }

    pub fn inverse(&self, z: f64) -> f64 {
        self.center + self.scale * z
    }
}

/// Response vector and n×R design matrix.
///
/// Rows are kept both dense and as sparse (column, value) lists, since
/// one-hot designs are mostly zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionData {
    y: Vec<f64>,
    y_std: Vec<f64>,
    x: Vec<f64>,
    nonzeros: Vec<Vec<(usize, f64)>>,
    n_predictors: usize,
    standardization: Standardization,
}

impl RegressionData {
    /// `x` holds one row of R predictors per record (include an intercept
    /// column explicitly if one is wanted).
    pub fn new(y: Vec<f64>, x: Vec<Vec<f64>>) -> Result<Self> {
        if y.is_empty() {
            return Err(Error::InvalidData("no records".into()));
        }
        if x.len() != y.len() {
            return Err(Error::DimensionMismatch(format!("{} responses but {} design rows", y.len(), x.len())));
        }
        let r = x[0].len();
        if r == 0 {
            return Err(Error::DimensionMismatch("design matrix needs at least one column".into()));
        }
        if let Some(i) = x.iter().position(|row| row.len() != r) {
            return Err(Error::DimensionMismatch(format!("design row {i} has {} columns, expected {r}", x[i].len())));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!("response {i} is not finite")));
        }
        if x.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("design matrix contains non-finite values".into()));
        }
        let standardization = Standardization::fit(&y);
        let y_std = y.iter().map(|&v| standardization.forward(v)).collect();
        let nonzeros = x
            .iter()
            .map(|row| row.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(j, v)| (j, *v)).collect())
            .collect();
        Ok(Self { y, y_std, x: x.concat(), nonzeros, n_predictors: r, standardization })
    }

    /// Intercept-only design.
    pub fn intercept_only(y: Vec<f64>) -> Result<Self> {
        let x = vec![vec![1.0]; y.len()];
        Self::new(y, x)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn n_predictors(&self) -> usize {
        self.n_predictors
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn y_standardized(&self) -> &[f64] {
        &self.y_std
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.n_predictors..(i + 1) * self.n_predictors]
    }

    pub fn standardization(&self) -> Standardization {
        self.standardization
    }

    fn linear(&self, i: usize, beta: &[f64]) -> f64 {
        self.nonzeros[i].iter().map(|&(j, v)| v * beta[j]).sum()
    }
}

/// Conjugate priors for the mixture (on the standardized response scale).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixturePrior {
    /// τ in β_k ~ Normal(0, τ² I).
    pub beta_scale: f64,
    pub sigma_shape: f64,
    pub sigma_rate: f64,
    /// Dirichlet concentration a; each component gets a/K.
    pub concentration: f64,
}

impl Default for MixturePrior {
    fn default() -> Self {
        Self { beta_scale: 10.0, sigma_shape: 2.0, sigma_rate: 1.0, concentration: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureRegressionState {
    pub pi: Vec<f64>,
    /// K×R, row-major by component.
    pub beta: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Component label per record, 0-based.
    pub z: Vec<u32>,
}

impl MixtureRegressionState {
    pub fn components(&self) -> usize {
        self.pi.len()
    }

    pub fn beta_of(&self, k: usize) -> &[f64] {
        let r = self.beta.len() / self.pi.len();
        &self.beta[k * r..(k + 1) * r]
    }

    /// Marginal log density `ln Σ_k π_k Normal(y | x'β_k, σ_k)` for a
    /// standardized response.
    pub fn log_density(&self, y: f64, x: &[f64]) -> f64 {
        let mut acc = StreamingLogSumExp::default();
        for k in 0..self.pi.len() {
            if self.pi[k] > 0.0 {
                let mean: f64 = x.iter().zip(self.beta_of(k)).map(|(a, b)| a * b).sum();
                acc.push(self.pi[k].ln() + normal_ln_pdf(y, mean, self.sigma[k]));
            }
        }
        acc.value()
    }

    /// Permutes component labels: new component `j` is old component `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let k = self.pi.len();
        let r = self.beta.len() / k;
        let mut inverse = vec![0u32; k];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new as u32;
        }
        Self {
            pi: perm.iter().map(|&o| self.pi[o]).collect(),
            beta: perm.iter().flat_map(|&o| self.beta[o * r..(o + 1) * r].to_vec()).collect(),
            sigma: perm.iter().map(|&o| self.sigma[o]).collect(),
            z: self.z.iter().map(|&old| inverse[old as usize]).collect(),
        }
    }

    fn check(&self) -> Result<()> {
        let total: f64 = self.pi.iter().sum();
        if (total - 1.0).abs() > 1e-12 || self.sigma.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::Numerical("mixture state left its support".into()));
        }
        if self.beta.iter().any(|b| !b.is_finite()) {
            return Err(Error::Numerical("non-finite regression coefficient".into()));
        }
        Ok(())
    }
}

fn normal_ln_pdf(y: f64, mean: f64, sd: f64) -> f64 {
    let u = (y - mean) / sd;
    -LN_SQRT_2PI - sd.ln() - 0.5 * u * u
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

struct StreamingLogSumExp {
    max: f64,
    sum: f64,
}

impl Default for StreamingLogSumExp {
    fn default() -> Self {
        Self { max: f64::NEG_INFINITY, sum: 0.0 }
    }
}

impl StreamingLogSumExp {
    fn push(&mut self, t: f64) {
        if t == f64::NEG_INFINITY {
            return;
        }
        if t > self.max {
            self.sum = self.sum * (self.max - t).exp() + 1.0;
            self.max = t;
        } else {
            self.sum += (t - self.max).exp();
        }
    }

    fn value(&self) -> f64 {
        if self.sum == 0.0 {
            f64::NEG_INFINITY
        } else {
            self.max + self.sum.ln()
        }
    }
}

/// `ln G` for `G ~ Gamma(shape, 1)`, stable for tiny shapes.
fn ln_gamma_variate(shape: f64, rng: &mut Rng) -> Result<f64> {
    let boost = shape < 1.0;
    let g = Gamma::new(if boost { shape + 1.0 } else { shape }, 1.0)
        .map_err(|e| Error::Numerical(format!("gamma variate: {e}")))?;
    let mut lg = g.sample(rng).ln();
    if boost {
        let u: f64 = rng.random();
        lg += u.max(f64::MIN_POSITIVE).ln() / shape;
    }
    Ok(lg)
}

fn categorical(logp: &[f64], rng: &mut Rng) -> usize {
    let max = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut cum = 0.0;
    let cdf: Vec<f64> = logp
        .iter()
        .map(|lp| {
            cum += (lp - max).exp();
            cum
        })
        .collect();
    let u: f64 = rng.random::<f64>() * cum;
    cdf.iter().position(|&c| u < c).unwrap_or(logp.len() - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixtureModel {
    /// Maximum number of components K.
    pub components: usize,
    pub prior: MixturePrior,
}

impl Default for MixtureModel {
    fn default() -> Self {
        Self { components: 20, prior: MixturePrior::default() }
    }
}

impl MixtureModel {
    pub fn new(components: usize, prior: MixturePrior) -> Result<Self> {
        let m = Self { components, prior };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.components == 0 {
            return Err(Error::param("components", "K must be at least 1"));
        }
        let p = &self.prior;
        for (name, v) in [
            ("beta_scale", p.beta_scale),
            ("sigma_shape", p.sigma_shape),
            ("sigma_rate", p.sigma_rate),
            ("concentration", p.concentration),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::param(name, format!("must be positive, got {v}")));
            }
        }
        Ok(())
    }

    fn initial_state(&self, data: &RegressionData) -> MixtureRegressionState {
        let k = self.components;
        let n = data.len();
        // contiguous quantile groups of the response
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| data.y_std[a].total_cmp(&data.y_std[b]));
        let groups = k.min(n);
        let mut z = vec![0u32; n];
        for (rank, &i) in order.iter().enumerate() {
            z[i] = (rank * groups / n) as u32;
        }
        MixtureRegressionState {
            pi: vec![1.0 / k as f64; k],
            beta: vec![0.0; k * data.n_predictors],
            sigma: vec![1.0; k],
            z,
        }
    }

    fn update_components(
        &self,
        state: &mut MixtureRegressionState,
        data: &RegressionData,
        alpha: &[f64],
        rng: &mut Rng,
    ) -> Result<()> {
        let k_max = self.components;
        let r = data.n_predictors;
        let prior_precision = 1.0 / (self.prior.beta_scale * self.prior.beta_scale);

        let mut xtwx = vec![DMatrix::<f64>::zeros(r, r); k_max];
        let mut xtwy = vec![DVector::<f64>::zeros(r); k_max];
        let mut weight = vec![0.0; k_max];
        for i in 0..data.len() {
            let a = alpha[i];
            if a == 0.0 {
                continue;
            }
            let k = state.z[i] as usize;
            weight[k] += a;
            let nz = &data.nonzeros[i];
            for &(j, xj) in nz {
                xtwy[k][j] += a * xj * data.y_std[i];
                for &(l, xl) in nz {
                    xtwx[k][(j, l)] += a * xj * xl;
                }
            }
        }

        for k in 0..k_max {
            let var = state.sigma[k] * state.sigma[k];
            let mut precision = &xtwx[k] / var;
            for j in 0..r {
                precision[(j, j)] += prior_precision;
            }
            let rhs = &xtwy[k] / var;
            let chol = Cholesky::new(precision)
                .ok_or_else(|| Error::Numerical(format!("coefficient precision of component {k} not positive definite")))?;
            let mean = chol.solve(&rhs);
            let xi = DVector::<f64>::from_iterator(r, (0..r).map(|_| rng.sample::<f64, _>(StandardNormal)));
            let noise = chol
                .l()
                .transpose()
                .solve_upper_triangular(&xi)
                .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
            let beta = mean + noise;
            state.beta[k * r..(k + 1) * r].copy_from_slice(beta.as_slice());
        }

        let mut ssr = vec![0.0; k_max];
        for i in 0..data.len() {
            let a = alpha[i];
            if a == 0.0 {
                continue;
            }
            let k = state.z[i] as usize;
            let resid = data.y_std[i] - data.linear(i, &state.beta[k * r..(k + 1) * r]);
            ssr[k] += a * resid * resid;
        }
        for k in 0..k_max {
            let shape = self.prior.sigma_shape + 0.5 * weight[k];
            let rate = self.prior.sigma_rate + 0.5 * ssr[k];
            let precision = Gamma::new(shape, 1.0 / rate)
                .map_err(|e| Error::Numerical(format!("scale update: {e}")))?
                .sample(rng);
            state.sigma[k] = (1.0 / precision).sqrt();
        }

        let base = self.prior.concentration / k_max as f64;
        let log_g = (0..k_max)
            .map(|k| ln_gamma_variate(base + weight[k], rng))
            .collect::<Result<Vec<_>>>()?;
        let lse = log_sum_exp(&log_g);
        let raw: Vec<f64> = log_g.iter().map(|lg| (lg - lse).exp()).collect();
        let total: f64 = raw.iter().sum();
        state.pi = raw.iter().map(|p| p / total).collect();
        Ok(())
    }

    fn update_labels(&self, state: &mut MixtureRegressionState, data: &RegressionData, alpha: &[f64], rng: &mut Rng) {
        let k_max = self.components;
        let r = data.n_predictors;
        let ln_pi: Vec<f64> = state.pi.iter().map(|p| p.ln()).collect();
        let mut logp = vec![0.0; k_max];
        for i in 0..data.len() {
            let a = alpha[i];
            for k in 0..k_max {
                logp[k] = if a == 0.0 {
                    ln_pi[k]
                } else {
                    let mean = data.linear(i, &state.beta[k * r..(k + 1) * r]);
                    ln_pi[k] + a * normal_ln_pdf(data.y_std[i], mean, state.sigma[k])
                };
            }
            state.z[i] = categorical(&logp, rng) as u32;
        }
    }
}

impl ModelBackend for MixtureModel {
    type Data = RegressionData;
    type State = MixtureRegressionState;
    type Record = f64;

    fn model_id(&self) -> &'static str {
        "mixture"
    }

    fn n_records(&self, data: &RegressionData) -> usize {
        data.len()
    }

    fn fit(&self, data: &RegressionData, alpha: &[f64], settings: &FitSettings, seed: u64)
        -> Result<ParamDraws<MixtureRegressionState>> {
        self.validate()?;
        settings.validate()?;
        check_alpha(alpha, data.len())?;
        let mut rng = rng_from(seed);
        let mut state = self.initial_state(data);
        let total = settings.burn_in + settings.draws * settings.thin;
        let mut draws = Vec::with_capacity(settings.draws);
        for it in 0..total {
            self.update_components(&mut state, data, alpha, &mut rng)?;
            self.update_labels(&mut state, data, alpha, &mut rng);
            if it >= settings.burn_in && (it - settings.burn_in) % settings.thin == 0 {
                state.check()?;
                draws.push(state.clone());
            }
        }
        Ok(ParamDraws { draws, model_id: self.model_id().into(), seed, burn_in: settings.burn_in })
    }

    fn loglik(&self, state: &MixtureRegressionState, data: &RegressionData, i: usize) -> f64 {
        let r = data.n_predictors;
        let mut acc = StreamingLogSumExp::default();
        for k in 0..state.pi.len() {
            if state.pi[k] > 0.0 {
                let mean = data.linear(i, &state.beta[k * r..(k + 1) * r]);
                acc.push(state.pi[k].ln() + normal_ln_pdf(data.y_std[i], mean, state.sigma[k]));
            }
        }
        acc.value()
    }

    /// Component from π (labels carry no covariate information), response
    /// from that component's regression, mapped back to the original scale.
    fn predict(&self, state: &MixtureRegressionState, data: &RegressionData, i: usize, rng: &mut Rng) -> Result<f64> {
        if data.n_predictors * state.pi.len() != state.beta.len() {
            return Err(Error::DimensionMismatch("covariates do not match the fitted state".into()));
        }
        let ln_pi: Vec<f64> = state.pi.iter().map(|p| p.ln()).collect();
        let k = categorical(&ln_pi, rng);
        let mean = data.linear(i, state.beta_of(k));
        let eps: f64 = rng.sample(StandardNormal);
        Ok(data.standardization.inverse(mean + state.sigma[k] * eps))
    }

    fn response(&self, record: &f64) -> f64 {
        *record
    }

    fn confidential_responses(&self, data: &RegressionData) -> Vec<f64> {
        data.y.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand_distr::Normal;

    #[test]
    fn standard_normal_at_mode() {
        let data = RegressionData::new(vec![0.0, 2.0, -2.0], vec![vec![1.0, 3.0]; 3]).unwrap();
        let state = MixtureRegressionState { pi: vec![1.0], beta: vec![0.0, 0.0], sigma: vec![1.0], z: vec![0; 3] };
        let m = MixtureModel { components: 1, ..Default::default() };
        assert_relative_eq!(m.loglik(&state, &data, 0), -0.5 * (2.0 * std::f64::consts::PI).ln(), max_relative = 1e-14);
    }

    #[test]
    fn two_separated_components() {
        let mu = 40.0;
        let state = MixtureRegressionState {
            pi: vec![0.5, 0.5],
            beta: vec![-mu, mu],
            sigma: vec![1.0, 1.0],
            z: vec![],
        };
        // direct evaluation: 0.5 φ(0) + 0.5 φ(2μ), second term underflows
        let phi = |u: f64| (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let oracle = (0.5 * phi(0.0) + 0.5 * phi(2.0 * mu)).ln();
        assert_relative_eq!(state.log_density(mu, &[1.0]), oracle, max_relative = 1e-14);
        assert_relative_eq!(oracle, 0.5f64.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln(), max_relative = 1e-14);
    }

    #[test]
    fn degenerate_weights_reduce_to_one_component() {
        let state = MixtureRegressionState {
            pi: vec![1.0, 0.0],
            beta: vec![0.5, -3.0],
            sigma: vec![2.0, 0.1],
            z: vec![],
        };
        assert_relative_eq!(state.log_density(1.0, &[1.0]), normal_ln_pdf(1.0, 0.5, 2.0), max_relative = 1e-14);
    }

    #[test]
    fn loglik_invariant_to_label_permutation() {
        let data = RegressionData::new(vec![1.0, 4.0, -2.0, 0.5], vec![vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 0.0], vec![1.0, 1.0]])
            .unwrap();
        let state = MixtureRegressionState {
            pi: vec![0.2, 0.5, 0.3],
            beta: vec![0.1, 0.2, -1.0, 0.4, 0.7, -0.3],
            sigma: vec![0.5, 1.5, 0.9],
            z: vec![0, 1, 2, 1],
        };
        let perm = state.permuted(&[2, 0, 1]);
        let m = MixtureModel { components: 3, ..Default::default() };
        for i in 0..4 {
            assert_relative_eq!(m.loglik(&state, &data, i), m.loglik(&perm, &data, i), max_relative = 1e-13);
        }
    }

    #[test]
    fn tiny_noise_collapses_predictions() {
        let data = RegressionData::new(vec![10.0, 20.0, 30.0], vec![vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0]])
            .unwrap();
        let state = MixtureRegressionState { pi: vec![1.0], beta: vec![0.2, 0.5], sigma: vec![1e-12], z: vec![0; 3] };
        let m = MixtureModel { components: 1, ..Default::default() };
        let mut rng = rng_from(1);
        let st = data.standardization();
        for i in 0..3 {
            let y = m.predict(&state, &data, i, &mut rng).unwrap();
            let expected = st.inverse(0.2 + 0.5 * i as f64);
            assert!((y - expected).abs() < 1e-9, "{y} vs {expected}");
        }
        let a = m.predict(&state, &data, 1, &mut rng_from(5)).unwrap();
        let b = m.predict(&state, &data, 1, &mut rng_from(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn predict_rejects_mismatched_covariates() {
        let data = RegressionData::intercept_only(vec![1.0, 2.0]).unwrap();
        let state = MixtureRegressionState { pi: vec![1.0], beta: vec![0.0, 0.0], sigma: vec![1.0], z: vec![0; 2] };
        assert!(MixtureModel::default().predict(&state, &data, 0, &mut rng_from(1)).is_err());
    }

    #[test]
    fn data_validation() {
        assert!(RegressionData::new(vec![], vec![]).is_err());
        assert!(RegressionData::new(vec![1.0], vec![vec![1.0], vec![1.0]]).is_err());
        assert!(RegressionData::new(vec![1.0, 2.0], vec![vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(RegressionData::new(vec![f64::NAN], vec![vec![1.0]]).is_err());
        assert!(MixtureModel::new(0, MixturePrior::default()).is_err());
    }

    #[test]
    fn fit_is_deterministic_and_in_support() {
        let mut rng = rng_from(2);
        let y: Vec<f64> = (0..60).map(|_| rng.sample(Normal::new(3.0, 2.0).unwrap())).collect();
        let data = RegressionData::intercept_only(y).unwrap();
        let m = MixtureModel { components: 4, ..Default::default() };
        let s = FitSettings::new(20, 20);
        let a = m.fit(&data, &vec![0.7; 60], &s, 99).unwrap();
        let b = m.fit(&data, &vec![0.7; 60], &s, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 20);
        assert_eq!(a.burn_in, 20);
        for st in &a.draws {
            assert!((st.pi.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(st.sigma.iter().all(|s| *s > 0.0));
            assert!(st.z.iter().all(|z| (*z as usize) < 4));
        }
    }
}
