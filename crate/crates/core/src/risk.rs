//! Per-record disclosure risk, α weights, and local Lipschitz accounting.
//!
//! Everything here is a pure function of its inputs and generic over the
//! scalar type. The flow is
//!
//! ```text
//! LogLikMatrix --record_risk--> RiskScores --compute_weights--> Weights
//!      |                                      (apply_m_truncation)  |
//!      +------------------ weighted_loglik_matrix <-----------------+
//!                                   |
//!                           lipschitz_summary
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{fmax, Real};

/// S×n table of per-draw, per-record log-likelihood values.
///
/// Values are stored signed (row-major, one row per parameter draw);
/// absolute values are taken on demand. Any NaN or infinite entry is
/// recorded in the finite mask at construction so it can never propagate
/// silently.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogLikMatrix<T> {
    values: Vec<T>,
    finite_mask: Vec<bool>,
    s_draws: usize,
    n_records: usize,
}

impl<T: Real> LogLikMatrix<T> {
    pub fn new(s_draws: usize, n_records: usize, values: Vec<T>) -> Result<Self> {
        if s_draws == 0 || n_records == 0 {
            return Err(Error::DimensionMismatch(format!(
                "log-likelihood matrix must be non-empty, got {s_draws}x{n_records}"
            )));
        }
        if values.len() != s_draws * n_records {
            return Err(Error::DimensionMismatch(format!(
                "expected {} values for a {s_draws}x{n_records} matrix, got {}",
                s_draws * n_records,
                values.len()
            )));
        }
        let finite_mask = values.iter().map(|v| v.is_finite()).collect();
        Ok(Self { values, finite_mask, s_draws, n_records })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch("ragged log-likelihood rows".into()));
        }
        Self::new(rows.len(), n, rows.concat())
    }

    /// Builds the matrix by evaluating `f(draw, record)`.
    pub fn from_fn(s_draws: usize, n_records: usize, mut f: impl FnMut(usize, usize) -> T) -> Result<Self> {
        let mut values = Vec::with_capacity(s_draws * n_records);
        for s in 0..s_draws {
            for i in 0..n_records {
                values.push(f(s, i));
            }
        }
        Self::new(s_draws, n_records, values)
    }

    pub fn s_draws(&self) -> usize {
        self.s_draws
    }

    pub fn n_records(&self) -> usize {
        self.n_records
    }

    pub fn get(&self, draw: usize, record: usize) -> T {
        self.values[draw * self.n_records + record]
    }

    pub fn is_finite_at(&self, draw: usize, record: usize) -> bool {
        self.finite_mask[draw * self.n_records + record]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn row(&self, draw: usize) -> &[T] {
        let start = draw * self.n_records;
        &self.values[start..start + self.n_records]
    }

    pub fn is_fully_finite(&self) -> bool {
        self.finite_mask.iter().all(|&f| f)
    }

    /// Column-wise maximum of |value| and a flag for columns holding any
    /// non-finite entry.
    fn column_abs_max(&self) -> (Vec<T>, Vec<bool>) {
        let mut max = vec![T::zero(); self.n_records];
        let mut bad = vec![false; self.n_records];
        for s in 0..self.s_draws {
            let row = self.row(s);
            let mask = &self.finite_mask[s * self.n_records..(s + 1) * self.n_records];
            for i in 0..self.n_records {
                if mask[i] {
                    max[i] = fmax(max[i], row[i].abs());
                } else {
                    bad[i] = true;
                }
            }
        }
        (max, bad)
    }
}

/// Per-record risk: `f` is the max |log-likelihood| over draws and
/// `f_tilde` its min-max normalization over finite records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskScores<T> {
    /// `+∞` marks a record with a non-finite contribution.
    pub f: Vec<T>,
    /// `None` for non-finite records.
    pub f_tilde: Vec<Option<T>>,
    pub nonfinite: Vec<usize>,
}

impl<T: Real> RiskScores<T> {
    pub fn len(&self) -> usize {
        self.f.len()
    }

    pub fn is_empty(&self) -> bool {
        self.f.is_empty()
    }
}

/// Scale `c`, shift `g`, and optional truncation threshold `M` for the
/// weight map `α_i = clamp(c·(1 − f̃_i) + g)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightConfig<T> {
    pub c: T,
    pub g: T,
    pub m_threshold: Option<T>,
}

impl<T: Real> WeightConfig<T> {
    pub fn new(c: T, g: T) -> Result<Self> {
        let cfg = Self { c, g, m_threshold: None };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_threshold(mut self, m: T) -> Result<Self> {
        self.m_threshold = Some(m);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > T::zero() && self.c <= T::one()) {
            return Err(Error::param("c", format!("must lie in (0, 1], got {}", self.c)));
        }
        if !self.g.is_finite() {
            return Err(Error::param("g", "must be finite"));
        }
        if let Some(m) = self.m_threshold {
            if !(m > T::zero()) {
                return Err(Error::param("m_threshold", format!("must be positive, got {m}")));
            }
        }
        Ok(())
    }
}

impl<T: Real> Default for WeightConfig<T> {
    fn default() -> Self {
        Self { c: T::one(), g: T::zero(), m_threshold: None }
    }
}

/// Record-level weights α ∈ [0, 1]^n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights<T> {
    pub alpha: Vec<T>,
    pub config: WeightConfig<T>,
    /// Records forced to zero (non-finite risk or M-truncated), ascending.
    pub zeroed: Vec<usize>,
}

impl<T: Real> Weights<T> {
    /// The same weight on every record; used by the unweighted (`w = 1`)
    /// and scalar exponential-mechanism paths.
    pub fn uniform(n: usize, w: T) -> Result<Self> {
        if !(w >= T::zero() && w <= T::one()) {
            return Err(Error::param("weight", format!("must lie in [0, 1], got {w}")));
        }
        Ok(Self {
            alpha: vec![w; n],
            config: WeightConfig { c: T::one(), g: w - T::one(), m_threshold: None },
            zeroed: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn all_zero(&self) -> bool {
        self.alpha.iter().all(|a| *a == T::zero())
    }
}

/// Local Lipschitz bound and ε accounting for an m-database release.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipschitzSummary<T> {
    pub per_record: Vec<T>,
    pub delta_local: T,
    pub epsilon_per_db: T,
    pub m_databases: usize,
    pub epsilon_total: T,
}

impl<T: Real> LipschitzSummary<T> {
    /// Same bound, accounted for a different number of released databases.
    pub fn with_databases(&self, m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::param("m_databases", "must be at least 1"));
        }
        Ok(Self {
            m_databases: m,
            epsilon_total: self.epsilon_per_db * T::of(m as f64),
            ..self.clone()
        })
    }
}

/// Column maxima of |log-likelihood| and their min-max normalization.
pub fn record_risk<T: Real>(l: &LogLikMatrix<T>) -> Result<RiskScores<T>> {
    let (mut f, bad) = l.column_abs_max();
    let nonfinite: Vec<usize> = (0..f.len()).filter(|&i| bad[i]).collect();
    if nonfinite.len() == f.len() {
        return Err(Error::NoFiniteRecords);
    }
    for &i in &nonfinite {
        f[i] = T::infinity();
    }

    let finite = || f.iter().zip(&bad).filter(|(_, b)| !**b).map(|(v, _)| *v);
    let lo = finite().fold(T::infinity(), T::min);
    let hi = finite().fold(T::neg_infinity(), T::max);
    let range = hi - lo;

    let f_tilde = f
        .iter()
        .zip(&bad)
        .map(|(&fi, &b)| {
            if b {
                None
            } else if range > T::zero() {
                Some(((fi - lo) / range).clamp_unit())
            } else {
                // every finite record carries the same risk
                Some(T::zero())
            }
        })
        .collect();

    Ok(RiskScores { f, f_tilde, nonfinite })
}

/// `α_i = clamp_[0,1](c·(1 − f̃_i) + g)`; non-finite records get 0.
///
/// The truncation threshold in `cfg` is carried along but not applied;
/// see [`apply_m_truncation`] and [`risk_weights`].
pub fn compute_weights<T: Real>(r: &RiskScores<T>, cfg: &WeightConfig<T>) -> Result<Weights<T>> {
    cfg.validate()?;
    let mut zeroed = Vec::new();
    let alpha = r
        .f_tilde
        .iter()
        .enumerate()
        .map(|(i, ft)| match ft {
            Some(ft) => (cfg.c * (T::one() - *ft) + cfg.g).clamp_unit(),
            None => {
                zeroed.push(i);
                T::zero()
            }
        })
        .collect();
    Ok(Weights { alpha, config: *cfg, zeroed })
}

/// Zeroes every weight with `α_i · f_i > M`.
pub fn apply_m_truncation<T: Real>(w: &Weights<T>, r: &RiskScores<T>, m: T) -> Result<Weights<T>> {
    if !(m > T::zero()) {
        return Err(Error::param("m_threshold", format!("must be positive, got {m}")));
    }
    if w.len() != r.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights against {} risk scores",
            w.len(),
            r.len()
        )));
    }
    let mut out = w.clone();
    out.config.m_threshold = Some(m);
    for (i, (a, f)) in out.alpha.iter_mut().zip(&r.f).enumerate() {
        // a zero weight is absorbing, including against an infinite f
        if *a > T::zero() && *a * *f > m {
            *a = T::zero();
            out.zeroed.push(i);
        }
    }
    out.zeroed.sort_unstable();
    out.zeroed.dedup();
    Ok(out)
}

/// [`compute_weights`] followed by truncation when `cfg` names a threshold.
pub fn risk_weights<T: Real>(r: &RiskScores<T>, cfg: &WeightConfig<T>) -> Result<Weights<T>> {
    let w = compute_weights(r, cfg)?;
    match cfg.m_threshold {
        Some(m) => apply_m_truncation(&w, r, m),
        None => Ok(w),
    }
}

/// Entry `(s, i)` becomes `α_i · value(s, i)`, with a zero weight removing
/// the contribution exactly (including non-finite values).
pub fn weighted_loglik_matrix<T: Real>(l: &LogLikMatrix<T>, w: &Weights<T>) -> Result<LogLikMatrix<T>> {
    if w.len() != l.n_records() {
        return Err(Error::DimensionMismatch(format!(
            "{} weights against {} records",
            w.len(),
            l.n_records()
        )));
    }
    let n = l.n_records();
    let values = l
        .values()
        .iter()
        .enumerate()
        .map(|(idx, &v)| {
            let a = w.alpha[idx % n];
            if a == T::zero() {
                T::zero()
            } else if a == T::one() {
                v
            } else {
                a * v
            }
        })
        .collect();
    LogLikMatrix::new(l.s_draws(), n, values)
}

/// Per-record and overall max |entry|, with `ε = 2Δ` per database and
/// `2Δm` for `m` databases.
pub fn lipschitz_summary<T: Real>(l_alpha: &LogLikMatrix<T>, m: usize) -> Result<LipschitzSummary<T>> {
    if m == 0 {
        return Err(Error::param("m_databases", "must be at least 1"));
    }
    let (per_record, bad) = l_alpha.column_abs_max();
    if let Some(record) = bad.iter().position(|&b| b) {
        let draw = (0..l_alpha.s_draws())
            .find(|&s| !l_alpha.is_finite_at(s, record))
            .unwrap_or(0);
        return Err(Error::NonFiniteEntry { draw, record });
    }
    let delta_local = per_record.iter().copied().fold(T::zero(), fmax);
    let two = T::of(2.0);
    let epsilon_per_db = two * delta_local;
    Ok(LipschitzSummary {
        per_record,
        delta_local,
        epsilon_per_db,
        m_databases: m,
        epsilon_total: epsilon_per_db * T::of(m as f64),
    })
}

/// Scalar weight `ε / (2Δ)` that turns the exponential mechanism with a
/// log-likelihood utility into a uniformly weighted pseudo posterior.
/// Targets at or beyond `2Δ` clamp to 1.
pub fn em_scalar_weight<T: Real>(epsilon_target: T, delta_unweighted: T) -> Result<T> {
    if !(epsilon_target > T::zero()) || !epsilon_target.is_finite() {
        return Err(Error::param("epsilon_target", format!("must be positive, got {epsilon_target}")));
    }
    if !(delta_unweighted > T::zero()) || !delta_unweighted.is_finite() {
        return Err(Error::param(
            "delta_unweighted",
            format!("must be positive, got {delta_unweighted}"),
        ));
    }
    Ok((epsilon_target / (T::of(2.0) * delta_unweighted)).min(T::one()))
}

/// Multiplicative factor applied to a contracted local bound to obtain a
/// global ε recommendation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SafetyFactor {
    /// Used when `n > sample_threshold`; accepted range [1, 1.05].
    pub large_sample: f64,
    /// Used otherwise; accepted range [1.05, 1.10].
    pub small_sample: f64,
    pub sample_threshold: usize,
}

impl Default for SafetyFactor {
    fn default() -> Self {
        Self { large_sample: 1.025, small_sample: 1.075, sample_threshold: 1000 }
    }
}

impl SafetyFactor {
    pub fn validate(&self) -> Result<()> {
        if !(1.0..=1.05).contains(&self.large_sample) {
            return Err(Error::param("large_sample", "must lie in [1, 1.05]"));
        }
        if !(1.05..=1.10).contains(&self.small_sample) {
            return Err(Error::param("small_sample", "must lie in [1.05, 1.10]"));
        }
        Ok(())
    }

    pub fn factor(&self, n: usize) -> f64 {
        if n > self.sample_threshold {
            self.large_sample
        } else {
            self.small_sample
        }
    }

    pub fn recommend<T: Real>(&self, s: &LipschitzSummary<T>, n: usize) -> T {
        T::of(self.factor(n)) * s.epsilon_total
    }
}

/// Global ε recommendation under the default [`SafetyFactor`].
pub fn recommend_global_epsilon<T: Real>(s: &LipschitzSummary<T>, n: usize) -> T {
    SafetyFactor::default().recommend(s, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scores(f_tilde: &[f64]) -> RiskScores<f64> {
        RiskScores {
            f: f_tilde.to_vec(),
            f_tilde: f_tilde.iter().map(|v| Some(*v)).collect(),
            nonfinite: vec![],
        }
    }

    #[test]
    fn record_risk_two_by_two() {
        let l = LogLikMatrix::from_rows(&[vec![0.5, -2.0], vec![-1.5, 1.0]]).unwrap();
        let r = record_risk(&l).unwrap();
        assert_eq!(r.f, vec![1.5, 2.0]);
        assert_eq!(r.f_tilde, vec![Some(0.0), Some(1.0)]);
        assert!(r.nonfinite.is_empty());
    }

    #[test]
    fn record_risk_flags_nonfinite_columns() {
        let l = LogLikMatrix::from_rows(&[vec![-1.0, f64::NEG_INFINITY, -3.0], vec![-2.0, -1.0, f64::NAN]])
            .unwrap();
        assert!(!l.is_fully_finite());
        let r = record_risk(&l).unwrap();
        assert_eq!(r.nonfinite, vec![1, 2]);
        assert!(r.f[1].is_infinite() && r.f[2].is_infinite());
        assert_eq!(r.f_tilde, vec![Some(0.0), None, None]);
    }

    #[test]
    fn record_risk_degenerate_range() {
        let l = LogLikMatrix::from_rows(&[vec![3.0, -3.0, 3.0]]).unwrap();
        let r = record_risk(&l).unwrap();
        assert_eq!(r.f, vec![3.0; 3]);
        assert_eq!(r.f_tilde, vec![Some(0.0); 3]);
    }

    #[test]
    fn record_risk_all_nonfinite_is_an_error() {
        let l = LogLikMatrix::from_rows(&[vec![f64::INFINITY, f64::NAN]]).unwrap();
        assert_eq!(record_risk(&l), Err(Error::NoFiniteRecords));
    }

    #[test]
    fn empty_matrix_rejected() {
        assert!(LogLikMatrix::<f64>::new(0, 3, vec![]).is_err());
        assert!(LogLikMatrix::<f64>::new(2, 2, vec![1.0; 3]).is_err());
    }

    #[test]
    fn weights_identity_scaling() {
        let w = compute_weights(&scores(&[0.0, 0.5, 1.0]), &WeightConfig::new(1.0, 0.0).unwrap()).unwrap();
        assert_eq!(w.alpha, vec![1.0, 0.5, 0.0]);
    }

    #[test]
    fn weights_headline_config() {
        let w = compute_weights(&scores(&[0.0, 0.5, 1.0]), &WeightConfig::new(0.7, 0.0).unwrap()).unwrap();
        assert_relative_eq!(w.alpha[0], 0.7, epsilon = 1e-15);
        assert_relative_eq!(w.alpha[1], 0.35, epsilon = 1e-15);
        assert_eq!(w.alpha[2], 0.0);
    }

    #[test]
    fn weights_clamp_at_zero() {
        let w = compute_weights(&scores(&[0.0, 0.5, 1.0]), &WeightConfig::new(0.5, -0.3).unwrap()).unwrap();
        assert_relative_eq!(w.alpha[0], 0.2, epsilon = 1e-15);
        assert_eq!(&w.alpha[1..], &[0.0, 0.0]);
    }

    #[test]
    fn weights_zero_nonfinite_records() {
        let r = RiskScores { f: vec![1.0, f64::INFINITY], f_tilde: vec![Some(0.0), None], nonfinite: vec![1] };
        let w = compute_weights(&r, &WeightConfig::default()).unwrap();
        assert_eq!(w.alpha, vec![1.0, 0.0]);
        assert_eq!(w.zeroed, vec![1]);
    }

    #[test]
    fn weight_config_validation() {
        assert!(WeightConfig::new(0.0, 0.0).is_err());
        assert!(WeightConfig::new(1.5, 0.0).is_err());
        assert!(WeightConfig::new(0.5, f64::NAN).is_err());
        assert!(WeightConfig::new(0.5, 0.0).unwrap().with_threshold(0.0).is_err());
    }

    fn raw(alpha: &[f64], f: &[f64]) -> (Weights<f64>, RiskScores<f64>) {
        let w = Weights { alpha: alpha.to_vec(), config: WeightConfig::default(), zeroed: vec![] };
        let r = RiskScores { f: f.to_vec(), f_tilde: f.iter().map(|_| Some(0.0)).collect(), nonfinite: vec![] };
        (w, r)
    }

    #[test]
    fn truncation_inactive_below_threshold() {
        let (w, r) = raw(&[0.5, 0.2], &[6.0, 10.0]);
        let t = apply_m_truncation(&w, &r, 3.5).unwrap();
        assert_eq!(t.alpha, vec![0.5, 0.2]);
        assert!(t.zeroed.is_empty());
        assert_eq!(t.config.m_threshold, Some(3.5));
    }

    #[test]
    fn truncation_zeroes_both() {
        let (w, r) = raw(&[0.8, 0.6], &[5.0, 10.0]);
        let t = apply_m_truncation(&w, &r, 3.5).unwrap();
        assert_eq!(t.alpha, vec![0.0, 0.0]);
        assert_eq!(t.zeroed, vec![0, 1]);
    }

    #[test]
    fn truncation_zero_is_absorbing() {
        let (w, r) = raw(&[0.0, 1.0], &[f64::INFINITY, 1.0]);
        let t = apply_m_truncation(&w, &r, 3.5).unwrap();
        assert_eq!(t.alpha, vec![0.0, 1.0]);
        assert!(t.zeroed.is_empty());
        assert!(apply_m_truncation(&w, &r, 0.0).is_err());
        assert!(apply_m_truncation(&w, &r, -1.0).is_err());
    }

    #[test]
    fn weighted_matrix_identity_and_removal() {
        let l = LogLikMatrix::from_rows(&[vec![-1.25, f64::NEG_INFINITY], vec![0.3, -7.0]]).unwrap();
        let ones = Weights::uniform(2, 1.0).unwrap();
        let same = weighted_loglik_matrix(&l, &ones).unwrap();
        assert_eq!(same.values()[0].to_bits(), l.values()[0].to_bits());
        assert_eq!(same.values()[2].to_bits(), l.values()[2].to_bits());

        let w = Weights { alpha: vec![1.0, 0.0], config: WeightConfig::default(), zeroed: vec![1] };
        let out = weighted_loglik_matrix(&l, &w).unwrap();
        assert!(out.is_fully_finite());
        assert_eq!(out.get(0, 1), 0.0);
        assert_eq!(out.get(1, 1), 0.0);

        let half = Weights::uniform(1, 0.5).unwrap();
        let single = LogLikMatrix::from_rows(&[vec![-4.0]]).unwrap();
        assert_eq!(weighted_loglik_matrix(&single, &half).unwrap().values(), &[-2.0]);
    }

    #[test]
    fn lipschitz_max_abs() {
        let l = LogLikMatrix::from_rows(&[vec![-1.0, 2.0], vec![3.0, -0.5]]).unwrap();
        let s = lipschitz_summary(&l, 1).unwrap();
        assert_eq!(s.per_record, vec![3.0, 2.0]);
        assert_eq!(s.delta_local, 3.0);
        assert_eq!(s.epsilon_per_db, 6.0);
        assert_eq!(s.epsilon_total, 6.0);
    }

    #[test]
    fn lipschitz_twenty_databases() {
        let l = LogLikMatrix::from_rows(&[vec![-10.1]]).unwrap();
        let s = lipschitz_summary(&l, 20).unwrap();
        assert_relative_eq!(s.epsilon_total, 404.0, max_relative = 1e-12);
    }

    #[test]
    fn lipschitz_zero_matrix_and_errors() {
        let l = LogLikMatrix::from_rows(&[vec![0.0, 0.0]]).unwrap();
        let s = lipschitz_summary(&l, 3).unwrap();
        assert_eq!((s.delta_local, s.epsilon_total), (0.0, 0.0));

        let bad = LogLikMatrix::from_rows(&[vec![0.0, 1.0], vec![0.0, f64::NEG_INFINITY]]).unwrap();
        assert_eq!(lipschitz_summary(&bad, 1), Err(Error::NonFiniteEntry { draw: 1, record: 1 }));
        assert!(lipschitz_summary(&l, 0).is_err());
    }

    #[test]
    fn em_weight_examples() {
        assert_relative_eq!(em_scalar_weight(20.2, 78.7).unwrap(), 0.128_335_451_080_050_8, max_relative = 1e-12);
        assert_eq!(em_scalar_weight(2.0 * 78.7, 78.7).unwrap(), 1.0);
        assert_eq!(em_scalar_weight(78.7, 78.7).unwrap(), 0.5);
        assert_eq!(em_scalar_weight(500.0, 78.7).unwrap(), 1.0);
        assert!(em_scalar_weight(0.0, 1.0).is_err());
        assert!(em_scalar_weight(1.0, -1.0).is_err());
    }

    fn summary_with_total(total: f64) -> LipschitzSummary<f64> {
        LipschitzSummary {
            per_record: vec![],
            delta_local: total / 2.0,
            epsilon_per_db: total,
            m_databases: 1,
            epsilon_total: total,
        }
    }

    #[test]
    fn global_epsilon_recommendation() {
        assert_relative_eq!(recommend_global_epsilon(&summary_with_total(100.0), 6208), 102.5, max_relative = 1e-12);
        assert_relative_eq!(recommend_global_epsilon(&summary_with_total(100.0), 500), 107.5, max_relative = 1e-12);
        assert_relative_eq!(recommend_global_epsilon(&summary_with_total(100.0), 1000), 107.5, max_relative = 1e-12);
        assert_eq!(recommend_global_epsilon(&summary_with_total(0.0), 10), 0.0);
        assert!(SafetyFactor { large_sample: 1.2, ..Default::default() }.validate().is_err());
        assert!(SafetyFactor::default().validate().is_ok());
    }

    #[test]
    fn works_in_single_precision() {
        let l = LogLikMatrix::<f32>::from_rows(&[vec![-1.0, -4.0, -2.5]]).unwrap();
        let r = record_risk(&l).unwrap();
        let w = compute_weights(&r, &WeightConfig::new(1.0f32, 0.0).unwrap()).unwrap();
        assert_eq!(w.alpha, vec![1.0, 0.0, 0.5]);
        let s = lipschitz_summary(&weighted_loglik_matrix(&l, &w).unwrap(), 2).unwrap();
        assert_eq!(s.delta_local, 1.25);
        assert_eq!(s.epsilon_total, 5.0);
    }
}
