//! Release pipelines: unweighted posterior, α-weighted pseudo posterior,
//! and the scalar-weighted exponential mechanism.
//!
//! Every pipeline starts from the same stage one (an unweighted fit and
//! its log-likelihood matrix). The weighted pipelines then refit with
//! their weights, recompute `Δ` on the refit draws, and generate `m`
//! databases, each from its own retained draw.

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{loglik_matrix, FitSettings, ModelBackend, ParamDraws};
use crate::risk::{self, em_scalar_weight, lipschitz_summary, record_risk, weighted_loglik_matrix};
use crate::rng::{derive_seed, derived_rng, stream};
use crate::utility::quantile;
use crate::{LipschitzSummary, LogLikMatrix, RiskScores, WeightConfig, Weights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanismKind {
    Unweighted,
    AlphaWeighted,
    EmScalar,
}

impl MechanismKind {
    pub fn label(&self) -> &'static str {
        match self {
            MechanismKind::Unweighted => "Unweighted",
            MechanismKind::AlphaWeighted => "DPweighted",
            MechanismKind::EmScalar => "EMweighted",
        }
    }
}

/// Which seed the stage-two refit uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedPolicy {
    /// Refit with the stage-one seed (common random numbers). With `α ≡ 1`
    /// the refit reproduces stage one exactly.
    #[default]
    Shared,
    /// Refit with an independent derived seed.
    Independent,
}

/// Where the weighted Lipschitz bound is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageTwo {
    /// Refit the pseudo posterior and evaluate on its draws.
    #[default]
    Refit,
    /// Skip the refit and reuse stage-one draws. Test harness only: makes
    /// weighted bounds exact functions of one matrix.
    ReuseStageOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReleaseSettings {
    pub fit: FitSettings,
    pub m_databases: usize,
    pub seed: u64,
    #[serde(default)]
    pub seed_policy: SeedPolicy,
    #[serde(default)]
    pub stage_two: StageTwo,
}

impl ReleaseSettings {
    pub fn new(seed: u64) -> Self {
        Self {
            fit: FitSettings::default(),
            m_databases: 20,
            seed,
            seed_policy: SeedPolicy::Shared,
            stage_two: StageTwo::Refit,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.fit.validate()?;
        if self.m_databases == 0 {
            return Err(Error::param("m_databases", "must be at least 1"));
        }
        if self.m_databases > self.fit.draws {
            return Err(Error::param(
                "m_databases",
                format!("{} databases need as many distinct draws, only {} retained", self.m_databases, self.fit.draws),
            ));
        }
        Ok(())
    }

    fn stage_one_seed(&self) -> u64 {
        derive_seed(self.seed, &[stream::FIT])
    }

    fn stage_two_seed(&self) -> u64 {
        match self.seed_policy {
            SeedPolicy::Shared => self.stage_one_seed(),
            SeedPolicy::Independent => derive_seed(self.seed, &[stream::REFIT]),
        }
    }
}

/// Exponential-mechanism target.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    /// Target ε per released database.
    pub epsilon_target: f64,
    /// Bisect the scalar weight until the refit bound meets the target.
    pub calibrate: bool,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl EmConfig {
    pub fn new(epsilon_target: f64) -> Self {
        Self { epsilon_target, calibrate: false, tolerance: 0.02, max_iterations: 20 }
    }

    pub fn calibrated(epsilon_target: f64) -> Self {
        Self { calibrate: true, ..Self::new(epsilon_target) }
    }
}

/// Mechanism-specific inputs, kept for replay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MechanismParams {
    Unweighted,
    AlphaWeighted { weights: WeightConfig },
    EmScalar { em: EmConfig },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "warning", rename_all = "snake_case")]
pub enum ReleaseWarning {
    /// Every weight is zero; draws come from the prior.
    PriorPredictiveOnly,
    /// The ε target is at or above the unweighted expenditure.
    ScalarWeightClamped { requested: f64 },
    CalibrationNotConverged { relative_error: f64, iterations: usize },
}

/// `m` synthetic databases with their privacy accounting and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticRelease<R> {
    pub databases: Vec<Vec<R>>,
    pub mechanism: MechanismKind,
    pub params: MechanismParams,
    pub lipschitz: LipschitzSummary,
    pub weights: Weights,
    /// Stage-one risk scores behind the weights.
    pub risk: RiskScores,
    /// Stage-one unweighted bound, when finite.
    pub delta_unweighted: Option<f64>,
    pub scalar_weight: Option<f64>,
    /// Retained draw behind each database.
    pub draw_indices: Vec<usize>,
    pub calibration_iterations: usize,
    pub model_id: String,
    pub settings: ReleaseSettings,
    pub warnings: Vec<ReleaseWarning>,
}

impl<R> SyntheticRelease<R> {
    pub fn n_records(&self) -> usize {
        self.weights.len()
    }
}

/// Unweighted fit, its log-likelihood matrix, and the risk scores.
#[derive(Debug, Clone)]
pub struct StageOne<S> {
    pub draws: ParamDraws<S>,
    pub loglik: LogLikMatrix,
    pub risk: RiskScores,
}

impl<S> StageOne<S> {
    /// Unweighted local bound, or `None` if some log-likelihood is non-finite.
    pub fn delta_unweighted(&self) -> Option<f64> {
        lipschitz_summary(&self.loglik, 1).ok().map(|s| s.delta_local)
    }
}

pub fn stage_one<B: ModelBackend>(model: &B, data: &B::Data, settings: &ReleaseSettings) -> Result<StageOne<B::State>> {
    settings.validate()?;
    let n = model.n_records(data);
    let draws = model.fit(data, &vec![1.0; n], &settings.fit, settings.stage_one_seed())?;
    let loglik = loglik_matrix(model, &draws, data)?;
    let risk = record_risk(&loglik)?;
    Ok(StageOne { draws, loglik, risk })
}

/// Draws and weighted log-likelihood matrix after stage two.
pub struct StageTwoFit<S> {
    pub draws: ParamDraws<S>,
    pub weighted: LogLikMatrix,
    pub lipschitz: LipschitzSummary,
}

/// Refits (or, in harness mode, reuses) draws under `weights` and computes
/// `Δ = max_{s,i} |α_i f_{θ_s,i}|`.
pub fn stage_two<B: ModelBackend>(
    model: &B,
    data: &B::Data,
    one: &StageOne<B::State>,
    weights: &Weights,
    settings: &ReleaseSettings,
) -> Result<StageTwoFit<B::State>> {
    let (draws, loglik) = match settings.stage_two {
        StageTwo::ReuseStageOne => (one.draws.clone(), None),
        StageTwo::Refit => {
            let draws = model.fit(data, &weights.alpha, &settings.fit, settings.stage_two_seed())?;
            let l = loglik_matrix(model, &draws, data)?;
            (draws, Some(l))
        }
    };
    let weighted = weighted_loglik_matrix(loglik.as_ref().unwrap_or(&one.loglik), weights)?;
    let lipschitz = lipschitz_summary(&weighted, settings.m_databases)?;
    Ok(StageTwoFit { draws, weighted, lipschitz })
}

/// Samples `m` distinct retained draws and generates one database of `n`
/// records from each. Databases are produced in parallel with independent
/// streams keyed by database index.
pub fn generate_databases<B: ModelBackend>(
    model: &B,
    data: &B::Data,
    draws: &ParamDraws<B::State>,
    settings: &ReleaseSettings,
) -> Result<(Vec<Vec<B::Record>>, Vec<usize>)> {
    let m = settings.m_databases;
    if m > draws.len() {
        return Err(Error::param("m_databases", format!("{m} databases but only {} draws", draws.len())));
    }
    let mut select = derived_rng(settings.seed, &[stream::SELECT]);
    let picks = index::sample(&mut select, draws.len(), m).into_vec();
    let n = model.n_records(data);
    let databases = picks
        .par_iter()
        .enumerate()
        .map(|(l, &s)| {
            let mut rng = derived_rng(settings.seed, &[stream::DATABASE, l as u64]);
            let state = &draws.draws[s];
            (0..n).map(|i| model.predict(state, data, i, &mut rng)).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((databases, picks))
}

pub fn run_unweighted<B: ModelBackend>(
    model: &B,
    data: &B::Data,
    settings: &ReleaseSettings,
) -> Result<SyntheticRelease<B::Record>> {
    let one = stage_one(model, data, settings)?;
    unweighted_from(model, data, &one, settings)
}

pub fn unweighted_from<B: ModelBackend>(
    model: &B,
    data: &B::Data,
    one: &StageOne<B::State>,
    settings: &ReleaseSettings,
) -> Result<SyntheticRelease<B::Record>> {
    let lipschitz = lipschitz_summary(&one.loglik, settings.m_databases)?;
    let (databases, draw_indices) = generate_databases(model, data, &one.draws, settings)?;
    Ok(SyntheticRelease {
        databases,
        mechanism: MechanismKind::Unweighted,
        params: MechanismParams::Unweighted,
        delta_unweighted: Some(lipschitz.delta_local),
        lipschitz,
        weights: Weights::uniform(model.n_records(data), 1.0)?,
        risk: one.risk.clone(),
        scalar_weight: None,
        draw_indices,
        calibration_iterations: 0,
        model_id: model.model_id().into(),
        settings: *settings,
        warnings: Vec::new(),
    })
}

pub fn run_alpha_weighted<B: ModelBackend>(
    model: &B,
    data: &B::Data,
    cfg: &WeightConfig,
    settings: &ReleaseSettings,
) -> Result<SyntheticRelease<B::Record>> {
    let one = stage_one(model, data, settings)?;
    alpha_weighted_from(model, data, &one, cfg, settings)
}

/// α-weighted release from a precomputed stage one, so several weight
/// configurations can share the same risk scores.
pub fn alpha_weighted_from<B: ModelBackend>(
    model: &B,
    data: &B::Data,
    one: &StageOne<B::State>,
    cfg: &WeightConfig,
    settings: &ReleaseSettings,
) -> Result<SyntheticRelease<B::Record>> {
    let weights = risk::risk_weights(&one.risk, cfg)?;
    let mut warnings = Vec::new();
    if weights.all_zero() {
        log::warn!("every α weight is zero; the release is drawn from the prior predictive");
        warnings.push(ReleaseWarning::PriorPredictiveOnly);
    }
    let two = stage_two(model, data, one, &weights, settings)?;
    let (databases, draw_indices) = generate_databases(model, data, &two.draws, settings)?;
    Ok(SyntheticRelease {
        databases,
        mechanism: MechanismKind::AlphaWeighted,
        params: MechanismParams::AlphaWeighted { weights: *cfg },
        lipschitz: two.lipschitz,
        weights,
        risk: one.risk.clone(),
        delta_unweighted: one.delta_unweighted(),
        scalar_weight: None,
        draw_indices,
        calibration_iterations: 0,
        model_id: model.model_id().into(),
        settings: *settings,
        warnings,
    })
}

pub fn run_em_scalar<B: ModelBackend>(
    model: &B,
    data: &B::Data,
    em: &EmConfig,
    settings: &ReleaseSettings,
) -> Result<SyntheticRelease<B::Record>> {
    let one = stage_one(model, data, settings)?;
    em_scalar_from(model, data, &one, em, settings)
}

/// Scalar-weighted release. The one-shot weight is `ε / (2Δ_unweighted)`;
/// with calibration on, the weight is bisected (refitting each time) until
/// the achieved per-database ε is within `tolerance` of the target.
pub fn em_scalar_from<B: ModelBackend>(
    model: &B,
    data: &B::Data,
    one: &StageOne<B::State>,
    em: &EmConfig,
    settings: &ReleaseSettings,
) -> Result<SyntheticRelease<B::Record>> {
    if !(em.tolerance > 0.0) || em.max_iterations == 0 {
        return Err(Error::param("em", "tolerance must be positive and max_iterations at least 1"));
    }
    let delta_unweighted = one.delta_unweighted().ok_or(Error::NonFiniteEntry { draw: 0, record: 0 })?;
    let n = model.n_records(data);
    let target = em.epsilon_target;
    let w0 = em_scalar_weight(target, delta_unweighted)?;
    let mut warnings = Vec::new();
    if target >= 2.0 * delta_unweighted {
        log::warn!("ε target {target} is at or above the unweighted expenditure; scalar weight clamped to 1");
        warnings.push(ReleaseWarning::ScalarWeightClamped { requested: target / (2.0 * delta_unweighted) });
    }

    let evaluate = |w: f64| -> Result<(f64, Weights, StageTwoFit<B::State>)> {
        let weights = Weights::uniform(n, w)?;
        let two = stage_two(model, data, one, &weights, settings)?;
        Ok((w, weights, two))
    };
    let rel_err = |two: &StageTwoFit<B::State>| (two.lipschitz.epsilon_per_db - target).abs() / target;

    let mut best = evaluate(w0)?;
    let mut iterations = 1;
    let bisect = em.calibrate && settings.stage_two == StageTwo::Refit && w0 < 1.0;
    if bisect && rel_err(&best.2) > em.tolerance {
        let (mut lo, mut hi) = if best.2.lipschitz.epsilon_per_db > target { (0.0, w0) } else { (w0, 1.0) };
        while iterations < em.max_iterations {
            let mid = 0.5 * (lo + hi);
            let cand = evaluate(mid)?;
            iterations += 1;
            let err = rel_err(&cand.2);
            let over = cand.2.lipschitz.epsilon_per_db > target;
            if err < rel_err(&best.2) {
                best = cand;
            }
            if err <= em.tolerance {
                break;
            }
            if over {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let err = rel_err(&best.2);
        if err > em.tolerance {
            log::warn!("scalar weight calibration stopped at relative error {err:.4} after {iterations} refits");
            warnings.push(ReleaseWarning::CalibrationNotConverged { relative_error: err, iterations });
        }
    }

    let (w, weights, two) = best;
    let (databases, draw_indices) = generate_databases(model, data, &two.draws, settings)?;
    Ok(SyntheticRelease {
        databases,
        mechanism: MechanismKind::EmScalar,
        params: MechanismParams::EmScalar { em: *em },
        lipschitz: two.lipschitz,
        weights,
        risk: one.risk.clone(),
        delta_unweighted: Some(delta_unweighted),
        scalar_weight: Some(w),
        draw_indices,
        calibration_iterations: iterations,
        model_id: model.model_id().into(),
        settings: *settings,
        warnings,
    })
}

/// Reruns a release from its stored settings and mechanism parameters.
pub fn replay<B: ModelBackend>(
    model: &B,
    data: &B::Data,
    release: &SyntheticRelease<B::Record>,
) -> Result<SyntheticRelease<B::Record>> {
    match &release.params {
        MechanismParams::Unweighted => run_unweighted(model, data, &release.settings),
        MechanismParams::AlphaWeighted { weights } => run_alpha_weighted(model, data, weights, &release.settings),
        MechanismParams::EmScalar { em } => run_em_scalar(model, data, em, &release.settings),
    }
}

/// Interquartile range (type-7 quantiles) of the per-record bounds; small
/// values mean the mechanism downweights records uniformly.
pub fn flatness_diagnostic<R>(release: &SyntheticRelease<R>) -> f64 {
    per_record_iqr(&release.lipschitz.per_record)
}

pub fn per_record_iqr(per_record: &[f64]) -> f64 {
    let mut v = per_record.to_vec();
    v.sort_by(f64::total_cmp);
    quantile(&v, 0.75) - quantile(&v, 0.25)
}
