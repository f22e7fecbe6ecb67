//! Human- and machine-readable summary of a release.

use serde::{Deserialize, Serialize};

use crate::mechanism::{MechanismKind, MechanismParams, ReleaseWarning, SyntheticRelease};
use crate::risk::SafetyFactor;
use crate::utility::median;

pub const PDP_CAVEAT: &str = "The reported epsilon is computed from a local Lipschitz bound on the observed \
database. The release is probabilistically differentially private (pDP): the bound holds globally with \
probability tending to one as the sample grows, and the recommended global epsilon applies a safety factor \
to the local value rather than guaranteeing pure DP.";

pub const MIXTURE_PRIOR_NOTE: &str = "Mixture synthesizer priors: beta_k ~ N(0, 10^2 I) on the standardized \
response, sigma_k^2 ~ InvGamma(2, 1), component weights ~ Dirichlet(1/K, ..., 1/K).";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightSummary {
    pub min: f64,
    pub median: f64,
    pub max: f64,
    pub zeroed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReleaseReport {
    pub mechanism: MechanismKind,
    pub label: String,
    pub params: MechanismParams,
    pub model: String,
    pub n_records: usize,
    pub m_databases: usize,
    pub delta_local: f64,
    pub delta_unweighted: Option<f64>,
    pub epsilon_per_db: f64,
    pub epsilon_total: f64,
    pub recommended_global_epsilon: f64,
    pub safety_factor: f64,
    pub scalar_weight: Option<f64>,
    pub calibration_iterations: usize,
    pub weights: WeightSummary,
    pub seed: u64,
    /// Hash of the resolved run configuration, filled in by the caller.
    pub config_hash: Option<String>,
    /// Hash of the confidential input file, filled in by the caller.
    pub input_hash: Option<String>,
    pub caveat: String,
    pub notes: Vec<String>,
    pub warnings: Vec<ReleaseWarning>,
}

impl ReleaseReport {
    pub fn from_release<R>(release: &SyntheticRelease<R>) -> Self {
        Self::with_safety(release, &SafetyFactor::default())
    }

    pub fn with_safety<R>(release: &SyntheticRelease<R>, safety: &SafetyFactor) -> Self {
        let n = release.n_records();
        let alpha = &release.weights.alpha;
        let (min, max) = alpha.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), a| (lo.min(*a), hi.max(*a)));
        let weights = WeightSummary {
            min,
            median: if alpha.is_empty() { f64::NAN } else { median(alpha) },
            max,
            zeroed: alpha.iter().filter(|a| **a == 0.0).count(),
        };
        let notes = if release.model_id == "mixture" { vec![MIXTURE_PRIOR_NOTE.to_string()] } else { vec![] };
        Self {
            mechanism: release.mechanism,
            label: release.mechanism.label().into(),
            params: release.params,
            model: release.model_id.clone(),
            n_records: n,
            m_databases: release.lipschitz.m_databases,
            delta_local: release.lipschitz.delta_local,
            delta_unweighted: release.delta_unweighted,
            epsilon_per_db: release.lipschitz.epsilon_per_db,
            epsilon_total: release.lipschitz.epsilon_total,
            recommended_global_epsilon: safety.recommend(&release.lipschitz, n),
            safety_factor: safety.factor(n),
            scalar_weight: release.scalar_weight,
            calibration_iterations: release.calibration_iterations,
            weights,
            seed: release.settings.seed,
            config_hash: None,
            input_hash: None,
            caveat: PDP_CAVEAT.into(),
            notes,
            warnings: release.warnings.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanism::run_alpha_weighted;
    use crate::models::{PoissonData, PoissonModel};
    use crate::{FitSettings, ReleaseSettings, WeightConfig};

    #[test]
    fn report_matches_release() {
        let data = PoissonData::new(vec![98, 103, 97, 100, 131, 95]).unwrap();
        let settings = ReleaseSettings { fit: FitSettings::new(40, 0), m_databases: 4, ..ReleaseSettings::new(8) };
        let cfg = WeightConfig::new(0.7, 0.0).unwrap();
        let rel = run_alpha_weighted(&PoissonModel::default(), &data, &cfg, &settings).unwrap();
        let rep = ReleaseReport::from_release(&rel);
        assert_eq!(rep.delta_local, rel.lipschitz.delta_local);
        assert_eq!(rep.epsilon_total, rel.lipschitz.epsilon_total);
        assert_eq!(rep.recommended_global_epsilon, 1.075 * rel.lipschitz.epsilon_total);
        assert_eq!(rep.label, "DPweighted");
        assert!(rep.caveat.contains("probabilistically differentially private (pDP)"));
        assert!(rep.weights.min <= rep.weights.median && rep.weights.median <= rep.weights.max);
        assert!(rep.weights.max <= 1.0);

        let json = serde_json::to_string(&rep).unwrap();
        let back: ReleaseReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back.delta_local.to_bits(), rep.delta_local.to_bits());
        assert_eq!(back, rep);
    }
}
