//! Monte Carlo study of how the local Lipschitz bound contracts as the
//! database grows, for Poisson data under the unweighted, α-weighted and
//! M-truncated α-weighted mechanisms.

use std::io::Write;

use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanism::{stage_one, stage_two, ReleaseSettings, StageTwo};
use crate::models::{FitSettings, GammaPrior, ParamDraws, PoissonData, PoissonMeanState, PoissonModel};
use crate::risk::risk_weights;
use crate::rng::{derive_seed, derived_rng, stream};
use crate::utility::quantile;
use crate::WeightConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum StudyMechanism {
    Unweighted,
    Weighted,
    WeightedM,
}

impl StudyMechanism {
    pub const ALL: [StudyMechanism; 3] = [StudyMechanism::Unweighted, StudyMechanism::Weighted, StudyMechanism::WeightedM];

    pub fn label(&self) -> &'static str {
        match self {
            StudyMechanism::Unweighted => "Unweighted",
            StudyMechanism::Weighted => "Weighted",
            StudyMechanism::WeightedM => "WeightedM",
        }
    }
}

fn default_draws() -> usize {
    500
}

fn default_mechanisms() -> Vec<StudyMechanism> {
    StudyMechanism::ALL.to_vec()
}

/// Nearly flat prior, so the posterior mean of µ carries no visible prior
/// pull even at the smallest n.
fn default_prior() -> GammaPrior {
    GammaPrior { shape: 1e-3, rate: 1e-3 }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub ns: Vec<usize>,
    pub replicates: usize,
    pub mu: f64,
    pub m_threshold: f64,
    #[serde(default = "default_mechanisms")]
    pub mechanisms: Vec<StudyMechanism>,
    pub seed: u64,
    /// Retained draws S per fit.
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default = "default_prior")]
    pub prior: GammaPrior,
    #[serde(default)]
    pub stage_two: StageTwo,
}

impl StudyConfig {
    pub fn new(ns: Vec<usize>, replicates: usize, mu: f64, m_threshold: f64, seed: u64) -> Self {
        Self {
            ns,
            replicates,
            mu,
            m_threshold,
            mechanisms: default_mechanisms(),
            seed,
            draws: default_draws(),
            prior: default_prior(),
            stage_two: StageTwo::Refit,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ns.is_empty() || self.ns[0] == 0 {
            return Err(Error::param("ns", "need at least one positive sample size"));
        }
        if self.ns.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param("ns", "sample sizes must be strictly increasing"));
        }
        if self.replicates == 0 {
            return Err(Error::param("replicates", "R must be at least 1"));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::param("mu", "Poisson rate must be positive"));
        }
        if !(self.m_threshold > 0.0) {
            return Err(Error::param("m_threshold", "M must be positive"));
        }
        if self.mechanisms.is_empty() {
            return Err(Error::param("mechanisms", "select at least one mechanism"));
        }
        if self.draws == 0 {
            return Err(Error::param("draws", "must be at least 1"));
        }
        PoissonModel::new(self.prior)?;
        Ok(())
    }

    fn wants(&self, m: StudyMechanism) -> bool {
        self.mechanisms.contains(&m)
    }
}

/// One mechanism's outcome on one replicate database.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicateOutcome {
    pub mechanism: StudyMechanism,
    pub delta: f64,
    /// Pseudo-posterior mean of µ (average of the retained draws).
    pub mu_mean: f64,
}

fn draws_mean(d: &ParamDraws<PoissonMeanState>) -> f64 {
    d.draws.iter().map(|s| s.mu).sum::<f64>() / d.len() as f64
}

/// Simulates one Poisson database of size `n` and runs the configured
/// mechanisms on it. All mechanisms share the database and stage one.
pub fn run_replicate(cfg: &StudyConfig, n: usize, seed: u64) -> Result<Vec<ReplicateOutcome>> {
    let pois = Poisson::new(cfg.mu).map_err(|e| Error::param("mu", e.to_string()))?;
    let mut rng = derived_rng(seed, &[stream::SIMULATE]);
    let y: Vec<u64> = (0..n).map(|_| pois.sample(&mut rng) as u64).collect();
    let data = PoissonData::new(y)?;
    let model = PoissonModel::new(cfg.prior)?;
    let settings = ReleaseSettings {
        fit: FitSettings::new(cfg.draws, 0),
        m_databases: 1,
        stage_two: cfg.stage_two,
        ..ReleaseSettings::new(seed)
    };

    let one = stage_one(&model, &data, &settings)?;
    let mut out = Vec::with_capacity(3);
    if cfg.wants(StudyMechanism::Unweighted) {
        let delta = one.delta_unweighted().ok_or(Error::NoFiniteRecords)?;
        out.push(ReplicateOutcome { mechanism: StudyMechanism::Unweighted, delta, mu_mean: draws_mean(&one.draws) });
    }
    let weighted_cfgs = [
        (StudyMechanism::Weighted, WeightConfig::default()),
        (StudyMechanism::WeightedM, WeightConfig::default().with_threshold(cfg.m_threshold)?),
    ];
    for (mech, wc) in weighted_cfgs {
        if !cfg.wants(mech) {
            continue;
        }
        let w = risk_weights(&one.risk, &wc)?;
        let two = stage_two(&model, &data, &one, &w, &settings)?;
        out.push(ReplicateOutcome { mechanism: mech, delta: two.lipschitz.delta_local, mu_mean: draws_mean(&two.draws) });
    }
    Ok(out)
}

/// Min, max, median and spread (max − min) of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub min: f64,
    pub max: f64,
    pub median: f64,
    pub spread: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let (min, max) = (v[0], v[v.len() - 1]);
        Some(Self { min, max, median: quantile(&v, 0.5), spread: max - min })
    }
}

/// All replicates of one (n, mechanism) cell, in replicate order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyCell {
    pub n: usize,
    pub mechanism: StudyMechanism,
    pub replicate: Vec<usize>,
    pub deltas: Vec<f64>,
    pub mu_means: Vec<f64>,
    pub delta_summary: Option<Summary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub config: StudyConfig,
    pub cells: Vec<StudyCell>,
    /// Replicates dropped because a fit failed, as (n, replicate).
    pub failures: Vec<(usize, usize)>,
}

impl StudyResult {
    pub fn cell(&self, n: usize, mechanism: StudyMechanism) -> Option<&StudyCell> {
        self.cells.iter().find(|c| c.n == n && c.mechanism == mechanism)
    }

    pub fn failure_count(&self) -> usize {
        self.failures.len()
    }

    /// Posterior-mean-of-µ distributions per cell.
    pub fn drift(&self) -> Vec<DriftCell> {
        self.cells
            .iter()
            .map(|c| {
                let bias: Vec<f64> = c.mu_means.iter().map(|m| m - self.config.mu).collect();
                let k = c.mu_means.len() as f64;
                let mean = c.mu_means.iter().sum::<f64>() / k;
                let var = c.mu_means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (k - 1.0).max(1.0);
                DriftCell {
                    n: c.n,
                    mechanism: c.mechanism,
                    mu_means: c.mu_means.clone(),
                    mean,
                    mc_se: (var / k).sqrt(),
                    median_bias: Summary::of(&bias).map_or(f64::NAN, |s| s.median),
                }
            })
            .collect()
    }

    /// Long format: `n,mechanism,replicate,delta,mu_mean`.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["n", "mechanism", "replicate", "delta", "mu_mean"])?;
        for c in &self.cells {
            for ((r, d), m) in c.replicate.iter().zip(&c.deltas).zip(&c.mu_means) {
                w.write_record([c.n.to_string(), c.mechanism.label().into(), r.to_string(), d.to_string(), m.to_string()])?;
            }
        }
        w.flush()
    }

    pub fn summary(&self) -> StudySummary {
        StudySummary {
            config: self.config.clone(),
            failures: self.failure_count(),
            cells: self
                .cells
                .iter()
                .zip(self.drift())
                .map(|(c, d)| CellSummary {
                    n: c.n,
                    mechanism: c.mechanism,
                    replicates: c.deltas.len(),
                    delta: c.delta_summary,
                    mu_mean: d.mean,
                    mu_mc_se: d.mc_se,
                    mu_median_bias: d.median_bias,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftCell {
    pub n: usize,
    pub mechanism: StudyMechanism,
    pub mu_means: Vec<f64>,
    pub mean: f64,
    /// Monte Carlo standard error of `mean` across replicates.
    pub mc_se: f64,
    pub median_bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub n: usize,
    pub mechanism: StudyMechanism,
    pub replicates: usize,
    pub delta: Option<Summary>,
    pub mu_mean: f64,
    pub mu_mc_se: f64,
    pub mu_median_bias: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySummary {
    pub config: StudyConfig,
    pub failures: usize,
    pub cells: Vec<CellSummary>,
}

/// Runs `R` replicates at every n in parallel. Replicate `r` at the `k`-th
/// sample size uses a stream derived from `(seed, k, r)`, so the result is
/// a pure function of the config.
pub fn run_study(cfg: &StudyConfig) -> Result<StudyResult> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> =
        (0..cfg.ns.len()).flat_map(|k| (0..cfg.replicates).map(move |r| (k, r))).collect();
    let outcomes: Vec<_> = jobs
        .par_iter()
        .map(|&(k, r)| {
            let seed = derive_seed(cfg.seed, &[stream::REPLICATE, k as u64, r as u64]);
            run_replicate(cfg, cfg.ns[k], seed)
        })
        .collect();

    let mechanisms: Vec<StudyMechanism> =
        StudyMechanism::ALL.into_iter().filter(|m| cfg.wants(*m)).collect();
    let mut cells: Vec<StudyCell> = cfg
        .ns
        .iter()
        .flat_map(|&n| {
            mechanisms.iter().map(move |&mechanism| StudyCell {
                n,
                mechanism,
                replicate: vec![],
                deltas: vec![],
                mu_means: vec![],
                delta_summary: None,
            })
        })
        .collect();
    let mut failures = Vec::new();
    for (&(k, r), res) in jobs.iter().zip(outcomes) {
        match res {
            Ok(outs) => {
                for o in outs {
                    let idx = k * mechanisms.len() + mechanisms.iter().position(|m| *m == o.mechanism).unwrap();
                    let cell = &mut cells[idx];
                    cell.replicate.push(r);
                    cell.deltas.push(o.delta);
                    cell.mu_means.push(o.mu_mean);
                }
            }
            Err(e) => {
                log::warn!("replicate {r} at n = {} failed: {e}", cfg.ns[k]);
                failures.push((cfg.ns[k], r));
            }
        }
    }
    for c in &mut cells {
        c.delta_summary = Summary::of(&c.deltas);
    }
    Ok(StudyResult { config: cfg.clone(), cells, failures })
}

/// Distributions of the pseudo-posterior mean of µ per (n, mechanism).
pub fn utility_drift(cfg: &StudyConfig) -> Result<Vec<DriftCell>> {
    Ok(run_study(cfg)?.drift())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(ns: Vec<usize>, r: usize) -> StudyConfig {
        StudyConfig { draws: 100, ..StudyConfig::new(ns, r, 100.0, 3.5, 17) }
    }

    #[test]
    fn validation() {
        assert!(cfg(vec![100, 400], 2).validate().is_ok());
        assert!(cfg(vec![400, 100], 2).validate().is_err());
        assert!(cfg(vec![100, 100], 2).validate().is_err());
        assert!(cfg(vec![100], 0).validate().is_err());
        assert!(StudyConfig { mu: 0.0, ..cfg(vec![10], 1) }.validate().is_err());
        assert!(StudyConfig { m_threshold: 0.0, ..cfg(vec![10], 1) }.validate().is_err());
    }

    #[test]
    fn single_replicate_smoke() {
        let c = StudyConfig { stage_two: StageTwo::ReuseStageOne, ..cfg(vec![100], 1) };
        let out = run_replicate(&c, 100, 5).unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|o| o.delta.is_finite() && o.delta > 0.0));
        assert!(out[1].delta <= out[0].delta);
        assert!(out[2].delta <= out[1].delta);
    }

    #[test]
    fn extreme_thresholds() {
        let loose = StudyConfig { m_threshold: f64::MAX, ..cfg(vec![100], 1) };
        let out = run_replicate(&loose, 100, 5).unwrap();
        assert_eq!(out[1].delta, out[2].delta);
        assert_eq!(out[1].mu_mean, out[2].mu_mean);

        let tight = StudyConfig { m_threshold: 1e-300, ..cfg(vec![100], 1) };
        let out = run_replicate(&tight, 100, 5).unwrap();
        assert_eq!(out[2].delta, 0.0);
    }

    #[test]
    fn one_replicate_collapses_summary() {
        let res = run_study(&cfg(vec![50], 1)).unwrap();
        for c in &res.cells {
            let s = c.delta_summary.unwrap();
            assert_eq!(s.min, s.max);
            assert_eq!(s.median, s.min);
            assert_eq!(s.spread, 0.0);
        }
    }

    #[test]
    fn study_shape_and_csv() {
        let res = run_study(&cfg(vec![30, 60], 3)).unwrap();
        assert_eq!(res.cells.len(), 6);
        assert_eq!(res.failure_count(), 0);
        assert!(res.cells.iter().all(|c| c.deltas.len() == 3 && c.deltas.iter().all(|d| d.is_finite())));
        let mut buf = Vec::new();
        res.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 18);
        assert!(text.starts_with("n,mechanism,replicate,delta,mu_mean\n30,Unweighted,0,"));
        assert_eq!(res, run_study(&cfg(vec![30, 60], 3)).unwrap());
    }

    #[test]
    fn mechanism_subset() {
        let c = StudyConfig { mechanisms: vec![StudyMechanism::WeightedM], ..cfg(vec![40], 2) };
        let res = run_study(&c).unwrap();
        assert_eq!(res.cells.len(), 1);
        assert_eq!(res.cells[0].mechanism, StudyMechanism::WeightedM);
    }

    #[test]
    fn summary_of_values() {
        let s = Summary::of(&[3.0, 1.0, 2.0, 10.0]).unwrap();
        assert_eq!((s.min, s.max, s.median, s.spread), (1.0, 10.0, 2.5, 9.0));
        assert!(Summary::of(&[]).is_none());
    }
}
