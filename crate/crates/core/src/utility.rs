//! Utility of synthetic releases: bootstrap statistic distributions, the
//! one-dimensional Wasserstein barycenter across databases, and (c, g)
//! risk-utility sweeps.

use std::collections::BTreeSet;
use std::io::Write;

use rand::Rng as _;
use rand_distr::{Distribution, LogNormal, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mechanism::{alpha_weighted_from, stage_one, ReleaseSettings, SyntheticRelease};
use crate::models::{ModelBackend, RegressionData};
use crate::rng::{derive_seed, derived_rng, stream};
use crate::scalar::Real;
use crate::WeightConfig;

/// Type-7 quantile (linear interpolation of order statistics) of an
/// ascending slice.
pub fn quantile<T: Real>(sorted: &[T], p: f64) -> T {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = T::of(h - lo as f64);
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

pub fn median<T: Real>(values: &[T]) -> T {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    quantile(&v, 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Statistic {
    Mean,
    Quantile { p: f64 },
}

impl Statistic {
    pub fn evaluate(&self, sample: &[f64]) -> f64 {
        match self {
            Statistic::Mean => sample.iter().sum::<f64>() / sample.len() as f64,
            Statistic::Quantile { p } => {
                let mut v = sample.to_vec();
                v.sort_by(f64::total_cmp);
                quantile(&v, *p)
            }
        }
    }

    pub fn label(&self) -> String {
        match self {
            Statistic::Mean => "mean".into(),
            Statistic::Quantile { p } => format!("q{}", (p * 100.0).round()),
        }
    }
}

/// A statistic and its bootstrap resample count B.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatSpec {
    pub statistic: Statistic,
    pub resamples: usize,
}

impl StatSpec {
    pub fn mean(resamples: usize) -> Self {
        Self { statistic: Statistic::Mean, resamples }
    }

    pub fn quantile(p: f64, resamples: usize) -> Self {
        Self { statistic: Statistic::Quantile { p }, resamples }
    }

    pub fn validate(&self) -> Result<()> {
        if self.resamples == 0 {
            return Err(Error::param("resamples", "B must be at least 1"));
        }
        if let Statistic::Quantile { p } = self.statistic {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::param("p", format!("quantile level must lie in (0, 1), got {p}")));
            }
        }
        Ok(())
    }
}

/// B bootstrap replicates (size-n resamples with replacement) of the
/// statistic.
pub fn statistic_distribution(db: &[f64], spec: &StatSpec, seed: u64) -> Result<Vec<f64>> {
    spec.validate()?;
    if db.is_empty() {
        return Err(Error::InvalidData("cannot resample an empty database".into()));
    }
    let mut rng = derived_rng(seed, &[stream::BOOTSTRAP]);
    let n = db.len();
    let mut buf = vec![0.0; n];
    Ok((0..spec.resamples)
        .map(|_| {
            for slot in buf.iter_mut() {
                *slot = db[rng.random_range(0..n)];
            }
            spec.statistic.evaluate(&buf)
        })
        .collect())
}

/// Barycenter in 1-D Wasserstein space: sort each input and average the
/// order statistics across inputs.
///
/// Each average is taken as offsets from the smallest order statistic and
/// clamped to the observed range, so copies of one vector give that vector
/// back exactly and the result never leaves the elementwise bounds.
pub fn barycenter<T: Real>(dists: &[Vec<T>]) -> Result<Vec<T>> {
    let first = dists.first().ok_or_else(|| Error::InvalidData("barycenter of zero distributions".into()))?;
    let len = first.len();
    if let Some(d) = dists.iter().find(|d| d.len() != len) {
        return Err(Error::DimensionMismatch(format!("distributions of length {len} and {}", d.len())));
    }
    let sorted: Vec<Vec<T>> = dists
        .iter()
        .map(|d| {
            let mut s = d.clone();
            s.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
            s
        })
        .collect();
    let m = T::of(dists.len() as f64);
    Ok((0..len)
        .map(|k| {
            let lo = sorted.iter().map(|s| s[k]).fold(T::infinity(), T::min);
            let hi = sorted.iter().map(|s| s[k]).fold(T::neg_infinity(), T::max);
            let offset = sorted.iter().map(|s| s[k] - lo).fold(T::zero(), |a, d| a + d) / m;
            (lo + offset).max(lo).min(hi)
        })
        .collect())
}

/// Utility of one statistic on a release.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatUtility {
    pub stat: String,
    pub confidential: f64,
    /// Median of the barycenter distribution.
    pub synthetic: f64,
    pub abs_error: f64,
    pub barycenter: Vec<f64>,
}

/// Bootstraps `spec` on every database, averages quantiles across
/// databases, and compares the barycenter median with the statistic on the
/// confidential responses.
pub fn release_utility(
    synthetic: &[Vec<f64>],
    confidential: &[f64],
    spec: &StatSpec,
    seed: u64,
) -> Result<StatUtility> {
    let dists = synthetic
        .par_iter()
        .enumerate()
        .map(|(l, db)| statistic_distribution(db, spec, derive_seed(seed, &[l as u64])))
        .collect::<Result<Vec<_>>>()?;
    let bary = barycenter(&dists)?;
    let synthetic = median(&bary);
    let confidential = spec.statistic.evaluate(confidential);
    Ok(StatUtility {
        stat: spec.statistic.label(),
        confidential,
        synthetic,
        abs_error: (synthetic - confidential).abs(),
        barycenter: bary,
    })
}

/// Responses of every database of a release.
pub fn release_responses<B: ModelBackend>(model: &B, release: &SyntheticRelease<B::Record>) -> Vec<Vec<f64>> {
    release
        .databases
        .iter()
        .map(|db| db.iter().map(|r| model.response(r)).collect())
        .collect()
}

/// One (c, g) cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub c: f64,
    pub g: f64,
    pub delta: f64,
    pub epsilon_total: f64,
    pub utilities: Vec<StatUtility>,
    /// Set when the cell failed; the numeric fields are then NaN.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    /// Confidential-data bootstrap distributions, one per statistic.
    pub confidential: Vec<(String, Vec<f64>)>,
    /// Cells dropped because they repeated an earlier one.
    pub duplicates_removed: usize,
}

/// Removes repeated (c, g) cells, keeping first occurrences in order.
pub fn dedup_grid(grid: &[(f64, f64)]) -> (Vec<(f64, f64)>, usize) {
    let mut seen = BTreeSet::new();
    let out: Vec<_> = grid.iter().copied().filter(|(c, g)| seen.insert((c.to_bits(), g.to_bits()))).collect();
    let removed = grid.len() - out.len();
    (out, removed)
}

/// Runs the α-weighted pipeline for every (c, g) cell on one shared stage
/// one, recording Δ, ε and utility per statistic. Cells run in parallel
/// and failures are recorded per cell.
pub fn risk_utility_sweep<B: ModelBackend>(
    model: &B,
    data: &B::Data,
    grid: &[(f64, f64)],
    stats: &[StatSpec],
    settings: &ReleaseSettings,
) -> Result<SweepResult> {
    if grid.is_empty() {
        return Err(Error::param("grid", "grid must be non-empty"));
    }
    for s in stats {
        s.validate()?;
    }
    let (cells, duplicates_removed) = dedup_grid(grid);
    if duplicates_removed > 0 {
        log::warn!("removed {duplicates_removed} duplicate (c, g) cells from the sweep grid");
    }
    let one = stage_one(model, data, settings)?;
    let confidential_y = model.confidential_responses(data);

    let rows = cells
        .par_iter()
        .map(|&(c, g)| {
            let run = || -> Result<SweepRow> {
                let cfg = WeightConfig::new(c, g)?;
                let release = alpha_weighted_from(model, data, &one, &cfg, settings)?;
                let ys = release_responses(model, &release);
                let utilities = stats
                    .iter()
                    .enumerate()
                    .map(|(j, spec)| {
                        // keyed by the cell itself so a cell's result does not depend on its grid position
                        let seed = derive_seed(settings.seed, &[stream::BOOTSTRAP, c.to_bits(), g.to_bits(), j as u64]);
                        release_utility(&ys, &confidential_y, spec, seed)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(SweepRow {
                    c,
                    g,
                    delta: release.lipschitz.delta_local,
                    epsilon_total: release.lipschitz.epsilon_total,
                    utilities,
                    error: None,
                })
            };
            run().unwrap_or_else(|e| {
                log::warn!("sweep cell (c={c}, g={g}) failed: {e}");
                SweepRow { c, g, delta: f64::NAN, epsilon_total: f64::NAN, utilities: vec![], error: Some(e.to_string()) }
            })
        })
        .collect();

    let confidential = stats
        .iter()
        .enumerate()
        .map(|(j, spec)| {
            let seed = derive_seed(settings.seed, &[stream::BOOTSTRAP, u64::MAX, u64::MAX, j as u64]);
            Ok((spec.statistic.label(), statistic_distribution(&confidential_y, spec, seed)?))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SweepResult { rows, confidential, duplicates_removed })
}

/// One violin in the plot-data export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolinSeries {
    pub mechanism: String,
    pub stat: String,
    pub values: Vec<f64>,
}

impl SweepResult {
    /// Long-format CSV: `c,g,delta,epsilon_total,stat,abs_error`.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["c", "g", "delta", "epsilon_total", "stat", "abs_error"])?;
        for row in &self.rows {
            if row.utilities.is_empty() {
                w.write_record([
                    row.c.to_string(),
                    row.g.to_string(),
                    row.delta.to_string(),
                    row.epsilon_total.to_string(),
                    String::new(),
                    String::new(),
                ])?;
            }
            for u in &row.utilities {
                w.write_record([
                    row.c.to_string(),
                    row.g.to_string(),
                    row.delta.to_string(),
                    row.epsilon_total.to_string(),
                    u.stat.clone(),
                    u.abs_error.to_string(),
                ])?;
            }
        }
        w.flush()
    }

    pub fn violins(&self) -> Vec<ViolinSeries> {
        let mut out: Vec<ViolinSeries> = self
            .confidential
            .iter()
            .map(|(stat, values)| ViolinSeries { mechanism: "Data".into(), stat: stat.clone(), values: values.clone() })
            .collect();
        for row in &self.rows {
            for u in &row.utilities {
                out.push(ViolinSeries {
                    mechanism: format!("DPweighted(c={}, g={})", row.c, row.g),
                    stat: u.stat.clone(),
                    values: u.barycenter.clone(),
                });
            }
        }
        out
    }
}

/// Level counts of the ten categorical predictors in the CE-like schema:
/// gender, age, education, region, urban, marital status, urban type,
/// CBSA, family size, earner.
pub const CE_LEVELS: [usize; 10] = [2, 5, 8, 4, 2, 5, 3, 3, 11, 2];
pub const CE_NAMES: [&str; 10] = [
    "gender", "age", "education", "region", "urban", "marital", "urban_type", "cbsa", "family_size", "earner",
];
/// Version tag of the frozen generator constants below.
pub const CE_GENERATOR_VERSION: &str = "ce-like-v1";

/// Stand-in for a household income extract: categorical predictors and a
/// right-skewed positive response.
#[derive(Debug, Clone, PartialEq)]
pub struct CeLikeData {
    pub y: Vec<f64>,
    /// Level index per predictor, one row per record.
    pub categories: Vec<[u32; 10]>,
}

impl CeLikeData {
    /// Intercept plus first-level-dropped one-hot columns.
    pub fn design(&self) -> Vec<Vec<f64>> {
        let width = 1 + CE_LEVELS.iter().map(|l| l - 1).sum::<usize>();
        self.categories
            .iter()
            .map(|cats| {
                let mut row = vec![0.0; width];
                row[0] = 1.0;
                let mut offset = 1;
                for (j, &lvl) in cats.iter().enumerate() {
                    if lvl > 0 {
                        row[offset + lvl as usize - 1] = 1.0;
                    }
                    offset += CE_LEVELS[j] - 1;
                }
                row
            })
            .collect()
    }

    pub fn regression_data(&self) -> Result<RegressionData> {
        RegressionData::new(self.y.clone(), self.design())
    }
}

/// Simulated skewed-income dataset (in thousands): a log-linear predictor
/// in education, age, earner status and family size, with a lognormal
/// mixture error whose minority component produces a heavy right tail.
pub fn simulate_ce_like(n: usize, seed: u64) -> Result<CeLikeData> {
    if n == 0 {
        return Err(Error::param("n", "must be at least 1"));
    }
    let mut rng = derived_rng(seed, &[stream::SIMULATE]);
    let body = Normal::new(0.0, 0.55).expect("valid normal");
    let tail = LogNormal::new(-0.2, 0.6).expect("valid lognormal");
    let mut y = Vec::with_capacity(n);
    let mut categories = Vec::with_capacity(n);
    for _ in 0..n {
        let mut cats = [0u32; 10];
        for (j, c) in cats.iter_mut().enumerate() {
            *c = rng.random_range(0..CE_LEVELS[j] as u32);
        }
        let eta = 3.6
            + 0.12 * cats[2] as f64
            + 0.10 * (cats[1] as f64 - 2.0).abs().mul_add(-1.0, 2.0)
            + 0.35 * cats[9] as f64
            + 0.04 * (cats[8] as f64).min(5.0)
            + 0.08 * cats[4] as f64;
        let err = if rng.random::<f64>() < 0.88 { body.sample(&mut rng) } else { 0.8 + tail.sample(&mut rng) };
        y.push((eta + err).exp());
        categories.push(cats);
    }
    Ok(CeLikeData { y, categories })
}

/// Sample skewness `m3 / m2^{3/2}`.
pub fn skewness(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let m2 = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m3 = v.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n;
    m3 / m2.powf(1.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn type7_quantiles() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        // h = 99 * 0.9 = 89.1 -> x[89] + 0.1 (x[90] - x[89])
        assert!((quantile(&v, 0.9) - 90.1).abs() < 1e-12);
        assert_eq!(quantile(&[5.0], 0.3), 5.0);
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.25), 1.75);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    }

    #[test]
    fn statistics() {
        assert_eq!(Statistic::Mean.evaluate(&[1.0, 2.0, 3.0]), 2.0);
        assert_eq!(Statistic::Quantile { p: 0.9 }.label(), "q90");
        assert!(StatSpec::quantile(1.0, 10).validate().is_err());
        assert!(StatSpec::mean(0).validate().is_err());
    }

    #[test]
    fn bootstrap_of_constant_data() {
        let d = statistic_distribution(&[4.0; 30], &StatSpec::quantile(0.9, 50), 1).unwrap();
        assert_eq!(d.len(), 50);
        assert!(d.iter().all(|v| *v == 4.0));
        assert!(statistic_distribution(&[], &StatSpec::mean(3), 1).is_err());
    }

    #[test]
    fn bootstrap_resample_is_drawn_from_data() {
        // B = 1: the single value is the mean of some size-3 resample of {1, 2, 3}
        let d = statistic_distribution(&[1.0, 2.0, 3.0], &StatSpec::mean(1), 7).unwrap();
        let sums: Vec<f64> = (3..=9).map(|s| s as f64 / 3.0).collect();
        assert!(sums.iter().any(|s| (s - d[0]).abs() < 1e-12));
        assert_eq!(d, statistic_distribution(&[1.0, 2.0, 3.0], &StatSpec::mean(1), 7).unwrap());
    }

    #[test]
    fn barycenter_examples() {
        let v = vec![3.0, 1.0, 2.0];
        assert_eq!(barycenter(&[v.clone(), v.clone(), v]).unwrap(), vec![1.0, 2.0, 3.0]);
        assert_eq!(barycenter(&[vec![0.0; 3], vec![2.0; 3]]).unwrap(), vec![1.0; 3]);
        assert_eq!(barycenter(&[vec![1.0, 3.0], vec![10.0, 2.0]]).unwrap(), vec![1.5, 6.5]);
        assert!(barycenter(&[vec![1.0], vec![1.0, 2.0]]).is_err());
        assert!(barycenter::<f64>(&[]).is_err());
        let w = vec![0.1, 0.7, 1e-3];
        assert_eq!(barycenter(&vec![w.clone(); 3]).unwrap(), vec![1e-3, 0.1, 0.7]);
    }

    #[test]
    fn grid_dedup() {
        let (g, removed) = dedup_grid(&[(0.7, 0.0), (0.6, 0.0), (0.7, 0.0)]);
        assert_eq!(g, vec![(0.7, 0.0), (0.6, 0.0)]);
        assert_eq!(removed, 1);
    }

    #[test]
    fn ce_like_generator() {
        let a = simulate_ce_like(6208, 3).unwrap();
        assert_eq!(a.y.len(), 6208);
        assert_eq!(a, simulate_ce_like(6208, 3).unwrap());
        assert!(a.y.iter().all(|v| *v > 0.0));
        let sk = skewness(&a.y);
        assert!(sk > 1.0, "skewness {sk}");
        let x = a.design();
        assert_eq!(x[0].len(), 36);
        assert!(x.iter().all(|r| r[0] == 1.0 && r.iter().filter(|v| **v != 0.0).count() <= 11));
        assert!(simulate_ce_like(0, 1).is_err());
        for seed in 0..5 {
            assert!(skewness(&simulate_ce_like(1000, seed).unwrap().y) > 1.0);
        }
    }
}
