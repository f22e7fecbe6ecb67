//! TOML run configuration. Unknown keys are rejected and every value is
//! validated before any computation starts.

use std::path::{Path, PathBuf};

use pseudodp::contraction::{StudyConfig, StudyMechanism};
use pseudodp::mechanism::{EmConfig, SeedPolicy, StageTwo};
use pseudodp::models::{GammaPrior, MixturePrior};
use pseudodp::risk::SafetyFactor;
use pseudodp::utility::{StatSpec, Statistic};
use pseudodp::{FitSettings, MechanismKind, ReleaseSettings, WeightConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Required; all randomness derives from it.
    pub seed: Option<u64>,
    /// Output directory, overridden by `--out`.
    pub output: Option<PathBuf>,
    pub data: Option<DataSection>,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub fit: FitSettings,
    #[serde(default)]
    pub release: ReleaseSection,
    #[serde(default)]
    pub safety: SafetyFactor,
    pub sweep: Option<SweepSection>,
    pub contraction: Option<ContractionSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// CSV file; relative paths resolve against the config file's directory.
    pub input: PathBuf,
    pub response: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Poisson,
    #[default]
    Mixture,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub components: usize,
    pub mixture_prior: MixturePrior,
    pub poisson_prior: GammaPrior,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            kind: ModelKind::Mixture,
            components: 20,
            mixture_prior: MixturePrior::default(),
            poisson_prior: GammaPrior::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReleaseSection {
    pub mechanism: MechanismKind,
    /// Number of synthetic databases.
    pub m: usize,
    pub c: f64,
    pub g: f64,
    pub m_threshold: Option<f64>,
    pub epsilon_target: Option<f64>,
    pub calibrate: bool,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub seed_policy: SeedPolicy,
}

impl Default for ReleaseSection {
    fn default() -> Self {
        Self {
            mechanism: MechanismKind::AlphaWeighted,
            m: 20,
            c: 1.0,
            g: 0.0,
            m_threshold: None,
            epsilon_target: None,
            calibrate: true,
            tolerance: 0.02,
            max_iterations: 20,
            seed_policy: SeedPolicy::Shared,
        }
    }
}

fn default_statistics() -> Vec<Statistic> {
    vec![Statistic::Mean, Statistic::Quantile { p: 0.9 }]
}

fn default_resamples() -> usize {
    500
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// (c, g) cells.
    pub grid: Vec<(f64, f64)>,
    #[serde(default = "default_statistics")]
    pub statistics: Vec<Statistic>,
    #[serde(default = "default_resamples")]
    pub resamples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractionSection {
    pub ns: Vec<usize>,
    pub replicates: usize,
    #[serde(default = "default_mu")]
    pub mu: f64,
    #[serde(default = "default_m_threshold")]
    pub m_threshold: f64,
    #[serde(default = "default_study_mechanisms")]
    pub mechanisms: Vec<StudyMechanism>,
    #[serde(default = "default_study_draws")]
    pub draws: usize,
    pub prior: Option<GammaPrior>,
    #[serde(default)]
    pub stage_two: StageTwo,
}

fn default_mu() -> f64 {
    100.0
}

fn default_m_threshold() -> f64 {
    3.5
}

fn default_study_mechanisms() -> Vec<StudyMechanism> {
    StudyMechanism::ALL.to_vec()
}

fn default_study_draws() -> usize {
    500
}

/// Reads and parses a config file; parse errors carry the key path.
pub fn load(path: &Path) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    parse(&text)
}

pub fn parse(text: &str) -> CliResult<RunConfig> {
    let de = toml::Deserializer::parse(text).map_err(|e| CliError::config(e.to_string()))?;
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner().to_string();
        if path.is_empty() || path == "." {
            CliError::config(inner)
        } else {
            CliError::config(format!("{path}: {inner}"))
        }
    })
}

fn check(r: pseudodp::Result<()>, path: &str) -> CliResult<()> {
    r.map_err(|e| CliError::from(e).at(path))
}

impl RunConfig {
    pub fn seed(&self) -> CliResult<u64> {
        self.seed.ok_or_else(|| CliError::config("seed: a 64-bit seed is required; releases must be replayable"))
    }

    pub fn data(&self) -> CliResult<&DataSection> {
        self.data.as_ref().ok_or_else(|| CliError::config("data: section with `input` and `response` is required"))
    }

    pub fn release_settings(&self) -> CliResult<ReleaseSettings> {
        let s = ReleaseSettings {
            fit: self.fit,
            m_databases: self.release.m,
            seed: self.seed()?,
            seed_policy: self.release.seed_policy,
            stage_two: StageTwo::Refit,
        };
        check(s.validate(), "fit/release")?;
        Ok(s)
    }

    pub fn weight_config(&self) -> CliResult<WeightConfig> {
        let mut w = WeightConfig::new(self.release.c, self.release.g).map_err(|e| CliError::from(e).at("release"))?;
        if let Some(m) = self.release.m_threshold {
            w = w.with_threshold(m).map_err(|e| CliError::from(e).at("release"))?;
        }
        Ok(w)
    }

    pub fn em_config(&self) -> CliResult<EmConfig> {
        let target = self
            .release
            .epsilon_target
            .ok_or_else(|| CliError::config("release.epsilon_target: required for the em_scalar mechanism"))?;
        if !(target > 0.0 && target.is_finite()) {
            return Err(CliError::config("release.epsilon_target: must be positive and finite"));
        }
        if !(self.release.tolerance > 0.0) || self.release.max_iterations == 0 {
            return Err(CliError::config("release: tolerance must be positive and max_iterations at least 1"));
        }
        Ok(EmConfig {
            epsilon_target: target,
            calibrate: self.release.calibrate,
            tolerance: self.release.tolerance,
            max_iterations: self.release.max_iterations,
        })
    }

    pub fn validate_model(&self) -> CliResult<()> {
        match self.model.kind {
            ModelKind::Poisson => {
                check(pseudodp::models::PoissonModel::new(self.model.poisson_prior).map(|_| ()), "model.poisson_prior")
            }
            ModelKind::Mixture => check(
                pseudodp::models::MixtureModel::new(self.model.components, self.model.mixture_prior).map(|_| ()),
                "model",
            ),
        }
    }

    /// Everything `synthesize` needs, checked up front.
    pub fn validate_synthesize(&self) -> CliResult<()> {
        self.data()?;
        self.validate_model()?;
        self.release_settings()?;
        check(self.safety.validate(), "safety")?;
        match self.release.mechanism {
            MechanismKind::Unweighted => {}
            MechanismKind::AlphaWeighted => {
                self.weight_config()?;
            }
            MechanismKind::EmScalar => {
                self.em_config()?;
            }
        }
        Ok(())
    }

    pub fn sweep(&self) -> CliResult<&SweepSection> {
        self.sweep.as_ref().ok_or_else(|| CliError::config("sweep: section with `grid` is required"))
    }

    pub fn validate_sweep(&self) -> CliResult<Vec<StatSpec>> {
        self.data()?;
        self.validate_model()?;
        self.release_settings()?;
        let sweep = self.sweep()?;
        if sweep.grid.is_empty() {
            return Err(CliError::config("sweep.grid: grid must be non-empty"));
        }
        for (k, &(c, g)) in sweep.grid.iter().enumerate() {
            check(WeightConfig::new(c, g).map(|_| ()), &format!("sweep.grid[{k}]"))?;
        }
        if sweep.statistics.is_empty() {
            return Err(CliError::config("sweep.statistics: list at least one statistic"));
        }
        sweep
            .statistics
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let spec = StatSpec { statistic: *s, resamples: sweep.resamples };
                check(spec.validate(), &format!("sweep.statistics[{k}]")).map(|_| spec)
            })
            .collect()
    }

    pub fn study_config(&self) -> CliResult<StudyConfig> {
        let c = self.contraction.as_ref().ok_or_else(|| CliError::config("contraction: section is required"))?;
        let mut study = StudyConfig::new(c.ns.clone(), c.replicates, c.mu, c.m_threshold, self.seed()?);
        study.mechanisms = c.mechanisms.clone();
        study.draws = c.draws;
        study.stage_two = c.stage_two;
        if let Some(p) = c.prior {
            study.prior = p;
        }
        check(study.validate(), "contraction")?;
        Ok(study)
    }

    pub fn output_dir(&self, flag: Option<&Path>) -> CliResult<PathBuf> {
        flag.map(Path::to_path_buf)
            .or_else(|| self.output.clone())
            .ok_or_else(|| CliError::config("no output directory: pass --out or set `output`"))
    }
}
