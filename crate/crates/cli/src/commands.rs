use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};

use pseudodp::contraction::run_study;
use pseudodp::mechanism::{run_alpha_weighted, run_em_scalar, run_unweighted};
use pseudodp::models::{MixtureModel, PoissonModel};
use pseudodp::utility::{risk_utility_sweep, StatSpec};
use pseudodp::{MechanismKind, ModelBackend, ReleaseReport, SyntheticRelease};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{ModelKind, RunConfig};
use crate::error::{CliError, CliResult};
use crate::ingest::{read_table, Table};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputInfo {
    pub path: PathBuf,
    pub sha256: String,
    pub records: usize,
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    #[serde(flatten)]
    pub report: ReleaseReport,
    pub input: InputInfo,
    /// Resolved configuration, defaults filled in.
    pub config: RunConfig,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Config as embedded in outputs: the output directory is dropped so the
/// same run written to different places produces identical files.
fn resolved(cfg: &RunConfig) -> RunConfig {
    RunConfig { output: None, ..cfg.clone() }
}

fn config_hash(cfg: &RunConfig) -> CliResult<String> {
    let json = serde_json::to_vec(cfg).map_err(|e| CliError::data(e.to_string()))?;
    Ok(sha256_hex(&json))
}

fn resolve_input(config_dir: &Path, input: &Path) -> PathBuf {
    if input.is_absolute() {
        input.to_path_buf()
    } else {
        config_dir.join(input)
    }
}

fn write(path: &Path, bytes: &[u8]) -> CliResult<()> {
    fs::write(path, bytes).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| CliError::data(e.to_string()))?;
    s.push('\n');
    write(path, s.as_bytes())
}

fn run_release<B: ModelBackend>(
    model: &B,
    data: &B::Data,
    cfg: &RunConfig,
) -> CliResult<SyntheticRelease<B::Record>> {
    let settings = cfg.release_settings()?;
    let release = match cfg.release.mechanism {
        MechanismKind::Unweighted => run_unweighted(model, data, &settings)?,
        MechanismKind::AlphaWeighted => run_alpha_weighted(model, data, &cfg.weight_config()?, &settings)?,
        MechanismKind::EmScalar => run_em_scalar(model, data, &cfg.em_config()?, &settings)?,
    };
    Ok(release)
}

fn weights_csv<R>(release: &SyntheticRelease<R>) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| CliError::data(e.to_string());
    w.write_record(["record_id", "f", "f_tilde", "alpha"]).map_err(err)?;
    for (i, a) in release.weights.alpha.iter().enumerate() {
        let f_tilde = release.risk.f_tilde[i].map_or(String::new(), |v| v.to_string());
        w.write_record([(i + 1).to_string(), release.risk.f[i].to_string(), f_tilde, a.to_string()])
            .map_err(err)?;
    }
    w.into_inner().map_err(|e| CliError::data(e.to_string()))
}

fn write_release<R: Display>(
    out: &Path,
    table: &Table,
    release: &SyntheticRelease<R>,
    report: &ReportFile,
) -> CliResult<()> {
    for (l, db) in release.databases.iter().enumerate() {
        let mut buf = Vec::new();
        table.write_with_response(&mut buf, db)?;
        write(&out.join(format!("synthetic_{:03}.csv", l + 1)), &buf)?;
    }
    write(&out.join("weights.csv"), &weights_csv(release)?)?;
    write_json(&out.join("report.json"), report)
}

fn finish_release<B: ModelBackend>(
    model: &B,
    data: &B::Data,
    table: &Table,
    input: InputInfo,
    cfg: &RunConfig,
    out: &Path,
) -> CliResult<ReportFile>
where
    B::Record: Display,
{
    let release = run_release(model, data, cfg)?;
    let config = resolved(cfg);
    let mut report = ReleaseReport::with_safety(&release, &cfg.safety);
    report.config_hash = Some(config_hash(&config)?);
    report.input_hash = Some(input.sha256.clone());
    for w in &report.warnings {
        log::warn!("{w:?}");
    }
    let file = ReportFile { report, input, config };
    write_release(out, table, &release, &file)?;
    Ok(file)
}

pub fn synthesize(cfg: &RunConfig, config_dir: &Path, out: &Path) -> CliResult<ReportFile> {
    cfg.validate_synthesize()?;
    let data_cfg = cfg.data()?;
    let (table, bytes) = read_table(&resolve_input(config_dir, &data_cfg.input), &data_cfg.response)?;
    let input = InputInfo { path: data_cfg.input.clone(), sha256: sha256_hex(&bytes), records: table.len() };
    fs::create_dir_all(out)?;
    match cfg.model.kind {
        ModelKind::Poisson => {
            let model = PoissonModel::new(cfg.model.poisson_prior)?;
            let data = table.poisson_data()?;
            finish_release(&model, &data, &table, input, cfg, out)
        }
        ModelKind::Mixture => {
            let model = MixtureModel::new(cfg.model.components, cfg.model.mixture_prior)?;
            let data = table.regression_data()?;
            finish_release(&model, &data, &table, input, cfg, out)
        }
    }
}

fn sweep_with<B: ModelBackend>(
    model: &B,
    data: &B::Data,
    cfg: &RunConfig,
    stats: &[StatSpec],
    out: &Path,
) -> CliResult<usize> {
    let grid = &cfg.sweep()?.grid;
    let result = risk_utility_sweep(model, data, grid, stats, &cfg.release_settings()?)?;
    for row in &result.rows {
        if let Some(e) = &row.error {
            log::warn!("cell (c={}, g={}) failed: {e}", row.c, row.g);
        }
    }
    let mut buf = Vec::new();
    result.write_csv(&mut buf)?;
    write(&out.join("sweep.csv"), &buf)?;
    write_json(&out.join("violin.json"), &result.violins())?;
    Ok(result.rows.len())
}

pub fn sweep(cfg: &RunConfig, config_dir: &Path, out: &Path) -> CliResult<usize> {
    let stats = cfg.validate_sweep()?;
    let data_cfg = cfg.data()?;
    let (table, _) = read_table(&resolve_input(config_dir, &data_cfg.input), &data_cfg.response)?;
    fs::create_dir_all(out)?;
    match cfg.model.kind {
        ModelKind::Poisson => {
            let model = PoissonModel::new(cfg.model.poisson_prior)?;
            sweep_with(&model, &table.poisson_data()?, cfg, &stats, out)
        }
        ModelKind::Mixture => {
            let model = MixtureModel::new(cfg.model.components, cfg.model.mixture_prior)?;
            sweep_with(&model, &table.regression_data()?, cfg, &stats, out)
        }
    }
}

pub fn contraction(cfg: &RunConfig, out: &Path) -> CliResult<pseudodp::contraction::StudySummary> {
    let study = cfg.study_config()?;
    let result = run_study(&study)?;
    if result.failure_count() > 0 {
        log::warn!("{} replicates failed and were dropped", result.failure_count());
    }
    fs::create_dir_all(out)?;
    let mut buf = Vec::new();
    result.write_csv(&mut buf)?;
    write(&out.join("study.csv"), &buf)?;
    let summary = result.summary();
    write_json(&out.join("study_summary.json"), &summary)?;
    Ok(summary)
}

pub fn read_report(out: &Path) -> CliResult<ReportFile> {
    let path = out.join("report.json");
    let text = fs::read_to_string(&path).map_err(|e| CliError::data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

pub fn render_report(file: &ReportFile) -> String {
    let r = &file.report;
    let mut s = String::new();
    let mut line = |k: &str, v: String| s.push_str(&format!("{k:<28}{v}\n"));
    line("mechanism", format!("{} ({})", r.label, r.model));
    line("records", r.n_records.to_string());
    line("databases", r.m_databases.to_string());
    line("local Lipschitz bound", r.delta_local.to_string());
    if let Some(d) = r.delta_unweighted {
        line("unweighted bound", d.to_string());
    }
    if let Some(w) = r.scalar_weight {
        line("scalar weight", w.to_string());
    }
    line("epsilon per database", r.epsilon_per_db.to_string());
    line("epsilon total", r.epsilon_total.to_string());
    line("recommended global epsilon", format!("{} (safety factor {})", r.recommended_global_epsilon, r.safety_factor));
    line(
        "weights min/median/max",
        format!("{} / {} / {}", r.weights.min, r.weights.median, r.weights.max),
    );
    line("weights zeroed", r.weights.zeroed.to_string());
    line("seed", r.seed.to_string());
    line("config sha256", r.config_hash.clone().unwrap_or_default());
    line("input sha256", file.input.sha256.clone());
    for w in &r.warnings {
        line("warning", format!("{w:?}"));
    }
    s.push('\n');
    s.push_str(&r.caveat);
    s.push('\n');
    for n in &r.notes {
        s.push_str(n);
        s.push('\n');
    }
    s
}
