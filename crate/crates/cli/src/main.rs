//! `pseudodp`: synthesize releases, sweep (c, g) grids, run contraction
//! studies and print release reports.

mod commands;
mod config;
mod error;
mod ingest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "pseudodp", version, about = "Risk-weighted pseudo posterior synthetic data releases")]
struct Cli {
    /// Worker threads for replicates, grid cells and databases
    /// (default: available cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct JobArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit, weight and release m synthetic databases.
    Synthesize(JobArgs),
    /// Risk-utility sweep over a (c, g) grid.
    Sweep(JobArgs),
    /// Local-to-global Lipschitz contraction study on Poisson data.
    Contraction(JobArgs),
    /// Print the report of a finished release.
    Report {
        /// Directory holding report.json.
        #[arg(long)]
        out: PathBuf,
    },
}

fn config_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(CliError::config("--workers must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("cannot start worker pool: {e}")))?;
    }
    match cli.command {
        Command::Synthesize(args) => {
            let cfg = config::load(&args.config)?;
            let out = cfg.output_dir(args.out.as_deref())?;
            let file = commands::synthesize(&cfg, &config_dir(&args.config), &out)?;
            println!(
                "wrote {} synthetic databases to {}: delta {}, epsilon total {}",
                file.report.m_databases,
                out.display(),
                file.report.delta_local,
                file.report.epsilon_total
            );
        }
        Command::Sweep(args) => {
            let cfg = config::load(&args.config)?;
            let out = cfg.output_dir(args.out.as_deref())?;
            let rows = commands::sweep(&cfg, &config_dir(&args.config), &out)?;
            println!("wrote {rows} sweep cells to {}", out.display());
        }
        Command::Contraction(args) => {
            let cfg = config::load(&args.config)?;
            let out = cfg.output_dir(args.out.as_deref())?;
            let summary = commands::contraction(&cfg, &out)?;
            println!("wrote {} study cells to {}", summary.cells.len(), out.display());
        }
        Command::Report { out } => {
            let file = commands::read_report(&out)?;
            print!("{}", commands::render_report(&file));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PSEUDODP_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("pseudodp: {e}");
            e.exit_code()
        }
    }
}
