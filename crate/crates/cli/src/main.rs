use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use kacflow::catalog;
use kacflow_cli::config::{ExperimentConfig, Format};
use kacflow_cli::report::{any_failure, write_rows, Row};
use kacflow_cli::run::run_experiment;
use kacflow_cli::verify::{verify, VerifyOptions, DEFAULT_SAMPLES};

#[derive(Parser)]
#[command(name = "kacflow", version, about = "Mean return times in suspension flows")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the quantities requested by a config file.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the built-in invariant suites.
    Verify {
        #[command(flatten)]
        common: Common,
    },
    /// Print the catalog of base systems.
    ListSystems,
}

#[derive(Args)]
struct Common {
    /// Master seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Monte Carlo sample count; overrides the config.
    #[arg(long)]
    samples: Option<u64>,
    /// Worker count; overrides the config. Results do not depend on thread scheduling.
    #[arg(long)]
    workers: Option<usize>,
    /// Report path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    format: Option<Format>,
    /// Record wall time per row. Off by default so reports are byte-reproducible.
    #[arg(long)]
    timing: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

/// Returns whether every row passed.
fn dispatch(command: Command) -> anyhow::Result<bool> {
    match command {
        Command::Run { config, common } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if let Some(seed) = common.seed {
                cfg.seed = seed;
            }
            if let Some(samples) = common.samples {
                cfg.samples = samples;
            }
            if let Some(workers) = common.workers {
                cfg.workers = workers;
            }
            let rows = run_experiment(&cfg, common.timing)?;
            let out = common.out.or_else(|| cfg.output.path.clone());
            let format = common.format.unwrap_or(cfg.output.format);
            emit(&rows, format, out.as_deref())?;
            Ok(!any_failure(&rows))
        }
        Command::Verify { common } => {
            let opts = VerifyOptions {
                seed: common.seed.unwrap_or(0),
                samples: common.samples.unwrap_or(DEFAULT_SAMPLES),
                workers: common.workers.unwrap_or(1),
            };
            let start = Instant::now();
            let (mut rows, checks) = verify(&opts)?;
            if common.timing {
                let ms = start.elapsed().as_millis() as u64;
                rows.iter_mut().for_each(|r| r.wall_time_ms = Some(ms));
            }
            for check in checks.iter().filter(|c| !c.passed()) {
                for inputs in &check.failures {
                    eprintln!("FAIL {}/{}: {inputs}", check.module, check.invariant);
                }
            }
            for row in rows.iter().filter(|r| r.verdict.is_failure()) {
                eprintln!(
                    "FAIL {} [{} | {} | {}]: {} vs {} (z={})",
                    row.quantity, row.system, row.roof, row.set, row.mc_estimate, row.analytic_value, row.z_score
                );
            }
            emit(&rows, common.format.unwrap_or_default(), common.out.as_deref())?;
            Ok(!any_failure(&rows))
        }
        Command::ListSystems => {
            let mut out = io::stdout().lock();
            writeln!(out, "{:<16} {:<12} {:<24} entropy", "name", "kind", "parameters")?;
            for entry in catalog::entries() {
                let sys = entry.system();
                writeln!(
                    out,
                    "{:<16} {:<12} {:<24} {:.6}",
                    entry.name,
                    sys.kind().name(),
                    entry.parameters,
                    sys.entropy()
                )?;
            }
            Ok(true)
        }
    }
}

fn emit(rows: &[Row], format: Format, out: Option<&Path>) -> anyhow::Result<()> {
    match out {
        Some(path) => {
            let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
            write_rows(rows, format, BufWriter::new(file))
        }
        None => write_rows(rows, format, io::stdout().lock()),
    }
}
