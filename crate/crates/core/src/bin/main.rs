use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use bandit_control::harness::analysis::fit_slope;
use bandit_control::harness::config::ExperimentConfig;
use bandit_control::harness::experiment::{
    audit_experiment, load_summary, run_experiment, ExperimentSummary,
};

/// Bandit linear control experiments.
#[derive(Parser)]
#[command(version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (T, seed) cell of a config and write CSV, JSON and SVG reports.
    Run { config: PathBuf },
    /// Run the invariant audit only (no comparators, no files).
    Audit { config: PathBuf },
    /// Fit the log-log regret slope of a finished report directory.
    Slope { summary_dir: PathBuf },
}

fn report_violations(summary: &ExperimentSummary) -> ExitCode {
    if summary.passed() {
        return ExitCode::SUCCESS;
    }
    for (inv, t, seed, detail) in summary.violation_list() {
        eprintln!("invariant violated: {inv} (T = {t}, seed = {seed}): {detail}");
    }
    ExitCode::from(2)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config } => ExperimentConfig::load(&config).and_then(|cfg| {
            let summary = run_experiment(&cfg)?;
            for h in &summary.horizons {
                println!(
                    "T = {:>6}  seeds = {:>3}  regret = {:.4} +- {:.4}  regret/T = {:.6}",
                    h.horizon, h.seeds, h.mean_regret, h.regret_se, h.mean_regret_per_round
                );
            }
            if let Some(fit) = summary.slope {
                println!("slope = {:.4}  (R^2 = {:.4})", fit.slope, fit.r_squared);
            }
            println!("reports in {}", cfg.resolved_output_dir().display());
            Ok(report_violations(&summary))
        }),
        Command::Audit { config } => ExperimentConfig::load(&config).and_then(|cfg| {
            let summary = audit_experiment(&cfg)?;
            let code = report_violations(&summary);
            if summary.passed() {
                println!("audit passed on {} runs", summary.cells.len());
            }
            Ok(code)
        }),
        Command::Slope { summary_dir } => load_summary(&summary_dir).and_then(|summary| {
            let pts: Vec<(f64, f64)> = summary
                .horizons
                .iter()
                .map(|h| (h.horizon as f64, h.mean_regret))
                .collect();
            let fit = fit_slope(&pts)?;
            println!(
                "slope = {:.4}  intercept = {:.4}  R^2 = {:.4}  points = {}",
                fit.slope, fit.intercept, fit.r_squared, fit.used
            );
            Ok(ExitCode::SUCCESS)
        }),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
