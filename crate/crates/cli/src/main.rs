//! Scenario-driven command line for the spinframes toolkit.
//!
//! Exit codes: 0 when every requested check passes, 1 when a check fails,
//! 2 on load or usage errors.

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use spinframes::checks::{parse_check_set, run_checks, CHECK_NAMES};
use spinframes::scenario::{load_scenario, Scenario};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "spinframes",
    version,
    about = "Numerical verification of spin-frame transport identities on coordinate charts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Copy, Clone, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Pretty,
}

#[derive(Args)]
struct RunArgs {
    /// Path to the scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Comma-separated check names, or `all`.
    #[arg(long, default_value = "all")]
    checks: String,
    /// Overrides the scenario's random seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Writes the report to a file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also dumps per-grid-point Dirac residual norms as CSV.
    #[arg(long)]
    residual_csv: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Runs a set of checks and prints one pass/fail line per check.
    Check {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value = "pretty")]
        format: Format,
    },
    /// Runs the checks and emits the full machine-readable report.
    Report {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
    },
    /// Prints the induced metric at a chart point.
    Metric {
        #[arg(long)]
        scenario: PathBuf,
        /// Comma-separated coordinates; defaults to the chart midpoint.
        #[arg(long)]
        point: Option<String>,
        #[arg(long, value_enum, default_value = "pretty")]
        format: Format,
    },
    /// Lists the available check names.
    ListChecks,
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(2);
        }
    }
}

fn load(path: &std::path::Path, seed: Option<u64>) -> Result<Scenario> {
    let mut s = load_scenario(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = seed {
        s.seed = seed;
    }
    Ok(s)
}

fn run_and_emit(run: RunArgs, format: Format) -> Result<i32> {
    let scenario = load(&run.scenario, run.seed)?;
    let which = parse_check_set(&run.checks).map_err(|e| anyhow!(e))?;
    let report = run_checks(&scenario, &which);
    if let Some(path) = &run.residual_csv {
        let rows = spinframes::checks::residual_norms(&scenario).map_err(|e| anyhow!(e))?;
        let mut csv = scenario.chart.coords().join(",");
        csv.push_str(",residual_norm\n");
        for (point, norm) in rows {
            for v in &point {
                csv.push_str(&format!("{v},"));
            }
            csv.push_str(&format!("{norm}\n"));
        }
        std::fs::write(path, csv).with_context(|| format!("writing {}", path.display()))?;
        eprintln!("residual norms written to {}", path.display());
    }
    let text = match format {
        Format::Json => report.to_json(),
        Format::Pretty => report.to_pretty(),
    };
    match &run.out {
        Some(path) => {
            std::fs::write(path, &text)
                .with_context(|| format!("writing {}", path.display()))?;
            eprintln!("report written to {}", path.display());
        }
        None => println!("{text}"),
    }
    Ok(if report.overall_pass { 0 } else { 1 })
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Check { run, format } => run_and_emit(run, format),
        Command::Report { run, format } => run_and_emit(run, format),
        Command::Metric {
            scenario,
            point,
            format,
        } => {
            let s = load(&scenario, None)?;
            let x: Vec<f64> = match point {
                None => s.chart.midpoint(),
                Some(spec) => {
                    let vals: Vec<f64> = spec
                        .split(',')
                        .map(|t| t.trim().parse::<f64>())
                        .collect::<Result<_, _>>()
                        .context("parsing --point")?;
                    if vals.len() != s.chart.dim() {
                        return Err(anyhow!(
                            "--point needs {} coordinates, got {}",
                            s.chart.dim(),
                            vals.len()
                        ));
                    }
                    vals
                }
            };
            let g = s.metric.at(&x);
            match format {
                Format::Pretty => {
                    println!("induced metric at ({})", s.chart.format_point(&x));
                    let m = s.chart.dim();
                    for i in 0..m {
                        let row: Vec<String> =
                            (0..m).map(|j| format!("{:>22.15e}", g[(i, j)])).collect();
                        println!("  [{}]", row.join(", "));
                    }
                }
                Format::Json => {
                    let m = s.chart.dim();
                    let rows: Vec<Vec<f64>> = (0..m)
                        .map(|i| (0..m).map(|j| g[(i, j)]).collect())
                        .collect();
                    let doc = serde_json::json!({
                        "point": x,
                        "coords": s.chart.coords(),
                        "metric": rows,
                    });
                    println!("{}", serde_json::to_string_pretty(&doc)?);
                }
            }
            Ok(0)
        }
        Command::ListChecks => {
            for name in CHECK_NAMES {
                println!("{name}");
            }
            Ok(0)
        }
    }
}
