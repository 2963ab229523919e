//! `privopt`: validate, run, budget and compare private distributed
//! optimization experiments described by a TOML config.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use privopt::harness::output::{write_comparison, write_outcome, ComparisonRow};
use privopt::harness::Experiment;
use privopt::privacy::write_budget_csv;
use privopt::solvers::Variant;
use privopt::Error;

#[derive(Parser)]
#[command(
    name = "privopt",
    version,
    about = "Differentially-private distributed optimization experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check every graph, schedule and noise condition for the configured variant.
    Validate { config: PathBuf },
    /// Run the Monte Carlo experiment and write CSV (and SVG) artifacts.
    Run {
        config: PathBuf,
        #[command(flatten)]
        opts: RunOpts,
    },
    /// Evaluate the privacy budget at the given horizons.
    Budget {
        config: PathBuf,
        /// Comma-separated horizons, e.g. `1e3,1e4,1e5`.
        #[arg(long, value_delimiter = ',', required = true, value_parser = parse_horizon)]
        horizons: Vec<usize>,
    },
    /// Run several variants with shared seeds and summarize their final gaps.
    Compare {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        variants: Vec<Variant>,
        #[command(flatten)]
        opts: RunOpts,
    },
}

#[derive(Args)]
struct RunOpts {
    /// Write SVG plots.
    #[arg(long)]
    plot: bool,
    /// Skip the precondition gate.
    #[arg(long)]
    force: bool,
    /// Override `run.monte_carlo`.
    #[arg(long)]
    runs: Option<usize>,
    /// Override `run.iterations`.
    #[arg(long, value_parser = parse_horizon)]
    iters: Option<usize>,
}

fn parse_horizon(s: &str) -> Result<usize, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v >= 1.0 && v.fract() == 0.0 && v <= usize::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(format!("`{s}` is not a positive integer"))
    }
}

/// Failure classes mapped onto exit codes.
enum Failure {
    Validation(String),
    Runtime(String),
}

impl Failure {
    fn setup(e: Error) -> Self {
        match e {
            Error::Io { .. } => Failure::Runtime(e.to_string()),
            other => Failure::Validation(other.to_string()),
        }
    }

    fn runtime(e: Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate { config } => validate(&config),
        Command::Run { config, opts } => run(&config, &opts),
        Command::Budget { config, horizons } => budget(&config, &horizons),
        Command::Compare { config, variants, opts } => compare(&config, &variants, &opts),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load(path: &Path) -> Result<Experiment, Failure> {
    Experiment::load(path).map_err(Failure::setup)
}

fn validate(path: &Path) -> Result<(), Failure> {
    let exp = load(path)?;
    let report = exp.validate(exp.config.run.variant);
    print!("{report}");
    if report.overall() {
        println!("all conditions hold");
        Ok(())
    } else {
        Err(Failure::Validation(format!("failed: {}", report.failures().join(", "))))
    }
}

fn gate(exp: &Experiment, variant: Variant, force: bool) -> Result<(), Failure> {
    if force {
        return Ok(());
    }
    let report = exp.gate(variant);
    if report.overall() {
        Ok(())
    } else {
        print!("{report}");
        Err(Failure::Validation(format!(
            "{variant}: failed {} (use --force to run anyway)",
            report.failures().join(", ")
        )))
    }
}

fn sizes(exp: &Experiment, opts: &RunOpts) -> (usize, usize) {
    (
        opts.runs.unwrap_or(exp.config.run.monte_carlo),
        opts.iters.unwrap_or(exp.config.run.iterations),
    )
}

fn run(path: &Path, opts: &RunOpts) -> Result<(), Failure> {
    let exp = load(path)?;
    let variant = exp.config.run.variant;
    gate(&exp, variant, opts.force)?;
    let (runs, iters) = sizes(&exp, opts);
    let outcome = exp.monte_carlo(variant, runs, iters).map_err(Failure::runtime)?;
    let out = &exp.config.run.output;
    let agg = write_outcome(out, &outcome, opts.plot).map_err(Failure::runtime)?;
    println!(
        "{variant}: {} completed, {} diverged",
        agg.completed(),
        agg.failed.len()
    );
    if let (Some(first), Some(last)) = (agg.first(), agg.last()) {
        println!(
            "mean gap        k = 0: {:.6e}   k = {}: {:.6e}",
            first.mean_gap, last.k, last.mean_gap
        );
        println!(
            "mean consensus  k = 0: {:.6e}   k = {}: {:.6e}",
            first.mean_consensus, last.k, last.mean_consensus
        );
        println!("epsilon at k = {}: {:.6e}", last.k, last.epsilon_partial);
    }
    println!("wrote {}", out.join(variant.name()).display());
    Ok(())
}

fn budget(path: &Path, horizons: &[usize]) -> Result<(), Failure> {
    let exp = load(path)?;
    let variant = exp.config.run.variant;
    let t_max = *horizons.iter().max().expect("clap requires at least one horizon");
    let Some((ledger, breakdown)) = exp.ledger(variant, t_max).map_err(Failure::setup)? else {
        println!("{variant}: no privacy noise configured; ε = ∞ (infinite-tail marker)");
        return Ok(());
    };
    println!(
        "{variant}: gradient bound C = {:.6e}, envelope {:?}",
        ledger.gradient_bound, ledger.envelope
    );
    println!("{:>10}  {:>14}  {:>14}", "T", "epsilon_T", "tail bound");
    let mut sorted = horizons.to_vec();
    sorted.sort_unstable();
    for t in sorted {
        let tail = match ledger.budget_tail_estimate(&breakdown, t) {
            Some(v) => format!("{v:.6e}"),
            None => "inf".to_string(),
        };
        println!("{t:>10}  {:>14.6e}  {tail:>14}", breakdown.at(t));
    }
    if ledger.budget_tail_estimate(&breakdown, t_max).is_none() {
        println!("infinite-tail marker: the per-iteration loss is not summable");
    }
    let dir = exp.config.run.output.join(variant.name());
    std::fs::create_dir_all(&dir).map_err(|e| Failure::Runtime(format!("{}: {e}", dir.display())))?;
    let csv = dir.join("budget.csv");
    write_budget_csv(&csv, &ledger, &breakdown).map_err(Failure::runtime)?;
    println!("wrote {}", csv.display());
    Ok(())
}

fn compare(path: &Path, variants: &[Variant], opts: &RunOpts) -> Result<(), Failure> {
    let exp = load(path)?;
    for &v in variants {
        gate(&exp, v, opts.force)?;
    }
    let (runs, iters) = sizes(&exp, opts);
    let out = &exp.config.run.output;
    let (mut rows, mut aggs) = (Vec::new(), Vec::new());
    for &v in variants {
        let outcome = exp.monte_carlo(v, runs, iters).map_err(Failure::runtime)?;
        let agg = write_outcome(out, &outcome, opts.plot).map_err(Failure::runtime)?;
        rows.push(ComparisonRow::from_outcome(&outcome, &agg));
        aggs.push(agg);
    }
    write_comparison(out, &rows, &aggs).map_err(Failure::runtime)?;
    println!(
        "{:<16} {:>9} {:>8} {:>15} {:>13} {:>13}",
        "variant", "completed", "diverged", "mean final gap", "std error", "epsilon"
    );
    for r in &rows {
        println!(
            "{:<16} {:>9} {:>8} {:>15.6e} {:>13.6e} {:>13.6e}",
            r.variant, r.completed, r.failed, r.mean_final_gap, r.se_final_gap, r.epsilon
        );
    }
    println!("wrote {}", out.join("compare.csv").display());
    Ok(())
}
