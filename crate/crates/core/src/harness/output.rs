//! CSV and SVG artifacts of an experiment.
//!
//! Layout under the output directory, per variant:
//!
//! ```text
//! <variant>/aggregate.csv   per-k mean and variance across completed runs
//! <variant>/finals.csv      final metrics of each completed run
//! <variant>/failures.csv    diverged runs
//! <variant>/budget.csv      per-iteration privacy loss (when noise is on)
//! <variant>/runs/run_NNNN.csv
//! <variant>/{gap,consensus,tracking}.svg   with --plot
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::privacy::write_budget_csv;
use crate::solvers::{Family, Trace};

use super::aggregate::{mean_se, AggregateResult, AggregateRow};
use super::plot::{LinePlot, Series};
use super::MonteCarloOutcome;

fn num(v: f64) -> String {
    format!("{v:e}")
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

fn finish(mut w: csv::Writer<fs::File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub fn write_trace_csv(path: &Path, trace: &Trace) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["k", "gap", "consensus", "distance", "tracking", "epsilon_partial"])?;
    for r in &trace.records {
        w.write_record(&[
            r.k.to_string(),
            num(r.gap),
            num(r.consensus),
            num(r.distance),
            num(r.tracking),
            num(r.epsilon),
        ])?;
    }
    finish(w, path)
}

pub fn write_aggregate_csv(path: &Path, agg: &AggregateResult) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "k",
        "mean_gap",
        "var_gap",
        "mean_consensus",
        "var_consensus",
        "mean_tracking",
        "var_tracking",
        "epsilon_partial",
    ])?;
    for r in &agg.rows {
        w.write_record(&[
            r.k.to_string(),
            num(r.mean_gap),
            num(r.var_gap),
            num(r.mean_consensus),
            num(r.var_consensus),
            num(r.mean_tracking),
            num(r.var_tracking),
            num(r.epsilon_partial),
        ])?;
    }
    finish(w, path)
}

pub fn write_finals_csv(path: &Path, agg: &AggregateResult) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["run", "gap", "consensus", "distance", "tracking"])?;
    for f in &agg.finals {
        w.write_record(&[
            f.run.to_string(),
            num(f.gap),
            num(f.consensus),
            num(f.distance),
            num(f.tracking),
        ])?;
    }
    finish(w, path)
}

pub fn write_failures_csv(path: &Path, agg: &AggregateResult) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["run", "variant", "diverged_at"])?;
    for (run, k) in &agg.failed {
        w.write_record(&[run.to_string(), agg.variant.to_string(), k.to_string()])?;
    }
    finish(w, path)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn band_plot(agg: &AggregateResult, title: &str, y_label: &str, mean: fn(&AggregateRow) -> (f64, f64)) -> LinePlot {
    let points: Vec<(f64, f64)> = agg.rows.iter().map(|r| (r.k as f64, mean(r).0)).collect();
    let band = agg
        .rows
        .iter()
        .map(|r| {
            let (m, v) = mean(r);
            let sd = v.sqrt();
            (m - sd, m + sd)
        })
        .collect();
    LinePlot {
        title: format!("{title} ({}, mean ± 1 std over {} runs)", agg.variant, agg.completed()),
        x_label: "iteration k".into(),
        y_label: y_label.into(),
        log_y: true,
        series: vec![Series {
            label: agg.variant.to_string(),
            points,
            band: Some(band),
        }],
    }
}

/// Writes every artifact of one variant under `dir/<variant>/` and returns
/// the aggregate.
pub fn write_outcome(dir: &Path, outcome: &MonteCarloOutcome, plot: bool) -> Result<AggregateResult> {
    let base = dir.join(outcome.variant.name());
    let runs_dir = base.join("runs");
    create_dir(&runs_dir)?;
    let agg = AggregateResult::from_outcome(outcome);
    for r in outcome.completed() {
        write_trace_csv(&runs_dir.join(format!("run_{:04}.csv", r.index)), &r.trace)?;
    }
    write_aggregate_csv(&base.join("aggregate.csv"), &agg)?;
    write_finals_csv(&base.join("finals.csv"), &agg)?;
    write_failures_csv(&base.join("failures.csv"), &agg)?;
    if let (Some(ledger), Some(budget)) = (&outcome.ledger, &outcome.budget) {
        write_budget_csv(&base.join("budget.csv"), ledger, budget)?;
    }
    if plot && !agg.rows.is_empty() {
        let gap = band_plot(&agg, "optimality gap", "F(x̄) − F*", |r| (r.mean_gap, r.var_gap));
        write_text(&base.join("gap.svg"), &gap.render())?;
        let cons = band_plot(&agg, "consensus error", "Σ‖x_i − x̄‖²", |r| {
            (r.mean_consensus, r.var_consensus)
        });
        write_text(&base.join("consensus.svg"), &cons.render())?;
        if outcome.variant.family() == Family::GradientTracking {
            let tr = band_plot(&agg, "tracking error", "Σ‖y_i − v_i ȳ‖²", |r| {
                (r.mean_tracking, r.var_tracking)
            });
            write_text(&base.join("tracking.svg"), &tr.render())?;
        }
    }
    Ok(agg)
}

/// One summary line per variant of a comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub variant: String,
    pub completed: usize,
    pub failed: usize,
    pub mean_final_gap: f64,
    pub se_final_gap: f64,
    pub epsilon: f64,
}

impl ComparisonRow {
    /// Diverged runs count as an infinite final gap.
    pub fn from_outcome(outcome: &MonteCarloOutcome, agg: &AggregateResult) -> Self {
        let (mean_final_gap, se_final_gap) = mean_se(&outcome.final_gaps());
        Self {
            variant: outcome.variant.to_string(),
            completed: agg.completed(),
            failed: agg.failed.len(),
            mean_final_gap,
            se_final_gap,
            epsilon: outcome.budget.as_ref().map_or(f64::INFINITY, |b| b.total()),
        }
    }
}

/// `compare.csv` and an overlay plot of mean gaps.
pub fn write_comparison(dir: &Path, rows: &[ComparisonRow], aggs: &[AggregateResult]) -> Result<Vec<PathBuf>> {
    create_dir(dir)?;
    let csv_path = dir.join("compare.csv");
    let mut w = writer(&csv_path)?;
    w.write_record([
        "variant",
        "completed",
        "failed",
        "mean_final_gap",
        "se_final_gap",
        "epsilon",
    ])?;
    for r in rows {
        w.write_record(&[
            r.variant.clone(),
            r.completed.to_string(),
            r.failed.to_string(),
            num(r.mean_final_gap),
            num(r.se_final_gap),
            num(r.epsilon),
        ])?;
    }
    finish(w, &csv_path)?;
    let plot = LinePlot {
        title: "mean optimality gap".into(),
        x_label: "iteration k".into(),
        y_label: "F(x̄) − F*".into(),
        log_y: true,
        series: aggs
            .iter()
            .map(|a| Series {
                label: a.variant.to_string(),
                points: a.rows.iter().map(|r| (r.k as f64, r.mean_gap)).collect(),
                band: None,
            })
            .collect(),
    };
    let svg_path = dir.join("compare_gap.svg");
    write_text(&svg_path, &plot.render())?;
    Ok(vec![csv_path, svg_path])
}
