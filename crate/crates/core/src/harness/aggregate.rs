//! Cross-run statistics on the shared recording grid.

use crate::solvers::{Record, Variant};

use super::MonteCarloOutcome;

/// Mean and sample variance of each metric at one recorded `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub k: usize,
    pub mean_gap: f64,
    pub var_gap: f64,
    pub mean_consensus: f64,
    pub var_consensus: f64,
    pub mean_tracking: f64,
    pub var_tracking: f64,
    pub mean_distance: f64,
    pub epsilon_partial: f64,
}

/// Final metrics of one completed run.
#[derive(Debug, Clone, PartialEq)]
pub struct FinalValues {
    pub run: usize,
    pub gap: f64,
    pub consensus: f64,
    pub distance: f64,
    pub tracking: f64,
}

/// Statistics over the completed runs of one variant. Diverged runs are
/// listed in `failed` and excluded from the moments.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateResult {
    pub variant: Variant,
    pub rows: Vec<AggregateRow>,
    pub finals: Vec<FinalValues>,
    /// `(run index, divergence iteration)`.
    pub failed: Vec<(usize, usize)>,
}

/// Sample mean and variance (`n − 1` denominator, 0 for a single value).
pub fn mean_var(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var)
}

/// Mean and standard error of the mean.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let (mean, var) = mean_var(values);
    (mean, (var / values.len() as f64).sqrt())
}

impl AggregateResult {
    pub fn from_outcome(outcome: &MonteCarloOutcome) -> Self {
        let traces: Vec<_> = outcome.completed().map(|r| (r.index, &r.trace)).collect();
        let failed = outcome
            .failures()
            .map(|r| (r.index, r.trace.diverged_at.unwrap_or(0)))
            .collect();
        let rows = match traces.first() {
            None => Vec::new(),
            Some((_, first)) => (0..first.records.len())
                .map(|idx| {
                    let at: Vec<&Record> = traces.iter().map(|(_, t)| &t.records[idx]).collect();
                    let column = |f: fn(&Record) -> f64| mean_var(&at.iter().map(|r| f(r)).collect::<Vec<_>>());
                    let (mean_gap, var_gap) = column(|r| r.gap);
                    let (mean_consensus, var_consensus) = column(|r| r.consensus);
                    let (mean_tracking, var_tracking) = column(|r| r.tracking);
                    let k = at[0].k;
                    AggregateRow {
                        k,
                        mean_gap,
                        var_gap,
                        mean_consensus,
                        var_consensus,
                        mean_tracking,
                        var_tracking,
                        mean_distance: column(|r| r.distance).0,
                        epsilon_partial: outcome.budget.as_ref().map_or(f64::INFINITY, |b| b.partials[k]),
                    }
                })
                .collect(),
        };
        let finals = traces
            .iter()
            .map(|(run, t)| {
                let r = t.last();
                FinalValues {
                    run: *run,
                    gap: r.gap,
                    consensus: r.consensus,
                    distance: r.distance,
                    tracking: r.tracking,
                }
            })
            .collect();
        Self {
            variant: outcome.variant,
            rows,
            finals,
            failed,
        }
    }

    pub fn completed(&self) -> usize {
        self.finals.len()
    }

    pub fn first(&self) -> Option<&AggregateRow> {
        self.rows.first()
    }

    pub fn last(&self) -> Option<&AggregateRow> {
        self.rows.last()
    }
}
