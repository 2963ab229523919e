//! Log-log least-squares fit of a metric against the stepsize ratio `λ/γ`.

use crate::error::{Error, Result};
use crate::schedules::PowerSchedule;
use crate::solvers::{Record, Trace};

/// Minimum `hi / lo` ratio of the fitting window.
pub const MIN_SPAN: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    Gap,
    Consensus,
    Distance,
    Tracking,
}

impl Metric {
    pub fn of(self, r: &Record) -> f64 {
        match self {
            Metric::Gap => r.gap,
            Metric::Consensus => r.consensus,
            Metric::Distance => r.distance,
            Metric::Tracking => r.tracking,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Ordinary least squares of `y` on `x`. A constant `y` gives slope 0 and
/// `R² = 1`.
pub fn ols(x: &[f64], y: &[f64]) -> Result<RateFit> {
    let n = x.len();
    if n < 2 || y.len() != n {
        return Err(Error::Range(format!("need at least two paired points, got {n}")));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx <= 0.0 {
        return Err(Error::Range("regressor is constant over the window".into()));
    }
    if y.iter().all(|&v| v == y[0]) {
        return Ok(RateFit {
            slope: 0.0,
            intercept: y[0],
            r_squared: 1.0,
            points: n,
        });
    }
    let slope = sxy / sxx;
    let r_squared = sxy * sxy / (sxx * syy);
    Ok(RateFit {
        slope,
        intercept: my - slope * mx,
        r_squared,
        points: n,
    })
}

/// Fits `log metric` against `log(λ^k/γ^k)` over records with `lo ≤ k ≤ hi`.
pub fn rate_fit(
    trace: &Trace,
    metric: Metric,
    lambda: &PowerSchedule,
    gamma: &PowerSchedule,
    lo: usize,
    hi: usize,
) -> Result<RateFit> {
    if lo == 0 || (hi as f64) < MIN_SPAN * lo as f64 {
        return Err(Error::Range(format!("window [{lo}, {hi}] spans less than two decades")));
    }
    let last = trace.last().k;
    if last < hi {
        return Err(Error::Range(format!(
            "trace ends at k = {last}, before the window end {hi}"
        )));
    }
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for r in trace.records.iter().filter(|r| r.k >= lo && r.k <= hi) {
        let v = metric.of(r);
        if !(v > 0.0 && v.is_finite()) {
            return Err(Error::Range(format!(
                "{metric:?} = {v} at k = {} has no logarithm",
                r.k
            )));
        }
        x.push((lambda.eval(r.k) / gamma.eval(r.k)).ln());
        y.push(v.ln());
    }
    ols(&x, &y)
}
