//! Sensitivity recursions and cumulative ε budget for both algorithm families.
//!
//! Two neighbouring problems differ in one agent's objective. With every
//! transmitted message held equal, only that agent's iterates differ, and
//! their ℓ₁ distance obeys a scalar contraction recursion. The resulting
//! sensitivity bound `ς^k`, divided by the Laplace scale `ν^k`, is the
//! per-iteration privacy loss; its partial sums bound ε.
//!
//! The gradient-difference envelope `φ^k` multiplies the forcing term of the
//! recursion. [`Envelope::Constant`] uses `φ ≡ 1`, the finite-horizon bound.
//! [`Envelope::Decaying`] uses the decay that convergence of both problems
//! imposes near the optimum (`γ^k` for static consensus, `γ₂^k λ^k` for
//! gradient tracking), the infinite-horizon argument.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::noise::NoiseModel;
use crate::objectives::{AdjacentVariant, QuadraticEstimationProblem};
use crate::schedules::{series_class, PowerSchedule, SeriesKind, SeriesTerm, StaticScheduleSet, TrackingScheduleSet};
use crate::solvers::{
    gradients, step_algorithm1, step_algorithm2, Coupling, Family, Schedules, StaticConsensusState, TrackingState,
};

/// Slack allowed on the coupled-difference bound ratio.
pub const BOUND_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Envelope {
    #[default]
    Constant,
    Decaying,
}

impl Envelope {
    /// `φ^k` for the static-consensus family.
    pub fn static_at(self, s: &StaticScheduleSet, k: usize) -> f64 {
        match self {
            Envelope::Constant => 1.0,
            Envelope::Decaying => s.gamma.eval(k),
        }
    }

    /// `φ^k` for the gradient-tracking family.
    pub fn tracking_at(self, s: &TrackingScheduleSet, k: usize) -> f64 {
        match self {
            Envelope::Constant => 1.0,
            Envelope::Decaying => s.gamma2.eval(k) * s.lambda.eval(k),
        }
    }
}

/// `ς^k` for `k = 0..=T` with `ς⁰ = 0`, `ς¹ = λ⁰φ⁰` and
/// `ς^{k+1} = (1 − w̄γ^k)ς^k + λ^kφ^k`.
pub fn sensitivity_series_alg1(
    schedules: &StaticScheduleSet,
    min_diag: f64,
    envelope: Envelope,
    horizon: usize,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(horizon + 1);
    out.push(0.0);
    let mut varsigma = 0.0;
    for k in 0..horizon {
        let contraction = 1.0 - min_diag * schedules.gamma.eval(k);
        if k >= 1 && contraction <= 0.0 {
            return Err(Error::Range(format!("w̄γ^{k} = {} ≥ 1", 1.0 - contraction)));
        }
        let carry = if k == 0 { 0.0 } else { contraction * varsigma };
        varsigma = carry + schedules.lambda.eval(k) * envelope.static_at(schedules, k);
        out.push(varsigma);
    }
    Ok(out)
}

/// `(ς_x^k, ς_y^k)` for `k = 0..=T`.
///
/// `ς_y⁰ = φ⁰` (the trackers start at the local gradients, so they already
/// differ), `ς_y¹ = (2 − α⁰)φ⁰`, `ς_y^{k+1} = (1 − α^k − C̄γ₂^k)ς_y^k + (2 − α^k)φ^k`;
/// `ς_x⁰ = 0`, `ς_x¹ = λ⁰ς_y⁰`, `ς_x^{k+1} = (1 − R̄γ₁^k)ς_x^k + λ^kς_y^k`.
pub fn sensitivity_series_alg2(
    schedules: &TrackingScheduleSet,
    min_diag_r: f64,
    min_diag_c: f64,
    envelope: Envelope,
    horizon: usize,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut xs = Vec::with_capacity(horizon + 1);
    let mut ys = Vec::with_capacity(horizon + 1);
    let phi0 = envelope.tracking_at(schedules, 0);
    xs.push(0.0);
    ys.push(phi0);
    for k in 0..horizon {
        let alpha = schedules.alpha_at(k);
        let cy = 1.0 - alpha - min_diag_c * schedules.gamma2.eval(k);
        let cx = 1.0 - min_diag_r * schedules.gamma1.eval(k);
        if k >= 1 && (cy <= 0.0 || cx <= 0.0) {
            return Err(Error::Range(format!(
                "at k = {k}: 1 − α − C̄γ₂ = {cy}, 1 − R̄γ₁ = {cx}; both must be positive"
            )));
        }
        let phi = envelope.tracking_at(schedules, k);
        let (x, y) = (xs[k], ys[k]);
        let y_next = if k == 0 {
            (2.0 - alpha) * phi
        } else {
            cy * y + (2.0 - alpha) * phi
        };
        let x_next = if k == 0 { 0.0 } else { cx * x } + schedules.lambda.eval(k) * y;
        xs.push(x_next);
        ys.push(y_next);
    }
    Ok((xs, ys))
}

/// Structural constants of the bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LedgerKind {
    Static {
        schedules: StaticScheduleSet,
        min_diag: f64,
    },
    Tracking {
        schedules: TrackingScheduleSet,
        min_diag_r: f64,
        min_diag_c: f64,
    },
}

/// Sensitivity bounds and the privacy budget they imply up to a horizon.
#[derive(Debug, Clone)]
pub struct PrivacyLedger {
    pub kind: LedgerKind,
    pub envelope: Envelope,
    /// Gradient-difference bound `C`.
    pub gradient_bound: f64,
    /// `ς^k` (static) or `ς_x^k` (tracking), `k = 0..=T`.
    pub varsigma: Vec<f64>,
    /// `ς_y^k` for the tracking family.
    pub varsigma_y: Option<Vec<f64>>,
}

/// Per-iteration privacy loss and its partial sums.
#[derive(Debug, Clone, PartialEq)]
pub struct BudgetBreakdown {
    /// Loss at `k = 1..=T`, stored at index `k` (index 0 is zero).
    pub per_term: Vec<f64>,
    /// `ε_k = Σ_{j ≤ k} per_term[j]`.
    pub partials: Vec<f64>,
}

impl BudgetBreakdown {
    pub fn total(&self) -> f64 {
        *self.partials.last().unwrap_or(&0.0)
    }

    pub fn at(&self, t: usize) -> f64 {
        self.partials[t]
    }
}

impl PrivacyLedger {
    pub fn alg1(
        schedules: &StaticScheduleSet,
        min_diag: f64,
        gradient_bound: f64,
        envelope: Envelope,
        horizon: usize,
    ) -> Result<Self> {
        check_bound(gradient_bound)?;
        Ok(Self {
            kind: LedgerKind::Static {
                schedules: *schedules,
                min_diag,
            },
            envelope,
            gradient_bound,
            varsigma: sensitivity_series_alg1(schedules, min_diag, envelope, horizon)?,
            varsigma_y: None,
        })
    }

    pub fn alg2(
        schedules: &TrackingScheduleSet,
        min_diag_r: f64,
        min_diag_c: f64,
        gradient_bound: f64,
        envelope: Envelope,
        horizon: usize,
    ) -> Result<Self> {
        check_bound(gradient_bound)?;
        let (xs, ys) = sensitivity_series_alg2(schedules, min_diag_r, min_diag_c, envelope, horizon)?;
        Ok(Self {
            kind: LedgerKind::Tracking {
                schedules: *schedules,
                min_diag_r,
                min_diag_c,
            },
            envelope,
            gradient_bound,
            varsigma: xs,
            varsigma_y: Some(ys),
        })
    }

    pub fn horizon(&self) -> usize {
        self.varsigma.len() - 1
    }

    fn nu(&self) -> Option<PowerSchedule> {
        match &self.kind {
            LedgerKind::Static { schedules, .. } => schedules.nu,
            LedgerKind::Tracking { schedules, .. } => schedules.nu,
        }
    }

    fn lambda(&self) -> PowerSchedule {
        match &self.kind {
            LedgerKind::Static { schedules, .. } => schedules.lambda,
            LedgerKind::Tracking { schedules, .. } => schedules.lambda,
        }
    }

    /// Total sensitivity bound at `k`: `ς^k` or `ς_x^k + ς_y^k`.
    pub fn sensitivity(&self, k: usize) -> f64 {
        self.varsigma[k] + self.varsigma_y.as_ref().map_or(0.0, |y| y[k])
    }

    /// `ε_T = Σ_{k=1}^T Cς^k/ν^k` or `Σ 2C(ς_x^k + ς_y^k)/ν^k` for every `T` up to the horizon.
    pub fn epsilon_bound(&self) -> Result<BudgetBreakdown> {
        let nu = self
            .nu()
            .ok_or_else(|| Error::Condition("no privacy noise configured: the budget is unbounded".into()))?;
        let factor = match self.kind {
            LedgerKind::Static { .. } => self.gradient_bound,
            LedgerKind::Tracking { .. } => 2.0 * self.gradient_bound,
        };
        let mut per_term = vec![0.0; self.horizon() + 1];
        let mut partials = vec![0.0; self.horizon() + 1];
        for k in 1..=self.horizon() {
            per_term[k] = factor * self.sensitivity(k) / nu.eval(k);
            partials[k] = partials[k - 1] + per_term[k];
        }
        Ok(BudgetBreakdown { per_term, partials })
    }

    /// Asymptotic shape of the per-iteration loss.
    fn loss_envelope(&self, nu: &PowerSchedule) -> SeriesTerm {
        match &self.kind {
            LedgerKind::Static { schedules, .. } => {
                // ς ~ λφ/γ by the contraction rate w̄γ
                let forcing = match self.envelope {
                    Envelope::Constant => schedules.lambda.term(),
                    Envelope::Decaying => schedules.lambda.term() * schedules.gamma.term(),
                };
                forcing / schedules.gamma.term() / nu.term()
            }
            LedgerKind::Tracking { schedules, .. } => {
                // ς_y ~ φ / (slower of α, γ₂); ς_x/ς_y ~ λ/γ₁ → 0
                let g2 = schedules.gamma2;
                let rate = match schedules.alpha {
                    Some(a) if a.asymptotic().power > g2.asymptotic().power => a,
                    _ => g2,
                };
                let forcing = match self.envelope {
                    Envelope::Constant => SeriesTerm::constant(1.0),
                    Envelope::Decaying => g2.term() * schedules.lambda.term(),
                };
                forcing / rate.term() / nu.term()
            }
        }
    }

    /// Upper bound on `ε_∞ − ε_T`; `None` is the infinite-budget marker.
    ///
    /// Requires `Σ λ/ν < ∞` and a summable per-iteration loss envelope; the
    /// tail then follows from the integral test anchored at the loss at `T`.
    pub fn budget_tail_estimate(&self, budget: &BudgetBreakdown, t: usize) -> Option<f64> {
        let nu = self.nu()?;
        let t = t.min(self.horizon()).max(1);
        if series_class(&(self.lambda().term() / nu.term())).kind != SeriesKind::ConvergentSum {
            return None;
        }
        let shape = self.loss_envelope(&nu);
        if series_class(&shape).kind != SeriesKind::ConvergentSum {
            return None;
        }
        let relative = shape.tail_bound(t)? / shape.eval(t);
        Some(budget.per_term[t] * relative)
    }
}

fn check_bound(c: f64) -> Result<()> {
    if c >= 0.0 && c.is_finite() {
        Ok(())
    } else {
        Err(Error::Range(format!("gradient bound {c} must be finite and ≥ 0")))
    }
}

/// Writes `k,varsigma,per_term,epsilon_partial` for `k = 1..=T`.
pub fn write_budget_csv(path: &Path, ledger: &PrivacyLedger, budget: &BudgetBreakdown) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["k", "varsigma", "per_term", "epsilon_partial"])?;
    for k in 1..=ledger.horizon() {
        w.write_record(&[
            k.to_string(),
            format!("{:e}", ledger.sensitivity(k)),
            format!("{:e}", budget.per_term[k]),
            format!("{:e}", budget.partials[k]),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// How the gradient difference of the changed agent is supplied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DifferenceSource {
    /// Evaluate both problems along the trajectory; `C` is the observed maximum.
    Harvested,
    /// Worst-case forcing of magnitude `C·φ^k` along a fixed direction.
    Constant(f64),
}

pub struct CoupledSetup<'a> {
    pub problem: &'a QuadraticEstimationProblem,
    pub adjacent: &'a AdjacentVariant,
    pub coupling: Coupling<'a>,
    pub schedules: Schedules,
    pub noise: &'a dyn NoiseModel,
    pub x0: DMatrix<f64>,
    pub iterations: usize,
    pub source: DifferenceSource,
    pub envelope: Envelope,
}

/// Observation-matched difference dynamics of two neighbouring runs.
#[derive(Debug, Clone)]
pub struct CoupledTrace {
    pub family: Family,
    /// `‖x_i^k − x'_i^k‖₁`, `k = 0..=T`.
    pub diff_x: Vec<f64>,
    /// `‖y_i^k − y'_i^k‖₁` for gradient tracking.
    pub diff_y: Option<Vec<f64>>,
    /// `C` used for the bound.
    pub gradient_bound: f64,
    pub ledger: PrivacyLedger,
    /// Observed distance over bound at each `k` (0 where both vanish).
    pub ratios: Vec<f64>,
}

impl CoupledTrace {
    pub fn max_ratio(&self) -> f64 {
        self.ratios.iter().skip(1).copied().fold(0.0, f64::max)
    }

    /// First `k ≥ 1` whose ratio exceeds `1 + BOUND_SLACK`.
    pub fn first_violation(&self) -> Option<usize> {
        (1..self.ratios.len()).find(|&k| self.ratios[k] > 1.0 + BOUND_SLACK)
    }

    pub fn bound_holds(&self) -> bool {
        self.first_violation().is_none()
    }
}

fn ratio(observed: f64, bound: f64) -> f64 {
    if bound > 0.0 {
        observed / bound
    } else if observed == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

fn unit_direction(d: usize) -> DVector<f64> {
    DVector::from_element(d, 1.0 / d as f64)
}

fn row(x: &DMatrix<f64>, i: usize) -> DVector<f64> {
    x.row(i).transpose()
}

/// Simulates the difference between a run on `problem` and one on its
/// neighbour with every transmitted message held equal, and compares it
/// with the sensitivity bound at every iteration.
pub fn coupled_difference_trace(setup: &CoupledSetup<'_>) -> Result<CoupledTrace> {
    match (setup.coupling, &setup.schedules) {
        (Coupling::Consensus(w), Schedules::Static(s)) => coupled_static(setup, w, s),
        (Coupling::PushPull(w), Schedules::Tracking(s)) => coupled_tracking(setup, w, s),
        _ => Err(Error::Structure(
            "coupling and schedules belong to different families".into(),
        )),
    }
}

fn coupled_static(
    setup: &CoupledSetup<'_>,
    w: &crate::graph::ConsensusWeights,
    s: &StaticScheduleSet,
) -> Result<CoupledTrace> {
    let i = setup.adjacent.agent;
    let d = setup.problem.d();
    let wii = w.w[(i, i)];
    let t_max = setup.iterations;
    for k in 0..t_max {
        if 1.0 + wii * s.gamma.eval(k) < 0.0 {
            return Err(Error::Range(format!("1 − γ^{k}|w_ii| < 0 for the changed agent")));
        }
    }
    let dir = unit_direction(d);
    let mut st = StaticConsensusState::new(setup.x0.clone());
    let mut e = DVector::zeros(d);
    let mut diff = vec![0.0];
    let mut scaled_gdiff = 0.0f64;
    for k in 0..t_max {
        let phi = setup.envelope.static_at(s, k);
        let dg = match setup.source {
            DifferenceSource::Harvested => {
                let xi = row(&st.x, i);
                let xi_adj = &xi - &e;
                setup.problem.local_gradient(i, &xi) - setup.adjacent.gradient(setup.problem, i, &xi_adj)
            }
            DifferenceSource::Constant(c) => &dir * (c * phi),
        };
        scaled_gdiff = scaled_gdiff.max(dg.lp_norm(1) / phi);
        e = &e * (1.0 + wii * s.gamma.eval(k)) - dg * s.lambda.eval(k);
        diff.push(e.lp_norm(1));
        if setup.source == DifferenceSource::Harvested {
            step_algorithm1(&mut st, w, s, setup.noise, setup.problem)?;
        }
    }
    let c = match setup.source {
        DifferenceSource::Harvested => scaled_gdiff,
        DifferenceSource::Constant(c) => c,
    };
    let ledger = PrivacyLedger::alg1(s, w.min_diag_mag, c, setup.envelope, t_max)?;
    let ratios = (0..=t_max).map(|k| ratio(diff[k], c * ledger.varsigma[k])).collect();
    Ok(CoupledTrace {
        family: Family::StaticConsensus,
        diff_x: diff,
        diff_y: None,
        gradient_bound: c,
        ledger,
        ratios,
    })
}

fn coupled_tracking(
    setup: &CoupledSetup<'_>,
    w: &crate::graph::PushPullWeights,
    s: &TrackingScheduleSet,
) -> Result<CoupledTrace> {
    let i = setup.adjacent.agent;
    let d = setup.problem.d();
    let (rii, cii) = (w.r[(i, i)].abs(), w.c[(i, i)].abs());
    let t_max = setup.iterations;
    for k in 0..t_max {
        if 1.0 - s.alpha_at(k) - s.gamma2.eval(k) * cii < 0.0 || 1.0 - s.gamma1.eval(k) * rii < 0.0 {
            return Err(Error::Range(format!(
                "contraction factors negative at k = {k} for the changed agent"
            )));
        }
    }
    let dir = unit_direction(d);
    let forced = |k: usize, c: f64| {
        let sign = if k.is_multiple_of(2) { 1.0 } else { -1.0 };
        &dir * (sign * 2.0 * c * setup.envelope.tracking_at(s, k))
    };
    let mut st = TrackingState::new(setup.x0.clone(), setup.problem);
    let harvested = setup.source == DifferenceSource::Harvested;
    let gdiff_at = |x: &DMatrix<f64>, dx: &DVector<f64>| {
        let xi = row(x, i);
        let xi_adj = &xi - dx;
        setup.problem.local_gradient(i, &xi) - setup.adjacent.gradient(setup.problem, i, &xi_adj)
    };
    let mut dx = DVector::zeros(d);
    let mut dg = match setup.source {
        DifferenceSource::Harvested => gdiff_at(&st.x, &dx),
        DifferenceSource::Constant(c) => forced(0, c),
    };
    let mut dy = dg.clone();
    let mut scaled_gdiff = dg.lp_norm(1) / (2.0 * setup.envelope.tracking_at(s, 0));
    let mut diff_x = vec![0.0];
    let mut diff_y = vec![dy.lp_norm(1)];
    for k in 0..t_max {
        let alpha = s.alpha_at(k);
        if harvested {
            step_algorithm2(&mut st, w, s, setup.noise, setup.problem)?;
        }
        let dx_next = &dx * (1.0 - s.gamma1.eval(k) * rii) - &dy * s.lambda.eval(k);
        let dg_next = match setup.source {
            DifferenceSource::Harvested => gdiff_at(&st.x, &dx_next),
            DifferenceSource::Constant(c) => forced(k + 1, c),
        };
        scaled_gdiff = scaled_gdiff.max(dg_next.lp_norm(1) / (2.0 * setup.envelope.tracking_at(s, k + 1)));
        dy = &dy * (1.0 - alpha - s.gamma2.eval(k) * cii) + &dg_next - &dg * (1.0 - alpha);
        dx = dx_next;
        dg = dg_next;
        diff_x.push(dx.lp_norm(1));
        diff_y.push(dy.lp_norm(1));
    }
    let c = match setup.source {
        DifferenceSource::Harvested => scaled_gdiff,
        DifferenceSource::Constant(c) => c,
    };
    let ledger = PrivacyLedger::alg2(s, w.min_diag_r, w.min_diag_c, c, setup.envelope, t_max)?;
    let ys = ledger.varsigma_y.as_ref().expect("tracking ledger has ς_y");
    let ratios = (0..=t_max)
        .map(|k| ratio(diff_x[k], 2.0 * c * ledger.varsigma[k]).max(ratio(diff_y[k], 2.0 * c * ys[k])))
        .collect();
    Ok(CoupledTrace {
        family: Family::GradientTracking,
        diff_x,
        diff_y: Some(diff_y),
        gradient_bound: c,
        ledger,
        ratios,
    })
}

/// Largest observed `‖∇f_i(x_i^k)‖₁` along a trajectory, a data-driven
/// stand-in for a global gradient bound.
pub fn max_gradient_l1(problem: &QuadraticEstimationProblem, x: &DMatrix<f64>) -> f64 {
    gradients(problem, x)
        .row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_consensus_weights, build_push_pull_weights, DirectedGraph};
    use crate::noise::{LaplaceNoiseSource, ZeroNoise};
    use crate::solvers::random_initial;
    use approx::assert_relative_eq;

    fn dec(a: f64, b: f64, p: f64) -> PowerSchedule {
        PowerSchedule::decaying(a, b, p).unwrap()
    }

    fn static_set(nu: PowerSchedule) -> StaticScheduleSet {
        StaticScheduleSet {
            lambda: dec(0.02, 0.1, 1.0),
            gamma: dec(1.0, 0.1, 0.9),
            nu: Some(nu),
        }
    }

    fn tracking_set() -> TrackingScheduleSet {
        TrackingScheduleSet {
            lambda: dec(0.02, 0.1, 1.0),
            alpha: Some(dec(0.02, 0.1, 1.0)),
            gamma1: dec(1.0, 0.1, 0.9),
            gamma2: dec(1.0, 0.1, 0.7),
            nu: Some(PowerSchedule::growing(1.0, 0.1, 0.1).unwrap()),
        }
    }

    fn growing_nu() -> PowerSchedule {
        PowerSchedule::growing(1.0, 0.1, 0.3).unwrap()
    }

    /// Product-sum form evaluated term by term.
    fn closed_alg1(s: &StaticScheduleSet, wbar: f64, k: usize) -> f64 {
        let mut total = s.lambda.eval(k - 1);
        for p in 1..k {
            let prod: f64 = (p..k).map(|q| 1.0 - wbar * s.gamma.eval(q)).product();
            total += prod * s.lambda.eval(p - 1);
        }
        total
    }

    #[test]
    fn alg1_series_examples() {
        let s = static_set(growing_nu());
        let wbar = 0.6;
        let v = sensitivity_series_alg1(&s, wbar, Envelope::Constant, 50).unwrap();
        assert_eq!(v[1], 0.02);
        let two = (1.0 - wbar * s.gamma.eval(1)) * s.lambda.eval(0) + s.lambda.eval(1);
        assert_relative_eq!(v[2], two, max_relative = 1e-15);
        for (k, &vk) in v.iter().enumerate().skip(1) {
            assert_relative_eq!(vk, closed_alg1(&s, wbar, k), max_relative = 1e-12);
        }
    }

    #[test]
    fn alg1_range_error() {
        let s = StaticScheduleSet {
            gamma: PowerSchedule::constant(2.0).unwrap(),
            ..static_set(growing_nu())
        };
        assert!(matches!(
            sensitivity_series_alg1(&s, 0.6, Envelope::Constant, 10),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn alg2_series_examples() {
        let s = tracking_set();
        let (xs, ys) = sensitivity_series_alg2(&s, 0.3, 0.3, Envelope::Constant, 100_000).unwrap();
        assert_relative_eq!(ys[1], 1.98, max_relative = 1e-15);
        assert_relative_eq!(xs[1], 0.02, max_relative = 1e-15);
        assert!(xs.iter().chain(&ys).all(|&v| v >= 0.0 && v.is_finite()));
        // bounded: settles near (2 − α)/(α + C̄γ₂)
        let k = 100_000;
        let settle = (2.0 - s.alpha_at(k)) / (s.alpha_at(k) + 0.3 * s.gamma2.eval(k));
        assert!(ys[k] < 1.1 * settle, "{} vs {settle}", ys[k]);
    }

    #[test]
    fn budget_single_term_and_homogeneity() {
        let s = static_set(growing_nu());
        let ledger = PrivacyLedger::alg1(&s, 0.6, 1.5, Envelope::Constant, 1).unwrap();
        let b = ledger.epsilon_bound().unwrap();
        assert_relative_eq!(b.total(), 1.5 * 0.02 / s.nu.unwrap().eval(1), max_relative = 1e-15);

        let l1 = PrivacyLedger::alg1(&s, 0.6, 1.0, Envelope::Constant, 500).unwrap();
        let l3 = PrivacyLedger::alg1(&s, 0.6, 3.0, Envelope::Constant, 500).unwrap();
        let (b1, b3) = (l1.epsilon_bound().unwrap(), l3.epsilon_bound().unwrap());
        assert_relative_eq!(b3.total(), 3.0 * b1.total(), max_relative = 1e-14);
        assert!(b1.partials.windows(2).all(|w| w[1] >= w[0]));

        // dividing ν by 4 multiplies every term by exactly 4
        let quarter = StaticScheduleSet {
            nu: Some(growing_nu().scaled(0.25).unwrap()),
            ..s
        };
        let lq = PrivacyLedger::alg1(&quarter, 0.6, 1.0, Envelope::Constant, 500).unwrap();
        let bq = lq.epsilon_bound().unwrap();
        for k in 1..=500 {
            assert_relative_eq!(bq.per_term[k], 4.0 * b1.per_term[k], max_relative = 1e-14);
        }
    }

    #[test]
    fn constant_noise_grows_and_flags_infinite() {
        let s = static_set(PowerSchedule::constant(1.0).unwrap());
        let ledger = PrivacyLedger::alg1(&s, 0.6, 1.0, Envelope::Constant, 100_000).unwrap();
        let b = ledger.epsilon_bound().unwrap();
        assert!(b.at(100_000) > 1.2 * b.at(10_000));
        assert_eq!(ledger.budget_tail_estimate(&b, 100_000), None);
    }

    #[test]
    fn geometric_budget_is_finite() {
        let s = StaticScheduleSet {
            lambda: PowerSchedule::geometric(0.02, 0.95).unwrap(),
            gamma: PowerSchedule::constant(1.0).unwrap(),
            nu: Some(PowerSchedule::geometric(1.0, 0.98).unwrap()),
        };
        let ledger = PrivacyLedger::alg1(&s, 0.6, 1.0, Envelope::Constant, 2_000).unwrap();
        let b = ledger.epsilon_bound().unwrap();
        let tail = ledger.budget_tail_estimate(&b, 1_000).unwrap();
        let observed = b.at(2_000) - b.at(1_000);
        assert!(tail >= observed && tail < 1e-3 * b.at(1_000));
    }

    #[test]
    fn decaying_envelope_tail_covers_observed() {
        let s = static_set(growing_nu());
        let ledger = PrivacyLedger::alg1(&s, 0.6, 1.0, Envelope::Decaying, 100_000).unwrap();
        let b = ledger.epsilon_bound().unwrap();
        let tail = ledger.budget_tail_estimate(&b, 10_000).unwrap();
        assert!(tail >= b.at(100_000) - b.at(10_000));
    }

    fn ring5() -> DirectedGraph {
        DirectedGraph::from_links(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (0, 2), (3, 1)]).unwrap()
    }

    #[test]
    fn identical_problems_have_no_difference() {
        let p = QuadraticEstimationProblem::random_instance(1, 5, 3, 2, 0.01, 1.0).unwrap();
        let adj = p.adjacent_variant(2, 0.5, 0.0).unwrap();
        let w = build_consensus_weights(&ring5(), 0.3).unwrap();
        let noise = LaplaceNoiseSource::new(growing_nu(), 4);
        let setup = CoupledSetup {
            problem: &p,
            adjacent: &adj,
            coupling: Coupling::Consensus(&w),
            schedules: Schedules::Static(static_set(growing_nu())),
            noise: &noise,
            x0: random_initial(5, 2, 10.0, 1),
            iterations: 200,
            source: DifferenceSource::Harvested,
            envelope: Envelope::Constant,
        };
        let t = coupled_difference_trace(&setup).unwrap();
        assert!(t.diff_x.iter().all(|&v| v == 0.0));
        assert!(t.bound_holds());
    }

    #[test]
    fn constant_forcing_meets_bound_static() {
        let p = QuadraticEstimationProblem::random_instance(1, 5, 3, 2, 0.01, 1.0).unwrap();
        let w = build_consensus_weights(&ring5(), 0.3).unwrap();
        // agent 4 has the smallest |w_ii|, so the bound is attained
        let adj = p.adjacent_variant(4, 0.5, 1.0).unwrap();
        let setup = CoupledSetup {
            problem: &p,
            adjacent: &adj,
            coupling: Coupling::Consensus(&w),
            schedules: Schedules::Static(static_set(growing_nu())),
            noise: &ZeroNoise,
            x0: random_initial(5, 2, 1.0, 1),
            iterations: 2_000,
            source: DifferenceSource::Constant(2.5),
            envelope: Envelope::Constant,
        };
        let t = coupled_difference_trace(&setup).unwrap();
        assert!(t.bound_holds());
        assert_relative_eq!(t.max_ratio(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn constant_forcing_meets_bound_tracking() {
        let p = QuadraticEstimationProblem::random_instance(1, 5, 3, 2, 0.01, 1.0).unwrap();
        let w = build_push_pull_weights(&ring5(), &ring5(), 0.3).unwrap();
        let adj = p.adjacent_variant(0, 0.5, 1.0).unwrap();
        for envelope in [Envelope::Constant, Envelope::Decaying] {
            let setup = CoupledSetup {
                problem: &p,
                adjacent: &adj,
                coupling: Coupling::PushPull(&w),
                schedules: Schedules::Tracking(tracking_set()),
                noise: &ZeroNoise,
                x0: random_initial(5, 2, 1.0, 1),
                iterations: 2_000,
                source: DifferenceSource::Constant(1.0),
                envelope,
            };
            let t = coupled_difference_trace(&setup).unwrap();
            assert!(t.bound_holds(), "{envelope:?}: {:?}", t.first_violation());
        }
    }

    #[test]
    fn harvested_bound_holds_tracking() {
        let p = QuadraticEstimationProblem::random_instance(2, 5, 3, 2, 0.01, 1.0).unwrap();
        let w = build_push_pull_weights(&ring5(), &ring5(), 0.3).unwrap();
        let adj = p.adjacent_variant(1, 0.2, 2.0).unwrap();
        let noise = LaplaceNoiseSource::new(PowerSchedule::growing(1.0, 0.1, 0.1).unwrap(), 8);
        let setup = CoupledSetup {
            problem: &p,
            adjacent: &adj,
            coupling: Coupling::PushPull(&w),
            schedules: Schedules::Tracking(tracking_set()),
            noise: &noise,
            x0: random_initial(5, 2, 5.0, 3),
            iterations: 2_000,
            source: DifferenceSource::Harvested,
            envelope: Envelope::Constant,
        };
        let t = coupled_difference_trace(&setup).unwrap();
        assert!(t.gradient_bound > 0.0);
        assert!(t.bound_holds(), "{:?} {}", t.first_violation(), t.max_ratio());
    }
}
