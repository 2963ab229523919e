//! Synchronous simulation of the two algorithm families and their baselines.
//!
//! Iterates are `m × d` matrices with one row per agent. Every message an
//! agent sends is obscured with one noise draw per iteration, and the same
//! obscured copy reaches all of its out-neighbours; the sender keeps its
//! clean value for its own update.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{ConsensusWeights, PushPullWeights};
use crate::noise::{NoiseModel, NoiseTag};
use crate::objectives::QuadraticEstimationProblem;
use crate::schedules::{PowerSchedule, StaticScheduleSet, TrackingScheduleSet};

/// Any coordinate beyond this magnitude aborts the run.
pub const DIVERGENCE_THRESHOLD: f64 = 1e12;
/// Default metric recording stride.
pub const DEFAULT_STRIDE: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Static consensus with decaying coupling.
    Alg1,
    /// Push-pull gradient tracking with decaying couplings.
    Alg2,
    /// Static consensus with constant coupling `γ ≡ 1`.
    Dgd,
    /// Gradient tracking with `γ₁ = γ₂ ≡ 1` and `α ≡ 0`.
    PushPull,
    /// `Dgd` with geometric stepsize and geometric noise.
    PdopAlg1,
    /// `PushPull` with geometric stepsize and geometric noise.
    PdopPushPull,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    StaticConsensus,
    GradientTracking,
}

impl Variant {
    pub const ALL: [Variant; 6] = [
        Variant::Alg1,
        Variant::Alg2,
        Variant::Dgd,
        Variant::PushPull,
        Variant::PdopAlg1,
        Variant::PdopPushPull,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Alg1 => "alg1",
            Variant::Alg2 => "alg2",
            Variant::Dgd => "dgd",
            Variant::PushPull => "push_pull",
            Variant::PdopAlg1 => "pdop_alg1",
            Variant::PdopPushPull => "pdop_push_pull",
        }
    }

    pub fn family(self) -> Family {
        match self {
            Variant::Alg1 | Variant::Dgd | Variant::PdopAlg1 => Family::StaticConsensus,
            _ => Family::GradientTracking,
        }
    }

    pub fn is_baseline(self) -> bool {
        !matches!(self, Variant::Alg1 | Variant::Alg2)
    }

    pub fn is_pdop(self) -> bool {
        matches!(self, Variant::PdopAlg1 | Variant::PdopPushPull)
    }

    /// Schedules this variant actually uses, derived from the configured ones.
    pub fn static_schedules(self, base: &StaticScheduleSet, pdop: Option<&PdopSchedules>) -> Result<StaticScheduleSet> {
        let one = PowerSchedule::Constant { a: 1.0 };
        match self {
            Variant::Alg1 => Ok(*base),
            Variant::Dgd => Ok(StaticScheduleSet { gamma: one, ..*base }),
            Variant::PdopAlg1 => {
                let p = pdop.ok_or_else(|| Error::Condition("pdop_alg1 needs pdop schedules".into()))?;
                Ok(StaticScheduleSet {
                    lambda: p.lambda,
                    gamma: one,
                    nu: base.nu.map(|_| p.nu),
                })
            }
            _ => Err(Error::Condition(format!("{self} is not a static-consensus variant"))),
        }
    }

    /// Schedules this variant actually uses, derived from the configured ones.
    pub fn tracking_schedules(
        self,
        base: &TrackingScheduleSet,
        pdop: Option<&PdopSchedules>,
    ) -> Result<TrackingScheduleSet> {
        let one = PowerSchedule::Constant { a: 1.0 };
        let push_pull = TrackingScheduleSet {
            alpha: None,
            gamma1: one,
            gamma2: one,
            ..*base
        };
        match self {
            Variant::Alg2 => Ok(*base),
            Variant::PushPull => Ok(push_pull),
            Variant::PdopPushPull => {
                let p = pdop.ok_or_else(|| Error::Condition("pdop_push_pull needs pdop schedules".into()))?;
                Ok(TrackingScheduleSet {
                    lambda: p.lambda,
                    nu: base.nu.map(|_| p.nu),
                    ..push_pull
                })
            }
            _ => Err(Error::Condition(format!("{self} is not a gradient-tracking variant"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Condition(format!("unknown variant `{s}`")))
    }
}

/// Geometric stepsize and noise used by the PDOP baselines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdopSchedules {
    pub lambda: PowerSchedule,
    pub nu: PowerSchedule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StaticConsensusState {
    pub x: DMatrix<f64>,
    pub k: usize,
}

impl StaticConsensusState {
    pub fn new(x0: DMatrix<f64>) -> Self {
        Self { x: x0, k: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackingState {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    /// `∇f_i(x_i^k)`, one row per agent.
    pub g_prev: DMatrix<f64>,
    pub k: usize,
}

impl TrackingState {
    /// Starts the trackers at the local gradients, `y⁰ = g⁰`.
    pub fn new(x0: DMatrix<f64>, problem: &QuadraticEstimationProblem) -> Self {
        let g = gradients(problem, &x0);
        Self {
            x: x0,
            y: g.clone(),
            g_prev: g,
            k: 0,
        }
    }
}

/// Row-wise local gradients `∇f_i(x_i)`.
pub fn gradients(problem: &QuadraticEstimationProblem, x: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, d) = x.shape();
    let mut g = DMatrix::zeros(m, d);
    let mut row = vec![0.0; d];
    let mut out = vec![0.0; d];
    for i in 0..m {
        row.iter_mut().enumerate().for_each(|(c, r)| *r = x[(i, c)]);
        problem.local_gradient_into(i, &row, &mut out);
        out.iter().enumerate().for_each(|(c, v)| g[(i, c)] = *v);
    }
    g
}

/// Obscured copies `x_j + noise_j` of every agent's message.
fn transmitted(x: &DMatrix<f64>, noise: &dyn NoiseModel, tag: NoiseTag, k: usize) -> DMatrix<f64> {
    let (m, d) = x.shape();
    let mut sent = x.clone();
    let mut buf = vec![0.0; d];
    for j in 0..m {
        noise.draw(j, tag, k, &mut buf);
        buf.iter().enumerate().for_each(|(c, z)| sent[(j, c)] += z);
    }
    sent
}

fn check_bounded(x: &DMatrix<f64>, variant: &str, k: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite() && v.abs() <= DIVERGENCE_THRESHOLD) {
        Ok(())
    } else {
        Err(Error::Divergence {
            variant: variant.to_string(),
            k,
        })
    }
}

/// One round of the static-consensus update
/// `x_i ← x_i + γ Σ_j w_ij (x_j + ζ_j − x_i) − λ ∇f_i(x_i)`.
pub fn step_algorithm1(
    state: &mut StaticConsensusState,
    weights: &ConsensusWeights,
    schedules: &StaticScheduleSet,
    noise: &dyn NoiseModel,
    problem: &QuadraticEstimationProblem,
) -> Result<()> {
    let k = state.k;
    let (m, d) = state.x.shape();
    let lam = schedules.lambda.eval(k);
    let gam = schedules.gamma.eval(k);
    let sent = transmitted(&state.x, noise, NoiseTag::State, k);
    let grad = gradients(problem, &state.x);
    let mut next = DMatrix::zeros(m, d);
    for i in 0..m {
        for c in 0..d {
            let xi = state.x[(i, c)];
            let mix: f64 = (0..m)
                .filter(|&j| j != i && weights.w[(i, j)] != 0.0)
                .map(|j| weights.w[(i, j)] * (sent[(j, c)] - xi))
                .sum();
            next[(i, c)] = xi + gam * mix - lam * grad[(i, c)];
        }
    }
    check_bounded(&next, "alg1", k + 1)?;
    state.x = next;
    state.k += 1;
    Ok(())
}

/// One round of push-pull gradient tracking: noise draws, `x` update,
/// fresh gradients at the new `x`, then the tracker update.
pub fn step_algorithm2(
    state: &mut TrackingState,
    weights: &PushPullWeights,
    schedules: &TrackingScheduleSet,
    noise: &dyn NoiseModel,
    problem: &QuadraticEstimationProblem,
) -> Result<()> {
    let k = state.k;
    let (m, d) = state.x.shape();
    let lam = schedules.lambda.eval(k);
    let alpha = schedules.alpha_at(k);
    let g1 = schedules.gamma1.eval(k);
    let g2 = schedules.gamma2.eval(k);
    let (r, cm) = (&weights.r, &weights.c);

    let sent_x = transmitted(&state.x, noise, NoiseTag::State, k);
    let sent_y = transmitted(&state.y, noise, NoiseTag::Tracker, k);

    let mut x_next = DMatrix::zeros(m, d);
    for i in 0..m {
        for c in 0..d {
            let pulled: f64 = (0..m)
                .filter(|&j| j != i && r[(i, j)] != 0.0)
                .map(|j| r[(i, j)] * sent_x[(j, c)])
                .sum();
            x_next[(i, c)] = (1.0 + g1 * r[(i, i)]) * state.x[(i, c)] + g1 * pulled - lam * state.y[(i, c)];
        }
    }
    check_bounded(&x_next, "alg2", k + 1)?;
    let g_next = gradients(problem, &x_next);

    let mut y_next = DMatrix::zeros(m, d);
    for i in 0..m {
        for c in 0..d {
            let pushed: f64 = (0..m)
                .filter(|&j| j != i && cm[(i, j)] != 0.0)
                .map(|j| cm[(i, j)] * sent_y[(j, c)])
                .sum();
            y_next[(i, c)] = (1.0 - alpha + g2 * cm[(i, i)]) * state.y[(i, c)] + g2 * pushed + g_next[(i, c)]
                - (1.0 - alpha) * state.g_prev[(i, c)];
        }
    }
    check_bounded(&y_next, "alg2", k + 1)?;
    state.x = x_next;
    state.y = y_next;
    state.g_prev = g_next;
    state.k += 1;
    Ok(())
}

/// `(1/m) Σ_i w_i x_i` for weights summing to `m`.
pub fn weighted_mean(x: &DMatrix<f64>, weights: Option<&DVector<f64>>) -> DVector<f64> {
    let (m, d) = x.shape();
    DVector::from_fn(d, |c, _| {
        (0..m).map(|i| weights.map_or(1.0, |w| w[i]) * x[(i, c)]).sum::<f64>() / m as f64
    })
}

/// `Σ_i ‖x_i − x̄‖²`.
pub fn consensus_error(x: &DMatrix<f64>, mean: &DVector<f64>) -> f64 {
    x.row_iter()
        .map(|row| row.iter().zip(mean.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
        .sum()
}

/// `Σ_i ‖y_i − v_i ȳ‖²` with `ȳ` the plain mean.
pub fn tracking_error(y: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    let ybar = weighted_mean(y, None);
    y.row_iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .zip(ybar.iter())
                .map(|(a, b)| (a - v[i] * b).powi(2))
                .sum::<f64>()
        })
        .sum()
}

/// Metrics recorded at one iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Record {
    pub k: usize,
    pub consensus: f64,
    pub gap: f64,
    pub distance: f64,
    /// Tracker spread; NaN for the static-consensus family.
    pub tracking: f64,
    /// Cumulative privacy bound up to `k`; NaN until attached.
    pub epsilon: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub variant: Variant,
    pub stride: usize,
    pub iterations: usize,
    pub records: Vec<Record>,
    /// Iteration at which the run was aborted.
    pub diverged_at: Option<usize>,
}

impl Trace {
    pub fn last(&self) -> &Record {
        self.records.last().expect("a trace always holds the k = 0 record")
    }

    pub fn first(&self) -> &Record {
        &self.records[0]
    }

    pub fn divergence(&self) -> Option<Error> {
        self.diverged_at.map(|k| Error::Divergence {
            variant: self.variant.name().to_string(),
            k,
        })
    }

    /// Final gap, infinite when the run diverged.
    pub fn final_gap(&self) -> f64 {
        if self.diverged_at.is_some() {
            f64::INFINITY
        } else {
            self.last().gap
        }
    }

    /// Fills each record's `epsilon` from partial sums indexed by `k`.
    pub fn attach_budget(&mut self, partials: &[f64]) {
        for r in &mut self.records {
            r.epsilon = partials.get(r.k).copied().unwrap_or(f64::NAN);
        }
    }
}

/// Coupling matrices for one family.
#[derive(Debug, Clone, Copy)]
pub enum Coupling<'a> {
    Consensus(&'a ConsensusWeights),
    PushPull(&'a PushPullWeights),
}

/// Schedules already specialised to a variant.
#[derive(Debug, Clone, Copy)]
pub enum Schedules {
    Static(StaticScheduleSet),
    Tracking(TrackingScheduleSet),
}

pub struct RunSetup<'a> {
    pub problem: &'a QuadraticEstimationProblem,
    pub coupling: Coupling<'a>,
    pub schedules: Schedules,
    pub noise: &'a dyn NoiseModel,
    pub iterations: usize,
    pub stride: usize,
    pub x0: DMatrix<f64>,
}

/// `m × d` i.i.d. standard normal entries scaled by `radius`.
pub fn random_initial(m: usize, d: usize, radius: f64, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    DMatrix::from_fn(m, d, |_, _| {
        let z: f64 = StandardNormal.sample(&mut rng);
        radius * z
    })
}

fn should_record(k: usize, stride: usize, last: usize) -> bool {
    k.is_multiple_of(stride) || k == last
}

/// Runs `variant` for `iterations` rounds, recording metrics every `stride`
/// rounds and at the final round. A diverging run returns the trace up to
/// the last finite iterate with `diverged_at` set.
pub fn run(variant: Variant, setup: &RunSetup<'_>) -> Result<Trace> {
    let problem = setup.problem;
    let stride = setup.stride.max(1);
    if setup.x0.shape() != (problem.m(), problem.d()) {
        return Err(Error::Structure(format!(
            "initial point is {:?}, expected ({}, {})",
            setup.x0.shape(),
            problem.m(),
            problem.d()
        )));
    }
    let theta_star = problem.theta_star();
    let record = |k: usize, x: &DMatrix<f64>, u: Option<&DVector<f64>>, tracking: f64| {
        let xbar = weighted_mean(x, u);
        Record {
            k,
            consensus: consensus_error(x, &xbar),
            gap: problem.gap(&xbar),
            distance: (&xbar - theta_star).norm(),
            tracking,
            epsilon: f64::NAN,
        }
    };
    let mut trace = Trace {
        variant,
        stride,
        iterations: setup.iterations,
        records: Vec::with_capacity(setup.iterations / stride + 2),
        diverged_at: None,
    };
    match (setup.coupling, &setup.schedules) {
        (Coupling::Consensus(w), Schedules::Static(s)) => {
            if w.m() != problem.m() {
                return Err(Error::Structure("coupling and problem disagree on m".into()));
            }
            let mut st = StaticConsensusState::new(setup.x0.clone());
            trace.records.push(record(0, &st.x, None, f64::NAN));
            while st.k < setup.iterations {
                if step_algorithm1(&mut st, w, s, setup.noise, problem).is_err() {
                    trace.diverged_at = Some(st.k + 1);
                    break;
                }
                if should_record(st.k, stride, setup.iterations) {
                    trace.records.push(record(st.k, &st.x, None, f64::NAN));
                }
            }
        }
        (Coupling::PushPull(w), Schedules::Tracking(s)) => {
            if w.m() != problem.m() {
                return Err(Error::Structure("coupling and problem disagree on m".into()));
            }
            let mut st = TrackingState::new(setup.x0.clone(), problem);
            trace
                .records
                .push(record(0, &st.x, Some(&w.u), tracking_error(&st.y, &w.v)));
            while st.k < setup.iterations {
                if step_algorithm2(&mut st, w, s, setup.noise, problem).is_err() {
                    trace.diverged_at = Some(st.k + 1);
                    break;
                }
                if should_record(st.k, stride, setup.iterations) {
                    trace
                        .records
                        .push(record(st.k, &st.x, Some(&w.u), tracking_error(&st.y, &w.v)));
                }
            }
        }
        _ => {
            return Err(Error::Structure(
                "coupling and schedules belong to different families".into(),
            ))
        }
    }
    Ok(trace)
}
