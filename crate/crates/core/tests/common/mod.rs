//! Fixtures and independent oracles shared by the integration tests.
#![allow(dead_code)]

use nalgebra::DMatrix;
use privopt::graph::{
    build_consensus_weights, build_push_pull_weights, ConsensusWeights, DirectedGraph, PushPullWeights,
};
use privopt::noise::{LaplaceNoiseSource, NoiseTag};
use privopt::objectives::QuadraticEstimationProblem;
use privopt::schedules::{PowerSchedule, StaticScheduleSet, TrackingScheduleSet};
use privopt::solvers::gradients;

/// Five agents, ring plus two chords, as `(sender, receiver)` links.
pub const LINKS: [(usize, usize); 7] = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (0, 2), (3, 1)];
pub const EDGE_WEIGHT: f64 = 0.3;

pub fn dec(a: f64, b: f64, p: f64) -> PowerSchedule {
    PowerSchedule::decaying(a, b, p).unwrap()
}

pub fn grow(a: f64, b: f64, p: f64) -> PowerSchedule {
    PowerSchedule::growing(a, b, p).unwrap()
}

pub fn topology() -> DirectedGraph {
    DirectedGraph::from_links(5, &LINKS).unwrap()
}

pub fn consensus() -> ConsensusWeights {
    build_consensus_weights(&topology(), EDGE_WEIGHT).unwrap()
}

pub fn push_pull() -> PushPullWeights {
    build_push_pull_weights(&topology(), &topology(), EDGE_WEIGHT).unwrap()
}

pub fn problem() -> QuadraticEstimationProblem {
    QuadraticEstimationProblem::random_instance(1, 5, 3, 2, 0.01, 1.0).unwrap()
}

/// Reference static-consensus schedules.
pub fn static_reference() -> StaticScheduleSet {
    StaticScheduleSet {
        lambda: dec(0.02, 0.1, 1.0),
        gamma: dec(1.0, 0.1, 0.9),
        nu: Some(grow(1.0, 0.1, 0.3)),
    }
}

/// Reference gradient-tracking schedules.
pub fn tracking_reference() -> TrackingScheduleSet {
    TrackingScheduleSet {
        lambda: dec(0.02, 0.1, 1.0),
        alpha: Some(dec(0.02, 0.1, 1.0)),
        gamma1: dec(1.0, 0.1, 0.9),
        gamma2: dec(1.0, 0.1, 0.7),
        nu: Some(grow(1.0, 0.1, 0.1)),
    }
}

/// `Σ_{p=1}^{k-1} (Π_{q=p}^{k-1} (1 − w̄γ^q)) λ^{p-1} + λ^{k-1}` evaluated term by term.
pub fn closed_form_static(s: &StaticScheduleSet, w_bar: f64, k: usize) -> f64 {
    let mut total = s.lambda.eval(k - 1);
    for p in 1..k {
        let prod: f64 = (p..k).map(|q| 1.0 - w_bar * s.gamma.eval(q)).product();
        total += prod * s.lambda.eval(p - 1);
    }
    total
}

/// `Σ_{p=1}^{k-1} (Π_{q=p}^{k-1} (1 − α^q − C̄γ₂^q)) (2 − α^{p-1}) + 2 − α^{k-1}`.
pub fn closed_form_tracker(s: &TrackingScheduleSet, c_bar: f64, k: usize) -> f64 {
    let mut total = 2.0 - s.alpha_at(k - 1);
    for p in 1..k {
        let prod: f64 = (p..k).map(|q| 1.0 - s.alpha_at(q) - c_bar * s.gamma2.eval(q)).product();
        total += prod * (2.0 - s.alpha_at(p - 1));
    }
    total
}

/// `Σ_{p=1}^{k-1} (Π_{q=p}^{k-1} (1 − R̄γ₁^q)) λ^{p-1} ς_y^{p-1} + λ^{k-1} ς_y^{k-1}`
/// with `ς_y⁰ = 1`.
pub fn closed_form_state(s: &TrackingScheduleSet, r_bar: f64, c_bar: f64, k: usize) -> f64 {
    let y = |j: usize| if j == 0 { 1.0 } else { closed_form_tracker(s, c_bar, j) };
    let mut total = s.lambda.eval(k - 1) * y(k - 1);
    for p in 1..k {
        let prod: f64 = (p..k).map(|q| 1.0 - r_bar * s.gamma1.eval(q)).product();
        total += prod * s.lambda.eval(p - 1) * y(p - 1);
    }
    total
}

/// Matrix-form static-consensus step `X + γ(W(X + Z) − diag(W)Z) − λG`.
pub fn matrix_step_static(
    x: &DMatrix<f64>,
    w: &DMatrix<f64>,
    s: &StaticScheduleSet,
    noise: &LaplaceNoiseSource,
    problem: &QuadraticEstimationProblem,
    k: usize,
) -> DMatrix<f64> {
    let (m, d) = x.shape();
    let z = DMatrix::from_fn(m, d, |i, c| noise.sample(i, NoiseTag::State, k, d)[c]);
    let diag = DMatrix::from_diagonal(&w.diagonal());
    x + (w * (x + &z) - diag * &z) * s.gamma.eval(k) - gradients(problem, x) * s.lambda.eval(k)
}
