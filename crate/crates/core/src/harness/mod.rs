//! Seeded Monte Carlo experiments driven by a TOML config.
//!
//! Each run derives its noise seed and initial point from the base seed and
//! the run index alone, so every variant in a comparison sees the same
//! uniform draws and the same starting points. Runs execute in parallel and
//! are collected in index order.

pub mod aggregate;
pub mod config;
pub mod output;
pub mod plot;
pub mod rate;

use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::graph::{
    build_consensus_weights, build_push_pull_weights, validate_assumption2, validate_assumption4, ConsensusWeights,
    DirectedGraph, PushPullWeights,
};
use crate::noise::{LaplaceNoiseSource, NoiseModel, ZeroNoise};
use crate::objectives::QuadraticEstimationProblem;
use crate::privacy::{coupled_difference_trace, BudgetBreakdown, CoupledSetup, DifferenceSource, PrivacyLedger};
use crate::report::ConditionReport;
use crate::schedules::{validate_theorem1, validate_theorem3, PowerSchedule, StaticScheduleSet, TrackingScheduleSet};
use crate::solvers::{random_initial, run, Coupling, Family, PdopSchedules, RunSetup, Schedules, Trace, Variant};

pub use aggregate::AggregateResult;
pub use config::ExperimentConfig;

/// Seeds that fully determine one Monte Carlo run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSeeds {
    pub noise: u64,
    pub init: u64,
}

/// One finished (possibly diverged) run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub index: usize,
    pub seeds: RunSeeds,
    pub trace: Trace,
}

/// All runs of one variant plus the budget they share.
#[derive(Debug, Clone)]
pub struct MonteCarloOutcome {
    pub variant: Variant,
    pub runs: Vec<RunOutcome>,
    pub ledger: Option<PrivacyLedger>,
    pub budget: Option<BudgetBreakdown>,
}

impl MonteCarloOutcome {
    pub fn failures(&self) -> impl Iterator<Item = &RunOutcome> {
        self.runs.iter().filter(|r| r.trace.diverged_at.is_some())
    }

    pub fn completed(&self) -> impl Iterator<Item = &RunOutcome> {
        self.runs.iter().filter(|r| r.trace.diverged_at.is_none())
    }

    /// Final gaps of every run, `+∞` for diverged ones.
    pub fn final_gaps(&self) -> Vec<f64> {
        self.runs.iter().map(|r| r.trace.final_gap()).collect()
    }
}

/// A loaded config with its problem instance and graphs.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub config: ExperimentConfig,
    pub problem: QuadraticEstimationProblem,
    pub graph: DirectedGraph,
    pub graph_c: DirectedGraph,
}

fn links(edges: &[[usize; 2]]) -> Vec<(usize, usize)> {
    edges.iter().map(|&[from, to]| (from, to)).collect()
}

impl Experiment {
    pub fn load(path: &Path) -> Result<Self> {
        Self::new(ExperimentConfig::load(path)?)
    }

    pub fn new(config: ExperimentConfig) -> Result<Self> {
        let p = &config.problem;
        let mut problem = match &p.csv {
            Some(path) => QuadraticEstimationProblem::read_csv(path, p.regularization)?,
            None => QuadraticEstimationProblem::random_instance(p.seed, p.m, p.s, p.d, p.regularization, p.noise_std)?,
        };
        if let Some(c) = p.gradient_clip {
            problem = problem.with_gradient_clip(c)?;
        }
        let m = problem.m();
        let graph = DirectedGraph::from_links(m, &links(&config.graph.edges))?;
        let graph_c = match &config.graph.edges_c {
            Some(e) => DirectedGraph::from_links(m, &links(e))?,
            None => graph.clone(),
        };
        Ok(Self {
            config,
            problem,
            graph,
            graph_c,
        })
    }

    pub fn consensus_weights(&self) -> Result<ConsensusWeights> {
        build_consensus_weights(&self.graph, self.config.graph.edge_weight)
    }

    pub fn push_pull_weights(&self) -> Result<PushPullWeights> {
        build_push_pull_weights(&self.graph, &self.graph_c, self.config.graph.edge_weight)
    }

    fn nu(&self) -> Option<PowerSchedule> {
        self.config.noise.enabled.then_some(self.config.noise.nu).flatten()
    }

    fn missing(&self, what: &str, variant: Variant) -> Error {
        Error::Config {
            path: "<config>".into(),
            message: format!("variant {variant} needs schedules.{what}"),
        }
    }

    /// Configured static-consensus schedules; a missing `γ` is only allowed
    /// for baselines, which replace it anyway.
    pub fn base_static(&self, variant: Variant) -> Result<StaticScheduleSet> {
        let s = &self.config.schedules;
        let gamma = match s.gamma {
            Some(g) => g,
            None if variant.is_baseline() => PowerSchedule::Constant { a: 1.0 },
            None => return Err(self.missing("gamma", variant)),
        };
        Ok(StaticScheduleSet {
            lambda: s.lambda,
            gamma,
            nu: self.nu(),
        })
    }

    pub fn base_tracking(&self, variant: Variant) -> Result<TrackingScheduleSet> {
        let s = &self.config.schedules;
        let one = PowerSchedule::Constant { a: 1.0 };
        let pick = |g: Option<PowerSchedule>, name: &str| match g {
            Some(g) => Ok(g),
            None if variant.is_baseline() => Ok(one),
            None => Err(self.missing(name, variant)),
        };
        Ok(TrackingScheduleSet {
            lambda: s.lambda,
            alpha: s.alpha,
            gamma1: pick(s.gamma1, "gamma1")?,
            gamma2: pick(s.gamma2, "gamma2")?,
            nu: self.nu(),
        })
    }

    fn graph_conditions(&self, family: Family, report: &mut ConditionReport) {
        match family {
            Family::StaticConsensus => match self.consensus_weights() {
                Ok(w) => report.merge(validate_assumption2(&w.w)),
                Err(e) => record_failure(report, "consensus weights", e),
            },
            Family::GradientTracking => {
                report.merge(validate_assumption4(&self.graph, &self.graph_c));
                if let Err(e) = self.push_pull_weights() {
                    record_failure(report, "push-pull weights", e);
                }
            }
        }
    }

    /// Every graph, schedule and noise condition that applies to `variant`.
    pub fn validate(&self, variant: Variant) -> ConditionReport {
        let mut report = ConditionReport::new(format!("conditions for {variant}"));
        self.graph_conditions(variant.family(), &mut report);
        match self.schedules_for(variant, self.config.run.iterations) {
            Ok(Schedules::Static(s)) => report.merge(validate_theorem1(&s)),
            Ok(Schedules::Tracking(s)) => report.merge(validate_theorem3(&s)),
            Err(e) => record_failure(&mut report, "schedules", e),
        }
        report
    }

    /// Conditions a run must satisfy before starting. Baselines violate the
    /// schedule conditions by design, so only their graph conditions and
    /// resolvable schedules gate.
    pub fn gate(&self, variant: Variant) -> ConditionReport {
        if !variant.is_baseline() {
            return self.validate(variant);
        }
        let mut report = ConditionReport::new(format!("graph conditions for {variant}"));
        self.graph_conditions(variant.family(), &mut report);
        if let Err(e) = self.schedules_for(variant, self.config.run.iterations) {
            record_failure(&mut report, "schedules", e);
        }
        report
    }

    /// Seeds for run `index`, derived from the base noise seed.
    pub fn run_seeds(&self, index: usize) -> RunSeeds {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.noise.seed);
        rng.set_stream(index as u64);
        RunSeeds {
            noise: rng.next_u64(),
            init: rng.next_u64(),
        }
    }

    pub fn initial_point(&self, seeds: RunSeeds) -> nalgebra::DMatrix<f64> {
        random_initial(
            self.problem.m(),
            self.problem.d(),
            self.config.run.init_radius,
            seeds.init,
        )
    }

    /// Schedules `variant` runs with. PDOP noise is rescaled to match the
    /// main algorithm's budget at `horizon` when configured.
    pub fn schedules_for(&self, variant: Variant, horizon: usize) -> Result<Schedules> {
        let pdop = if variant.is_pdop() {
            Some(self.pdop_schedules(variant.family(), horizon)?)
        } else {
            None
        };
        match variant.family() {
            Family::StaticConsensus => Ok(Schedules::Static(
                variant.static_schedules(&self.base_static(variant)?, pdop.as_ref())?,
            )),
            Family::GradientTracking => Ok(Schedules::Tracking(
                variant.tracking_schedules(&self.base_tracking(variant)?, pdop.as_ref())?,
            )),
        }
    }

    fn primary(family: Family) -> Variant {
        match family {
            Family::StaticConsensus => Variant::Alg1,
            Family::GradientTracking => Variant::Alg2,
        }
    }

    /// Geometric baseline schedules, with `ν` scaled so that the baseline's
    /// ε at `horizon` equals the main algorithm's. ε is inversely
    /// proportional to a constant factor on `ν`, so one rescale is exact.
    pub fn pdop_schedules(&self, family: Family, horizon: usize) -> Result<PdopSchedules> {
        let spec = &self.config.pdop;
        let base = PdopSchedules {
            lambda: spec.lambda,
            nu: spec.nu,
        };
        if !spec.match_budget || self.nu().is_none() {
            return Ok(base);
        }
        let primary = Self::primary(family);
        let target = self.ledger_with(primary, horizon, None)?.1.at(horizon);
        let pdop_variant = match family {
            Family::StaticConsensus => Variant::PdopAlg1,
            Family::GradientTracking => Variant::PdopPushPull,
        };
        let unmatched = self.ledger_with(pdop_variant, horizon, Some(base))?.1.at(horizon);
        Ok(PdopSchedules {
            lambda: base.lambda,
            nu: base.nu.scaled(unmatched / target)?,
        })
    }

    /// Gradient-difference bound `C` for a family: the configured value, or
    /// the largest difference observed along a coupled run of the main
    /// algorithm over `horizon` iterations.
    pub fn gradient_bound(&self, family: Family, horizon: usize) -> Result<f64> {
        if let Some(c) = self.config.privacy.gradient_bound {
            return Ok(c);
        }
        let priv_spec = &self.config.privacy;
        let adjacent = self.problem.adjacent_variant(
            priv_spec.adjacent_agent,
            priv_spec.adjacent_radius,
            priv_spec.adjacent_strength,
        )?;
        let primary = Self::primary(family);
        let seeds = self.run_seeds(0);
        let (cw, pw);
        let (coupling, schedules) = match family {
            Family::StaticConsensus => {
                cw = self.consensus_weights()?;
                (Coupling::Consensus(&cw), Schedules::Static(self.base_static(primary)?))
            }
            Family::GradientTracking => {
                pw = self.push_pull_weights()?;
                (
                    Coupling::PushPull(&pw),
                    Schedules::Tracking(self.base_tracking(primary)?),
                )
            }
        };
        let noise = self.noise_model(&schedules, seeds.noise);
        let trace = coupled_difference_trace(&CoupledSetup {
            problem: &self.problem,
            adjacent: &adjacent,
            coupling,
            schedules,
            noise: noise.as_ref(),
            x0: self.initial_point(seeds),
            iterations: horizon,
            source: DifferenceSource::Harvested,
            envelope: priv_spec.envelope,
        })?;
        Ok(trace.gradient_bound)
    }

    /// Privacy ledger and budget of `variant` up to `horizon`; `None` without noise.
    pub fn ledger(&self, variant: Variant, horizon: usize) -> Result<Option<(PrivacyLedger, BudgetBreakdown)>> {
        if self.nu().is_none() {
            return Ok(None);
        }
        self.ledger_with(variant, horizon, None).map(Some)
    }

    fn ledger_with(
        &self,
        variant: Variant,
        horizon: usize,
        pdop: Option<PdopSchedules>,
    ) -> Result<(PrivacyLedger, BudgetBreakdown)> {
        let c = self.gradient_bound(variant.family(), horizon)?;
        let envelope = self.config.privacy.envelope;
        let ledger = match variant.family() {
            Family::StaticConsensus => {
                let s = match pdop {
                    Some(p) => variant.static_schedules(&self.base_static(variant)?, Some(&p))?,
                    None => match self.schedules_for(variant, horizon)? {
                        Schedules::Static(s) => s,
                        Schedules::Tracking(_) => unreachable!(),
                    },
                };
                let w = self.consensus_weights()?;
                PrivacyLedger::alg1(&s, w.min_diag_mag, c, envelope, horizon)?
            }
            Family::GradientTracking => {
                let s = match pdop {
                    Some(p) => variant.tracking_schedules(&self.base_tracking(variant)?, Some(&p))?,
                    None => match self.schedules_for(variant, horizon)? {
                        Schedules::Tracking(s) => s,
                        Schedules::Static(_) => unreachable!(),
                    },
                };
                let w = self.push_pull_weights()?;
                PrivacyLedger::alg2(&s, w.min_diag_r, w.min_diag_c, c, envelope, horizon)?
            }
        };
        let budget = ledger.epsilon_bound()?;
        Ok((ledger, budget))
    }

    fn noise_model(&self, schedules: &Schedules, seed: u64) -> Box<dyn NoiseModel> {
        let nu = match schedules {
            Schedules::Static(s) => s.nu,
            Schedules::Tracking(s) => s.nu,
        };
        match nu {
            Some(nu) => Box::new(LaplaceNoiseSource::new(nu, seed)),
            None => Box::new(ZeroNoise),
        }
    }

    /// Runs `runs` seeded repetitions of `variant` for `iterations` rounds.
    pub fn monte_carlo(&self, variant: Variant, runs: usize, iterations: usize) -> Result<MonteCarloOutcome> {
        let schedules = self.schedules_for(variant, iterations)?;
        let (cw, pw);
        let coupling = match variant.family() {
            Family::StaticConsensus => {
                cw = self.consensus_weights()?;
                Coupling::Consensus(&cw)
            }
            Family::GradientTracking => {
                pw = self.push_pull_weights()?;
                Coupling::PushPull(&pw)
            }
        };
        let (ledger, budget) = match self.ledger(variant, iterations)? {
            Some((l, b)) => (Some(l), Some(b)),
            None => (None, None),
        };
        let stride = self.config.run.stride;
        let results: Vec<Result<RunOutcome>> = (0..runs)
            .into_par_iter()
            .map(|index| {
                let seeds = self.run_seeds(index);
                let noise = self.noise_model(&schedules, seeds.noise);
                let setup = RunSetup {
                    problem: &self.problem,
                    coupling,
                    schedules,
                    noise: noise.as_ref(),
                    iterations,
                    stride,
                    x0: self.initial_point(seeds),
                };
                let mut trace = run(variant, &setup)?;
                if let Some(b) = &budget {
                    trace.attach_budget(&b.partials);
                }
                Ok(RunOutcome { index, seeds, trace })
            })
            .collect();
        Ok(MonteCarloOutcome {
            variant,
            runs: results.into_iter().collect::<Result<_>>()?,
            ledger,
            budget,
        })
    }
}

fn record_failure(report: &mut ConditionReport, name: &str, e: Error) {
    report.push(name, "constructible", f64::NAN, false);
    report.warn(format!("{name}: {e}"));
}
