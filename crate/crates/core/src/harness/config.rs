//! TOML experiment configuration.
//!
//! ```toml
//! [problem]
//! seed = 1
//! m = 5
//! s = 3
//! d = 2
//!
//! [graph]
//! edges = [[0, 1], [1, 2], [2, 0]]   # sender, receiver
//! edge_weight = 0.3
//!
//! [schedules.lambda]
//! form = "decaying"
//! a = 0.02
//! b = 0.1
//! p = 1.0
//!
//! [run]
//! variant = "alg1"
//! iterations = 10000
//! ```
//!
//! Relative paths (`problem.csv`, `run.output`) resolve against the
//! directory holding the config file.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objectives::DEFAULT_REGULARIZATION;
use crate::privacy::Envelope;
use crate::schedules::PowerSchedule;
use crate::solvers::{Variant, DEFAULT_STRIDE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub graph: GraphSpec,
    pub schedules: ScheduleSpec,
    #[serde(default)]
    pub noise: NoiseSpec,
    #[serde(default)]
    pub pdop: PdopSpec,
    pub run: RunSpec,
    #[serde(default)]
    pub privacy: PrivacySpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSpec {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::m")]
    pub m: usize,
    #[serde(default = "defaults::s")]
    pub s: usize,
    #[serde(default = "defaults::d")]
    pub d: usize,
    #[serde(default = "defaults::regularization")]
    pub regularization: f64,
    #[serde(default = "defaults::one")]
    pub noise_std: f64,
    /// Reads `(M, z)` from CSV instead of sampling; `m`, `s`, `d` then come from the file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    /// ℓ₁ clipping level for local gradients; off when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradient_clip: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphSpec {
    /// `[sender, receiver]` links.
    pub edges: Vec<[usize; 2]>,
    /// Links of the pushing graph; defaults to `edges`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edges_c: Option<Vec<[usize; 2]>>,
    #[serde(default = "defaults::edge_weight")]
    pub edge_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    pub lambda: PowerSchedule,
    /// Coupling of the static-consensus family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<PowerSchedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma1: Option<PowerSchedule>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma2: Option<PowerSchedule>,
    /// Tracker forgetting factor; absent means `α ≡ 0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<PowerSchedule>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    #[serde(default = "defaults::yes")]
    pub enabled: bool,
    /// Base seed for per-run noise and initial points.
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<PowerSchedule>,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            enabled: true,
            seed: 0,
            nu: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdopSpec {
    #[serde(default = "defaults::pdop_lambda")]
    pub lambda: PowerSchedule,
    #[serde(default = "defaults::pdop_nu")]
    pub nu: PowerSchedule,
    /// Rescale `nu` so the baseline's budget at the horizon equals the
    /// main algorithm's.
    #[serde(default = "defaults::yes")]
    pub match_budget: bool,
}

impl Default for PdopSpec {
    fn default() -> Self {
        Self {
            lambda: defaults::pdop_lambda(),
            nu: defaults::pdop_nu(),
            match_budget: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub variant: Variant,
    pub iterations: usize,
    #[serde(default = "defaults::runs")]
    pub monte_carlo: usize,
    #[serde(default = "defaults::stride")]
    pub stride: usize,
    /// Standard deviation of the initial iterates.
    #[serde(default = "defaults::init_radius")]
    pub init_radius: f64,
    #[serde(default = "defaults::output")]
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PrivacySpec {
    /// Gradient-difference bound `C`; harvested from a coupled run when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gradient_bound: Option<f64>,
    #[serde(default)]
    pub envelope: Envelope,
    /// Agent whose objective differs in the neighbouring problem.
    #[serde(default)]
    pub adjacent_agent: usize,
    #[serde(default = "defaults::adjacent_radius")]
    pub adjacent_radius: f64,
    #[serde(default = "defaults::one")]
    pub adjacent_strength: f64,
}

impl Default for PrivacySpec {
    fn default() -> Self {
        Self {
            gradient_bound: None,
            envelope: Envelope::Constant,
            adjacent_agent: 0,
            adjacent_radius: defaults::adjacent_radius(),
            adjacent_strength: 1.0,
        }
    }
}

mod defaults {
    use super::*;

    pub fn m() -> usize {
        5
    }
    pub fn s() -> usize {
        3
    }
    pub fn d() -> usize {
        2
    }
    pub fn regularization() -> f64 {
        DEFAULT_REGULARIZATION
    }
    pub fn one() -> f64 {
        1.0
    }
    pub fn yes() -> bool {
        true
    }
    pub fn edge_weight() -> f64 {
        0.3
    }
    pub fn runs() -> usize {
        1
    }
    pub fn stride() -> usize {
        DEFAULT_STRIDE
    }
    pub fn init_radius() -> f64 {
        10.0
    }
    pub fn output() -> PathBuf {
        PathBuf::from("out")
    }
    pub fn adjacent_radius() -> f64 {
        0.5
    }
    pub fn pdop_lambda() -> PowerSchedule {
        PowerSchedule::Geometric { a: 0.02, r: 0.95 }
    }
    pub fn pdop_nu() -> PowerSchedule {
        PowerSchedule::Geometric { a: 1.0, r: 0.98 }
    }
}

impl ExperimentConfig {
    /// Parses TOML text; `origin` only labels errors and anchors relative paths.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut cfg: Self = toml::from_str(text).map_err(|e| Error::Config {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = origin.parent().unwrap_or(Path::new(""));
        if let Some(csv) = &cfg.problem.csv {
            cfg.problem.csv = Some(base.join(csv));
        }
        cfg.run.output = base.join(&cfg.run.output);
        cfg.check(origin)?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    fn check(&self, origin: &Path) -> Result<()> {
        let fail = |message: String| {
            Err(Error::Config {
                path: origin.to_path_buf(),
                message,
            })
        };
        if self.run.iterations == 0 {
            return fail("run.iterations must be positive".into());
        }
        if self.run.monte_carlo == 0 {
            return fail("run.monte_carlo must be positive".into());
        }
        if !(self.run.init_radius >= 0.0 && self.run.init_radius.is_finite()) {
            return fail("run.init_radius must be finite and ≥ 0".into());
        }
        if self.noise.enabled && self.noise.nu.is_none() {
            return fail("noise.enabled = true requires a [noise.nu] schedule".into());
        }
        let s = &self.schedules;
        let missing = |v: Variant| match v.family() {
            crate::solvers::Family::StaticConsensus => s.gamma.is_none() && v == Variant::Alg1,
            crate::solvers::Family::GradientTracking => {
                (s.gamma1.is_none() || s.gamma2.is_none()) && v == Variant::Alg2
            }
        };
        if missing(self.run.variant) {
            return fail(format!(
                "variant {} needs its coupling schedules (gamma or gamma1, gamma2)",
                self.run.variant
            ));
        }
        Ok(())
    }
}
