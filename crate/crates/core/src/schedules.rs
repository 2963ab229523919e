//! Parameter sequences as symbolic power-law families.
//!
//! Every stepsize, attenuation and noise sequence used by the solvers is a
//! [`PowerSchedule`]. Because each family has a known asymptotic form
//! `k^q · r^k`, summability and limit conditions reduce to exponent
//! arithmetic: the p-series test for the polynomial part and the ratio test
//! for the geometric part. [`SeriesTerm`] carries products and quotients of
//! schedules so that conditions such as `Σ (λ^k)² / γ^k < ∞` are decided
//! symbolically while still being evaluable numerically.

use std::ops::{Div, Mul};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::ConditionReport;

/// Exponents closer than this to a decision boundary are treated as on it.
const EXPONENT_TOL: f64 = 1e-9;

/// A positive scalar sequence indexed by the iteration counter `k ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSchedule", into = "RawSchedule")]
pub enum PowerSchedule {
    /// `a / (1 + b·k^p)`
    Decaying { a: f64, b: f64, p: f64 },
    /// `a + b·k^p`
    Growing { a: f64, b: f64, p: f64 },
    /// `a·r^k` with `0 < r < 1`
    Geometric { a: f64, r: f64 },
    /// `a`
    Constant { a: f64 },
}

impl PowerSchedule {
    pub fn decaying(a: f64, b: f64, p: f64) -> Result<Self> {
        Self::Decaying { a, b, p }.validated()
    }

    pub fn growing(a: f64, b: f64, p: f64) -> Result<Self> {
        Self::Growing { a, b, p }.validated()
    }

    pub fn geometric(a: f64, r: f64) -> Result<Self> {
        Self::Geometric { a, r }.validated()
    }

    pub fn constant(a: f64) -> Result<Self> {
        Self::Constant { a }.validated()
    }

    fn validated(self) -> Result<Self> {
        let finite = |x: f64| x.is_finite();
        let (a, ok) = match self {
            Self::Decaying { a, b, p } | Self::Growing { a, b, p } => {
                (a, finite(b) && finite(p) && b >= 0.0 && p >= 0.0)
            }
            Self::Geometric { a, r } => (a, finite(r) && r > 0.0 && r < 1.0),
            Self::Constant { a } => (a, true),
        };
        if !(finite(a) && a > 0.0) {
            return Err(Error::Schedule(format!("{self:?}: a must be positive")));
        }
        if !ok {
            return Err(Error::Schedule(format!(
                "{self:?}: need b ≥ 0, p ≥ 0 (or 0 < r < 1 for geometric)"
            )));
        }
        Ok(self)
    }

    /// Exact value at iteration `k`.
    pub fn eval(&self, k: usize) -> f64 {
        let kf = k as f64;
        match *self {
            Self::Decaying { a, b, p } => a / (1.0 + b * kf.powf(p)),
            Self::Growing { a, b, p } => a + b * kf.powf(p),
            Self::Geometric { a, r } => a * r.powf(kf),
            Self::Constant { a } => a,
        }
    }

    /// Multiplies every value of the sequence by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        match *self {
            Self::Decaying { a, b, p } => Self::decaying(a * factor, b, p),
            Self::Growing { a, b, p } => Self::growing(a * factor, b * factor, p),
            Self::Geometric { a, r } => Self::geometric(a * factor, r),
            Self::Constant { a } => Self::constant(a * factor),
        }
    }

    /// True when the sequence does not vary with `k`.
    pub fn is_constant(&self) -> bool {
        match *self {
            Self::Decaying { b, p, .. } | Self::Growing { b, p, .. } => b == 0.0 || p == 0.0,
            Self::Geometric { .. } => false,
            Self::Constant { .. } => true,
        }
    }

    /// Asymptotic shape `k^power · exp(log_ratio·k)`.
    pub fn asymptotic(&self) -> Asymptotic {
        let varies = !self.is_constant();
        match *self {
            Self::Decaying { p, .. } if varies => Asymptotic::power(-p),
            Self::Growing { p, .. } if varies => Asymptotic::power(p),
            Self::Geometric { r, .. } => Asymptotic {
                power: 0.0,
                log_ratio: r.ln(),
            },
            _ => Asymptotic::power(0.0),
        }
    }

    /// Upper bound on `d ln s / d ln k` over `k ≥ t` (for `pow > 0`) scaled by `pow`.
    ///
    /// Used by the integral-test tail bound: for decreasing factors the local
    /// elasticity at `t` is the least steep value on `[t, ∞)`, for increasing
    /// factors the asymptotic exponent is the steepest.
    fn elasticity_bound(&self, t: f64, pow: f64) -> f64 {
        let (at_t, asymptote) = match *self {
            Self::Decaying { b, p, .. } => {
                let x = b * t.powf(p);
                (-p * x / (1.0 + x), -p)
            }
            Self::Growing { a, b, p } => {
                let x = b * t.powf(p);
                (p * x / (a + x), p)
            }
            Self::Geometric { .. } | Self::Constant { .. } => (0.0, 0.0),
        };
        // elasticity moves monotonically from at_t toward asymptote
        (pow * at_t).max(pow * asymptote)
    }

    pub fn term(&self) -> SeriesTerm {
        SeriesTerm {
            coeff: 1.0,
            factors: vec![(*self, 1.0)],
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RawSchedule {
    form: String,
    a: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    r: Option<f64>,
}

impl TryFrom<RawSchedule> for PowerSchedule {
    type Error = Error;

    fn try_from(raw: RawSchedule) -> Result<Self> {
        let need = |v: Option<f64>, key: &str| {
            v.ok_or_else(|| Error::Schedule(format!("form `{}` requires key `{key}`", raw.form)))
        };
        match raw.form.as_str() {
            "decaying" => Self::decaying(raw.a, need(raw.b, "b")?, need(raw.p, "p")?),
            "growing" => Self::growing(raw.a, need(raw.b, "b")?, need(raw.p, "p")?),
            "geometric" => Self::geometric(raw.a, need(raw.r, "r")?),
            "constant" => Self::constant(raw.a),
            other => Err(Error::Schedule(format!(
                "unknown form `{other}` (expected decaying, growing, geometric or constant)"
            ))),
        }
    }
}

impl From<PowerSchedule> for RawSchedule {
    fn from(s: PowerSchedule) -> Self {
        let raw = |form: &str, a, b, p, r| RawSchedule {
            form: form.to_string(),
            a,
            b,
            p,
            r,
        };
        match s {
            PowerSchedule::Decaying { a, b, p } => raw("decaying", a, Some(b), Some(p), None),
            PowerSchedule::Growing { a, b, p } => raw("growing", a, Some(b), Some(p), None),
            PowerSchedule::Geometric { a, r } => raw("geometric", a, None, None, Some(r)),
            PowerSchedule::Constant { a } => raw("constant", a, None, None, None),
        }
    }
}

/// Asymptotic shape of a term: `k^power · exp(log_ratio · k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Asymptotic {
    pub power: f64,
    pub log_ratio: f64,
}

impl Asymptotic {
    pub fn power(power: f64) -> Self {
        Self { power, log_ratio: 0.0 }
    }

    /// Decay exponent `e` such that the polynomial part behaves like `k^{-e}`.
    pub fn decay_exponent(&self) -> f64 {
        -self.power
    }
}

/// `coeff · Π s_j(k)^{e_j}` for schedules `s_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesTerm {
    pub coeff: f64,
    pub factors: Vec<(PowerSchedule, f64)>,
}

impl SeriesTerm {
    pub fn constant(coeff: f64) -> Self {
        Self {
            coeff,
            factors: Vec::new(),
        }
    }

    pub fn pow(mut self, e: f64) -> Self {
        self.coeff = self.coeff.powf(e);
        for f in &mut self.factors {
            f.1 *= e;
        }
        self
    }

    pub fn scale(mut self, c: f64) -> Self {
        self.coeff *= c;
        self
    }

    pub fn eval(&self, k: usize) -> f64 {
        self.factors
            .iter()
            .fold(self.coeff, |acc, (s, e)| acc * s.eval(k).powf(*e))
    }

    pub fn asymptotic(&self) -> Asymptotic {
        self.factors.iter().fold(Asymptotic::power(0.0), |acc, (s, e)| {
            let a = s.asymptotic();
            Asymptotic {
                power: acc.power + e * a.power,
                log_ratio: acc.log_ratio + e * a.log_ratio,
            }
        })
    }

    /// Bound on the tail `Σ_{k>t} term(k)` from the value at `t`.
    ///
    /// Uses `term(k) ≤ term(t)·(k/t)^{-e_t}·exp(ρ(k-t))`, where `e_t` is the
    /// least steep local decay on `[t, ∞)` and `ρ` the net geometric log-ratio,
    /// then the integral test. Returns `None` when that envelope is not summable.
    pub fn tail_bound(&self, t: usize) -> Option<f64> {
        let tf = t.max(1) as f64;
        let growth: f64 = self.factors.iter().map(|(s, e)| s.elasticity_bound(tf, *e)).sum();
        let rho = self.asymptotic().log_ratio;
        let at_t = self.eval(t.max(1));
        if rho < -EXPONENT_TOL {
            // (k/t)^g ≤ exp(g (k-t)/t) for g > 0
            let eff = rho + growth.max(0.0) / tf;
            if eff >= 0.0 {
                return None;
            }
            let q = eff.exp();
            return Some(at_t * q / (1.0 - q));
        }
        if rho > EXPONENT_TOL {
            return None;
        }
        let decay = -growth;
        if decay > 1.0 + EXPONENT_TOL {
            Some(at_t * tf / (decay - 1.0))
        } else {
            None
        }
    }

    pub fn partial_sum(&self, from: usize, to_inclusive: usize) -> f64 {
        (from..=to_inclusive).map(|k| self.eval(k)).sum()
    }
}

impl Mul for SeriesTerm {
    type Output = SeriesTerm;

    fn mul(mut self, rhs: SeriesTerm) -> SeriesTerm {
        self.coeff *= rhs.coeff;
        self.factors.extend(rhs.factors);
        self
    }
}

impl Div for SeriesTerm {
    type Output = SeriesTerm;

    fn div(self, rhs: SeriesTerm) -> SeriesTerm {
        self * rhs.pow(-1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesKind {
    ConvergentSum,
    DivergentSum,
    /// Non-finite exponents; cannot be decided.
    Indeterminate,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesClass {
    pub kind: SeriesKind,
    /// `e` with term ~ k^{-e}.
    pub decay_exponent: f64,
    pub log_ratio: f64,
}

/// Classifies `Σ_k term(k)` by the ratio test (geometric part) then the
/// p-series test (polynomial part). The boundary `e = 1` is divergent.
pub fn series_class(term: &SeriesTerm) -> SeriesClass {
    let a = term.asymptotic();
    let decay = a.decay_exponent();
    let kind = if !(decay.is_finite() && a.log_ratio.is_finite()) {
        SeriesKind::Indeterminate
    } else if a.log_ratio < -EXPONENT_TOL {
        SeriesKind::ConvergentSum
    } else if a.log_ratio > EXPONENT_TOL {
        SeriesKind::DivergentSum
    } else if decay > 1.0 + EXPONENT_TOL {
        SeriesKind::ConvergentSum
    } else {
        SeriesKind::DivergentSum
    };
    SeriesClass {
        kind,
        decay_exponent: decay,
        log_ratio: a.log_ratio,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LimitKind {
    Zero,
    FiniteNonzero,
    Infinite,
}

/// Limit of `term(k)` as `k → ∞`, decided by exponent sign.
pub fn limit_class(term: &SeriesTerm) -> LimitKind {
    let a = term.asymptotic();
    if a.log_ratio < -EXPONENT_TOL {
        LimitKind::Zero
    } else if a.log_ratio > EXPONENT_TOL {
        LimitKind::Infinite
    } else if a.power < -EXPONENT_TOL {
        LimitKind::Zero
    } else if a.power > EXPONENT_TOL {
        LimitKind::Infinite
    } else {
        LimitKind::FiniteNonzero
    }
}

fn measured(class: &SeriesClass) -> f64 {
    if class.log_ratio.abs() > EXPONENT_TOL {
        // geometric: report the log-ratio instead of the polynomial exponent
        class.log_ratio
    } else {
        class.decay_exponent
    }
}

fn rule_for(class: &SeriesClass) -> &'static str {
    if class.log_ratio < -EXPONENT_TOL {
        "ratio test: geometric decay"
    } else if class.log_ratio > EXPONENT_TOL {
        "ratio test: geometric growth"
    } else {
        "p-series: converges iff e > 1"
    }
}

pub(crate) fn check_divergent(report: &mut ConditionReport, name: &str, term: &SeriesTerm) {
    let c = series_class(term);
    report.push(name, rule_for(&c), measured(&c), c.kind == SeriesKind::DivergentSum);
}

pub(crate) fn check_convergent(report: &mut ConditionReport, name: &str, term: &SeriesTerm) {
    let c = series_class(term);
    report.push(name, rule_for(&c), measured(&c), c.kind == SeriesKind::ConvergentSum);
}

fn check_limit(report: &mut ConditionReport, name: &str, term: &SeriesTerm, finite_ok: bool) {
    let a = term.asymptotic();
    let lim = limit_class(term);
    let passed = match lim {
        LimitKind::Zero => true,
        LimitKind::FiniteNonzero => finite_ok,
        LimitKind::Infinite => false,
    };
    let rule = if finite_ok {
        "limit finite iff exponent ≤ 0"
    } else {
        "limit zero iff exponent < 0"
    };
    report.push(name, rule, a.power, passed);
}

/// Laplace variance sequence `2ν²` as a series term.
fn laplace_variance(nu: &PowerSchedule) -> SeriesTerm {
    nu.term().pow(2.0).scale(2.0)
}

/// Schedules for the static-consensus family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StaticScheduleSet {
    pub lambda: PowerSchedule,
    pub gamma: PowerSchedule,
    /// Laplace scale; `None` means no privacy noise.
    pub nu: Option<PowerSchedule>,
}

/// Schedules for the gradient-tracking family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingScheduleSet {
    pub lambda: PowerSchedule,
    /// `None` means `α ≡ 0`.
    pub alpha: Option<PowerSchedule>,
    pub gamma1: PowerSchedule,
    pub gamma2: PowerSchedule,
    pub nu: Option<PowerSchedule>,
}

impl TrackingScheduleSet {
    pub fn alpha_at(&self, k: usize) -> f64 {
        self.alpha.map_or(0.0, |a| a.eval(k))
    }
}

/// `Σ (γ^k)² · 2(ν^k)² < ∞` for the static-consensus family.
pub fn noise_conditions_static(gamma: &PowerSchedule, nu: &PowerSchedule) -> ConditionReport {
    let mut r = ConditionReport::new("noise variance (static consensus)");
    check_convergent(&mut r, "Σγ²·2ν² < ∞", &(gamma.term().pow(2.0) * laplace_variance(nu)));
    r
}

/// The two attenuated noise-variance series of the gradient-tracking family.
pub fn noise_conditions_tracking(
    gamma1: &PowerSchedule,
    gamma2: &PowerSchedule,
    nu: &PowerSchedule,
) -> ConditionReport {
    let mut r = ConditionReport::new("noise variance (gradient tracking)");
    check_convergent(&mut r, "Σγ₁²·2ν² < ∞", &(gamma1.term().pow(2.0) * laplace_variance(nu)));
    check_convergent(&mut r, "Σγ₂²·2ν² < ∞", &(gamma2.term().pow(2.0) * laplace_variance(nu)));
    r
}

/// Convergence and privacy conditions for the static-consensus algorithm.
pub fn validate_theorem1(set: &StaticScheduleSet) -> ConditionReport {
    let mut r = ConditionReport::new("static consensus schedule conditions");
    let (lam, gam) = (set.lambda.term(), set.gamma.term());
    check_divergent(&mut r, "Σγ = ∞", &gam);
    check_divergent(&mut r, "Σλ = ∞", &lam);
    check_convergent(&mut r, "Σλ²/γ < ∞", &(lam.clone().pow(2.0) / gam));
    match &set.nu {
        Some(nu) => {
            r.merge(noise_conditions_static(&set.gamma, nu));
            check_convergent(&mut r, "Σλ/ν < ∞", &(lam / nu.term()));
        }
        None => r.warn("no privacy noise configured; noise and budget conditions skipped"),
    }
    if set.gamma.is_constant() {
        r.warn("γ is constant: attenuation never suppresses the injected noise");
    }
    r
}

/// Convergence and privacy conditions for the gradient-tracking algorithm.
pub fn validate_theorem3(set: &TrackingScheduleSet) -> ConditionReport {
    let mut r = ConditionReport::new("gradient tracking schedule conditions");
    let lam = set.lambda.term();
    let (g1, g2) = (set.gamma1.term(), set.gamma2.term());
    check_divergent(&mut r, "Σγ₁ = ∞", &g1);
    check_divergent(&mut r, "Σγ₂ = ∞", &g2);
    check_convergent(&mut r, "Σγ₁² < ∞", &g1.clone().pow(2.0));
    check_convergent(&mut r, "Σγ₂² < ∞", &g2.clone().pow(2.0));
    match &set.alpha {
        Some(alpha) => check_divergent(&mut r, "Σα = ∞", &alpha.term()),
        None => r.push("Σα = ∞", "α ≡ 0", f64::NAN, false),
    }
    check_divergent(&mut r, "Σλ = ∞", &lam);
    check_convergent(&mut r, "Σλ²/γ₁ < ∞", &(lam.clone().pow(2.0) / g1.clone()));
    check_convergent(&mut r, "Σλ²/γ₂ < ∞", &(lam.clone().pow(2.0) / g2.clone()));
    check_limit(&mut r, "lim λ/γ₁ = 0", &(lam.clone() / g1.clone()), false);
    check_limit(&mut r, "lim λ/γ₂ = 0", &(lam.clone() / g2.clone()), false);
    match &set.alpha {
        Some(alpha) => {
            check_limit(&mut r, "lim λ/α < ∞", &(lam.clone() / alpha.term()), true);
            check_convergent(&mut r, "Σα²/γ₂ < ∞", &(alpha.term().pow(2.0) / g2.clone()));
        }
        None => {
            r.push("lim λ/α < ∞", "α ≡ 0", f64::INFINITY, false);
            r.push("Σα²/γ₂ < ∞", "α ≡ 0", f64::INFINITY, true);
        }
    }
    check_convergent(&mut r, "Σγ₁²/γ₂ < ∞", &(g1.pow(2.0) / g2));
    match &set.nu {
        Some(nu) => {
            r.merge(noise_conditions_tracking(&set.gamma1, &set.gamma2, nu));
            check_convergent(&mut r, "Σλ/ν < ∞", &(lam / nu.term()));
        }
        None => r.warn("no privacy noise configured; noise and budget conditions skipped"),
    }
    r
}

/// Result of iterating `v^{k+1} = (1 - α^k) v^k + β^k`.
#[derive(Debug, Clone)]
pub struct ChungRateCheck {
    /// `v^k α^k / β^k` for `k = 0..=k_max`.
    pub ratios: Vec<f64>,
}

impl ChungRateCheck {
    /// Maximum ratio over `k ≥ 1`.
    pub fn max_ratio(&self) -> f64 {
        self.max_over(1, self.ratios.len().saturating_sub(1))
    }

    /// Maximum ratio over `lo ≤ k ≤ hi`.
    pub fn max_over(&self, lo: usize, hi: usize) -> f64 {
        let hi = hi.min(self.ratios.len().saturating_sub(1));
        self.ratios[lo..=hi].iter().copied().fold(0.0, f64::max)
    }
}

/// Empirical check that `v^k ≤ C β^k / α^k` for the scalar recursion
/// `v^{k+1} = (1 - α^k) v^k + β^k`. `beta = None` means `β ≡ 0`.
pub fn chung_rate_check(
    alpha: &PowerSchedule,
    beta: Option<&PowerSchedule>,
    v0: f64,
    k_max: usize,
) -> Result<ChungRateCheck> {
    let a = alpha.term();
    if series_class(&a).kind != SeriesKind::DivergentSum {
        return Err(Error::Condition("Σα must diverge".into()));
    }
    if limit_class(&a) != LimitKind::Zero {
        return Err(Error::Condition("α must tend to zero".into()));
    }
    if let Some(b) = beta {
        let ratio = b.term() / a.clone();
        let asym = ratio.asymptotic();
        if limit_class(&ratio) != LimitKind::Zero || asym.log_ratio > EXPONENT_TOL {
            return Err(Error::Condition("β/α must tend to zero polynomially".into()));
        }
    }
    if v0 < 0.0 || !v0.is_finite() {
        return Err(Error::Condition("v0 must be finite and nonnegative".into()));
    }
    let mut ratios = Vec::with_capacity(k_max + 1);
    let mut v = v0;
    for k in 0..=k_max {
        let ak = alpha.eval(k);
        if ak > 1.0 {
            return Err(Error::Condition(format!("α^{k} = {ak} exceeds 1")));
        }
        let bk = beta.map_or(0.0, |b| b.eval(k));
        let ratio = if bk > 0.0 {
            v * ak / bk
        } else if v == 0.0 {
            0.0
        } else {
            f64::INFINITY
        };
        ratios.push(ratio);
        v = (1.0 - ak) * v + bk;
    }
    Ok(ChungRateCheck { ratios })
}
