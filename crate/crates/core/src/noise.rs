//! Laplace privacy noise with reproducible counter-based substreams.
//!
//! Each draw is a pure function of `(seed, agent, tag, k, coordinate)`, so
//! concurrent runs and any evaluation order give bit-identical noise.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::report::ConditionReport;
use crate::schedules::{noise_conditions_static, noise_conditions_tracking, PowerSchedule};

/// Which transmitted variable a draw obscures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseTag {
    State = 0,
    Tracker = 1,
}

/// Source of the additive noise on transmitted values.
pub trait NoiseModel: Sync {
    /// Fills `out` with the noise for `agent`'s `tag` message at iteration `k`.
    fn draw(&self, agent: usize, tag: NoiseTag, k: usize, out: &mut [f64]);

    /// Per-coordinate variance at iteration `k`.
    fn variance_at(&self, k: usize) -> f64;
}

/// No noise at all.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroNoise;

impl NoiseModel for ZeroNoise {
    fn draw(&self, _: usize, _: NoiseTag, _: usize, out: &mut [f64]) {
        out.fill(0.0);
    }

    fn variance_at(&self, _: usize) -> f64 {
        0.0
    }
}

/// Inverse Laplace CDF with scale `nu` at `q ∈ (0, 1)`.
pub fn laplace_from_uniform(q: f64, nu: f64) -> f64 {
    let c = q - 0.5;
    -nu * c.signum() * (1.0 - 2.0 * c.abs()).ln()
}

/// Maps 64 random bits to the open interval `(0, 1)`.
///
/// Uses the top 52 bits so that `n + 0.5` stays exactly representable and
/// the largest value is strictly below 1.
fn open_unit(bits: u64) -> f64 {
    ((bits >> 12) as f64 + 0.5) / (1u64 << 52) as f64
}

/// Laplace noise with iteration-dependent scale `ν(k)`.
#[derive(Debug, Clone)]
pub struct LaplaceNoiseSource {
    nu: PowerSchedule,
    seed: u64,
    base: ChaCha8Rng,
}

impl LaplaceNoiseSource {
    /// Coordinates per message are limited to `2^16`.
    pub const MAX_DIM: usize = 1 << 16;

    pub fn new(nu: PowerSchedule, seed: u64) -> Self {
        Self {
            nu,
            seed,
            base: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn nu(&self) -> &PowerSchedule {
        &self.nu
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn sample(&self, agent: usize, tag: NoiseTag, k: usize, dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; dim];
        self.draw(agent, tag, k, &mut out);
        out
    }
}

impl NoiseModel for LaplaceNoiseSource {
    fn draw(&self, agent: usize, tag: NoiseTag, k: usize, out: &mut [f64]) {
        assert!(
            out.len() <= Self::MAX_DIM,
            "message dimension exceeds {}",
            Self::MAX_DIM
        );
        let mut rng = self.base.clone();
        rng.set_stream(agent as u64 * 2 + tag as u64);
        // two 32-bit words per coordinate, 2^16 coordinates per iteration
        rng.set_word_pos((k as u128) << 17);
        let nu = self.nu.eval(k);
        for x in out.iter_mut() {
            *x = laplace_from_uniform(open_unit(rng.next_u64()), nu);
        }
    }

    fn variance_at(&self, k: usize) -> f64 {
        let nu = self.nu.eval(k);
        2.0 * nu * nu
    }
}

/// Couplings that attenuate the noise before it enters the iterates.
#[derive(Debug, Clone, Copy)]
pub enum Attenuation<'a> {
    Static(&'a PowerSchedule),
    Tracking(&'a PowerSchedule, &'a PowerSchedule),
}

/// Summability of the attenuated noise variance `Σ γ²·2ν²`.
pub fn validate_noise_conditions(nu: &PowerSchedule, attenuation: Attenuation<'_>) -> ConditionReport {
    match attenuation {
        Attenuation::Static(g) => noise_conditions_static(g, nu),
        Attenuation::Tracking(g1, g2) => noise_conditions_tracking(g1, g2, nu),
    }
}
