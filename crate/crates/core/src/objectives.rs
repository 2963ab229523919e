//! Distributed least-squares estimation.
//!
//! Agent `i` holds `f_i(θ) = ‖z_i − M_iθ‖² + ς‖θ‖²`; the network minimizes
//! the average `F = (1/m) Σ f_i`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Regularization used when a config does not set one.
pub const DEFAULT_REGULARIZATION: f64 = 0.01;

#[derive(Debug, Clone)]
pub struct QuadraticEstimationProblem {
    d: usize,
    s: usize,
    measurements: Vec<DMatrix<f64>>,
    observations: Vec<DVector<f64>>,
    regularization: f64,
    /// `2MᵢᵀMᵢ + 2ςI`
    hessians: Vec<DMatrix<f64>>,
    /// `2Mᵢᵀzᵢ`
    linear: Vec<DVector<f64>>,
    theta_star: DVector<f64>,
    f_star: f64,
    lipschitz: f64,
    ground_truth: Option<DVector<f64>>,
    /// Optional ℓ₁ clipping level for local gradients.
    clip: Option<f64>,
}

impl QuadraticEstimationProblem {
    /// Builds the problem and solves for its minimizer.
    pub fn new(measurements: Vec<DMatrix<f64>>, observations: Vec<DVector<f64>>, regularization: f64) -> Result<Self> {
        let m = measurements.len();
        if m == 0 || observations.len() != m {
            return Err(Error::Structure(format!(
                "need one observation per agent (got {m} matrices, {} vectors)",
                observations.len()
            )));
        }
        let (s, d) = measurements[0].shape();
        if s == 0 || d == 0 {
            return Err(Error::Structure("measurement matrices must be non-empty".into()));
        }
        for (i, (mi, zi)) in measurements.iter().zip(&observations).enumerate() {
            if mi.shape() != (s, d) || zi.len() != s {
                return Err(Error::Structure(format!("agent {i}: inconsistent dimensions")));
            }
        }
        if !(regularization >= 0.0 && regularization.is_finite()) {
            return Err(Error::Range(format!("regularization {regularization} must be ≥ 0")));
        }
        let eye = DMatrix::<f64>::identity(d, d);
        let hessians: Vec<_> = measurements
            .iter()
            .map(|mi| (mi.transpose() * mi + &eye * regularization) * 2.0)
            .collect();
        let linear: Vec<_> = measurements
            .iter()
            .zip(&observations)
            .map(|(mi, zi)| mi.transpose() * zi * 2.0)
            .collect();
        let normal = hessians.iter().fold(DMatrix::zeros(d, d), |acc, h| acc + h);
        let rhs = linear.iter().fold(DVector::zeros(d), |acc, b| acc + b);
        let theta_star = normal
            .cholesky()
            .ok_or_else(|| Error::Degeneracy("normal equations are not positive definite".into()))?
            .solve(&rhs);
        let lipschitz = measurements
            .iter()
            .map(|mi| {
                let smax = mi.singular_values().max();
                2.0 * (smax * smax + regularization)
            })
            .fold(0.0, f64::max);
        let mut p = Self {
            d,
            s,
            measurements,
            observations,
            regularization,
            hessians,
            linear,
            theta_star,
            f_star: 0.0,
            lipschitz,
            ground_truth: None,
            clip: None,
        };
        p.f_star = p.global_value(&p.theta_star);
        Ok(p)
    }

    /// Standard-normal `M_i`, ground truth `θ_true ~ N(0, I)` and
    /// `z_i = M_iθ_true + w_i` with `w_i ~ N(0, noise_std²I)`.
    pub fn random_instance(
        seed: u64,
        m: usize,
        s: usize,
        d: usize,
        regularization: f64,
        noise_std: f64,
    ) -> Result<Self> {
        if m == 0 || s == 0 || d == 0 {
            return Err(Error::Structure("m, s and d must be positive".into()));
        }
        if !(noise_std >= 0.0 && noise_std.is_finite()) {
            return Err(Error::Range(format!("noise_std {noise_std} must be ≥ 0")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
        let truth = DVector::from_fn(d, |_, _| normal());
        let mut measurements = Vec::with_capacity(m);
        let mut observations = Vec::with_capacity(m);
        for _ in 0..m {
            let mi = DMatrix::from_fn(s, d, |_, _| normal());
            let noise = DVector::from_fn(s, |_, _| noise_std * normal());
            observations.push(&mi * &truth + noise);
            measurements.push(mi);
        }
        let mut p = Self::new(measurements, observations, regularization)?;
        p.ground_truth = Some(truth);
        Ok(p)
    }

    /// Rescales every local gradient to ℓ₁ norm at most `c`. Off by default;
    /// it changes the algorithm, and `θ*`, `F*` still refer to the unclipped problem.
    pub fn with_gradient_clip(mut self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::Range(format!("clipping level {c} must be positive")));
        }
        self.clip = Some(c);
        Ok(self)
    }

    pub fn gradient_clip(&self) -> Option<f64> {
        self.clip
    }

    fn apply_clip(&self, g: &mut [f64]) {
        if let Some(c) = self.clip {
            let l1: f64 = g.iter().map(|v| v.abs()).sum();
            if l1 > c {
                g.iter_mut().for_each(|v| *v *= c / l1);
            }
        }
    }

    pub fn m(&self) -> usize {
        self.measurements.len()
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn s(&self) -> usize {
        self.s
    }

    pub fn regularization(&self) -> f64 {
        self.regularization
    }

    pub fn measurement(&self, i: usize) -> &DMatrix<f64> {
        &self.measurements[i]
    }

    pub fn observation(&self, i: usize) -> &DVector<f64> {
        &self.observations[i]
    }

    pub fn ground_truth(&self) -> Option<&DVector<f64>> {
        self.ground_truth.as_ref()
    }

    pub fn theta_star(&self) -> &DVector<f64> {
        &self.theta_star
    }

    /// `F(θ*)`.
    pub fn f_star(&self) -> f64 {
        self.f_star
    }

    /// `max_i 2(σ_max(M_i)² + ς)`.
    pub fn lipschitz_constant(&self) -> f64 {
        self.lipschitz
    }

    pub fn local_value(&self, i: usize, theta: &DVector<f64>) -> f64 {
        let r = &self.observations[i] - &self.measurements[i] * theta;
        r.norm_squared() + self.regularization * theta.norm_squared()
    }

    /// `2M_iᵀ(M_iθ − z_i) + 2ςθ`.
    pub fn local_gradient(&self, i: usize, theta: &DVector<f64>) -> DVector<f64> {
        let mut g = &self.hessians[i] * theta - &self.linear[i];
        self.apply_clip(g.as_mut_slice());
        g
    }

    /// Writes `∇f_i(θ)` into `out` for `θ` given as a slice.
    pub fn local_gradient_into(&self, i: usize, theta: &[f64], out: &mut [f64]) {
        let h = &self.hessians[i];
        let b = &self.linear[i];
        for r in 0..self.d {
            let mut acc = -b[r];
            for (c, t) in theta.iter().enumerate() {
                acc += h[(r, c)] * t;
            }
            out[r] = acc;
        }
        self.apply_clip(&mut out[..self.d]);
    }

    pub fn global_value(&self, theta: &DVector<f64>) -> f64 {
        (0..self.m()).map(|i| self.local_value(i, theta)).sum::<f64>() / self.m() as f64
    }

    pub fn global_gradient(&self, theta: &DVector<f64>) -> DVector<f64> {
        (0..self.m()).fold(DVector::zeros(self.d), |acc, i| acc + self.local_gradient(i, theta)) / self.m() as f64
    }

    /// `F(θ) − F*`.
    pub fn gap(&self, theta: &DVector<f64>) -> f64 {
        self.global_value(theta) - self.f_star
    }

    pub fn adjacent_variant(&self, agent: usize, radius: f64, strength: f64) -> Result<AdjacentVariant> {
        if agent >= self.m() {
            return Err(Error::Range(format!("agent {agent} out of range")));
        }
        if !(radius > 0.0 && strength >= 0.0) {
            return Err(Error::Range("radius must be > 0 and strength ≥ 0".into()));
        }
        Ok(AdjacentVariant {
            agent,
            radius,
            strength,
            center: self.theta_star.clone(),
        })
    }

    /// Writes `(M, z)` as CSV rows `agent,row,m0..m{d-1},z`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["agent".to_string(), "row".to_string()];
        header.extend((0..self.d).map(|c| format!("m{c}")));
        header.push("z".into());
        w.write_record(&header)?;
        for (i, (mi, zi)) in self.measurements.iter().zip(&self.observations).enumerate() {
            for r in 0..self.s {
                let mut rec = vec![i.to_string(), r.to_string()];
                rec.extend((0..self.d).map(|c| format!("{:e}", mi[(r, c)])));
                rec.push(format!("{:e}", zi[r]));
                w.write_record(&rec)?;
            }
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads the format written by [`write_csv`](Self::write_csv).
    pub fn read_csv(path: &Path, regularization: f64) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path)?;
        let width = rdr.headers()?.len();
        if width < 4 {
            return Err(Error::Structure(format!(
                "{}: expected agent,row,m0..,z columns",
                path.display()
            )));
        }
        let d = width - 3;
        let mut rows: Vec<(usize, usize, Vec<f64>, f64)> = Vec::new();
        for rec in rdr.deserialize() {
            let rec: Vec<f64> = rec?;
            let (agent, row) = (rec[0] as usize, rec[1] as usize);
            rows.push((agent, row, rec[2..2 + d].to_vec(), rec[2 + d]));
        }
        let m = rows.iter().map(|r| r.0 + 1).max().unwrap_or(0);
        let s = rows.iter().map(|r| r.1 + 1).max().unwrap_or(0);
        if rows.len() != m * s {
            return Err(Error::Structure(format!("{}: expected {m}×{s} rows", path.display())));
        }
        let mut measurements = vec![DMatrix::zeros(s, d); m];
        let mut observations = vec![DVector::zeros(s); m];
        for (agent, row, mrow, z) in rows {
            for (c, v) in mrow.into_iter().enumerate() {
                measurements[agent][(row, c)] = v;
            }
            observations[agent][row] = z;
        }
        Self::new(measurements, observations, regularization)
    }
}

/// A neighbouring problem in which one agent's gradient is bent away from
/// the optimum outside a ball of the given radius.
///
/// `∇f'_i(θ) = ∇f_i(θ) + η·max(0, ‖θ − θ*‖ − δ)·(θ − θ*)/‖θ − θ*‖`
#[derive(Debug, Clone)]
pub struct AdjacentVariant {
    pub agent: usize,
    pub radius: f64,
    pub strength: f64,
    center: DVector<f64>,
}

impl AdjacentVariant {
    /// `∇f_i(θ) − ∇f'_i(θ)` for the changed agent.
    pub fn gradient_difference(&self, theta: &DVector<f64>) -> DVector<f64> {
        let offset = theta - &self.center;
        let dist = offset.norm();
        let ramp = (dist - self.radius).max(0.0);
        if ramp == 0.0 {
            return DVector::zeros(theta.len());
        }
        offset * (-self.strength * ramp / dist)
    }

    /// Gradient of agent `i` in the adjacent problem.
    pub fn gradient(&self, base: &QuadraticEstimationProblem, i: usize, theta: &DVector<f64>) -> DVector<f64> {
        let g = base.local_gradient(i, theta);
        if i == self.agent {
            g - self.gradient_difference(theta)
        } else {
            g
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar(z: f64, reg: f64) -> QuadraticEstimationProblem {
        QuadraticEstimationProblem::new(vec![DMatrix::identity(1, 1)], vec![DVector::from_element(1, z)], reg).unwrap()
    }

    #[test]
    fn gradient_examples() {
        let p = QuadraticEstimationProblem::new(vec![DMatrix::identity(2, 2)], vec![DVector::zeros(2)], 0.0).unwrap();
        assert_eq!(p.local_gradient(0, &DVector::zeros(2)), DVector::zeros(2));
        let p = scalar(1.0, 0.0);
        assert_eq!(p.local_gradient(0, &DVector::zeros(1))[0], -2.0);
        let mut out = [0.0];
        p.local_gradient_into(0, &[0.0], &mut out);
        assert_eq!(out[0], -2.0);
    }

    #[test]
    fn clipping_rescales_large_gradients() {
        let p = QuadraticEstimationProblem::new(vec![DMatrix::identity(2, 2)], vec![DVector::zeros(2)], 0.0)
            .unwrap()
            .with_gradient_clip(1.0)
            .unwrap();
        // unclipped gradient is (6, -2), ℓ₁ norm 8
        let g = p.local_gradient(0, &DVector::from_vec(vec![3.0, -1.0]));
        assert_relative_eq!(g[0], 0.75, epsilon = 1e-15);
        assert_relative_eq!(g[1], -0.25, epsilon = 1e-15);
        let mut out = [0.0; 2];
        p.local_gradient_into(0, &[3.0, -1.0], &mut out);
        assert_eq!(out, [g[0], g[1]]);
        assert_eq!(p.local_gradient(0, &DVector::from_vec(vec![0.1, 0.1]))[0], 0.2);
        assert!(p.clone().with_gradient_clip(0.0).is_err());
    }

    #[test]
    fn optimum_examples() {
        let zero = QuadraticEstimationProblem::new(vec![DMatrix::identity(3, 2); 2], vec![DVector::zeros(3); 2], 0.01)
            .unwrap();
        assert_eq!(zero.theta_star(), &DVector::zeros(2));
        assert_eq!(zero.f_star(), 0.0);

        let z = DVector::from_vec(vec![1.5, -2.0, 0.25]);
        let p = QuadraticEstimationProblem::new(vec![DMatrix::identity(3, 3)], vec![z.clone()], 0.0).unwrap();
        assert_relative_eq!(p.theta_star(), &z, epsilon = 1e-14);

        let p = QuadraticEstimationProblem::random_instance(5, 5, 3, 2, 0.01, 1.0).unwrap();
        assert!(p.global_gradient(p.theta_star()).amax() < 1e-10);
    }

    #[test]
    fn singular_normal_equations() {
        let p = QuadraticEstimationProblem::new(vec![DMatrix::zeros(2, 2)], vec![DVector::zeros(2)], 0.0);
        assert!(matches!(p, Err(Error::Degeneracy(_))));
    }

    #[test]
    fn exact_measurements_recover_truth() {
        let p = QuadraticEstimationProblem::random_instance(11, 5, 3, 2, 0.0, 0.0).unwrap();
        let truth = p.ground_truth().unwrap();
        assert!((p.theta_star() - truth).amax() < 1e-8);
    }

    #[test]
    fn lipschitz_examples() {
        let p = QuadraticEstimationProblem::new(vec![DMatrix::identity(2, 2)], vec![DVector::zeros(2)], 0.0).unwrap();
        assert_relative_eq!(p.lipschitz_constant(), 2.0, epsilon = 1e-14);
        let p =
            QuadraticEstimationProblem::new(vec![DMatrix::identity(2, 2) * 2.0], vec![DVector::zeros(2)], 0.0).unwrap();
        assert_relative_eq!(p.lipschitz_constant(), 8.0, epsilon = 1e-14);
    }

    #[test]
    fn seeded_instances_are_identical() {
        let a = QuadraticEstimationProblem::random_instance(3, 5, 3, 2, 0.01, 1.0).unwrap();
        let b = QuadraticEstimationProblem::random_instance(3, 5, 3, 2, 0.01, 1.0).unwrap();
        for i in 0..5 {
            assert_eq!(a.measurement(i), b.measurement(i));
            assert_eq!(a.observation(i), b.observation(i));
        }
        assert_eq!(a.theta_star(), b.theta_star());
    }

    #[test]
    fn adjacent_variant_examples() {
        let p = scalar(0.0, 0.0);
        let two = QuadraticEstimationProblem::new(vec![DMatrix::identity(2, 2)], vec![DVector::zeros(2)], 0.0).unwrap();
        let delta = 0.5;
        let eta = 3.0;
        let var = two.adjacent_variant(0, delta, eta).unwrap();
        let inside = DVector::from_vec(vec![delta / 2.0, 0.0]);
        assert_eq!(var.gradient_difference(&inside), DVector::zeros(2));
        let outside = DVector::from_vec(vec![2.0 * delta, 0.0]);
        assert_relative_eq!(var.gradient_difference(&outside).norm(), eta * delta, epsilon = 1e-14);
        // continuity at the boundary
        let mut last = f64::INFINITY;
        for step in 1..=20 {
            let r = delta * (1.0 + 0.5f64.powi(step));
            let n = var.gradient_difference(&DVector::from_vec(vec![0.0, r])).norm();
            assert!(n < last);
            last = n;
        }
        assert!(last < 1e-5);
        assert!(p.adjacent_variant(1, 0.1, 1.0).is_err());
    }

    #[test]
    fn csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("instance.csv");
        let p = QuadraticEstimationProblem::random_instance(9, 4, 3, 2, 0.01, 1.0).unwrap();
        p.write_csv(&path).unwrap();
        let q = QuadraticEstimationProblem::read_csv(&path, 0.01).unwrap();
        for i in 0..4 {
            assert_eq!(p.measurement(i), q.measurement(i));
            assert_eq!(p.observation(i), q.observation(i));
        }
    }
}
