//! Communication graphs and the coupling matrices built on them.
//!
//! An edge `(i, j)` means agent `i` receives from agent `j`. The undirected
//! family uses a symmetric Laplacian-like matrix `W`; the directed family
//! uses a zero-row-sum pulling matrix `R` and a zero-column-sum pushing
//! matrix `C`, together with their stochastic null vectors `u` and `v`.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::report::ConditionReport;

/// Tolerance for structural identities right after construction.
pub const STRUCTURAL_TOL: f64 = 1e-12;
/// Tolerance for residuals of derived quantities such as null vectors.
pub const RESIDUAL_TOL: f64 = 1e-10;

const NULL_SEED: u64 = 0x005e_ed0f_9a11;
const NULL_MAX_ITERS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectedGraph {
    m: usize,
    /// `(receiver, sender)` pairs, sorted and deduplicated.
    edges: Vec<(usize, usize)>,
}

impl DirectedGraph {
    /// Builds a graph from `(receiver, sender)` pairs.
    pub fn new(m: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if m == 0 {
            return Err(Error::Structure("graph needs at least one agent".into()));
        }
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i >= m || j >= m {
                return Err(Error::Structure(format!("edge ({i}, {j}) out of range for m = {m}")));
            }
            if i == j {
                return Err(Error::Structure(format!("self-loop at agent {i}")));
            }
            set.insert((i, j));
        }
        Ok(Self {
            m,
            edges: set.into_iter().collect(),
        })
    }

    /// Builds a graph from `(sender, receiver)` links, the order used in configs.
    pub fn from_links(m: usize, links: &[(usize, usize)]) -> Result<Self> {
        Self::new(m, links.iter().map(|&(from, to)| (to, from)))
    }

    /// Directed ring `0 → 1 → … → m-1 → 0`.
    pub fn ring(m: usize) -> Result<Self> {
        let links: Vec<_> = if m > 1 {
            (0..m).map(|i| (i, (i + 1) % m)).collect()
        } else {
            Vec::new()
        };
        Self::from_links(m, &links)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Same agents with every edge direction flipped.
    pub fn reversed(&self) -> Self {
        Self::new(self.m, self.edges.iter().map(|&(i, j)| (j, i))).expect("reversal keeps validity")
    }

    /// Agents from which every agent is reachable along edge directions.
    pub fn spanning_tree_roots(&self) -> Vec<usize> {
        let mut out = vec![Vec::new(); self.m];
        for &(i, j) in &self.edges {
            out[j].push(i);
        }
        (0..self.m)
            .filter(|&root| reachable_count(&out, root) == self.m)
            .collect()
    }

    /// Connectivity with edge directions dropped.
    pub fn is_weakly_connected(&self) -> bool {
        let mut adj = vec![Vec::new(); self.m];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        reachable_count(&adj, 0) == self.m
    }
}

fn reachable_count(adj: &[Vec<usize>], start: usize) -> usize {
    let mut seen = vec![false; adj.len()];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    let mut count = 1;
    while let Some(n) = queue.pop_front() {
        for &next in &adj[n] {
            if !seen[next] {
                seen[next] = true;
                count += 1;
                queue.push_back(next);
            }
        }
    }
    count
}

fn averaging(m: usize) -> DMatrix<f64> {
    DMatrix::from_element(m, m, 1.0 / m as f64)
}

fn consensus_norm(w: &DMatrix<f64>, gamma: f64) -> f64 {
    let m = w.nrows();
    let a = DMatrix::identity(m, m) + w * gamma - averaging(m);
    // symmetrize against rounding so the symmetric solver sees exact symmetry
    let a = (&a + a.transpose()) * 0.5;
    SymmetricEigen::new(a).eigenvalues.amax()
}

fn check_range(diag_min: f64, gamma: f64) -> Result<()> {
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::Range(format!("γ = {gamma} must be finite and nonnegative")));
    }
    if diag_min < 0.0 && 1.0 + gamma * diag_min <= 0.0 {
        return Err(Error::Range(format!(
            "γ = {gamma} too large: 1 + γ·(min diagonal {diag_min}) ≤ 0"
        )));
    }
    Ok(())
}

/// Symmetric coupling for the static-consensus family.
#[derive(Debug, Clone)]
pub struct ConsensusWeights {
    pub w: DMatrix<f64>,
    /// `min_i |w_ii|`.
    pub min_diag_mag: f64,
    /// `‖I + W − 𝟏𝟏ᵀ/m‖₂`.
    pub contraction: f64,
}

impl ConsensusWeights {
    pub fn m(&self) -> usize {
        self.w.nrows()
    }

    /// `‖I + γW − 𝟏𝟏ᵀ/m‖₂`.
    pub fn contraction_at(&self, gamma: f64) -> Result<f64> {
        check_range(self.w.diagonal().min(), gamma)?;
        Ok(consensus_norm(&self.w, gamma))
    }
}

/// Builds `W` on the graph with directions dropped and uniform off-diagonal weight.
pub fn build_consensus_weights(graph: &DirectedGraph, edge_weight: f64) -> Result<ConsensusWeights> {
    if !(edge_weight > 0.0 && edge_weight.is_finite()) {
        return Err(Error::Range(format!("edge_weight = {edge_weight} must be positive")));
    }
    if !graph.is_weakly_connected() {
        return Err(Error::Connectivity(
            "graph is disconnected with directions dropped".into(),
        ));
    }
    let m = graph.m();
    let mut w = DMatrix::zeros(m, m);
    for &(i, j) in graph.edges() {
        w[(i, j)] = edge_weight;
        w[(j, i)] = edge_weight;
    }
    for i in 0..m {
        let off: f64 = (0..m).filter(|&j| j != i).map(|j| w[(i, j)]).sum();
        w[(i, i)] = -off;
    }
    let contraction = consensus_norm(&w, 1.0);
    if contraction >= 1.0 {
        return Err(Error::Spectral(format!(
            "‖I + W − 𝟏𝟏ᵀ/m‖ = {contraction:.6} ≥ 1; use a smaller edge_weight"
        )));
    }
    let min_diag_mag = w.diagonal().iter().map(|d| d.abs()).fold(f64::INFINITY, f64::min);
    Ok(ConsensusWeights {
        w,
        min_diag_mag,
        contraction,
    })
}

/// Symmetry, zero row and column sums, and the contraction condition.
pub fn validate_assumption2(w: &DMatrix<f64>) -> ConditionReport {
    let mut r = ConditionReport::new("consensus weight conditions");
    if w.nrows() != w.ncols() || w.nrows() == 0 {
        r.push("square", "rows = cols > 0", w.ncols() as f64, false);
        return r;
    }
    let asym = (w - w.transpose()).amax();
    r.push("symmetric", "max |W − Wᵀ| < 1e-12", asym, asym < STRUCTURAL_TOL);
    let rows = w.column_sum().amax();
    r.push("zero row sums", "max |W𝟏| < 1e-12", rows, rows < STRUCTURAL_TOL);
    let cols = w.row_sum().amax();
    r.push("zero column sums", "max |𝟏ᵀW| < 1e-12", cols, cols < STRUCTURAL_TOL);
    let m = w.nrows();
    let a = DMatrix::identity(m, m) + w - averaging(m);
    let norm = a.singular_values().max();
    r.push("contraction < 1", "‖I + W − 𝟏𝟏ᵀ/m‖₂ < 1", norm, norm < 1.0);
    r
}

/// Pulling matrix `R`, pushing matrix `C` and their null vectors.
#[derive(Debug, Clone)]
pub struct PushPullWeights {
    pub r: DMatrix<f64>,
    pub c: DMatrix<f64>,
    /// Nonnegative with `uᵀR = 0`, `uᵀ𝟏 = m`.
    pub u: DVector<f64>,
    /// Nonnegative with `Cv = 0`, `𝟏ᵀv = m`.
    pub v: DVector<f64>,
    pub min_diag_r: f64,
    pub min_diag_c: f64,
    /// Smallest `−Re λ` over the nonzero eigenvalues of `R` (diagnostic).
    pub gap_r: f64,
    /// Same for `C`.
    pub gap_c: f64,
}

impl PushPullWeights {
    pub fn m(&self) -> usize {
        self.r.nrows()
    }

    /// Spectral radius of `I + γR − 𝟏uᵀ/m`.
    pub fn contraction_at(&self, gamma: f64) -> Result<f64> {
        check_range(self.r.diagonal().min(), gamma)?;
        let m = self.m();
        let ones = DVector::from_element(m, 1.0);
        let a = DMatrix::identity(m, m) + &self.r * gamma - ones * self.u.transpose() / m as f64;
        Ok(a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max))
    }
}

/// Spanning trees in `𝒢_R` and `𝒢_Cᵀ` with a shared root.
pub fn validate_assumption4(graph_r: &DirectedGraph, graph_c: &DirectedGraph) -> ConditionReport {
    let mut rep = ConditionReport::new("directed graph conditions");
    if graph_r.m() != graph_c.m() {
        rep.push("same agent count", "m_R = m_C", graph_c.m() as f64, false);
        return rep;
    }
    let roots_r: BTreeSet<_> = graph_r.spanning_tree_roots().into_iter().collect();
    let roots_ct: BTreeSet<_> = graph_c.reversed().spanning_tree_roots().into_iter().collect();
    rep.push(
        "𝒢_R has a spanning tree",
        "some root reaches all agents",
        roots_r.len() as f64,
        !roots_r.is_empty(),
    );
    rep.push(
        "𝒢_Cᵀ has a spanning tree",
        "some root reaches all agents",
        roots_ct.len() as f64,
        !roots_ct.is_empty(),
    );
    let shared = roots_r.intersection(&roots_ct).count();
    rep.push(
        "root sets intersect",
        "|roots_R ∩ roots_Cᵀ| ≥ 1",
        shared as f64,
        shared > 0,
    );
    rep
}

/// Builds `R` (zero row sums) and `C` (zero column sums) with uniform weights.
pub fn build_push_pull_weights(
    graph_r: &DirectedGraph,
    graph_c: &DirectedGraph,
    edge_weight: f64,
) -> Result<PushPullWeights> {
    if !(edge_weight > 0.0 && edge_weight.is_finite()) {
        return Err(Error::Range(format!("edge_weight = {edge_weight} must be positive")));
    }
    let report = validate_assumption4(graph_r, graph_c);
    if !report.overall() {
        return Err(Error::Connectivity(format!("failed: {}", report.failures().join(", "))));
    }
    let m = graph_r.m();
    let mut r = DMatrix::zeros(m, m);
    for &(i, j) in graph_r.edges() {
        r[(i, j)] = edge_weight;
    }
    let mut c = DMatrix::zeros(m, m);
    for &(i, j) in graph_c.edges() {
        c[(i, j)] = edge_weight;
    }
    for i in 0..m {
        r[(i, i)] = -(0..m).filter(|&j| j != i).map(|j| r[(i, j)]).sum::<f64>();
        c[(i, i)] = -(0..m).filter(|&j| j != i).map(|j| c[(j, i)]).sum::<f64>();
    }
    let u = stochastic_null_vector(&r.transpose(), "uᵀR = 0")?;
    let v = stochastic_null_vector(&c, "Cv = 0")?;
    let min_mag = |a: &DMatrix<f64>| a.diagonal().iter().map(|d| d.abs()).fold(f64::INFINITY, f64::min);
    Ok(PushPullWeights {
        min_diag_r: min_mag(&r),
        min_diag_c: min_mag(&c),
        gap_r: spectral_gap(&r),
        gap_c: spectral_gap(&c),
        r,
        c,
        u,
        v,
    })
}

fn spectral_gap(a: &DMatrix<f64>) -> f64 {
    let scale = a.amax().max(1.0);
    let gap = a
        .complex_eigenvalues()
        .iter()
        .filter(|z| z.norm() > RESIDUAL_TOL * scale)
        .map(|z| -z.re)
        .fold(f64::INFINITY, f64::min);
    if gap.is_finite() {
        gap
    } else {
        0.0
    }
}

/// Nonnegative vector spanning the null space of `a`, scaled to sum to `m`.
///
/// Shifted inverse iteration on `a − σI` with a small positive shift; the
/// zero eigenvalue is the closest to `σ` because every other eigenvalue has
/// negative real part.
fn stochastic_null_vector(a: &DMatrix<f64>, what: &str) -> Result<DVector<f64>> {
    let m = a.nrows();
    let scale = a.amax().max(1.0);
    let tiny = RESIDUAL_TOL * scale;
    let nullity = a.singular_values().iter().filter(|&&s| s < tiny).count();
    if nullity > 1 {
        return Err(Error::Structure(format!("{what}: null space has dimension {nullity}")));
    }
    let sigma = 1e-9 * scale;
    let lu = (a - DMatrix::identity(m, m) * sigma).lu();
    let mut rng = ChaCha8Rng::seed_from_u64(NULL_SEED);
    let mut x = DVector::from_fn(m, |_, _| rng.random_range(0.5..1.5));
    x /= x.sum() / m as f64;
    let mut converged = false;
    for _ in 0..NULL_MAX_ITERS {
        let mut next = lu
            .solve(&x)
            .ok_or_else(|| Error::Structure(format!("{what}: shifted system is singular")))?;
        next /= next.sum() / m as f64;
        let delta = (&next - &x).amax();
        x = next;
        if delta < STRUCTURAL_TOL * m as f64 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Structure(format!("{what}: inverse iteration did not converge")));
    }
    if x.iter().any(|&e| e < -RESIDUAL_TOL) {
        return Err(Error::Structure(format!("{what}: null vector has negative entries")));
    }
    x.iter_mut().for_each(|e| *e = e.max(0.0));
    x /= x.sum() / m as f64;
    let residual = (a * &x).amax();
    if residual >= RESIDUAL_TOL {
        return Err(Error::Structure(format!("{what}: residual {residual:e} too large")));
    }
    Ok(x)
}
