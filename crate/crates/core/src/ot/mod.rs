//! Optimal transport between a synthetic pool and a validation sample.
//!
//! The pool and validation rows are treated as discrete measures with
//! weights `a` and `b` (uniform by default). The transport cost is
//! `Σ π_ij c_ij` with `c_ij = Σ_d |s_id - v_jd|^p`, i.e. `W_p^p`; the dual
//! potentials `(f, g)` of that linear program drive the calibrated gradients
//! in [`gradient`].

mod cost;
mod exact;
mod gradient;
mod sinkhorn;

use serde::Serialize;
use thiserror::Error;

use crate::numeric::compensated_sum;

pub use cost::{cost_matrix, CostMatrix};
pub use exact::{solve_exact, solve_exact_with_limit, DEFAULT_EXACT_MAX_CELLS};
pub use gradient::{calibrated_gradients, directional_derivative_check, GradientScores};
pub use sinkhorn::{solve_sinkhorn, SinkhornConfig};

/// Tolerance on `Σ a = 1` and `Σ b = 1`.
pub const MARGINAL_SUM_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum OtError {
    #[error("dimension mismatch: synthetic dim {synthetic}, validation dim {validation}")]
    DimMismatch { synthetic: usize, validation: usize },
    #[error("{0} set is empty")]
    EmptySet(&'static str),
    #[error("cost exponent p must be >= 1 and finite, got {0}")]
    BadExponent(f64),
    #[error("cost matrix has {n}x{m} = {cells} cells, above the exact-solver limit {limit}")]
    SizeExceeded {
        n: usize,
        m: usize,
        cells: usize,
        limit: usize,
    },
    #[error("degenerate marginal: {0}")]
    DegenerateMarginal(String),
    #[error("transportation simplex hit its iteration cap ({0} pivots)")]
    CycleLimit(usize),
    #[error("Sinkhorn did not converge: marginal violation {} after {} iterations", .best.marginal_violation, .best.iterations)]
    NonConvergence { best: Box<TransportSolution> },
    #[error("calibrated gradients need at least 2 source points, got {0}")]
    TooFewSources(usize),
    #[error("perturbation drives a[{index}] below zero")]
    SimplexViolation { index: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Exact,
    Sinkhorn,
}

/// Coupling, dual potentials and diagnostics of one transport solve.
#[derive(Debug, Clone, PartialEq)]
pub struct TransportSolution {
    pub n: usize,
    pub m: usize,
    /// Row-major `n × m` coupling.
    pub plan: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    pub primal_value: f64,
    pub dual_value: f64,
    pub solver: SolverKind,
    pub epsilon: f64,
    pub iterations: usize,
    pub marginal_violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverDiagnostics {
    pub solver: SolverKind,
    pub n: usize,
    pub m: usize,
    pub primal_value: f64,
    pub dual_value: f64,
    pub epsilon: f64,
    pub iterations: usize,
    pub marginal_violation: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub g: Option<Vec<f64>>,
}

impl TransportSolution {
    pub fn plan_at(&self, i: usize, j: usize) -> f64 {
        self.plan[i * self.m + j]
    }

    pub fn diagnostics(&self, with_potentials: bool) -> SolverDiagnostics {
        SolverDiagnostics {
            solver: self.solver,
            n: self.n,
            m: self.m,
            primal_value: self.primal_value,
            dual_value: self.dual_value,
            epsilon: self.epsilon,
            iterations: self.iterations,
            marginal_violation: self.marginal_violation,
            f: with_potentials.then(|| self.f.clone()),
            g: with_potentials.then(|| self.g.clone()),
        }
    }

    /// Diagnostic JSON document.
    pub fn to_json(&self, with_potentials: bool) -> String {
        serde_json::to_string_pretty(&self.diagnostics(with_potentials)).expect("diagnostics serialize")
    }

    pub fn duality_gap(&self) -> f64 {
        self.primal_value - self.dual_value
    }
}

/// Solver dispatch: exact below `exact_max_cells`, Sinkhorn above.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub exact_max_cells: usize,
    /// Absolute entropic regularization; `None` means `relative_epsilon × mean(cost)`.
    pub epsilon: Option<f64>,
    pub relative_epsilon: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            exact_max_cells: DEFAULT_EXACT_MAX_CELLS,
            epsilon: None,
            relative_epsilon: 0.01,
            tol: 1e-9,
            max_iter: 10_000,
        }
    }
}

impl SolverConfig {
    pub fn sinkhorn_for(&self, cost: &CostMatrix) -> SinkhornConfig {
        let mean = cost.mean();
        let epsilon = self
            .epsilon
            .unwrap_or(self.relative_epsilon * if mean > 0.0 { mean } else { 1.0 });
        SinkhornConfig {
            epsilon,
            tol: self.tol,
            max_iter: self.max_iter,
        }
    }
}

pub fn solve(cost: &CostMatrix, a: &[f64], b: &[f64], config: &SolverConfig) -> Result<TransportSolution, OtError> {
    if cost.n() * cost.m() <= config.exact_max_cells {
        solve_exact_with_limit(cost, a, b, config.exact_max_cells)
    } else {
        solve_sinkhorn(cost, a, b, &config.sinkhorn_for(cost))
    }
}

pub fn uniform_marginal(len: usize) -> Vec<f64> {
    vec![1.0 / len as f64; len]
}

pub(crate) fn check_marginals(cost: &CostMatrix, a: &[f64], b: &[f64]) -> Result<(), OtError> {
    for (name, w, len) in [("a", a, cost.n()), ("b", b, cost.m())] {
        if w.len() != len {
            return Err(OtError::DegenerateMarginal(format!(
                "{name} has length {}, expected {len}",
                w.len()
            )));
        }
        if let Some(i) = w.iter().position(|x| !x.is_finite() || *x < 0.0) {
            return Err(OtError::DegenerateMarginal(format!("{name}[{i}] = {}", w[i])));
        }
        let s = compensated_sum(w.iter().copied());
        if (s - 1.0).abs() > MARGINAL_SUM_TOLERANCE {
            return Err(OtError::DegenerateMarginal(format!("{name} sums to {s}, not 1")));
        }
    }
    Ok(())
}

/// Max absolute deviation of the plan's row/column sums from `a`, `b`.
pub(crate) fn marginal_violation(plan: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let m = b.len();
    let mut worst = 0.0f64;
    for (i, ai) in a.iter().enumerate() {
        let s = compensated_sum(plan[i * m..(i + 1) * m].iter().copied());
        worst = worst.max((s - ai).abs());
    }
    for (j, bj) in b.iter().enumerate() {
        let s = compensated_sum((0..a.len()).map(|i| plan[i * m + j]));
        worst = worst.max((s - bj).abs());
    }
    worst
}

pub(crate) fn primal_dual_values(
    cost: &CostMatrix,
    plan: &[f64],
    f: &[f64],
    g: &[f64],
    a: &[f64],
    b: &[f64],
) -> (f64, f64) {
    let primal = compensated_sum(plan.iter().zip(cost.costs()).map(|(x, c)| x * c));
    let dual = compensated_sum(
        f.iter()
            .zip(a)
            .map(|(x, y)| x * y)
            .chain(g.iter().zip(b).map(|(x, y)| x * y)),
    );
    (primal, dual)
}
