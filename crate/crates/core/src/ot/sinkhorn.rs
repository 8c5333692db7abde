//! Entropic OT by log-domain Sinkhorn iterations.
//!
//! Potentials are kept in cost units: `π_ij = exp((f_i + g_j - c_ij) / ε)`.
//! The solve is warm-started by annealing ε geometrically from the largest
//! cost down to the target. At small ε plain sweeps crawl once the violation
//! is small, so the final stage interleaves Newton steps on the semi-dual
//! `F(f) = <a, f> + <b, g(f)>`, where `g(f)` is the exact column update.

use crate::numeric::compensated_sum;

use super::{
    check_marginals, marginal_violation, primal_dual_values, CostMatrix, OtError, SolverKind, TransportSolution,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    pub epsilon: f64,
    /// Target max marginal violation.
    pub tol: f64,
    /// Budget shared by Sinkhorn sweeps and Newton steps.
    pub max_iter: usize,
}

/// Per-stage iteration budget while annealing toward the target ε.
const STAGE_ITERS: usize = 200;
/// Violation at which an annealing stage hands over to the next one.
const STAGE_TOL: f64 = 1e-6;
const ANNEAL_FACTOR: f64 = 0.5;
/// Plain sweeps at the target ε between Newton attempts.
const SWEEPS_PER_NEWTON: usize = 500;
const NEWTON_STEPS: usize = 20;

pub fn solve_sinkhorn(
    cost: &CostMatrix,
    a: &[f64],
    b: &[f64],
    config: &SinkhornConfig,
) -> Result<TransportSolution, OtError> {
    let eps = config.epsilon;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(OtError::InvalidArgument(format!("epsilon must be positive, got {eps}")));
    }
    if config.tol.is_nan() || config.tol <= 0.0 {
        return Err(OtError::InvalidArgument(format!(
            "tol must be positive, got {}",
            config.tol
        )));
    }
    check_marginals(cost, a, b)?;
    for (name, w) in [("a", a), ("b", b)] {
        if let Some(i) = w.iter().position(|x| *x <= 0.0) {
            return Err(OtError::DegenerateMarginal(format!(
                "{name}[{i}] = 0; entropic solves need strictly positive weights"
            )));
        }
    }

    let mut state = State::new(cost, a, b);
    let mut stage_eps = cost.max().max(eps);
    let mut used = 0usize;
    while stage_eps > eps {
        let budget = STAGE_ITERS.min(config.max_iter.saturating_sub(used));
        used += state.iterate(stage_eps, STAGE_TOL.max(config.tol), budget).0;
        stage_eps = (stage_eps * ANNEAL_FACTOR).max(eps);
    }

    let mut best: Option<TransportSolution> = None;
    // The in-loop violation estimate can differ from the exact one in the
    // last bits; tighten the internal target if they disagree.
    let mut target = config.tol;
    let mut newton = true;
    loop {
        let budget = SWEEPS_PER_NEWTON.min(config.max_iter.saturating_sub(used));
        let (spent, converged) = state.iterate(eps, target, budget);
        used += spent;
        if !converged && newton && used < config.max_iter {
            let steps = state.newton(eps, config.tol, NEWTON_STEPS.min(config.max_iter - used));
            // A Newton pass that cannot improve is not retried.
            newton = steps.1;
            used += steps.0;
        }
        let sol = state.solution(cost, a, b, eps, used);
        if sol.marginal_violation <= config.tol {
            return Ok(sol);
        }
        if best
            .as_ref()
            .is_none_or(|b| sol.marginal_violation < b.marginal_violation)
        {
            best = Some(sol);
        }
        if converged {
            target *= 0.5;
        }
        if used >= config.max_iter || spent == 0 {
            return Err(OtError::NonConvergence {
                best: Box::new(best.expect("at least one iterate")),
            });
        }
    }
}

struct State<'a> {
    cost: &'a CostMatrix,
    /// Column-major copy so the g update streams contiguously.
    cost_t: Vec<f64>,
    log_a: Vec<f64>,
    log_b: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    next_f: Vec<f64>,
}

impl<'a> State<'a> {
    fn new(cost: &'a CostMatrix, a: &[f64], b: &[f64]) -> Self {
        Self {
            cost,
            cost_t: cost.transposed().costs().to_vec(),
            log_a: a.iter().map(|x| x.ln()).collect(),
            log_b: b.iter().map(|x| x.ln()).collect(),
            f: vec![0.0; a.len()],
            g: vec![0.0; b.len()],
            next_f: vec![0.0; a.len()],
        }
    }

    /// Alternating updates; stops once the current `(f, g)` has row
    /// violation at most `tol` (columns are exact right after a g update).
    /// Returns the number of full updates and whether it converged.
    fn iterate(&mut self, eps: f64, tol: f64, budget: usize) -> (usize, bool) {
        let (n, m) = (self.cost.n(), self.cost.m());
        // Bring g in line with the current f and ε first.
        if budget == 0 {
            return (0, false);
        }
        self.update_g(eps);
        let mut done = 1;
        loop {
            // The f update also measures the row sums of the current iterate:
            // row_i = a_i exp((f_i - f'_i) / ε).
            let mut viol = 0.0f64;
            for i in 0..n {
                let row = self.cost.row(i);
                let lse = log_sum_exp((0..m).map(|j| (self.g[j] - row[j]) / eps));
                let nf = eps * (self.log_a[i] - lse);
                let ai = self.log_a[i].exp();
                viol = viol.max(ai * ((self.f[i] - nf) / eps).exp_m1().abs());
                self.next_f[i] = nf;
            }
            if viol <= tol {
                return (done, true);
            }
            if done >= budget {
                return (done, false);
            }
            std::mem::swap(&mut self.f, &mut self.next_f);
            self.update_g(eps);
            done += 1;
        }
    }

    fn update_g(&mut self, eps: f64) {
        let n = self.cost.n();
        for (j, gj) in self.g.iter_mut().enumerate() {
            let col = &self.cost_t[j * n..(j + 1) * n];
            let lse = log_sum_exp((0..n).map(|i| (self.f[i] - col[i]) / eps));
            *gj = eps * (self.log_b[j] - lse);
        }
    }

    /// Coupling for the current potentials and the worst row violation.
    fn plan(&self, eps: f64, plan: &mut [f64], rows: &mut [f64]) -> f64 {
        let m = self.cost.m();
        let mut worst = 0.0f64;
        for (i, r) in rows.iter_mut().enumerate() {
            let row = self.cost.row(i);
            let out = &mut plan[i * m..(i + 1) * m];
            for j in 0..m {
                out[j] = ((self.f[i] + self.g[j] - row[j]) / eps).exp();
            }
            *r = compensated_sum(out.iter().copied());
            worst = worst.max((*r - self.log_a[i].exp()).abs());
        }
        worst
    }

    /// Damped Newton steps on the semi-dual. The Hessian in `f` is
    /// `S / ε` with `S = diag(r) - P diag(1/b) Pᵀ`, whose null space is the
    /// constant vector, so the system is solved with `δf_0 = 0`. A step is
    /// kept only if it lowers the row violation. Returns the steps taken and
    /// whether the last attempt improved.
    fn newton(&mut self, eps: f64, tol: f64, budget: usize) -> (usize, bool) {
        let (n, m) = (self.cost.n(), self.cost.m());
        let a: Vec<f64> = self.log_a.iter().map(|x| x.exp()).collect();
        let b: Vec<f64> = self.log_b.iter().map(|x| x.exp()).collect();
        let mut plan = vec![0.0; n * m];
        let mut rows = vec![0.0; n];
        self.update_g(eps);
        let mut viol = self.plan(eps, &mut plan, &mut rows);
        let mut steps = 0;
        while steps < budget && viol > tol {
            steps += 1;
            let rhs: Vec<f64> = a.iter().zip(&rows).map(|(x, r)| eps * (x - r)).collect();
            let step = solve_schur(&plan, &rows, &b, &rhs, n, m);
            let start = self.f.clone();
            let mut improved = false;
            let mut t = 1.0;
            for _ in 0..30 {
                for (fi, (s0, d)) in self.f.iter_mut().zip(start.iter().zip(&step)) {
                    *fi = s0 + t * d;
                }
                self.update_g(eps);
                let v = self.plan(eps, &mut plan, &mut rows);
                if v < viol {
                    viol = v;
                    improved = true;
                    break;
                }
                t *= 0.5;
            }
            if !improved {
                self.f = start;
                self.update_g(eps);
                return (steps, false);
            }
        }
        (steps, true)
    }

    fn solution(&self, cost: &CostMatrix, a: &[f64], b: &[f64], eps: f64, iterations: usize) -> TransportSolution {
        let (n, m) = (cost.n(), cost.m());
        let mut plan = vec![0.0f64; n * m];
        for i in 0..n {
            let row = cost.row(i);
            for j in 0..m {
                plan[i * m + j] = ((self.f[i] + self.g[j] - row[j]) / eps).exp();
            }
        }
        let (primal_value, dual_value) = primal_dual_values(cost, &plan, &self.f, &self.g, a, b);
        TransportSolution {
            n,
            m,
            marginal_violation: marginal_violation(&plan, a, b),
            plan,
            f: self.f.clone(),
            g: self.g.clone(),
            primal_value,
            dual_value,
            solver: SolverKind::Sinkhorn,
            epsilon: eps,
            iterations,
        }
    }
}

/// Solves `(diag(r) - P diag(1/b) Pᵀ) x = rhs` with `x_0 = 0` by
/// Jacobi-preconditioned conjugate gradients, without forming the matrix.
fn solve_schur(plan: &[f64], rows: &[f64], b: &[f64], rhs: &[f64], n: usize, m: usize) -> Vec<f64> {
    let apply = |x: &[f64], out: &mut [f64]| {
        let mut col = vec![0.0; m];
        for i in 0..n {
            let p = &plan[i * m..(i + 1) * m];
            for j in 0..m {
                col[j] += p[j] * x[i];
            }
        }
        for (c, bj) in col.iter_mut().zip(b) {
            *c /= bj;
        }
        for i in 0..n {
            let p = &plan[i * m..(i + 1) * m];
            out[i] = rows[i] * x[i] - p.iter().zip(&col).map(|(x, y)| x * y).sum::<f64>();
        }
        out[0] = 0.0;
    };
    let diag: Vec<f64> = (0..n)
        .map(|i| {
            let p = &plan[i * m..(i + 1) * m];
            let d = rows[i] - p.iter().zip(b).map(|(x, bj)| x * x / bj).sum::<f64>();
            if d > 0.0 {
                d
            } else {
                rows[i].max(f64::MIN_POSITIVE)
            }
        })
        .collect();
    let mut x = vec![0.0; n];
    let mut r = rhs.to_vec();
    r[0] = 0.0;
    let norm0 = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm0 == 0.0 {
        return x;
    }
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(v, d)| v / d).collect();
    let mut p = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(x, y)| x * y).sum();
    let mut ap = vec![0.0; n];
    for _ in 0..(2 * n).max(50) {
        apply(&p, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(x, y)| x * y).sum();
        if pap.is_nan() || pap <= 0.0 {
            break;
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if r.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1e-14 * norm0 {
            break;
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let next: f64 = r.iter().zip(&z).map(|(x, y)| x * y).sum();
        let beta = next / rz;
        rz = next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    x
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::{solve_exact, uniform_marginal};

    fn pseudo_costs(n: usize, m: usize, seed: u64) -> CostMatrix {
        let mut x = seed;
        let mut next = || {
            x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (x >> 11) as f64 / (1u64 << 53) as f64
        };
        let costs = (0..n * m).map(|_| next() * 4.0).collect();
        CostMatrix::from_raw(n, m, 2.0, costs).unwrap()
    }

    fn cfg(eps: f64) -> SinkhornConfig {
        SinkhornConfig {
            epsilon: eps,
            tol: 1e-9,
            max_iter: 100_000,
        }
    }

    #[test]
    fn identical_points_cost_nothing() {
        let pts = [0.0, 0.5, 1.0];
        let costs: Vec<f64> = pts
            .iter()
            .flat_map(|x| pts.iter().map(move |y| (x - y) * (x - y)))
            .collect();
        let c = CostMatrix::from_raw(3, 3, 2.0, costs).unwrap();
        let u = uniform_marginal(3);
        let s = solve_sinkhorn(&c, &u, &u, &cfg(0.01)).unwrap();
        assert!(s.primal_value <= 1e-6, "{}", s.primal_value);
        assert!(s.marginal_violation <= 1e-9);
    }

    #[test]
    fn small_epsilon_matches_exact() {
        let c = pseudo_costs(8, 5, 7);
        let (a, b) = (uniform_marginal(8), uniform_marginal(5));
        let exact = solve_exact(&c, &a, &b).unwrap();
        let s = solve_sinkhorn(&c, &a, &b, &cfg(0.001 * c.mean())).unwrap();
        assert!((s.primal_value - exact.primal_value).abs() <= 0.02 * exact.primal_value);
        assert!(s.primal_value >= s.dual_value - s.epsilon * 40.0);
    }

    #[test]
    fn newton_polish_reaches_tight_tolerance_at_small_epsilon() {
        let c = pseudo_costs(64, 16, 11);
        let (a, b) = (uniform_marginal(64), uniform_marginal(16));
        let config = SinkhornConfig {
            max_iter: 20_000,
            ..cfg(0.001 * c.mean())
        };
        let s = solve_sinkhorn(&c, &a, &b, &config).unwrap();
        assert!(s.marginal_violation <= 1e-9);
        assert!(s.iterations < 20_000);
    }

    #[test]
    fn decreasing_epsilon_approaches_exact() {
        for seed in 0..5 {
            let c = pseudo_costs(8, 5, seed);
            let (a, b) = (uniform_marginal(8), uniform_marginal(5));
            let exact = solve_exact(&c, &a, &b).unwrap().primal_value;
            let gaps: Vec<f64> = [0.1, 0.01, 0.001]
                .iter()
                .map(|r| solve_sinkhorn(&c, &a, &b, &cfg(r * c.mean())).unwrap().primal_value - exact)
                .collect();
            assert!(gaps[0] >= gaps[1] && gaps[1] >= gaps[2], "{gaps:?}");
            assert!(gaps[2].abs() <= 1e-3 * exact, "{gaps:?}");
        }
    }

    #[test]
    fn rejects_zero_mass_and_reports_nonconvergence() {
        let c = pseudo_costs(2, 2, 1);
        assert!(matches!(
            solve_sinkhorn(&c, &[1.0, 0.0], &[0.5, 0.5], &cfg(0.1)),
            Err(OtError::DegenerateMarginal(_))
        ));
        let tight = SinkhornConfig {
            epsilon: 1e-4,
            tol: 1e-15,
            max_iter: 3,
        };
        let c = pseudo_costs(6, 4, 3);
        match solve_sinkhorn(&c, &uniform_marginal(6), &uniform_marginal(4), &tight) {
            Err(OtError::NonConvergence { best }) => {
                assert!(best.marginal_violation > 1e-15);
                assert!(best.iterations <= 3);
            }
            other => panic!("expected NonConvergence, got {other:?}"),
        }
    }

    #[test]
    fn deterministic() {
        let c = pseudo_costs(9, 4, 11);
        let (a, b) = (uniform_marginal(9), uniform_marginal(4));
        let x = solve_sinkhorn(&c, &a, &b, &cfg(0.05)).unwrap();
        let y = solve_sinkhorn(&c, &a, &b, &cfg(0.05)).unwrap();
        assert_eq!(x, y);
    }
}
