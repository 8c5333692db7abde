//! Calibrated Wasserstein gradients.
//!
//! Dual potentials are only defined up to an additive constant, so the raw
//! `f_i` is not a sensitivity. Moving mass `δ` onto row `i` while removing
//! `δ/(n-1)` from every other row keeps `a` on the simplex, and the first
//! order change of the transport cost along that direction is
//! `f_i - Σ_{j≠i} f_j / (n-1)`, which equals `n/(n-1) (f_i - mean f)`.

use super::{check_marginals, solve_exact, CostMatrix, OtError, TransportSolution};
use crate::numeric::compensated_sum;

#[derive(Debug, Clone, PartialEq)]
pub struct GradientScores {
    pub scores: Vec<f64>,
    /// Row indices by ascending score; ties keep ascending index order.
    pub ranking: Vec<usize>,
}

impl GradientScores {
    pub fn from_potentials(f: &[f64]) -> Result<Self, OtError> {
        let n = f.len();
        if n < 2 {
            return Err(OtError::TooFewSources(n));
        }
        let mean = compensated_sum(f.iter().copied()) / n as f64;
        let scale = n as f64 / (n - 1) as f64;
        let scores: Vec<f64> = f.iter().map(|x| scale * (x - mean)).collect();
        let ranking = ascending_ranking(&scores);
        Ok(Self { scores, ranking })
    }
}

/// Stable ascending order of `scores` by index.
pub(crate) fn ascending_ranking(scores: &[f64]) -> Vec<usize> {
    let mut ranking: Vec<usize> = (0..scores.len()).collect();
    ranking.sort_by(|&x, &y| scores[x].total_cmp(&scores[y]));
    ranking
}

pub fn calibrated_gradients(solution: &TransportSolution) -> Result<GradientScores, OtError> {
    GradientScores::from_potentials(&solution.f)
}

/// Forward difference of the exact transport cost along the calibrated
/// direction for row `i`, next to the analytic calibrated score.
pub fn directional_derivative_check(
    cost: &CostMatrix,
    a: &[f64],
    b: &[f64],
    i: usize,
    delta: f64,
) -> Result<(f64, f64), OtError> {
    let n = cost.n();
    if n < 2 {
        return Err(OtError::TooFewSources(n));
    }
    if i >= n {
        return Err(OtError::InvalidArgument(format!("row {i} out of range for {n} rows")));
    }
    if !(delta > 0.0 && delta <= 1e-3) {
        return Err(OtError::InvalidArgument(format!(
            "delta must lie in (0, 1e-3], got {delta}"
        )));
    }
    check_marginals(cost, a, b)?;
    let share = delta / (n - 1) as f64;
    let mut perturbed = a.to_vec();
    for (j, w) in perturbed.iter_mut().enumerate() {
        if j == i {
            *w += delta;
        } else {
            *w -= share;
            if *w < 0.0 {
                return Err(OtError::SimplexViolation { index: j });
            }
        }
    }
    let base = solve_exact(cost, a, b)?;
    let moved = solve_exact(cost, &perturbed, b)?;
    let analytic = calibrated_gradients(&base)?.scores[i];
    Ok(((moved.primal_value - base.primal_value) / delta, analytic))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ot::uniform_marginal;

    #[test]
    fn two_point_algebra() {
        let g = GradientScores::from_potentials(&[0.0, 1.0]).unwrap();
        assert_eq!(g.scores, vec![-1.0, 1.0]);
        assert_eq!(g.ranking, vec![0, 1]);
        let h = GradientScores::from_potentials(&[5.0, 6.0]).unwrap();
        assert_eq!(h, g);
        let c = GradientScores::from_potentials(&[2.5; 7]).unwrap();
        assert!(c.scores.iter().all(|s| *s == 0.0));
        assert_eq!(c.ranking, (0..7).collect::<Vec<_>>());
    }

    #[test]
    fn too_few_sources() {
        assert!(matches!(
            GradientScores::from_potentials(&[1.0]),
            Err(OtError::TooFewSources(1))
        ));
    }

    #[test]
    fn two_to_one_finite_difference() {
        let c = CostMatrix::from_raw(2, 1, 2.0, vec![0.0, 1.0]).unwrap();
        let (fd, analytic) = directional_derivative_check(&c, &[0.5, 0.5], &[1.0], 0, 1e-4).unwrap();
        assert_eq!(analytic, -1.0);
        assert!((fd - analytic).abs() <= 1e-3);
    }

    #[test]
    fn perturbation_must_stay_on_simplex() {
        let c = CostMatrix::from_raw(3, 1, 2.0, vec![0.0, 1.0, 2.0]).unwrap();
        assert!(matches!(
            directional_derivative_check(&c, &[0.5, 0.5, 0.0], &[1.0], 0, 1e-4),
            Err(OtError::SimplexViolation { index: 2 })
        ));
        assert!(matches!(
            directional_derivative_check(&c, &uniform_marginal(3), &[1.0], 0, 0.01),
            Err(OtError::InvalidArgument(_))
        ));
    }
}
