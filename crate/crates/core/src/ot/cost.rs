use rayon::prelude::*;

use super::OtError;
use crate::store::EmbeddingMatrix;

/// Dense `n × m` matrix of transport costs `‖s_i - v_j‖_p^p`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    n: usize,
    m: usize,
    p: f64,
    costs: Vec<f64>,
}

impl CostMatrix {
    /// Wraps precomputed costs; entries must be finite and nonnegative.
    pub fn from_raw(n: usize, m: usize, p: f64, costs: Vec<f64>) -> Result<Self, OtError> {
        if n == 0 {
            return Err(OtError::EmptySet("synthetic"));
        }
        if m == 0 {
            return Err(OtError::EmptySet("validation"));
        }
        if costs.len() != n * m {
            return Err(OtError::InvalidArgument(format!(
                "{} costs for a {n}x{m} matrix",
                costs.len()
            )));
        }
        if let Some(k) = costs.iter().position(|c| !c.is_finite() || *c < 0.0) {
            return Err(OtError::InvalidArgument(format!(
                "cost[{}][{}] = {} is not finite and nonnegative",
                k / m,
                k % m,
                costs[k]
            )));
        }
        Ok(Self { n, m, p, costs })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn costs(&self) -> &[f64] {
        &self.costs
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.costs[i * self.m + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.costs[i * self.m..(i + 1) * self.m]
    }

    pub fn mean(&self) -> f64 {
        self.costs.iter().sum::<f64>() / self.costs.len() as f64
    }

    pub fn max(&self) -> f64 {
        self.costs.iter().copied().fold(0.0, f64::max)
    }

    /// Multiplies every entry by `lambda > 0`.
    pub fn scaled(&self, lambda: f64) -> Self {
        Self {
            costs: self.costs.iter().map(|c| c * lambda).collect(),
            ..self.clone()
        }
    }

    pub fn transposed(&self) -> Self {
        let mut costs = vec![0.0; self.costs.len()];
        for i in 0..self.n {
            for j in 0..self.m {
                costs[j * self.n + i] = self.at(i, j);
            }
        }
        Self {
            n: self.m,
            m: self.n,
            p: self.p,
            costs,
        }
    }

    /// Restriction to a subset of rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut costs = Vec::with_capacity(rows.len() * self.m);
        for &r in rows {
            costs.extend_from_slice(self.row(r));
        }
        Self {
            n: rows.len(),
            m: self.m,
            p: self.p,
            costs,
        }
    }
}

/// Pairwise costs `Σ_d |s_id - v_jd|^p` accumulated in `f64`, one parallel task per row.
pub fn cost_matrix(synthetic: &EmbeddingMatrix, validation: &EmbeddingMatrix, p: f64) -> Result<CostMatrix, OtError> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(OtError::BadExponent(p));
    }
    if synthetic.dim() != validation.dim() {
        return Err(OtError::DimMismatch {
            synthetic: synthetic.dim(),
            validation: validation.dim(),
        });
    }
    if synthetic.count() == 0 {
        return Err(OtError::EmptySet("synthetic"));
    }
    if validation.count() == 0 {
        return Err(OtError::EmptySet("validation"));
    }
    let (n, m) = (synthetic.count(), validation.count());
    let targets: Vec<Vec<f64>> = (0..m).map(|j| validation.row_f64(j)).collect();
    let mut costs = vec![0.0f64; n * m];
    costs.par_chunks_mut(m).enumerate().for_each(|(i, out)| {
        let s = synthetic.row_f64(i);
        for (c, v) in out.iter_mut().zip(&targets) {
            *c = s
                .iter()
                .zip(v)
                .map(|(x, y)| {
                    let d = (x - y).abs();
                    if p == 2.0 {
                        d * d
                    } else if p == 1.0 {
                        d
                    } else {
                        d.powf(p)
                    }
                })
                .sum();
        }
    });
    Ok(CostMatrix { n, m, p, costs })
}
