//! Vector geometry: validation centroid, cosine similarity, and a
//! two-component PCA projection used for distribution plots.

use std::io::Write;

use thiserror::Error;

use crate::numeric::{dot, format_significant, l2_norm};
use crate::store::{EmbeddingMatrix, InstanceManifest};

const POWER_TOLERANCE: f64 = 1e-10;
const POWER_MAX_ITER: usize = 10_000;

#[derive(Debug, Error, PartialEq)]
pub enum GeoError {
    #[error("validation set is empty")]
    EmptyValidationSet,
    #[error("cosine of a zero-norm vector is undefined")]
    ZeroNormInput,
    #[error("dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },
    #[error("PCA needs at least 3 rows and 2 dimensions, got {count}x{dim}")]
    TooSmall { count: usize, dim: usize },
    #[error("all rows are identical; covariance is zero")]
    DegenerateInput,
}

/// Arithmetic mean of a set of rows (not renormalized).
#[derive(Debug, Clone, PartialEq)]
pub struct Centroid {
    pub vector: Vec<f64>,
    pub source_count: usize,
}

pub fn centroid(validation: &EmbeddingMatrix) -> Result<Centroid, GeoError> {
    if validation.count() == 0 {
        return Err(GeoError::EmptyValidationSet);
    }
    let mut acc = vec![0.0f64; validation.dim()];
    for row in validation.rows() {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a += v as f64;
        }
    }
    let n = validation.count() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(Centroid {
        vector: acc,
        source_count: validation.count(),
    })
}

/// `a·b / (‖a‖‖b‖)`, clamped to `[-1, 1]`.
pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64, GeoError> {
    if a.len() != b.len() {
        return Err(GeoError::DimMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(GeoError::ZeroNormInput);
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Projection2D {
    pub points: Vec<[f64; 2]>,
    pub explained_variance: (f64, f64),
    /// Unit principal axes in feature space, sign-fixed.
    pub axes: [Vec<f64>; 2],
}

/// Projects centered rows onto the top two eigenvectors of the sample
/// covariance. Each axis is sign-fixed so that its largest-magnitude
/// coordinate is positive.
pub fn pca2(matrix: &EmbeddingMatrix) -> Result<Projection2D, GeoError> {
    let (n, d) = (matrix.count(), matrix.dim());
    if n < 3 || d < 2 {
        return Err(GeoError::TooSmall { count: n, dim: d });
    }
    let mut mean = vec![0.0f64; d];
    for row in matrix.rows() {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered: Vec<Vec<f64>> = matrix
        .rows()
        .map(|r| r.iter().zip(&mean).map(|(&v, m)| v as f64 - m).collect())
        .collect();

    let scale = matrix
        .rows()
        .map(|r| r.iter().map(|&v| (v as f64).powi(2)).sum::<f64>())
        .sum::<f64>()
        / n as f64;
    let denom = (n - 1) as f64;

    // Work in whichever of the d×d covariance or n×n Gram domain is smaller.
    let gram_domain = d > n;
    let size = if gram_domain { n } else { d };
    let mut mat = vec![0.0f64; size * size];
    if gram_domain {
        for i in 0..n {
            for j in i..n {
                let v = dot(&centered[i], &centered[j]) / denom;
                mat[i * n + j] = v;
                mat[j * n + i] = v;
            }
        }
    } else {
        for row in &centered {
            for a in 0..d {
                let ra = row[a];
                if ra == 0.0 {
                    continue;
                }
                for b in a..d {
                    mat[a * d + b] += ra * row[b];
                }
            }
        }
        for a in 0..d {
            for b in a..d {
                let v = mat[a * d + b] / denom;
                mat[a * d + b] = v;
                mat[b * d + a] = v;
            }
        }
    }
    let trace: f64 = (0..size).map(|i| mat[i * size + i]).sum();
    if trace.is_nan() || trace <= 1e-20 * scale.max(1.0) {
        return Err(GeoError::DegenerateInput);
    }

    let (lambda1, v1) = power_iteration(&mat, size, None);
    // Deflate the top pair, then iterate again orthogonally to it.
    for a in 0..size {
        for b in 0..size {
            mat[a * size + b] -= lambda1 * v1[a] * v1[b];
        }
    }
    let (lambda2, v2) = power_iteration(&mat, size, Some(&v1));
    let lambda1 = lambda1.max(0.0);
    let lambda2 = lambda2.max(0.0).min(lambda1);

    let to_feature = |u: &[f64]| -> Vec<f64> {
        if !gram_domain {
            return u.to_vec();
        }
        let mut v = vec![0.0f64; d];
        for (row, &w) in centered.iter().zip(u) {
            for (acc, x) in v.iter_mut().zip(row) {
                *acc += w * x;
            }
        }
        let norm = l2_norm(&v);
        if norm > 0.0 {
            v.iter_mut().for_each(|x| *x /= norm);
        }
        v
    };
    let axes = [fix_sign(to_feature(&v1)), fix_sign(to_feature(&v2))];
    let points = centered.iter().map(|r| [dot(r, &axes[0]), dot(r, &axes[1])]).collect();
    Ok(Projection2D {
        points,
        explained_variance: ((lambda1 / trace).clamp(0.0, 1.0), (lambda2 / trace).clamp(0.0, 1.0)),
        axes,
    })
}

fn fix_sign(mut v: Vec<f64>) -> Vec<f64> {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
    v
}

/// Dominant eigenpair of a symmetric matrix. With `orthogonal_to`, iterates
/// in the complement of that unit vector.
fn power_iteration(mat: &[f64], size: usize, orthogonal_to: Option<&[f64]>) -> (f64, Vec<f64>) {
    let project = |v: &mut Vec<f64>| {
        if let Some(u) = orthogonal_to {
            let c = dot(v, u);
            v.iter_mut().zip(u).for_each(|(x, y)| *x -= c * y);
        }
    };
    // Deterministic, well-spread start vector (golden-ratio sequence).
    let mut v: Vec<f64> = (0..size)
        .map(|i| 0.5 + ((i as f64 + 1.0) * 0.618_033_988_749_894_9).fract())
        .collect();
    project(&mut v);
    let norm = l2_norm(&v);
    if norm == 0.0 {
        return (0.0, v);
    }
    v.iter_mut().for_each(|x| *x /= norm);

    let mut w = vec![0.0f64; size];
    for _ in 0..POWER_MAX_ITER {
        for (a, out) in w.iter_mut().enumerate() {
            *out = dot(&mat[a * size..(a + 1) * size], &v);
        }
        project(&mut w);
        let norm = l2_norm(&w);
        if norm == 0.0 {
            return (0.0, v);
        }
        let mut same = 0.0f64;
        let mut flipped = 0.0f64;
        for (x, y) in w.iter_mut().zip(&v) {
            *x /= norm;
            same += (*x - y).powi(2);
            flipped += (*x + y).powi(2);
        }
        std::mem::swap(&mut v, &mut w);
        if same.min(flipped).sqrt() < POWER_TOLERANCE {
            break;
        }
    }
    let mv: Vec<f64> = (0..size).map(|a| dot(&mat[a * size..(a + 1) * size], &v)).collect();
    (dot(&v, &mv), v)
}

/// Writes `id,pc1,pc2,label` rows with 9 significant digits.
pub fn write_projection_csv<W: Write>(
    out: W,
    manifest: &InstanceManifest,
    projection: &Projection2D,
) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["id", "pc1", "pc2", "label"])?;
    for (rec, p) in manifest.records.iter().zip(&projection.points) {
        let label = rec.label.map(|l| l.to_string()).unwrap_or_default();
        w.write_record([
            rec.id.as_str(),
            &format_significant(p[0], 9),
            &format_significant(p[1], 9),
            &label,
        ])?;
    }
    w.flush()?;
    Ok(())
}
