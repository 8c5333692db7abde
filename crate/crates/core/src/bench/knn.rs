use super::BenchError;
use crate::store::EmbeddingMatrix;

/// Euclidean k-nearest-neighbor majority vote. Equal distances are ordered
/// by training row; a tied vote goes to label 0.
pub fn knn_classify(
    train: &EmbeddingMatrix,
    labels: &[u8],
    test: &EmbeddingMatrix,
    k_neighbors: usize,
) -> Result<Vec<u8>, BenchError> {
    if train.count() == 0 {
        return Err(BenchError::EmptyTrainingSet);
    }
    if labels.len() != train.count() {
        return Err(BenchError::LengthMismatch {
            left: labels.len(),
            right: train.count(),
        });
    }
    if k_neighbors == 0 || k_neighbors > train.count() {
        return Err(BenchError::Config(format!(
            "k_neighbors = {k_neighbors} must lie in 1..={}",
            train.count()
        )));
    }
    if train.dim() != test.dim() {
        return Err(BenchError::LengthMismatch {
            left: train.dim(),
            right: test.dim(),
        });
    }
    let train_rows: Vec<Vec<f64>> = (0..train.count()).map(|r| train.row_f64(r)).collect();
    let mut dist: Vec<(f64, usize)> = Vec::with_capacity(train.count());
    let mut out = Vec::with_capacity(test.count());
    for t in 0..test.count() {
        let x = test.row_f64(t);
        dist.clear();
        dist.extend(train_rows.iter().enumerate().map(|(r, y)| {
            let d: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
            (d, r)
        }));
        if k_neighbors < dist.len() {
            dist.select_nth_unstable_by(k_neighbors - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        }
        let ones = dist[..k_neighbors].iter().filter(|(_, r)| labels[*r] == 1).count();
        out.push(u8::from(2 * ones > k_neighbors));
    }
    Ok(out)
}
