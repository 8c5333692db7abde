use super::BenchError;

/// Unweighted mean of the per-class F1 over labels 0 and 1, with
/// `F1 = 2tp / (2tp + fp + fn)` and 0 when that denominator is 0.
pub fn macro_f1(predictions: &[u8], truth: &[u8]) -> Result<f64, BenchError> {
    if predictions.len() != truth.len() {
        return Err(BenchError::LengthMismatch {
            left: predictions.len(),
            right: truth.len(),
        });
    }
    if truth.is_empty() {
        return Err(BenchError::Config("macro-F1 of an empty set".into()));
    }
    let mut total = 0.0;
    for class in [0u8, 1] {
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for (&p, &t) in predictions.iter().zip(truth) {
            match (p == class, t == class) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let denom = 2 * tp + fp + fn_;
        if denom > 0 {
            total += (2 * tp) as f64 / denom as f64;
        }
    }
    Ok(total / 2.0)
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}
