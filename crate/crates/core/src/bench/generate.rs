use rand::Rng;
use rand_distr::{Distribution, Normal};
use statrs::distribution::{ContinuousCDF, Normal as StdNormal};

use super::{BenchConfig, ClusterSpec};
use crate::numeric::l2_norm;
use crate::rng::{self, streams};
use crate::store::{EmbeddingMatrix, InstanceManifest, InstanceRecord};

/// One labeled split: unit-norm rows plus a manifest whose `source` holds
/// the generating cluster as `cluster-<index>`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub matrix: EmbeddingMatrix,
    pub manifest: InstanceManifest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchData {
    pub pool: LabeledSet,
    pub validation: LabeledSet,
    pub test: LabeledSet,
}

pub fn cluster_tag(index: usize) -> String {
    format!("cluster-{index}")
}

/// Draws the pool (split evenly across clusters, earlier clusters taking any
/// remainder) and the validation and test sets (target cluster only).
pub fn generate(config: &BenchConfig, seed: u64) -> BenchData {
    let c = config.clusters.len();
    let counts: Vec<usize> = (0..c)
        .map(|i| config.pool_size / c + usize::from(i < config.pool_size % c))
        .collect();
    let mut pool_rng = rng::stream(seed, streams::BENCH_POOL);
    let plan: Vec<(usize, usize)> = counts.iter().copied().enumerate().collect();
    let pool = draw(config, &plan, "pool", &mut pool_rng);
    let target = config.target_cluster;
    let validation = draw(
        config,
        &[(target, config.validation_size)],
        "val",
        &mut rng::stream(seed, streams::BENCH_VALIDATION),
    );
    let test = draw(
        config,
        &[(target, config.test_size)],
        "test",
        &mut rng::stream(seed, streams::BENCH_TEST),
    );
    BenchData { pool, validation, test }
}

fn draw<R: Rng>(config: &BenchConfig, plan: &[(usize, usize)], prefix: &str, rng: &mut R) -> LabeledSet {
    let total: usize = plan.iter().map(|(_, n)| n).sum();
    let width = total.max(1).to_string().len();
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(total);
    let mut records = Vec::with_capacity(total);
    for &(cluster, count) in plan {
        let spec = &config.clusters[cluster];
        let noise = Normal::new(0.0, spec.stddev).expect("stddev validated positive");
        let threshold = label_threshold(spec);
        for _ in 0..count {
            let z: Vec<f64> = (0..config.dim).map(|_| noise.sample(rng)).collect();
            let label = u8::from(spec.label_sign * z[spec.label_axis] > threshold);
            let mut x: Vec<f64> = spec.mean.iter().zip(&z).map(|(m, e)| m + e).collect();
            let norm = l2_norm(&x);
            if norm > 0.0 {
                x.iter_mut().for_each(|v| *v /= norm);
            }
            let mut rec = InstanceRecord::new(format!("{prefix}-{:0width$}", records.len()), Some(label));
            rec.source = Some(cluster_tag(cluster));
            records.push(rec);
            rows.push(x);
        }
    }
    let matrix = EmbeddingMatrix::from_rows(&rows, config.dim).expect("generated rows are finite");
    LabeledSet {
        matrix,
        manifest: InstanceManifest::new(records),
    }
}

/// Noise level above which a point is labeled 1, so that a `class_mix`
/// fraction of the cluster lands on the label-1 side.
fn label_threshold(spec: &ClusterSpec) -> f64 {
    if spec.class_mix <= 0.0 {
        return f64::INFINITY;
    }
    if spec.class_mix >= 1.0 {
        return f64::NEG_INFINITY;
    }
    let z = StdNormal::standard().inverse_cdf(1.0 - spec.class_mix);
    z * spec.stddev
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_cluster(mean: Vec<f64>, stddev: f64, mix: f64, n: usize) -> BenchConfig {
        let mut c = BenchConfig::default_three_cluster();
        c.dim = mean.len();
        c.clusters = vec![ClusterSpec {
            mean,
            stddev,
            class_mix: mix,
            label_axis: 1,
            label_sign: 1.0,
        }];
        c.pool_size = n;
        c.k = n.min(c.k);
        c.k_neighbors = 1;
        c
    }

    #[test]
    fn tiny_noise_collapses_to_the_normalized_mean() {
        let c = one_cluster(vec![3.0, 4.0], 1e-12, 0.5, 50);
        let d = generate(&c, 1);
        for r in 0..50 {
            let row = d.pool.matrix.row_f64(r);
            assert!((row[0] - 0.6).abs() < 1e-6 && (row[1] - 0.8).abs() < 1e-6);
        }
    }

    #[test]
    fn class_mix_is_respected() {
        for mix in [0.2, 0.5, 0.7] {
            let c = one_cluster(vec![1.0, 0.0, 0.0], 0.5, mix, 10_000);
            let d = generate(&c, 42);
            let ones = d.pool.manifest.labels().iter().filter(|l| **l == Some(1)).count();
            let frac = ones as f64 / 10_000.0;
            assert!((frac - mix).abs() <= 0.03, "mix {mix}: {frac}");
        }
        let all = generate(&one_cluster(vec![1.0, 0.0], 0.5, 1.0, 100), 0);
        assert!(all.pool.manifest.labels().iter().all(|l| *l == Some(1)));
    }

    #[test]
    fn splits_and_tags() {
        let c = BenchConfig::default_three_cluster();
        let d = generate(&c, 5);
        assert_eq!(d.pool.matrix.count(), 3000);
        assert_eq!(d.validation.matrix.count(), 30);
        assert_eq!(d.test.matrix.count(), 600);
        let tags: Vec<&str> = d
            .pool
            .manifest
            .records
            .iter()
            .map(|r| r.source.as_deref().unwrap())
            .collect();
        assert_eq!(tags.iter().filter(|t| **t == "cluster-1").count(), 1000);
        assert!(d
            .test
            .manifest
            .records
            .iter()
            .all(|r| r.source.as_deref() == Some("cluster-0")));
        assert_eq!(d.pool.manifest.records[7].id, "pool-0007");
        for r in 0..d.pool.matrix.count() {
            assert!((l2_norm(&d.pool.matrix.row_f64(r)) - 1.0).abs() < 1e-6);
        }
        assert_eq!(generate(&c, 5), d);
        assert_ne!(generate(&c, 6).pool.matrix, d.pool.matrix);
    }
}
