use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::{cluster_tag, generate, knn_classify, macro_f1, mean_std, BenchConfig, BenchError};
use crate::ot::SolverDiagnostics;
use crate::selection::{select, Method, SelectionTask};
use crate::store::InstanceManifest;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRecord {
    pub method: Method,
    pub seed: u64,
    pub macro_f1: f64,
    pub selection_purity: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverDiagnostics>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodAggregate {
    pub method: Method,
    pub runs: usize,
    pub mean_f1: f64,
    pub std_f1: f64,
    pub mean_purity: f64,
    pub std_purity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub k: usize,
    pub runs: Vec<RunRecord>,
    pub aggregates: Vec<MethodAggregate>,
}

impl BenchReport {
    pub fn aggregate(&self, method: Method) -> Option<&MethodAggregate> {
        self.aggregates.iter().find(|a| a.method == method)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// `method,mean_f1,std_f1,mean_purity`, one row per method.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["method", "mean_f1", "std_f1", "mean_purity"])?;
        for a in &self.aggregates {
            w.write_record([
                a.method.to_string(),
                a.mean_f1.to_string(),
                a.std_f1.to_string(),
                a.mean_purity.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fraction of `rows` whose manifest source is the target cluster.
pub fn selection_purity(manifest: &InstanceManifest, rows: &[usize], target: usize) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let tag = cluster_tag(target);
    let hits = rows
        .iter()
        .filter(|&&r| manifest.records[r].source.as_deref() == Some(tag.as_str()))
        .count();
    hits as f64 / rows.len() as f64
}

/// All configured methods on one generated instance.
pub fn run_seed(config: &BenchConfig, seed: u64) -> Result<Vec<RunRecord>, BenchError> {
    let data = generate(config, seed);
    let validation = &data.validation.matrix;
    let test_truth: Vec<u8> = labels_of(&data.test.manifest);
    let pool_labels: Vec<u8> = labels_of(&data.pool.manifest);
    config
        .methods
        .iter()
        .map(|&method| {
            let mut task = SelectionTask::new(&data.pool.matrix, &data.pool.manifest, validation, method, config.k);
            task.balanced = config.balanced;
            task.seed = seed;
            task.p = config.p;
            let result = select(&task)?;
            let rows = result.rows();
            let subset = data.pool.matrix.select_rows(&rows);
            let subset_labels: Vec<u8> = rows.iter().map(|&r| pool_labels[r]).collect();
            let predicted = knn_classify(&subset, &subset_labels, &data.test.matrix, config.k_neighbors)?;
            Ok(RunRecord {
                method,
                seed,
                macro_f1: macro_f1(&predicted, &test_truth)?,
                selection_purity: selection_purity(&data.pool.manifest, &rows, config.target_cluster),
                solver: result.provenance.solver,
            })
        })
        .collect()
}

fn labels_of(manifest: &InstanceManifest) -> Vec<u8> {
    manifest.records.iter().map(|r| r.label.unwrap_or(0)).collect()
}

/// Every (seed, method) pair, seeds in parallel; aggregates use the
/// population standard deviation.
pub fn run_bench(config: &BenchConfig) -> Result<BenchReport, BenchError> {
    config.validate()?;
    let per_seed: Vec<Vec<RunRecord>> = config
        .seeds
        .par_iter()
        .map(|&s| run_seed(config, s))
        .collect::<Result<_, _>>()?;
    let runs: Vec<RunRecord> = per_seed.into_iter().flatten().collect();
    let aggregates = config
        .methods
        .iter()
        .map(|&method| {
            let mine: Vec<&RunRecord> = runs.iter().filter(|r| r.method == method).collect();
            let f1: Vec<f64> = mine.iter().map(|r| r.macro_f1).collect();
            let purity: Vec<f64> = mine.iter().map(|r| r.selection_purity).collect();
            let (mean_f1, std_f1) = mean_std(&f1);
            let (mean_purity, std_purity) = mean_std(&purity);
            MethodAggregate {
                method,
                runs: mine.len(),
                mean_f1,
                std_f1,
                mean_purity,
                std_purity,
            }
        })
        .collect();
    Ok(BenchReport {
        k: config.k,
        runs,
        aggregates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::ClusterSpec;

    fn small() -> BenchConfig {
        BenchConfig {
            dim: 2,
            clusters: vec![
                ClusterSpec {
                    mean: vec![1.0, 0.0],
                    stddev: 0.05,
                    class_mix: 0.5,
                    label_axis: 1,
                    label_sign: 1.0,
                },
                ClusterSpec {
                    mean: vec![-1.0, 0.0],
                    stddev: 0.05,
                    class_mix: 0.5,
                    label_axis: 1,
                    label_sign: 1.0,
                },
            ],
            pool_size: 60,
            target_cluster: 0,
            validation_size: 5,
            test_size: 40,
            k: 60,
            k_neighbors: 1,
            balanced: false,
            p: 2.0,
            seeds: vec![3, 4],
            methods: vec![Method::Random],
        }
    }

    #[test]
    fn full_pool_random_equals_full_knn() {
        let c = small();
        let report = run_bench(&c).unwrap();
        for run in &report.runs {
            let d = generate(&c, run.seed);
            let pred = knn_classify(&d.pool.matrix, &labels_of(&d.pool.manifest), &d.test.matrix, 1).unwrap();
            assert_eq!(run.macro_f1, macro_f1(&pred, &labels_of(&d.test.manifest)).unwrap());
            assert_eq!(run.selection_purity, 0.5);
        }
    }

    #[test]
    fn aggregates_recompute_from_runs() {
        let mut c = small();
        c.k = 20;
        c.balanced = true;
        c.methods = Method::ALL.to_vec();
        let report = run_bench(&c).unwrap();
        assert_eq!(report.runs.len(), 6);
        for a in &report.aggregates {
            let f: Vec<f64> = report
                .runs
                .iter()
                .filter(|r| r.method == a.method)
                .map(|r| r.macro_f1)
                .collect();
            assert_eq!(mean_std(&f), (a.mean_f1, a.std_f1));
            assert_eq!(a.runs, 2);
        }
        assert_eq!(report.aggregate(Method::SemSim).unwrap().mean_purity, 1.0);
        let mut csv = Vec::new();
        report.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("method,mean_f1,std_f1,mean_purity\nsemsim,"));
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn purity_counts_target_tags() {
        let mut man = InstanceManifest::default();
        for (i, c) in [0, 1, 0, 2].iter().enumerate() {
            let mut r = crate::store::InstanceRecord::new(format!("x{i}"), Some(0));
            r.source = Some(cluster_tag(*c));
            man.records.push(r);
        }
        assert_eq!(selection_purity(&man, &[0, 1, 2], 0), 2.0 / 3.0);
        assert_eq!(selection_purity(&man, &[3], 0), 0.0);
    }
}
