use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::BenchError;
use crate::selection::Method;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClusterSpec {
    pub mean: Vec<f64>,
    pub stddev: f64,
    /// Fraction of label-1 points.
    pub class_mix: f64,
    /// Coordinate whose (signed) noise decides the label.
    #[serde(default = "default_label_axis")]
    pub label_axis: usize,
    /// +1 or -1; flips which side of the threshold is label 1.
    #[serde(default = "default_label_sign")]
    pub label_sign: f64,
}

fn default_label_axis() -> usize {
    0
}

fn default_label_sign() -> f64 {
    1.0
}

/// Benchmark settings.
///
/// Read from a flat `key = value` file (TOML syntax), one cluster field per
/// line as `cluster.<index>.<field>`:
///
/// ```text
/// dim = 2
/// pool_size = 100
/// target_cluster = 0
/// validation_size = 10
/// test_size = 50
/// k = 20
/// seeds = [0, 1, 2]
/// methods = ["semsim", "random"]
/// cluster.0.mean = [1.0, 0.0]
/// cluster.0.stddev = 0.3
/// cluster.0.class_mix = 0.5
/// cluster.1.mean = [0.0, 1.0]
/// cluster.1.stddev = 0.3
/// cluster.1.class_mix = 0.5
/// ```
#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub dim: usize,
    pub clusters: Vec<ClusterSpec>,
    pub pool_size: usize,
    pub target_cluster: usize,
    pub validation_size: usize,
    pub test_size: usize,
    pub k: usize,
    pub k_neighbors: usize,
    pub balanced: bool,
    pub p: f64,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
}

#[derive(Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    dim: usize,
    pool_size: usize,
    #[serde(default)]
    target_cluster: usize,
    validation_size: usize,
    test_size: usize,
    k: usize,
    #[serde(default = "default_k_neighbors")]
    k_neighbors: usize,
    #[serde(default = "default_true")]
    balanced: bool,
    #[serde(default = "default_p")]
    p: f64,
    seeds: Vec<u64>,
    #[serde(default = "default_methods")]
    methods: Vec<Method>,
    cluster: BTreeMap<String, ClusterSpec>,
}

fn default_k_neighbors() -> usize {
    1
}

fn default_true() -> bool {
    true
}

fn default_p() -> f64 {
    2.0
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

impl BenchConfig {
    /// Three unit-separated clusters in 8 dimensions; cluster 0 is the target.
    ///
    /// Labels follow the sign of the noise along axis 3, with the direction
    /// reversed outside the target cluster, so a classifier trained on the
    /// wrong clusters learns the wrong rule.
    pub fn default_three_cluster() -> Self {
        let dim = 8;
        let axis = |k: usize| {
            let mut v = vec![0.0; dim];
            v[k] = 1.0;
            v
        };
        let cluster = |k: usize, sign: f64| ClusterSpec {
            mean: axis(k),
            stddev: 0.5,
            class_mix: 0.5,
            label_axis: 3,
            label_sign: sign,
        };
        Self {
            dim,
            clusters: vec![cluster(0, 1.0), cluster(1, -1.0), cluster(2, -1.0)],
            pool_size: 3000,
            target_cluster: 0,
            validation_size: 30,
            test_size: 600,
            k: 300,
            k_neighbors: 3,
            balanced: true,
            p: 2.0,
            seeds: vec![0, 1, 2],
            methods: Method::ALL.to_vec(),
        }
    }

    /// The default setup with every cluster moved onto the target mean, so
    /// cluster membership carries no geometric signal.
    pub fn null_config() -> Self {
        let mut c = Self::default_three_cluster();
        let target = c.clusters[c.target_cluster].mean.clone();
        for cl in &mut c.clusters {
            cl.mean = target.clone();
        }
        c
    }

    pub fn parse(text: &str) -> Result<Self, BenchError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        let mut indexed = Vec::with_capacity(raw.cluster.len());
        for (key, spec) in raw.cluster {
            let idx: usize = key
                .parse()
                .map_err(|_| BenchError::Config(format!("cluster key {key:?} is not an index")))?;
            indexed.push((idx, spec));
        }
        indexed.sort_by_key(|(i, _)| *i);
        if indexed.iter().enumerate().any(|(pos, (i, _))| pos != *i) {
            return Err(BenchError::Config(
                "cluster indices must be 0, 1, 2, ... without gaps".into(),
            ));
        }
        let config = Self {
            dim: raw.dim,
            clusters: indexed.into_iter().map(|(_, s)| s).collect(),
            pool_size: raw.pool_size,
            target_cluster: raw.target_cluster,
            validation_size: raw.validation_size,
            test_size: raw.test_size,
            k: raw.k,
            k_neighbors: raw.k_neighbors,
            balanced: raw.balanced,
            p: raw.p,
            seeds: raw.seeds,
            methods: raw.methods,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BenchError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Serializes back to the flat file format.
    pub fn to_text(&self) -> String {
        let raw = RawConfig {
            dim: self.dim,
            pool_size: self.pool_size,
            target_cluster: self.target_cluster,
            validation_size: self.validation_size,
            test_size: self.test_size,
            k: self.k,
            k_neighbors: self.k_neighbors,
            balanced: self.balanced,
            p: self.p,
            seeds: self.seeds.clone(),
            methods: self.methods.clone(),
            cluster: BTreeMap::new(),
        };
        let mut out = toml::to_string(&raw).expect("config serializes");
        out = out
            .lines()
            .filter(|l| !l.starts_with("[cluster]"))
            .collect::<Vec<_>>()
            .join("\n");
        out.push('\n');
        for (i, c) in self.clusters.iter().enumerate() {
            let mean: Vec<String> = c.mean.iter().map(|x| format!("{x:?}")).collect();
            out.push_str(&format!("cluster.{i}.mean = [{}]\n", mean.join(", ")));
            out.push_str(&format!("cluster.{i}.stddev = {:?}\n", c.stddev));
            out.push_str(&format!("cluster.{i}.class_mix = {:?}\n", c.class_mix));
            out.push_str(&format!("cluster.{i}.label_axis = {}\n", c.label_axis));
            out.push_str(&format!("cluster.{i}.label_sign = {:?}\n", c.label_sign));
        }
        out
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let fail = |msg: String| Err(BenchError::Config(msg));
        if self.dim < 2 {
            return fail(format!("dim must be at least 2, got {}", self.dim));
        }
        if self.clusters.is_empty() {
            return fail("at least one cluster is required".into());
        }
        if self.target_cluster >= self.clusters.len() {
            return fail(format!(
                "target_cluster {} out of range for {} clusters",
                self.target_cluster,
                self.clusters.len()
            ));
        }
        for (i, c) in self.clusters.iter().enumerate() {
            if c.mean.len() != self.dim {
                return fail(format!(
                    "cluster {i} mean has {} entries, dim is {}",
                    c.mean.len(),
                    self.dim
                ));
            }
            if c.mean.iter().any(|x| !x.is_finite()) {
                return fail(format!("cluster {i} mean is not finite"));
            }
            if !(c.stddev > 0.0 && c.stddev.is_finite()) {
                return fail(format!("cluster {i} stddev must be positive, got {}", c.stddev));
            }
            if !(0.0..=1.0).contains(&c.class_mix) {
                return fail(format!("cluster {i} class_mix must lie in [0, 1], got {}", c.class_mix));
            }
            if c.label_axis >= self.dim {
                return fail(format!("cluster {i} label_axis {} out of range", c.label_axis));
            }
            if c.label_sign != 1.0 && c.label_sign != -1.0 {
                return fail(format!("cluster {i} label_sign must be 1 or -1, got {}", c.label_sign));
            }
        }
        if self.k == 0 || self.k > self.pool_size {
            return fail(format!("k = {} must lie in 1..={}", self.k, self.pool_size));
        }
        if self.validation_size == 0 || self.test_size == 0 {
            return fail("validation_size and test_size must be positive".into());
        }
        if self.k_neighbors == 0 || self.k_neighbors > self.k {
            return fail(format!("k_neighbors = {} must lie in 1..={}", self.k_neighbors, self.k));
        }
        if !(self.p >= 1.0 && self.p.is_finite()) {
            return fail(format!("p must be >= 1, got {}", self.p));
        }
        if self.seeds.is_empty() || self.methods.is_empty() {
            return fail("seeds and methods must be nonempty".into());
        }
        Ok(())
    }
}
