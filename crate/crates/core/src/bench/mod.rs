//! Synthetic distribution-shift benchmark.
//!
//! A pool is drawn from several Gaussian clusters on the unit sphere; the
//! validation and test sets come from one target cluster only. Each selector
//! picks `k` pool rows using the unlabeled validation set, a k-NN classifier
//! is fit on the pick, and macro-F1 is measured on the target test set.

mod config;
mod generate;
mod knn;
mod metrics;
mod run;

use thiserror::Error;

use crate::selection::SelectError;

pub use config::{BenchConfig, ClusterSpec};
pub use generate::{cluster_tag, generate, BenchData, LabeledSet};
pub use knn::knn_classify;
pub use metrics::{macro_f1, mean_std};
pub use run::{run_bench, run_seed, selection_purity, BenchReport, MethodAggregate, RunRecord};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("bench config: {0}")]
    Config(String),
    #[error("k-NN needs at least one training instance")]
    EmptyTrainingSet,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error(transparent)]
    Select(#[from] SelectError),
}

impl BenchError {
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Select(e) => e.exit_code(),
            _ => 2,
        }
    }
}
