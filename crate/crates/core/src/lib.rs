//! Distribution-matching data selection.
//!
//! Ranks a large pool of labeled synthetic training instances against a small
//! unlabeled validation sample drawn from the deployment distribution, and
//! selects a class-balanced subset for fine-tuning. Two selectors are
//! provided on top of fused image/text embeddings:
//!
//! - **SemSim**: cosine similarity of each instance to the validation centroid.
//! - **DisSim**: calibrated Wasserstein gradients taken from the dual
//!   potentials of the optimal transport problem between pool and validation.
//!
//! A random baseline and a neural-free benchmark harness (k-NN proxy
//! classifier on a synthetic covariate-shift problem) complete the crate.
//!
//! Module map:
//!
//! - [`store`]: EMB1 embedding files, JSONL manifests, modality fusion.
//! - [`simgeo`]: centroid, cosine, 2-component PCA.
//! - [`ot`]: cost matrices, exact and entropic solvers, calibrated gradients.
//! - [`selection`]: SemSim / DisSim / Random selection with class balance.
//! - [`bench`]: synthetic shift generator, k-NN, macro-F1, benchmark runner.
//! - [`rng`]: the single seeded PRNG family every stochastic step draws from.

pub mod bench;
pub mod numeric;
pub mod ot;
pub mod rng;
pub mod selection;
pub mod simgeo;
pub mod store;

pub use bench::{run_bench, BenchConfig, BenchReport};
pub use ot::{
    calibrated_gradients, cost_matrix, directional_derivative_check, solve, solve_exact, solve_sinkhorn, CostMatrix,
    GradientScores, OtError, SinkhornConfig, SolverConfig, SolverKind, TransportSolution,
};
pub use selection::{
    sample_validation, select, select_dissim, select_random, select_semsim, Method, SelectError, SelectionResult,
    SelectionTask,
};
pub use simgeo::{centroid, cosine, pca2, Centroid, GeoError, Projection2D};
pub use store::{
    fuse_modalities, load_embeddings, load_manifest, validate_pair, write_embeddings, write_manifest, EmbeddingMatrix,
    InstanceManifest, InstanceRecord, StoreError, ValidationReport, Violation,
};
