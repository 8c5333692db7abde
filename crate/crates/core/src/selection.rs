//! SemSim, DisSim and Random selection of a class-balanced subset of the
//! synthetic pool.
//!
//! Every method reduces to a priority order over pool rows: descending
//! cosine to the validation centroid (SemSim), ascending calibrated
//! gradient (DisSim), or a seeded shuffle (Random). The subset is then taken
//! per class from that order and written back out in the same order.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ot::{calibrated_gradients, cost_matrix, solve, uniform_marginal, OtError, SolverConfig, SolverDiagnostics};
use crate::rng::{self, streams};
use crate::simgeo::{centroid, cosine, GeoError};
use crate::store::{EmbeddingMatrix, InstanceManifest};

pub const DEFAULT_K: usize = 750;
pub const DEFAULT_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    SemSim,
    DisSim,
    Random,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::SemSim, Method::DisSim, Method::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::SemSim => "semsim",
            Method::DisSim => "dissim",
            Method::Random => "random",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "semsim" => Ok(Method::SemSim),
            "dissim" => Ok(Method::DisSim),
            "random" => Ok(Method::Random),
            other => Err(format!("unknown method {other:?} (expected semsim, dissim or random)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("invalid selection task: {0}")]
    InvalidTask(String),
    #[error("validation centroid is the zero vector")]
    ZeroNormCentroid,
    #[error("balanced selection needs labels; row {row} has none")]
    MissingLabels { row: usize },
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Ot(#[from] OtError),
}

impl SelectError {
    /// Process exit code: 3 for solver failures, 2 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            SelectError::Ot(_) => 3,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SelectionTask<'a> {
    pub train: &'a EmbeddingMatrix,
    pub manifest: &'a InstanceManifest,
    pub validation: &'a EmbeddingMatrix,
    pub method: Method,
    pub k: usize,
    pub balanced: bool,
    pub seed: u64,
    /// Cost exponent for DisSim.
    pub p: f64,
    pub solver: SolverConfig,
    /// DisSim only: re-solve after each of this many chunks of the selection.
    pub greedy_rounds: usize,
}

impl<'a> SelectionTask<'a> {
    pub fn new(
        train: &'a EmbeddingMatrix,
        manifest: &'a InstanceManifest,
        validation: &'a EmbeddingMatrix,
        method: Method,
        k: usize,
    ) -> Self {
        Self {
            train,
            manifest,
            validation,
            method,
            k,
            balanced: true,
            seed: 0,
            p: 2.0,
            solver: SolverConfig::default(),
            greedy_rounds: 1,
        }
    }

    fn check(&self) -> Result<(), SelectError> {
        let n = self.train.count();
        if self.manifest.len() != n {
            return Err(SelectError::InvalidTask(format!(
                "train matrix has {n} rows but manifest has {}",
                self.manifest.len()
            )));
        }
        if self.k == 0 || self.k > n {
            return Err(SelectError::InvalidTask(format!("k = {} must lie in 1..={n}", self.k)));
        }
        if self.validation.count() == 0 {
            return Err(SelectError::InvalidTask("validation set is empty".into()));
        }
        if self.validation.dim() != self.train.dim() {
            return Err(SelectError::InvalidTask(format!(
                "train dim {} differs from validation dim {}",
                self.train.dim(),
                self.validation.dim()
            )));
        }
        if self.greedy_rounds == 0 {
            return Err(SelectError::InvalidTask("greedy rounds must be at least 1".into()));
        }
        if self.balanced {
            if let Some(row) = self.manifest.records.iter().position(|r| r.label.is_none()) {
                return Err(SelectError::MissingLabels { row });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectedInstance {
    pub id: String,
    pub score: f64,
    pub label: Option<u8>,
    /// Row in the training matrix.
    #[serde(skip)]
    pub row: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Balance {
    pub count0: usize,
    pub count1: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub train_digest: String,
    pub validation_digest: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverDiagnostics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    pub method: Method,
    pub seed: u64,
    pub k: usize,
    pub balanced: bool,
    pub selected: Vec<SelectedInstance>,
    pub balance: Balance,
    pub provenance: Provenance,
    pub warnings: Vec<String>,
}

#[derive(Serialize)]
struct Header<'a> {
    method: Method,
    seed: u64,
    k: usize,
    balanced: bool,
    balance: Balance,
    train_digest: &'a str,
    validation_digest: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    solver: Option<&'a SolverDiagnostics>,
    warnings: &'a [String],
}

#[derive(Serialize)]
struct Line<'a> {
    id: &'a str,
    score: f64,
    label: Option<u8>,
    rank: usize,
}

impl SelectionResult {
    pub fn rows(&self) -> Vec<usize> {
        self.selected.iter().map(|s| s.row).collect()
    }

    /// Header object, then one `{id, score, label, rank}` line per instance
    /// (rank starts at 1).
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header = Header {
            method: self.method,
            seed: self.seed,
            k: self.k,
            balanced: self.balanced,
            balance: self.balance,
            train_digest: &self.provenance.train_digest,
            validation_digest: &self.provenance.validation_digest,
            solver: self.provenance.solver.as_ref(),
            warnings: &self.warnings,
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for (r, s) in self.selected.iter().enumerate() {
            let line = Line {
                id: &s.id,
                score: s.score,
                label: s.label,
                rank: r + 1,
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Per-row scores for the whole pool, plus the priority order they induce.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    pub scores: Vec<f64>,
    /// Pool rows, highest priority first.
    pub order: Vec<usize>,
    pub solver: Option<SolverDiagnostics>,
}

/// Scores every pool row without truncating to `k`.
pub fn score_all(task: &SelectionTask) -> Result<ScoreTable, SelectError> {
    let all: Vec<usize> = (0..task.train.count()).collect();
    score_rows(task, &all)
}

fn score_rows(task: &SelectionTask, rows: &[usize]) -> Result<ScoreTable, SelectError> {
    match task.method {
        Method::SemSim => {
            let c = centroid(task.validation)?;
            if c.vector.iter().all(|x| *x == 0.0) {
                return Err(SelectError::ZeroNormCentroid);
            }
            let scores = rows
                .iter()
                .map(|&r| cosine(&task.train.row_f64(r), &c.vector))
                .collect::<Result<Vec<_>, _>>()?;
            let mut order: Vec<usize> = (0..rows.len()).collect();
            order.sort_by(|&x, &y| scores[y].total_cmp(&scores[x]));
            Ok(ScoreTable {
                scores,
                order,
                solver: None,
            })
        }
        Method::DisSim => {
            let pool = task.train.select_rows(rows);
            let cost = cost_matrix(&pool, task.validation, task.p)?;
            let sol = solve(
                &cost,
                &uniform_marginal(cost.n()),
                &uniform_marginal(cost.m()),
                &task.solver,
            )?;
            let grads = calibrated_gradients(&sol)?;
            Ok(ScoreTable {
                scores: grads.scores,
                order: grads.ranking,
                solver: Some(sol.diagnostics(false)),
            })
        }
        Method::Random => {
            let mut order: Vec<usize> = (0..rows.len()).collect();
            order.shuffle(&mut rng::stream(task.seed, streams::RANDOM_SELECTION));
            Ok(ScoreTable {
                scores: vec![0.0; rows.len()],
                order,
                solver: None,
            })
        }
    }
}

pub fn select(task: &SelectionTask) -> Result<SelectionResult, SelectError> {
    task.check()?;
    let labels = task.manifest.labels();
    let n = task.train.count();
    let mut warnings = Vec::new();
    let mut chosen: Vec<(usize, f64)> = Vec::with_capacity(task.k);
    let mut solver = None;

    let rounds = if task.method == Method::DisSim {
        task.greedy_rounds.min(task.k)
    } else {
        1
    };
    let mut remaining: Vec<usize> = (0..n).collect();
    for round in 1..=rounds {
        let target = (task.k * round).div_ceil(rounds);
        let table = score_rows(task, &remaining)?;
        if solver.is_none() {
            solver = table.solver.clone();
        }
        let order: Vec<usize> = table.order.iter().map(|&o| remaining[o]).collect();
        let score_of = |row: usize| {
            let pos = remaining.binary_search(&row).expect("row is in the remaining pool");
            table.scores[pos]
        };
        let (mut have0, mut have1) = (0, 0);
        for &(r, _) in &chosen {
            match labels[r] {
                Some(0) => have0 += 1,
                Some(_) => have1 += 1,
                None => {}
            }
        }
        let picked = if task.balanced {
            let (q0, q1) = (target.div_ceil(2), target / 2);
            take_balanced(
                &order,
                &labels,
                q0.saturating_sub(have0),
                q1.saturating_sub(have1),
                &mut warnings,
            )
        } else {
            order[..target - chosen.len()].to_vec()
        };
        chosen.extend(picked.iter().map(|&r| (r, score_of(r))));
        remaining.retain(|r| !picked.contains(r));
    }

    let mut balance = Balance::default();
    let selected: Vec<SelectedInstance> = chosen
        .into_iter()
        .map(|(row, score)| {
            let rec = &task.manifest.records[row];
            match rec.label {
                Some(0) => balance.count0 += 1,
                Some(_) => balance.count1 += 1,
                None => {}
            }
            SelectedInstance {
                id: rec.id.clone(),
                score,
                label: rec.label,
                row,
            }
        })
        .collect();
    debug_assert_eq!(selected.len(), task.k);

    Ok(SelectionResult {
        method: task.method,
        seed: task.seed,
        k: task.k,
        balanced: task.balanced,
        selected,
        balance,
        provenance: Provenance {
            train_digest: task.train.digest(),
            validation_digest: task.validation.digest(),
            solver,
        },
        warnings,
    })
}

/// First `q0` label-0 and `q1` label-1 rows of `order`; a class that runs
/// short is made up from the other one. Output keeps `order`'s sequence.
fn take_balanced(
    order: &[usize],
    labels: &[Option<u8>],
    q0: usize,
    q1: usize,
    warnings: &mut Vec<String>,
) -> Vec<usize> {
    let avail0 = order.iter().filter(|&&r| labels[r] == Some(0)).count();
    let avail1 = order.len() - avail0;
    let (mut t0, mut t1) = (q0.min(avail0), q1.min(avail1));
    if t0 < q0 {
        let extra = (q0 - t0).min(avail1 - t1);
        warnings.push(format!(
            "label 0 has {avail0} candidates for a quota of {q0}; {extra} filled from label 1"
        ));
        t1 += extra;
    }
    if t1 < q1 {
        let extra = (q1 - t1).min(avail0 - t0);
        warnings.push(format!(
            "label 1 has {avail1} candidates for a quota of {q1}; {extra} filled from label 0"
        ));
        t0 += extra;
    }
    let mut out = Vec::with_capacity(t0 + t1);
    for &r in order {
        let take = if labels[r] == Some(0) { &mut t0 } else { &mut t1 };
        if *take > 0 {
            *take -= 1;
            out.push(r);
        }
    }
    out
}

pub fn select_semsim(task: &SelectionTask) -> Result<SelectionResult, SelectError> {
    select(&SelectionTask {
        method: Method::SemSim,
        ..task.clone()
    })
}

pub fn select_dissim(task: &SelectionTask) -> Result<SelectionResult, SelectError> {
    select(&SelectionTask {
        method: Method::DisSim,
        ..task.clone()
    })
}

pub fn select_random(task: &SelectionTask) -> Result<SelectionResult, SelectError> {
    select(&SelectionTask {
        method: Method::Random,
        ..task.clone()
    })
}

/// Number of rows drawn for a validation sample: `⌈fraction × size⌉`.
pub fn validation_sample_size(size: usize, fraction: f64) -> usize {
    let x = fraction * size as f64;
    // 0.05 * 700 is 35.00000000000001 in binary; treat near-integers as exact.
    let r = x.round();
    let count = if (x - r).abs() < 1e-9 { r } else { x.ceil() };
    (count as usize).min(size)
}

/// Sorted, distinct row indices of a seeded validation sample.
pub fn sample_validation(size: usize, fraction: f64, seed: u64) -> Result<Vec<usize>, SelectError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(SelectError::InvalidTask(format!(
            "fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let count = validation_sample_size(size, fraction);
    let mut rng = rng::stream(seed, streams::VALIDATION_SAMPLE);
    let mut rows = index::sample(&mut rng, size, count).into_vec();
    rows.sort_unstable();
    Ok(rows)
}
