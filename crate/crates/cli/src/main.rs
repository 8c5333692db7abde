//! `mmselect` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 invalid input data, 3 solver failure.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{ArgAction, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use tempfile::NamedTempFile;

use mmselect::bench::{run_bench, BenchConfig, BenchReport};
use mmselect::ot::{SolverConfig, DEFAULT_EXACT_MAX_CELLS};
use mmselect::rng::GENERATOR;
use mmselect::selection::{sample_validation, score_all, select, Method, SelectionTask, DEFAULT_FRACTION, DEFAULT_K};
use mmselect::simgeo::{pca2, write_projection_csv};
use mmselect::store::{
    fuse_modalities, load_embeddings, load_manifest, validate_pair, EmbeddingMatrix, InstanceManifest, ManifestRole,
};

#[derive(Parser)]
#[command(
    name = "mmselect",
    about = "Select training data that matches a small validation sample"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check an embedding file against its manifest.
    Validate(ValidateArgs),
    /// Average image and text embeddings into unit-norm fused rows.
    Fuse(FuseArgs),
    /// Score every pool instance and write `id,score,label` CSV.
    Score(ScoreArgs),
    /// Select k pool instances and write a JSONL selection manifest.
    Select(SelectArgs),
    /// Two-component PCA projection to `id,pc1,pc2,label` CSV.
    Project(ProjectArgs),
    /// Run the synthetic distribution-shift benchmark.
    Bench(BenchArgs),
    /// Draw a seeded validation sample from a labeled set, stripping labels.
    Sample(SampleArgs),
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    emb: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Validation manifests may omit labels.
    #[arg(long, value_enum, default_value_t = Role::Train)]
    role: Role,
    /// Require unit-norm rows even if the file is not known to be normalized.
    #[arg(long)]
    expect_unit: bool,
    /// Print the report as JSON on stdout.
    #[arg(long)]
    json: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Role {
    Train,
    Validation,
}

#[derive(Args)]
struct FuseArgs {
    #[arg(long)]
    image_emb: PathBuf,
    #[arg(long)]
    text_emb: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PoolArgs {
    #[arg(long)]
    train_emb: PathBuf,
    #[arg(long)]
    train_manifest: PathBuf,
    #[arg(long)]
    val_emb: PathBuf,
    #[arg(long, value_parser = parse_method)]
    method: Method,
    /// Cost exponent for dissim.
    #[arg(long, default_value_t = 2.0)]
    p: f64,
    /// Absolute entropic regularization when the Sinkhorn solver is used
    /// (default: 0.01 x mean cost).
    #[arg(long)]
    epsilon: Option<f64>,
    /// Largest cost matrix (n x m cells) solved exactly; larger ones use Sinkhorn.
    #[arg(long, default_value_t = DEFAULT_EXACT_MAX_CELLS)]
    exact_max_cells: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write solver diagnostics, including dual potentials, to this JSON file.
    #[arg(long)]
    solver_json: Option<PathBuf>,
}

#[derive(Args)]
struct ScoreArgs {
    #[command(flatten)]
    pool: PoolArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    pool: PoolArgs,
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    /// Take half of k from each label.
    #[arg(long, default_value_t = true, action = ArgAction::Set)]
    balanced: bool,
    /// dissim only: re-solve the transport problem this many times while
    /// filling the selection.
    #[arg(long, default_value_t = 1)]
    greedy_rounds: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum FitOn {
    /// One projection fit on all inputs together.
    Joint,
    /// A separate projection per input.
    Each,
}

#[derive(Args)]
struct ProjectArgs {
    /// Embedding file; repeat to project several sets.
    #[arg(long, required = true)]
    emb: Vec<PathBuf>,
    /// Manifest for each --emb, in the same order.
    #[arg(long, required = true)]
    manifest: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = FitOn::Joint)]
    fit_on: FitOn,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Flat key = value config file; the built-in 3-cluster setup if omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use the null setup (all clusters share one mean) instead of the default.
    #[arg(long, conflicts_with = "config")]
    null: bool,
    /// Override the config's seed list.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Run once per k in this list.
    #[arg(long, value_delimiter = ',')]
    k_sweep: Option<Vec<usize>>,
    /// Print the effective config and exit.
    #[arg(long)]
    print_config: bool,
    #[arg(long)]
    out_json: Option<PathBuf>,
    #[arg(long)]
    out_csv: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    emb: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value_t = DEFAULT_FRACTION)]
    fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep labels in the sampled manifest.
    #[arg(long)]
    keep_labels: bool,
    #[arg(long)]
    out_emb: PathBuf,
    #[arg(long)]
    out_manifest: PathBuf,
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse()
}

#[derive(Debug)]
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn data(message: impl ToString) -> Self {
        Self {
            code: 2,
            message: message.to_string(),
        }
    }

    fn usage(message: impl ToString) -> Self {
        Self {
            code: 1,
            message: message.to_string(),
        }
    }
}

impl From<mmselect::StoreError> for Failure {
    fn from(e: mmselect::StoreError) -> Self {
        Self::data(e)
    }
}

impl From<mmselect::SelectError> for Failure {
    fn from(e: mmselect::SelectError) -> Self {
        Self {
            code: e.exit_code() as u8,
            message: e.to_string(),
        }
    }
}

impl From<mmselect::bench::BenchError> for Failure {
    fn from(e: mmselect::bench::BenchError) -> Self {
        Self {
            code: e.exit_code() as u8,
            message: e.to_string(),
        }
    }
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let long_version: &'static str =
        Box::leak(format!("{}\nprng: {GENERATOR}", env!("CARGO_PKG_VERSION")).into_boxed_str());
    let command = Cli::command()
        .version(env!("CARGO_PKG_VERSION"))
        .long_version(long_version);
    let matches = match command.try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    if let Err(f) = configure_threads() {
        eprintln!("error: {}", f.message);
        return ExitCode::from(f.code);
    }
    let result = match cli.command {
        Command::Validate(a) => cmd_validate(a),
        Command::Fuse(a) => cmd_fuse(a),
        Command::Score(a) => cmd_score(a),
        Command::Select(a) => cmd_select(a),
        Command::Project(a) => cmd_project(a),
        Command::Bench(a) => cmd_bench(a),
        Command::Sample(a) => cmd_sample(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

/// `MMSELECT_THREADS` caps the worker pool; unset or 0 means one per core.
fn configure_threads() -> Outcome {
    let Ok(raw) = std::env::var("MMSELECT_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Failure::usage(format!("MMSELECT_THREADS must be a nonnegative integer, got {raw:?}")))?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(Failure::usage)?;
    }
    Ok(())
}

/// Writes through a temporary file in the destination directory, then
/// renames it into place.
fn write_atomic<F>(path: &Path, body: F) -> Outcome
where
    F: FnOnce(&mut BufWriter<&mut File>) -> Result<(), String>,
{
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let fail = |e: String| Failure::data(format!("{}: {e}", path.display()));
    let mut tmp = NamedTempFile::new_in(dir).map_err(|e| fail(e.to_string()))?;
    {
        let mut w = BufWriter::new(tmp.as_file_mut());
        body(&mut w).map_err(fail)?;
        w.flush().map_err(|e| fail(e.to_string()))?;
    }
    tmp.as_file().sync_all().map_err(|e| fail(e.to_string()))?;
    tmp.persist(path).map_err(|e| fail(e.error.to_string()))?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Outcome {
    write_atomic(path, |w| w.write_all(text.as_bytes()).map_err(|e| e.to_string()))
}

fn cmd_validate(a: ValidateArgs) -> Outcome {
    let matrix = load_embeddings(&a.emb)?;
    let manifest = load_manifest(&a.manifest)?;
    let role = match a.role {
        Role::Train => ManifestRole::Train,
        Role::Validation => ManifestRole::Validation,
    };
    let report = validate_pair(&matrix, &manifest, role, a.expect_unit);
    if a.json {
        println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    } else {
        for v in &report.violations {
            println!("{v}");
        }
    }
    if report.is_clean() {
        if !a.json {
            println!("ok: {} rows, dim {}", matrix.count(), matrix.dim());
        }
        Ok(())
    } else {
        Err(Failure::data(format!("{} violation(s)", report.violations.len())))
    }
}

fn cmd_fuse(a: FuseArgs) -> Outcome {
    let image = load_embeddings(&a.image_emb)?;
    let text = load_embeddings(&a.text_emb)?;
    let fused = fuse_modalities(&image, &text)?;
    let bytes = fused.to_emb1_bytes();
    write_atomic(&a.out, |w| w.write_all(&bytes).map_err(|e| e.to_string()))
}

struct LoadedPool {
    train: EmbeddingMatrix,
    manifest: InstanceManifest,
    validation: EmbeddingMatrix,
}

fn load_pool(a: &PoolArgs, balanced: bool) -> Result<LoadedPool, Failure> {
    let train = load_embeddings(&a.train_emb)?;
    let manifest = load_manifest(&a.train_manifest)?;
    let validation = load_embeddings(&a.val_emb)?;
    let role = if balanced {
        ManifestRole::Train
    } else {
        ManifestRole::Validation
    };
    let report = validate_pair(&train, &manifest, role, false);
    if !report.is_clean() {
        for v in &report.violations {
            eprintln!("{v}");
        }
        return Err(Failure::data(format!(
            "training pair has {} violation(s)",
            report.violations.len()
        )));
    }
    Ok(LoadedPool {
        train,
        manifest,
        validation,
    })
}

fn task_for<'a>(pool: &'a LoadedPool, a: &PoolArgs, k: usize) -> SelectionTask<'a> {
    let mut task = SelectionTask::new(&pool.train, &pool.manifest, &pool.validation, a.method, k);
    task.seed = a.seed;
    task.p = a.p;
    task.solver = SolverConfig {
        exact_max_cells: a.exact_max_cells,
        epsilon: a.epsilon,
        ..SolverConfig::default()
    };
    task
}

fn cmd_score(a: ScoreArgs) -> Outcome {
    let pool = load_pool(&a.pool, false)?;
    let task = task_for(&pool, &a.pool, pool.train.count().max(1));
    if pool.validation.dim() != pool.train.dim() {
        return Err(Failure::data(format!(
            "train dim {} differs from validation dim {}",
            pool.train.dim(),
            pool.validation.dim()
        )));
    }
    let table = score_all(&task)?;
    write_atomic(&a.out, |w| {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["id", "score", "label"]).map_err(|e| e.to_string())?;
        for (rec, s) in pool.manifest.records.iter().zip(&table.scores) {
            let label = rec.label.map(|l| l.to_string()).unwrap_or_default();
            out.write_record([rec.id.as_str(), &s.to_string(), &label])
                .map_err(|e| e.to_string())?;
        }
        out.flush().map_err(|e| e.to_string())
    })?;
    if let (Some(path), Some(diag)) = (&a.pool.solver_json, &table.solver) {
        write_text(
            path,
            &serde_json::to_string_pretty(diag).expect("diagnostics serialize"),
        )?;
    }
    Ok(())
}

fn cmd_select(a: SelectArgs) -> Outcome {
    let pool = load_pool(&a.pool, a.balanced)?;
    let mut task = task_for(&pool, &a.pool, a.k);
    task.balanced = a.balanced;
    task.greedy_rounds = a.greedy_rounds;
    let result = select(&task)?;
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    write_atomic(&a.out, |w| result.write_jsonl(w).map_err(|e| e.to_string()))?;
    if let (Some(path), Some(diag)) = (&a.pool.solver_json, &result.provenance.solver) {
        write_text(
            path,
            &serde_json::to_string_pretty(diag).expect("diagnostics serialize"),
        )?;
    }
    Ok(())
}

fn cmd_project(a: ProjectArgs) -> Outcome {
    if a.emb.len() != a.manifest.len() {
        return Err(Failure::usage(format!(
            "{} --emb files but {} --manifest files",
            a.emb.len(),
            a.manifest.len()
        )));
    }
    let mut sets = Vec::with_capacity(a.emb.len());
    for (e, m) in a.emb.iter().zip(&a.manifest) {
        let matrix = load_embeddings(e)?;
        let manifest = load_manifest(m)?;
        let report = validate_pair(&matrix, &manifest, ManifestRole::Validation, false);
        if !report.is_clean() {
            return Err(Failure::data(format!("{}: {}", e.display(), report.violations[0])));
        }
        sets.push((matrix, manifest));
    }
    let groups: Vec<(EmbeddingMatrix, InstanceManifest)> = match a.fit_on {
        FitOn::Each => sets,
        FitOn::Joint => {
            let matrices: Vec<&EmbeddingMatrix> = sets.iter().map(|(m, _)| m).collect();
            let joint = EmbeddingMatrix::concat(&matrices)?;
            let records = sets.iter().flat_map(|(_, m)| m.records.iter().cloned()).collect();
            vec![(joint, InstanceManifest::new(records))]
        }
    };
    let mut projections = Vec::with_capacity(groups.len());
    for (matrix, manifest) in &groups {
        let p = pca2(matrix).map_err(Failure::data)?;
        eprintln!(
            "explained variance: pc1 {:.4}, pc2 {:.4} ({} rows)",
            p.explained_variance.0,
            p.explained_variance.1,
            manifest.len()
        );
        projections.push(p);
    }
    write_atomic(&a.out, |w| {
        let mut all_points = Vec::new();
        let mut all_records = Vec::new();
        for ((_, manifest), p) in groups.iter().zip(&projections) {
            all_points.extend(p.points.iter().copied());
            all_records.extend(manifest.records.iter().cloned());
        }
        let merged = mmselect::Projection2D {
            points: all_points,
            ..projections[0].clone()
        };
        write_projection_csv(w, &InstanceManifest::new(all_records), &merged).map_err(|e| e.to_string())
    })
}

fn cmd_bench(a: BenchArgs) -> Outcome {
    let mut config = match (&a.config, a.null) {
        (Some(path), _) => BenchConfig::load(path)?,
        (None, true) => BenchConfig::null_config(),
        (None, false) => BenchConfig::default_three_cluster(),
    };
    if let Some(seeds) = &a.seeds {
        config.seeds = seeds.clone();
    }
    config.validate()?;
    if a.print_config {
        print!("{}", config.to_text());
        return Ok(());
    }
    let ks = a.k_sweep.clone().unwrap_or_else(|| vec![config.k]);
    let mut reports: Vec<BenchReport> = Vec::with_capacity(ks.len());
    for k in ks {
        let mut c = config.clone();
        c.k = k;
        c.validate()?;
        reports.push(run_bench(&c)?);
    }

    let mut table = Vec::new();
    let sweep = a.k_sweep.is_some();
    {
        let mut w = csv::Writer::from_writer(&mut table);
        let mut header = vec!["method", "mean_f1", "std_f1", "mean_purity"];
        if sweep {
            header.insert(0, "k");
        }
        w.write_record(&header).map_err(Failure::data)?;
        for r in &reports {
            for agg in &r.aggregates {
                let mut row = vec![
                    agg.method.to_string(),
                    agg.mean_f1.to_string(),
                    agg.std_f1.to_string(),
                    agg.mean_purity.to_string(),
                ];
                if sweep {
                    row.insert(0, r.k.to_string());
                }
                w.write_record(&row).map_err(Failure::data)?;
            }
        }
        w.flush().map_err(Failure::data)?;
    }
    let table = String::from_utf8(table).expect("csv is utf-8");
    let json = if sweep {
        serde_json::to_string_pretty(&reports).expect("reports serialize")
    } else {
        reports[0].to_json()
    };

    for r in &reports {
        for agg in &r.aggregates {
            println!(
                "k={:<5} {:<7} macro-F1 {:.3} ({:.3})  purity {:.3}",
                r.k, agg.method, agg.mean_f1, agg.std_f1, agg.mean_purity
            );
        }
    }
    if let Some(path) = &a.out_json {
        write_text(path, &json)?;
    }
    if let Some(path) = &a.out_csv {
        write_text(path, &table)?;
    }
    Ok(())
}

fn cmd_sample(a: SampleArgs) -> Outcome {
    let matrix = load_embeddings(&a.emb)?;
    let manifest = load_manifest(&a.manifest)?;
    let report = validate_pair(&matrix, &manifest, ManifestRole::Validation, false);
    if !report.is_clean() {
        return Err(Failure::data(report.violations[0].to_string()));
    }
    if !(a.fraction > 0.0 && a.fraction <= 1.0) {
        return Err(Failure::usage(format!(
            "--fraction must lie in (0, 1], got {}",
            a.fraction
        )));
    }
    let rows = sample_validation(matrix.count(), a.fraction, a.seed)?;
    let sub = matrix.select_rows(&rows);
    let mut sub_manifest = manifest.select_rows(&rows);
    if !a.keep_labels {
        sub_manifest = sub_manifest.without_labels();
    }
    let bytes = sub.to_emb1_bytes();
    write_atomic(&a.out_emb, |w| w.write_all(&bytes).map_err(|e| e.to_string()))?;
    write_atomic(&a.out_manifest, |w| {
        sub_manifest.write_jsonl(w).map_err(|e| e.to_string())
    })?;
    eprintln!("sampled {} of {} rows", rows.len(), matrix.count());
    Ok(())
}
