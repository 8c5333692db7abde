//! End-to-end acceptance gate. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any criterion fails.

#[path = "../../core/tests/support/transport_oracle.rs"]
mod transport_oracle;

use std::fs;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use mmselect::bench::{generate, macro_f1, run_bench, BenchConfig, BenchReport};
use mmselect::ot::{
    calibrated_gradients, cost_matrix, directional_derivative_check, solve_exact, solve_sinkhorn, uniform_marginal,
    GradientScores, SinkhornConfig,
};
use mmselect::selection::{score_all, select, Method, SelectionTask};
use mmselect::store::{write_embeddings, write_manifest, EmbeddingMatrix, InstanceManifest, InstanceRecord};
use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;
use transport_oracle::{basis_count, basis_min_cost, gcd, integral_min_cost, uniform_units};

type Outcome = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

fn rng(seed: u64) -> Xoshiro256PlusPlus {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

fn random_points(r: &mut impl Rng, count: usize, dim: usize) -> EmbeddingMatrix {
    let rows: Vec<Vec<f64>> = (0..count)
        .map(|_| (0..dim).map(|_| r.random_range(-1.0..1.0)).collect())
        .collect();
    EmbeddingMatrix::from_rows(&rows, dim).unwrap()
}

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn majority_baseline() -> Outcome {
    let counts = |real: usize, fake: usize| {
        let mut t = vec![0u8; real];
        t.extend(std::iter::repeat_n(1u8, fake));
        t
    };
    let me = macro_f1(&[1; 702], &counts(292, 410)).map_err(|e| e.to_string())?;
    let sn = macro_f1(&[1; 756], &counts(376, 380)).map_err(|e| e.to_string())?;
    ensure(
        (me - 0.368).abs() <= 0.002 && (sn - 0.335).abs() <= 0.002,
        format!("MediaEval {me:.4} (want 0.368), Snopes {sn:.4} (want 0.335)"),
    )
}

fn ot_correctness() -> Outcome {
    let mut r = rng(2024);
    let (mut worst_value, mut worst_gap) = (0.0f64, 0.0f64);
    let mut by_vertices = 0;
    for t in 0..200 {
        let n = r.random_range(1..=12);
        let m = r.random_range(1..=5);
        let cost = cost_matrix(&random_points(&mut r, n, 3), &random_points(&mut r, m, 3), 2.0).unwrap();
        let sol = solve_exact(&cost, &uniform_marginal(n), &uniform_marginal(m)).map_err(|e| e.to_string())?;
        let (ru, cu) = uniform_units(n, m);
        let oracle = integral_min_cost(cost.costs(), n, m, &ru, &cu);
        if basis_count(n, m) <= 200_000 {
            let vertices = basis_min_cost(cost.costs(), n, m, &uniform_marginal(n), &uniform_marginal(m));
            if (vertices - oracle).abs() > 1e-12 * oracle {
                return Err(format!("instance {t}: oracles disagree, {vertices} vs {oracle}"));
            }
            by_vertices += 1;
        }
        let rel = (sol.primal_value - oracle).abs() / oracle.abs().max(f64::MIN_POSITIVE);
        let gap = sol.duality_gap().abs() / sol.primal_value.abs().max(f64::MIN_POSITIVE);
        worst_value = worst_value.max(rel);
        worst_gap = worst_gap.max(gap);
        if rel > 1e-9 || gap > 1e-9 {
            return Err(format!(
                "instance {t} ({n}x{m}): value error {rel:.2e}, duality gap {gap:.2e}"
            ));
        }
    }
    Ok(format!(
        "200 instances ({by_vertices} also by basis enumeration), max value error {worst_value:.1e}, max duality gap {worst_gap:.1e}"
    ))
}

fn gradient_fidelity() -> Outcome {
    let mut r = rng(77);
    let mut worst = 0.0f64;
    let mut checks = 0;
    for t in 0..50 {
        // Coprime sizes keep the uniform problem nondegenerate.
        let (n, m) = loop {
            let n: usize = r.random_range(2..=32);
            let m: usize = r.random_range(1..=8);
            if gcd(n as u64, m as u64) == 1 {
                break (n, m);
            }
        };
        let cost = cost_matrix(&random_points(&mut r, n, 4), &random_points(&mut r, m, 4), 2.0).unwrap();
        let (a, b) = (uniform_marginal(n), uniform_marginal(m));
        for i in 0..n {
            let (fd, an) = directional_derivative_check(&cost, &a, &b, i, 1e-4).map_err(|e| e.to_string())?;
            let ratio = (fd - an).abs() / (1e-3 * (1.0 + an.abs()));
            worst = worst.max(ratio);
            checks += 1;
            if ratio > 1.0 {
                return Err(format!("instance {t} ({n}x{m}) row {i}: fd {fd} analytic {an}"));
            }
        }
    }
    Ok(format!(
        "{checks} rows on 50 instances, worst error at {worst:.1e} of the tolerance"
    ))
}

fn calibration_invariance() -> Outcome {
    let mut r = rng(5);
    let mut worst_shift = 0.0f64;
    for _ in 0..20 {
        let (n, m) = (r.random_range(2..=40), r.random_range(1..=8));
        let cost = cost_matrix(&random_points(&mut r, n, 5), &random_points(&mut r, m, 5), 2.0).unwrap();
        let sol = solve_exact(&cost, &uniform_marginal(n), &uniform_marginal(m)).map_err(|e| e.to_string())?;
        let base = GradientScores::from_potentials(&sol.f).map_err(|e| e.to_string())?;
        for c in [-1e6, -1.0, 0.0, 1.0, 1e6] {
            let shifted: Vec<f64> = sol.f.iter().map(|x| x + c).collect();
            let moved = GradientScores::from_potentials(&shifted).map_err(|e| e.to_string())?;
            for (x, y) in base.scores.iter().zip(&moved.scores) {
                worst_shift = worst_shift.max((x - y).abs());
            }
        }
    }
    if worst_shift > 1e-9 {
        return Err(format!("constant shift moved a score by {worst_shift:.2e}"));
    }

    let mut config = BenchConfig::default_three_cluster();
    config.pool_size = 600;
    let mut compared = 0;
    for seed in 0..3 {
        let data = generate(&config, seed);
        let cost = cost_matrix(&data.pool.matrix, &data.validation.matrix, 2.0).unwrap();
        let (a, b) = (uniform_marginal(cost.n()), uniform_marginal(cost.m()));
        let base =
            calibrated_gradients(&solve_exact(&cost, &a, &b).map_err(|e| e.to_string())?).map_err(|e| e.to_string())?;
        let sem = |m: &EmbeddingMatrix| {
            let task = SelectionTask::new(m, &data.pool.manifest, &data.validation.matrix, Method::SemSim, 1);
            score_all(&task).map(|t| t.order).map_err(|e| e.to_string())
        };
        let sem_base = sem(&data.pool.matrix)?;
        for lambda in [1e-3, 0.37, 3.0, 1e4] {
            let scaled = calibrated_gradients(&solve_exact(&cost.scaled(lambda), &a, &b).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
            if scaled.ranking != base.ranking {
                return Err(format!(
                    "dissim ranking changed under cost scale {lambda} (seed {seed})"
                ));
            }
            let rows: Vec<Vec<f64>> = (0..data.pool.matrix.count())
                .map(|i| data.pool.matrix.row_f64(i).iter().map(|x| x * lambda).collect())
                .collect();
            if sem(&EmbeddingMatrix::from_rows(&rows, config.dim).unwrap())? != sem_base {
                return Err(format!("semsim ranking changed under scale {lambda} (seed {seed})"));
            }
            compared += 2;
        }
    }
    Ok(format!(
        "max shift change {worst_shift:.1e}; {compared} rescaled rankings identical"
    ))
}

fn sinkhorn_convergence() -> Outcome {
    let mut r = rng(64);
    let (mut worst_rel, mut worst_viol) = (0.0f64, 0.0f64);
    for t in 0..50 {
        let cost = cost_matrix(&random_points(&mut r, 64, 4), &random_points(&mut r, 16, 4), 2.0).unwrap();
        let (a, b) = (uniform_marginal(64), uniform_marginal(16));
        let exact = solve_exact(&cost, &a, &b).map_err(|e| e.to_string())?.primal_value;
        let config = SinkhornConfig {
            epsilon: 1e-3 * cost.mean(),
            tol: 1e-9,
            max_iter: 100_000,
        };
        let sol = solve_sinkhorn(&cost, &a, &b, &config).map_err(|e| format!("instance {t}: {e}"))?;
        let rel = (sol.primal_value - exact).abs() / exact;
        worst_rel = worst_rel.max(rel);
        worst_viol = worst_viol.max(sol.marginal_violation);
        if rel > 0.02 || sol.marginal_violation > 1e-9 {
            return Err(format!(
                "instance {t}: relative error {rel:.2e}, violation {:.2e}",
                sol.marginal_violation
            ));
        }
    }
    Ok(format!(
        "50 instances, max relative error {worst_rel:.1e}, max violation {worst_viol:.1e}"
    ))
}

fn mean_purity(report: &BenchReport, method: Method) -> f64 {
    report.aggregate(method).map_or(f64::NAN, |a| a.mean_purity)
}

fn cluster_recovery() -> Outcome {
    let mut config = BenchConfig::default_three_cluster();
    config.seeds = (0..20).collect();
    let report = run_bench(&config).map_err(|e| e.to_string())?;
    let (s, d, rnd) = (
        mean_purity(&report, Method::SemSim),
        mean_purity(&report, Method::DisSim),
        mean_purity(&report, Method::Random),
    );
    ensure(
        s >= 0.90 && d >= 0.90 && (0.28..=0.38).contains(&rnd),
        format!("20 seeds, purity semsim {s:.3}, dissim {d:.3}, random {rnd:.3}"),
    )
}

fn selection_beats_random() -> Outcome {
    let report = run_bench(&BenchConfig::default_three_cluster()).map_err(|e| e.to_string())?;
    let agg = |m| {
        report
            .aggregate(m)
            .map(|a| (a.mean_f1, a.std_f1))
            .unwrap_or((f64::NAN, f64::NAN))
    };
    let (s, d, rnd) = (agg(Method::SemSim), agg(Method::DisSim), agg(Method::Random));
    ensure(
        s.0 - rnd.0 >= 0.10 && d.0 - rnd.0 >= 0.10,
        format!(
            "3 seeds, macro-F1 semsim {:.3} ± {:.3}, dissim {:.3} ± {:.3}, random {:.3} ± {:.3}",
            s.0, s.1, d.0, d.1, rnd.0, rnd.1
        ),
    )
}

fn null_check() -> Outcome {
    let mut config = BenchConfig::null_config();
    config.seeds = (0..50).collect();
    let report = run_bench(&config).map_err(|e| e.to_string())?;
    let f1 = |m| report.aggregate(m).map_or(f64::NAN, |a| a.mean_f1);
    let (s, d, rnd) = (f1(Method::SemSim), f1(Method::DisSim), f1(Method::Random));
    ensure(
        (s - rnd).abs() <= 0.05 && (d - rnd).abs() <= 0.05,
        format!("50 seeds, macro-F1 semsim {s:.3}, dissim {d:.3}, random {rnd:.3}"),
    )
}

fn cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = generate(&BenchConfig::default_three_cluster(), 11);
    let p = |name: &str| dir.path().join(name);
    write_embeddings(&data.pool.matrix, p("train.emb")).map_err(|e| e.to_string())?;
    write_manifest(&data.pool.manifest, p("train.jsonl")).map_err(|e| e.to_string())?;
    write_embeddings(&data.validation.matrix, p("val.emb")).map_err(|e| e.to_string())?;
    let mut files = 0;
    for method in Method::ALL {
        let mut outputs = Vec::new();
        for run in 0..2 {
            let sel = p(&format!("{method}-{run}.jsonl"));
            let diag = p(&format!("{method}-{run}.json"));
            let status = Command::new(env!("CARGO_BIN_EXE_mmselect"))
                .args(["select", "--method", method.as_str(), "--k", "300", "--seed", "7"])
                .arg("--train-emb")
                .arg(p("train.emb"))
                .arg("--train-manifest")
                .arg(p("train.jsonl"))
                .arg("--val-emb")
                .arg(p("val.emb"))
                .arg("--out")
                .arg(&sel)
                .arg("--solver-json")
                .arg(&diag)
                .status()
                .map_err(|e| e.to_string())?;
            if !status.success() {
                return Err(format!("{method} run {run} exited with {status}"));
            }
            outputs.push((fs::read(&sel).map_err(|e| e.to_string())?, fs::read(&diag).ok()));
        }
        if outputs[0] != outputs[1] {
            return Err(format!("{method}: repeated runs differ"));
        }
        files += 1 + usize::from(outputs[0].1.is_some());
    }
    Ok(format!("{files} output files byte-identical across repeated runs"))
}

fn balance() -> Outcome {
    let mut r = rng(31);
    let mut tasks = 0;
    for t in 0..300 {
        let n = r.random_range(4..=120);
        let share = r.random_range(0.2..0.8);
        let labels: Vec<u8> = (0..n).map(|_| u8::from(r.random_bool(share))).collect();
        let ones = labels.iter().filter(|l| **l == 1).count();
        let fewer = ones.min(n - ones);
        if fewer == 0 {
            continue;
        }
        // Largest k with ceil(k/2) candidates in each class.
        let k = r.random_range(1..=2 * fewer);
        let manifest = InstanceManifest::new(
            labels
                .iter()
                .enumerate()
                .map(|(i, &l)| InstanceRecord::new(format!("x{i}"), Some(l)))
                .collect(),
        );
        let train = random_points(&mut r, n, 4);
        let m = r.random_range(1..=10);
        let val = random_points(&mut r, m, 4);
        for method in Method::ALL {
            let mut task = SelectionTask::new(&train, &manifest, &val, method, k);
            task.seed = t;
            let result = select(&task).map_err(|e| format!("task {t}: {e}"))?;
            let (c0, c1) = (result.balance.count0, result.balance.count1);
            if c0.abs_diff(c1) > 1 || c0 + c1 != k {
                return Err(format!("task {t} {method}: k {k}, counts {c0}/{c1}"));
            }
            tasks += 1;
        }
    }
    Ok(format!("{tasks} balanced selections within one of even"))
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let criteria: [Criterion; 10] = [
        ("majority baseline", Duration::from_secs(1), majority_baseline),
        ("OT correctness", Duration::from_secs(120), ot_correctness),
        ("gradient fidelity", Duration::from_secs(300), gradient_fidelity),
        (
            "calibration invariance",
            Duration::from_secs(600),
            calibration_invariance,
        ),
        ("Sinkhorn convergence", Duration::from_secs(600), sinkhorn_convergence),
        ("cluster recovery", Duration::from_secs(600), cluster_recovery),
        (
            "selection beats random",
            Duration::from_secs(600),
            selection_beats_random,
        ),
        ("null check", Duration::from_secs(600), null_check),
        ("CLI determinism", Duration::from_secs(600), cli_determinism),
        ("balance", Duration::from_secs(600), balance),
    ];
    let mut failed = 0;
    for (name, budget, check) in criteria {
        let start = Instant::now();
        let outcome = check();
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(d) if took > budget => Err(format!("{d}; took {took:.1?}, budget {budget:.0?}")),
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{took:.2?}]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail} [{took:.2?}]");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
