//! End-to-end acceptance checks. Runs without the libtest harness so that every
//! criterion prints its own PASS/FAIL line; exits non-zero if any fails.

use std::ops::Range;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use saddle_milp::analysis::{check_monotonicity, spectral_norm, suboptimality_certificate};
use saddle_milp::harness::{generate_instance, monte_carlo, prepare, solve_prepared, Prepared};
use saddle_milp::lagrangian::{dual_block_grad, eval_lagrangian, primal_block_grad};
use saddle_milp::linalg::{dist, dot};
use saddle_milp::oracle::{
    exact_milp, exact_saddle, exact_saddle_from, kkt_residual, vertex_integrality_census,
};
use saddle_milp::simnet::Backend;
use saddle_milp::{BlockPartition, ExperimentConfig, RelaxedInstance};

// gradients
const FD_STEP: f64 = 1e-3;
const FD_REL_TOL: f64 = 1e-6;
const FD_INSTANCES: u64 = 10;
const FD_POINTS_PER_INSTANCE: usize = 10;
const FD_BUDGET: Duration = Duration::from_secs(10);

// saddle oracle
const SADDLE_TOL: f64 = 1e-10;
const SADDLE_PROBES: usize = 1000;
const SADDLE_INEQ_SLACK: f64 = 1e-9;
const RESTARTS: usize = 10;
const RESTART_AGREEMENT: f64 = 1e-8;

// asynchronous convergence grid
const DELAY_BOUNDS: [u64; 3] = [1, 5, 20];
const P_UPDATES: [f64; 2] = [0.3, 1.0];
const P_DELIVERS: [f64; 3] = [0.05, 0.5, 1.0];
const SEEDS_PER_CELL: u64 = 5;
const CONVERGENCE_TOL: f64 = 1e-4;
const MAX_EPOCHS: u64 = 5000;
const GRID_BUDGET: Duration = Duration::from_secs(120);

// certificate and census
const CERT_INSTANCES: u64 = 20;
const CERT_SLACK: f64 = 1e-9;
const CERT_BUDGET: Duration = Duration::from_secs(60);
const CENSUS_INSTANCES: u64 = 20;

// best-response monotonicity
const MONOTONE_INSTANCES: u64 = 5;
const MONOTONE_PAIRS: usize = 100;

// delivery-probability trend
const TREND_SEEDS: u64 = 20;

// Monte Carlo
const MC_RUNS: usize = 100;
const MC_FEASIBILITY_FLOOR: f64 = 0.9;
const MC_BUDGET: Duration = Duration::from_secs(300);

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn relaxed_from(config: &ExperimentConfig, seed: u64) -> (RelaxedInstance, BlockPartition) {
    let inst = generate_instance(config, seed).expect("instance generation");
    let zero = vec![0.0; inst.dim()];
    let p = prepare(config, inst, zero).expect("prepare");
    (p.relaxed, p.partition)
}

fn random_point(rel: &RelaxedInstance, rng: &mut ChaCha8Rng) -> Vec<f64> {
    rel.base()
        .hull_bounds()
        .into_iter()
        .map(|(l, u)| rng.random_range(l..=u))
        .collect()
}

/// Uniform-ish point of the dual feasible set: nonnegative, each dual
/// block inside the l1 ball of radius `dual_bound`.
fn random_dual(rel: &RelaxedInstance, blocks: &[Range<usize>], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut l = vec![0.0; rel.base().num_constraints()];
    for rows in blocks {
        let budget = rng.random_range(0.0..rel.dual_bound());
        let w: Vec<f64> = rows.clone().map(|_| rng.random_range(0.0..1.0)).collect();
        let s: f64 = w.iter().sum::<f64>().max(1e-12);
        for (r, wi) in rows.clone().zip(w) {
            l[r] = budget * wi / s;
        }
    }
    l
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let config = ExperimentConfig::desk();
    let mut worst = 0.0_f64;
    let mut points = 0;
    for inst_seed in 0..FD_INSTANCES {
        let (rel, part) = relaxed_from(&config, 100 + inst_seed);
        let mut rng = ChaCha8Rng::seed_from_u64(inst_seed);
        for _ in 0..FD_POINTS_PER_INSTANCE {
            points += 1;
            let z = random_point(&rel, &mut rng);
            let lam: Vec<f64> = (0..rel.base().num_constraints())
                .map(|_| rng.random_range(0.0..rel.dual_bound()))
                .collect();
            let l = |z: &[f64], lam: &[f64]| eval_lagrangian(&rel, z, lam).unwrap();
            let rel_err = |fd: f64, g: f64| (fd - g).abs() / g.abs().max(1.0);
            for cols in part.primal() {
                let g = primal_block_grad(&rel, cols.clone(), &z, &lam).unwrap();
                for (k, j) in cols.clone().enumerate() {
                    let (mut zp, mut zm) = (z.clone(), z.clone());
                    zp[j] += FD_STEP;
                    zm[j] -= FD_STEP;
                    let fd = (l(&zp, &lam) - l(&zm, &lam)) / (2.0 * FD_STEP);
                    worst = worst.max(rel_err(fd, g[k]));
                }
            }
            for rows in part.dual() {
                let g = dual_block_grad(&rel, rows.clone(), &z, &lam).unwrap();
                for (k, r) in rows.clone().enumerate() {
                    let (mut lp, mut lm) = (lam.clone(), lam.clone());
                    lp[r] += FD_STEP;
                    lm[r] -= FD_STEP;
                    let fd = (l(&z, &lp) - l(&z, &lm)) / (2.0 * FD_STEP);
                    worst = worst.max(rel_err(fd, g[k]));
                }
            }
        }
    }
    let elapsed = start.elapsed();
    let detail = format!("{points} points, worst relative error {worst:.2e}, {elapsed:.2?}");
    ensure(worst <= FD_REL_TOL, || {
        format!("{detail} (tolerance {FD_REL_TOL:e})")
    })?;
    ensure(elapsed < FD_BUDGET, || {
        format!("{detail} exceeds {FD_BUDGET:?}")
    })?;
    Ok(detail)
}

fn criterion_2() -> Outcome {
    let config = ExperimentConfig::desk();
    let (rel, part) = relaxed_from(&config, config.seed);
    let sp = exact_saddle(&rel, SADDLE_TOL).map_err(|e| e.to_string())?;
    let residual = kkt_residual(&rel, &sp.z, &sp.lambda, part.dual());
    ensure(residual < SADDLE_TOL, || {
        format!("KKT residual {residual:e}")
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let centre = eval_lagrangian(&rel, &sp.z, &sp.lambda).unwrap();
    let slack = SADDLE_INEQ_SLACK * (1.0 + centre.abs());
    let mut violations = 0;
    for _ in 0..SADDLE_PROBES {
        let z = random_point(&rel, &mut rng);
        let lam = random_dual(&rel, part.dual(), &mut rng);
        let low = eval_lagrangian(&rel, &sp.z, &lam).unwrap();
        let high = eval_lagrangian(&rel, &z, &sp.lambda).unwrap();
        if low > centre + slack || centre > high + slack {
            violations += 1;
        }
    }
    ensure(violations == 0, || {
        format!("{violations} saddle inequality violations")
    })?;

    let mut spread = 0.0_f64;
    for _ in 0..RESTARTS {
        let l0 = random_dual(&rel, part.dual(), &mut rng);
        let other = exact_saddle_from(&rel, &l0, SADDLE_TOL, saddle_milp::oracle::SADDLE_MAX_ITER)
            .map_err(|e| e.to_string())?;
        spread = spread
            .max(dist(&other.z, &sp.z))
            .max(dist(&other.lambda, &sp.lambda));
    }
    ensure(spread <= RESTART_AGREEMENT, || {
        format!("restarts disagree by {spread:e}")
    })?;
    Ok(format!(
        "residual {residual:.2e}, {SADDLE_PROBES} probes clean, restarts agree to {spread:.2e}"
    ))
}

struct GridRun {
    delay_bound: u64,
    p_update: f64,
    p_deliver: f64,
    seed: u64,
    converged: bool,
    epochs: u64,
    final_distance: f64,
    checked: usize,
    violations: usize,
    audit_ok: bool,
}

fn grid_prepared() -> (ExperimentConfig, Prepared) {
    let mut config = ExperimentConfig::desk();
    config.max_epochs = MAX_EPOCHS;
    config.stop_tol = CONVERGENCE_TOL;
    let inst = generate_instance(&config, config.seed).expect("desk instance");
    let zero = vec![0.0; inst.dim()];
    let prepared = prepare(&config, inst, zero).expect("prepare");
    (config, prepared)
}

fn run_grid() -> (Vec<GridRun>, Duration) {
    let start = Instant::now();
    let (base, prepared) = grid_prepared();
    let mut cells = Vec::new();
    for &b in &DELAY_BOUNDS {
        for &pu in &P_UPDATES {
            for &pd in &P_DELIVERS {
                for s in 0..SEEDS_PER_CELL {
                    cells.push((b, pu, pd, s));
                }
            }
        }
    }
    let runs = cells
        .into_par_iter()
        .map(|(b, pu, pd, s)| {
            let mut cfg = base.clone();
            cfg.delay_bound = b;
            cfg.p_update = pu;
            cfg.p_deliver = pd;
            let rep =
                solve_prepared(&cfg, &prepared, s, false, Backend::Sequential).expect("solve");
            let last = rep.trace.epochs.last().expect("epoch record");
            let env = rep.trace.envelope_report();
            GridRun {
                delay_bound: b,
                p_update: pu,
                p_deliver: pd,
                seed: s,
                converged: rep.trace.converged,
                epochs: rep.trace.epochs_run(),
                final_distance: last.primal_distance.max(last.dual_distance),
                checked: env.checked,
                violations: env.violations(),
                audit_ok: saddle_milp::simnet::audit_staleness(&rep.trace)
                    .is_some_and(|a| a.holds()),
            }
        })
        .collect();
    (runs, start.elapsed())
}

fn criterion_3(grid: &[GridRun], elapsed: Duration) -> Outcome {
    let bad: Vec<String> = grid
        .iter()
        .filter(|r| {
            !(r.converged
                && r.final_distance < CONVERGENCE_TOL
                && r.epochs <= MAX_EPOCHS
                && r.audit_ok)
        })
        .map(|r| {
            format!(
                "B={} pu={} pd={} seed={} epochs={} dist={:.2e}",
                r.delay_bound, r.p_update, r.p_deliver, r.seed, r.epochs, r.final_distance
            )
        })
        .collect();
    let max_epochs = grid.iter().map(|r| r.epochs).max().unwrap_or(0);
    let detail = format!(
        "{} runs, worst {max_epochs} epochs, {elapsed:.2?}",
        grid.len()
    );
    ensure(bad.is_empty(), || {
        format!("{detail}; not converged: {}", bad.join("; "))
    })?;
    ensure(elapsed < GRID_BUDGET, || {
        format!("{detail} exceeds {GRID_BUDGET:?}")
    })?;
    Ok(detail)
}

fn criterion_4(grid: &[GridRun]) -> Outcome {
    let checked: usize = grid.iter().map(|r| r.checked).sum();
    let violations: usize = grid.iter().map(|r| r.violations).sum();
    let unchecked = grid.iter().filter(|r| r.checked == 0).count();
    let detail = format!("{checked} epoch bounds checked, {violations} violations");
    ensure(unchecked == 0, || {
        format!("{detail}; {unchecked} runs had no envelope")
    })?;
    ensure(violations == 0, || detail.clone())?;
    Ok(detail)
}

fn certificate_config() -> ExperimentConfig {
    ExperimentConfig {
        m: 8,
        y: 2,
        primal_agents: 6,
        dual_agents: 2,
        reals_per_block: 0,
        integers_per_block: 1,
        a_range: [0.0, 1.0],
        b_range: [9.0, 14.0],
        c_range: [-5.0, 0.0],
        box_half_width: 2.0,
        alpha: 0.1,
        delta: 0.01,
        ..ExperimentConfig::desk()
    }
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let config = certificate_config();
    let mut worst_margin = f64::INFINITY;
    for seed in 0..CERT_INSTANCES {
        let (rel, _) = relaxed_from(&config, seed);
        let opt = exact_milp(rel.base()).map_err(|e| format!("seed {seed}: {e}"))?;
        let sp = exact_saddle(&rel, SADDLE_TOL).map_err(|e| format!("seed {seed}: {e}"))?;
        let gap = dot(rel.base().cost(), &sp.z) - opt.cost;
        let cert = suboptimality_certificate(&rel);
        ensure(gap <= cert + CERT_SLACK, || {
            format!("seed {seed}: gap {gap} above certificate {cert}")
        })?;
        worst_margin = worst_margin.min(cert - gap);
    }
    let elapsed = start.elapsed();
    let detail =
        format!("{CERT_INSTANCES} instances, smallest margin {worst_margin:.3}, {elapsed:.2?}");
    ensure(elapsed < CERT_BUDGET, || {
        format!("{detail} exceeds {CERT_BUDGET:?}")
    })?;
    Ok(detail)
}

fn criterion_6() -> Outcome {
    let mut vertices = 0;
    let mut violations = 0;
    let mut max_frac = 0;
    for seed in 0..CENSUS_INSTANCES {
        let y = 1 + (seed % 2) as usize;
        let config = ExperimentConfig {
            m: 4,
            y,
            primal_agents: 4 - y,
            dual_agents: y,
            reals_per_block: 0,
            integers_per_block: 1,
            a_range: [-1.0, 1.0],
            b_range: [8.5, 12.0],
            c_range: [-5.0, 5.0],
            box_half_width: 2.0,
            ..ExperimentConfig::desk()
        };
        let (rel, _) = relaxed_from(&config, seed);
        let census = vertex_integrality_census(&rel).map_err(|e| format!("seed {seed}: {e}"))?;
        vertices += census.vertices;
        violations += census.violations;
        max_frac = max_frac.max(census.max_fractional_blocks);
    }
    let detail = format!(
        "{vertices} vertices over {CENSUS_INSTANCES} instances, at most {max_frac} fractional blocks, {violations} violations"
    );
    ensure(violations == 0 && vertices > 0, || detail.clone())?;
    Ok(detail)
}

fn criterion_7() -> Outcome {
    let config = ExperimentConfig::desk();
    let mut failures = 0;
    let mut pairs = 0;
    for seed in 0..MONOTONE_INSTANCES {
        let (rel, part) = relaxed_from(&config, 200 + seed);
        let a_norm = spectral_norm(rel.base().coupling()).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..MONOTONE_PAIRS {
            let l1 = random_dual(&rel, part.dual(), &mut rng);
            let l2 = random_dual(&rel, part.dual(), &mut rng);
            pairs += 1;
            if !check_monotonicity(&rel, a_norm, &l1, &l2).holds() {
                failures += 1;
            }
        }
    }
    let detail = format!("{pairs} dual pairs, {failures} violations");
    ensure(failures == 0, || detail.clone())?;
    Ok(detail)
}

fn median(mut v: Vec<u64>) -> f64 {
    v.sort_unstable();
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2] as f64
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2]) as f64
    }
}

fn criterion_8() -> Outcome {
    let (base, prepared) = grid_prepared();
    let epochs_at = |pd: f64| -> Result<Vec<u64>, String> {
        (0..TREND_SEEDS)
            .into_par_iter()
            .map(|s| {
                let mut cfg = base.clone();
                cfg.p_deliver = pd;
                let rep = solve_prepared(&cfg, &prepared, s, false, Backend::Sequential)
                    .map_err(|e| e.to_string())?;
                if rep.trace.converged {
                    Ok(rep.trace.epochs_run())
                } else {
                    Err(format!("p_deliver={pd} seed={s} did not converge"))
                }
            })
            .collect()
    };
    let fast = median(epochs_at(1.0)?);
    let slow = median(epochs_at(0.05)?);
    let detail = format!("median epochs {fast} at p_deliver=1.0, {slow} at p_deliver=0.05");
    ensure(fast <= slow, || detail.clone())?;
    Ok(detail)
}

fn criterion_9() -> Outcome {
    let start = Instant::now();
    let mut config = ExperimentConfig::desk();
    config.runs = MC_RUNS;
    let summary = monte_carlo(&config).map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    summary.write(dir.path()).map_err(|e| e.to_string())?;
    let hist =
        std::fs::read_to_string(dir.path().join("histogram.csv")).map_err(|e| e.to_string())?;
    let runs = std::fs::read_to_string(dir.path().join("runs.csv")).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let detail = format!(
        "{} runs, {} failed, feasibility {:.2}, median relative suboptimality {:.4}, {elapsed:.2?}",
        summary.runs,
        summary.failed,
        summary.feasibility_rate,
        summary.median_relative_subopt.unwrap_or(f64::NAN),
    );
    ensure(
        summary.runs == MC_RUNS && runs.lines().count() == MC_RUNS + 1,
        || format!("{detail}; missing rows"),
    )?;
    ensure(
        hist.lines().count() == saddle_milp::harness::HISTOGRAM_BINS + 1,
        || format!("{detail}; bad histogram"),
    )?;
    ensure(summary.feasibility_rate >= MC_FEASIBILITY_FLOOR, || {
        format!("{detail}; below floor {MC_FEASIBILITY_FLOOR}")
    })?;
    ensure(elapsed < MC_BUDGET, || {
        format!("{detail} exceeds {MC_BUDGET:?}")
    })?;
    Ok(detail)
}

fn criterion_10() -> Outcome {
    // simulator traces, including the thread-pool backend
    let (base, prepared) = grid_prepared();
    let mut compared = 0;
    for (b, pd) in [(1, 1.0), (5, 0.05), (20, 0.5)] {
        let mut cfg = base.clone();
        cfg.delay_bound = b;
        cfg.p_deliver = pd;
        let artifacts = |backend| {
            let rep = solve_prepared(&cfg, &prepared, 42, true, backend).expect("solve");
            (
                rep.trace.to_csv(),
                rep.trace.to_json(),
                serde_json::to_string(&rep.recovered).unwrap(),
            )
        };
        let first = artifacts(Backend::Sequential);
        ensure(first == artifacts(Backend::Sequential), || {
            format!("B={b}: repeat differs")
        })?;
        ensure(first == artifacts(Backend::Parallel), || {
            format!("B={b}: parallel backend differs")
        })?;
        compared += 3;
    }
    // instance generation
    let inst = |s| serde_json::to_string(&generate_instance(&base, s).unwrap()).unwrap();
    ensure(inst(9) == inst(9), || "instance generation differs".into())?;
    // Monte Carlo artifacts
    let mut mc = ExperimentConfig::desk();
    mc.runs = 12;
    let outputs = || {
        let s = monte_carlo(&mc).unwrap();
        (s.runs_csv(), s.histogram_csv(), s.summary_json())
    };
    ensure(outputs() == outputs(), || {
        "Monte Carlo artifacts differ".into()
    })?;
    Ok(format!(
        "{compared} trace comparisons, instance and Monte Carlo artifacts bitwise equal"
    ))
}

fn report(n: usize, name: &str, outcome: &Outcome) -> bool {
    match outcome {
        Ok(d) => println!("PASS criterion {n:>2} {name}: {d}"),
        Err(d) => println!("FAIL criterion {n:>2} {name}: {d}"),
    }
    outcome.is_ok()
}

fn main() -> ExitCode {
    let mut ok = true;
    ok &= report(1, "gradient correctness", &criterion_1());
    ok &= report(2, "oracle saddle validity", &criterion_2());
    let (grid, elapsed) = run_grid();
    ok &= report(3, "asynchronous convergence", &criterion_3(&grid, elapsed));
    ok &= report(4, "rate envelopes", &criterion_4(&grid));
    ok &= report(5, "suboptimality certificate", &criterion_5());
    ok &= report(6, "vertex integrality census", &criterion_6());
    ok &= report(7, "best-response monotonicity", &criterion_7());
    ok &= report(8, "delivery probability trend", &criterion_8());
    ok &= report(9, "Monte Carlo feasibility", &criterion_9());
    ok &= report(10, "determinism", &criterion_10());
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
