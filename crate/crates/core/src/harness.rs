//! Random instance generation, single-instance solve pipeline and the Monte
//! Carlo driver.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::StepSizes;
use crate::analysis::{
    default_theta_probes, estimate_theta, spectral_norm, stabilize_gamma,
    suboptimality_certificate, validate_with_norm, AnalysisError, BetaCeilings, RateConstants,
    ThetaEstimate,
};
use crate::lagrangian::Kappa;
use crate::linalg::{dot, Matrix};
use crate::model::{
    compute_rho, BlockPartition, BlockSet, MilpInstance, ModelError, RelaxedInstance,
};
use crate::oracle::{exact_milp, exact_saddle, OracleError};
use crate::recovery::{relative_gap, round_solution, RecoveredSolution};
use crate::simnet::{
    run, AsyncSchedule, Backend, DelayLaw, DualEpochs, Reference, RunOptions, RunTrace, SimError,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no instance with a Slater point at the origin after {attempts} draws")]
    GenerationFailed { attempts: usize },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Everything needed to generate, solve and score random instances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Total number of agents, primal plus dual.
    pub m: usize,
    /// Number of coupling constraints.
    pub y: usize,
    pub primal_agents: usize,
    pub dual_agents: usize,
    pub reals_per_block: usize,
    pub integers_per_block: usize,
    pub a_range: [f64; 2],
    pub b_range: [f64; 2],
    pub c_range: [f64; 2],
    /// Every coordinate lives in `[-s, s]`.
    pub box_half_width: f64,
    pub alpha: f64,
    pub delta: f64,
    pub gamma: f64,
    /// Dual step; 0.9 times the smallest ceiling when absent.
    #[serde(default)]
    pub beta: Option<f64>,
    pub delay_bound: u64,
    pub p_update: f64,
    pub p_deliver: f64,
    #[serde(default)]
    pub delay_law: DelayLaw,
    #[serde(default)]
    pub dual_epochs: DualEpochs,
    pub seed: u64,
    pub runs: usize,
    pub max_epochs: u64,
    pub stop_tol: f64,
    pub max_redraws: usize,
    #[serde(default)]
    pub out_dir: Option<String>,
}

impl ExperimentConfig {
    /// 28 primal agents with `Z^2` blocks in `[-2, 2]`, 3 coupling rows split
    /// between 2 dual agents. Small enough for exact references and quick
    /// convergence.
    pub fn desk() -> Self {
        Self {
            m: 30,
            y: 3,
            primal_agents: 28,
            dual_agents: 2,
            reals_per_block: 0,
            integers_per_block: 2,
            a_range: [0.0, 1.0],
            b_range: [20.0, 120.0],
            c_range: [-50.0, 0.0],
            box_half_width: 2.0,
            alpha: 10.0,
            delta: 0.3,
            gamma: 0.05,
            beta: None,
            delay_bound: 5,
            p_update: 0.5,
            p_deliver: 0.5,
            delay_law: DelayLaw::Geometric,
            dual_epochs: DualEpochs::EveryB,
            seed: 1,
            runs: 100,
            max_epochs: 5000,
            stop_tol: 1e-4,
            max_redraws: 1000,
            out_dir: None,
        }
    }

    /// 285 primal agents with `R^3 x Z^5` blocks in `[-80, 80]`, 30 coupling
    /// rows split between 15 dual agents.
    pub fn large() -> Self {
        Self {
            m: 300,
            y: 30,
            primal_agents: 285,
            dual_agents: 15,
            reals_per_block: 3,
            integers_per_block: 5,
            a_range: [0.0, 1.0],
            b_range: [20.0, 120.0],
            c_range: [0.0, 5.0],
            box_half_width: 80.0,
            alpha: 1e-4,
            delta: 1e-3,
            gamma: 0.1,
            beta: None,
            delay_bound: 5,
            p_update: 0.5,
            p_deliver: 0.5,
            delay_law: DelayLaw::Geometric,
            dual_epochs: DualEpochs::EveryB,
            seed: 1,
            runs: 100,
            max_epochs: 100_000,
            stop_tol: 1e-4,
            max_redraws: 100,
            out_dir: None,
        }
    }

    pub fn block_dim(&self) -> usize {
        self.reals_per_block + self.integers_per_block
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        if self.primal_agents == 0 || self.dual_agents == 0 || self.y == 0 {
            return bad("agent and constraint counts must be positive".into());
        }
        if self.m != self.primal_agents + self.dual_agents {
            return bad(format!(
                "m = {} but primal_agents + dual_agents = {}",
                self.m,
                self.primal_agents + self.dual_agents
            ));
        }
        if self.dual_agents > self.y {
            return bad(format!(
                "{} dual agents for {} rows",
                self.dual_agents, self.y
            ));
        }
        if self.block_dim() == 0 {
            return bad("blocks need at least one coordinate".into());
        }
        for (name, [lo, hi]) in [
            ("a_range", self.a_range),
            ("b_range", self.b_range),
            ("c_range", self.c_range),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return bad(format!("{name} [{lo}, {hi}] is empty or not finite"));
            }
        }
        let pos = |v: f64| v.is_finite() && v > 0.0;
        for (name, v) in [
            ("box_half_width", self.box_half_width),
            ("alpha", self.alpha),
            ("delta", self.delta),
            ("gamma", self.gamma),
            ("stop_tol", self.stop_tol),
        ] {
            if !pos(v) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if let Some(b) = self.beta {
            if !pos(b) {
                return bad(format!("beta must be positive, got {b}"));
            }
        }
        if self.max_redraws == 0 || self.max_epochs == 0 {
            return bad("max_redraws and max_epochs must be positive".into());
        }
        self.schedule(0).validate()?;
        Ok(())
    }

    pub fn kappa(&self) -> Result<Kappa, HarnessError> {
        Kappa::new(self.alpha, self.delta).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn schedule(&self, seed: u64) -> AsyncSchedule {
        AsyncSchedule {
            delay_bound: self.delay_bound,
            p_update: self.p_update,
            p_deliver: self.p_deliver,
            delay_law: self.delay_law,
            dual_epochs: self.dual_epochs.clone(),
            seed,
        }
    }
}

fn draw(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Draws `A`, `b` and `c` uniformly from the configured ranges until the
/// tightened constraints are strictly satisfied at the origin.
pub fn generate_instance(
    config: &ExperimentConfig,
    seed: u64,
) -> Result<MilpInstance, HarnessError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = config.box_half_width;
    let dim = config.block_dim();
    let mut integral = vec![false; config.reals_per_block];
    integral.extend(std::iter::repeat_n(true, config.integers_per_block));
    let block = BlockSet::new(vec![-s; dim], vec![s; dim], integral)?;
    let blocks = vec![block; config.primal_agents];
    let n = dim * config.primal_agents;
    for _ in 0..config.max_redraws {
        let mut a = Matrix::zeros(config.y, n);
        for r in 0..config.y {
            for c in 0..n {
                a.set(r, c, draw(&mut rng, config.a_range));
            }
        }
        let b: Vec<f64> = (0..config.y)
            .map(|_| draw(&mut rng, config.b_range))
            .collect();
        let c: Vec<f64> = (0..n).map(|_| draw(&mut rng, config.c_range)).collect();
        let inst = MilpInstance::new(blocks.clone(), c, a, b)?;
        let rho = compute_rho(&inst);
        if inst.rhs().iter().zip(&rho).all(|(b, r)| b - r > 0.0) {
            return Ok(inst);
        }
    }
    Err(HarnessError::GenerationFailed {
        attempts: config.max_redraws,
    })
}

/// A relaxed instance with its partition and validated step sizes.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub relaxed: RelaxedInstance,
    pub partition: BlockPartition,
    pub steps: StepSizes,
    pub constants: RateConstants,
}

/// Builds the relaxed instance around `slater_point` and picks the steps.
pub fn prepare(
    config: &ExperimentConfig,
    instance: MilpInstance,
    slater_point: Vec<f64>,
) -> Result<Prepared, HarnessError> {
    let relaxed = RelaxedInstance::new(instance, config.kappa()?, slater_point)?;
    // instances read from disk may have fewer rows than the profile has dual agents
    let dual_agents = config.dual_agents.min(relaxed.base().num_constraints());
    let partition = BlockPartition::new(relaxed.base(), dual_agents)?;
    let a_norm = spectral_norm(relaxed.base().coupling())?;
    let beta = config
        .beta
        .unwrap_or_else(|| BetaCeilings::new(a_norm, relaxed.kappa()).default_beta());
    let steps = StepSizes {
        gamma: config.gamma,
        beta,
    };
    let constants = validate_with_norm(&relaxed, steps, a_norm)?;
    Ok(Prepared {
        relaxed,
        partition,
        steps,
        constants,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub trace: RunTrace,
    pub theta: ThetaEstimate,
    /// Primal step actually used (halved if the configured one did not contract).
    pub gamma: f64,
    pub beta: f64,
    pub saddle_cost: f64,
    pub recovered: RecoveredSolution,
    pub certificate: f64,
}

/// Exact saddle point, theta estimate, one asynchronous run, rounding.
pub fn solve_prepared(
    config: &ExperimentConfig,
    prepared: &Prepared,
    schedule_seed: u64,
    record_vectors: bool,
    backend: Backend,
) -> Result<SolveReport, HarnessError> {
    let rel = &prepared.relaxed;
    let saddle = exact_saddle(rel, 1e-10)?;
    let probes = default_theta_probes(rel, &saddle.lambda, schedule_seed);
    let (gamma, theta) = match estimate_theta(rel, prepared.steps.gamma, &probes) {
        Ok(t) => (prepared.steps.gamma, t),
        Err(AnalysisError::GammaUnstable { .. }) => {
            stabilize_gamma(rel, prepared.steps.gamma, &probes, 30)?
        }
        Err(e) => return Err(e.into()),
    };
    let steps = StepSizes {
        gamma,
        beta: prepared.steps.beta,
    };
    let mut constants = prepared.constants;
    constants.gamma = gamma;
    let constants = constants.with_theta(theta.theta)?;
    let options = RunOptions {
        max_epochs: config.max_epochs,
        stop_tol: config.stop_tol,
        reference: Some(Reference {
            z: saddle.z.clone(),
            lambda: saddle.lambda.clone(),
        }),
        constants: Some(constants),
        record_vectors,
        audit: true,
        backend,
    };
    let trace = run(
        rel,
        &prepared.partition,
        &config.schedule(schedule_seed),
        steps,
        &options,
    )?;
    let recovered = round_solution(&trace.final_z, rel.base())
        .expect("trace vector has the instance dimension");
    Ok(SolveReport {
        saddle_cost: dot(rel.base().cost(), &saddle.z),
        certificate: suboptimality_certificate(rel),
        trace,
        theta,
        gamma,
        beta: steps.beta,
        recovered,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    /// Exact MILP optimum by enumeration.
    Milp,
    /// Cost of the relaxed saddle point.
    Relaxed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub run: usize,
    pub seed: u64,
    pub ok: bool,
    pub converged: bool,
    pub epochs: u64,
    pub ticks: u64,
    pub final_distance: f64,
    pub feasible: bool,
    pub rounded_cost: f64,
    pub reference_cost: f64,
    pub reference: Option<ReferenceKind>,
    pub relative_subopt: Option<f64>,
    pub certificate: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloSummary {
    pub runs: usize,
    pub failed: usize,
    pub converged: usize,
    pub feasible: usize,
    pub feasibility_rate: f64,
    pub median_epochs: Option<f64>,
    pub median_relative_subopt: Option<f64>,
    pub max_relative_subopt: Option<f64>,
    #[serde(skip)]
    pub rows: Vec<RunRow>,
    #[serde(skip)]
    pub histogram: Vec<HistogramBin>,
}

pub const HISTOGRAM_BINS: usize = 20;

/// Seed of run `r` under master seed `master`.
pub fn run_seed(master: u64, r: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(r as u64);
    rng.next_u64()
}

fn one_run(config: &ExperimentConfig, r: usize) -> RunRow {
    let seed = run_seed(config.seed, r);
    let mut row = RunRow {
        run: r,
        seed,
        ok: false,
        converged: false,
        epochs: 0,
        ticks: 0,
        final_distance: f64::NAN,
        feasible: false,
        rounded_cost: f64::NAN,
        reference_cost: f64::NAN,
        reference: None,
        relative_subopt: None,
        certificate: f64::NAN,
        error: None,
    };
    let result = (|| -> Result<(), HarnessError> {
        let inst = generate_instance(config, seed)?;
        let zero = vec![0.0; inst.dim()];
        let prepared = prepare(config, inst, zero)?;
        let rep = solve_prepared(config, &prepared, seed, false, Backend::Sequential)?;
        let last = rep.trace.epochs.last().expect("epoch 0 is always recorded");
        row.converged = rep.trace.converged;
        row.epochs = rep.trace.epochs_run();
        row.ticks = rep.trace.ticks;
        row.final_distance = last.primal_distance.max(last.dual_distance);
        row.feasible = rep.recovered.feasible();
        row.rounded_cost = rep.recovered.cost;
        row.certificate = rep.certificate;
        let (kind, reference) = match exact_milp(prepared.relaxed.base()) {
            Ok(opt) => (ReferenceKind::Milp, opt.cost),
            Err(_) => (ReferenceKind::Relaxed, rep.saddle_cost),
        };
        row.reference = Some(kind);
        row.reference_cost = reference;
        row.relative_subopt = relative_gap(rep.recovered.cost, reference).ok();
        row.ok = true;
        Ok(())
    })();
    if let Err(e) = result {
        row.error = Some(e.to_string());
    }
    row
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// `HISTOGRAM_BINS` equal bins on `[0, max]`; the last bin is closed.
pub fn histogram(values: &[f64]) -> Vec<HistogramBin> {
    let top = values.iter().copied().fold(0.0_f64, f64::max);
    let top = if top > 0.0 { top } else { 1.0 };
    let width = top / HISTOGRAM_BINS as f64;
    let mut bins: Vec<HistogramBin> = (0..HISTOGRAM_BINS)
        .map(|i| HistogramBin {
            lower: i as f64 * width,
            upper: if i + 1 == HISTOGRAM_BINS {
                top
            } else {
                (i + 1) as f64 * width
            },
            count: 0,
        })
        .collect();
    for &v in values {
        let idx = ((v / width) as usize).min(HISTOGRAM_BINS - 1);
        bins[idx].count += 1;
    }
    bins
}

/// Runs `config.runs` independent generate-solve-round cycles in parallel.
/// Failures are recorded per row.
pub fn monte_carlo(config: &ExperimentConfig) -> Result<MonteCarloSummary, HarnessError> {
    config.validate()?;
    let rows: Vec<RunRow> = (0..config.runs)
        .into_par_iter()
        .map(|r| one_run(config, r))
        .collect();
    let subopts: Vec<f64> = rows.iter().filter_map(|r| r.relative_subopt).collect();
    let feasible = rows.iter().filter(|r| r.ok && r.feasible).count();
    let ok: Vec<&RunRow> = rows.iter().filter(|r| r.ok).collect();
    Ok(MonteCarloSummary {
        runs: rows.len(),
        failed: rows.len() - ok.len(),
        converged: ok.iter().filter(|r| r.converged).count(),
        feasible,
        feasibility_rate: if rows.is_empty() {
            0.0
        } else {
            feasible as f64 / rows.len() as f64
        },
        median_epochs: median(ok.iter().map(|r| r.epochs as f64).collect()),
        median_relative_subopt: median(subopts.clone()),
        max_relative_subopt: subopts.iter().copied().reduce(f64::max),
        histogram: histogram(&subopts),
        rows,
    })
}

fn opt_str<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MonteCarloSummary {
    pub fn runs_csv(&self) -> String {
        let mut s = String::from(
            "run,seed,ok,converged,epochs,ticks,final_distance,feasible,rounded_cost,reference_cost,reference,relative_subopt,certificate,error\n",
        );
        for r in &self.rows {
            let kind = r.reference.map(|k| match k {
                ReferenceKind::Milp => "milp",
                ReferenceKind::Relaxed => "relaxed",
            });
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.run,
                r.seed,
                r.ok,
                r.converged,
                r.epochs,
                r.ticks,
                r.final_distance,
                r.feasible,
                r.rounded_cost,
                r.reference_cost,
                opt_str(kind),
                opt_str(r.relative_subopt),
                r.certificate,
                r.error.as_deref().unwrap_or("").replace([',', '\n'], ";")
            );
        }
        s
    }

    pub fn histogram_csv(&self) -> String {
        let mut s = String::from("bin,lower,upper,count\n");
        for (i, b) in self.histogram.iter().enumerate() {
            let _ = writeln!(s, "{},{},{},{}", i, b.lower, b.upper, b.count);
        }
        s
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("summary serializes")
    }

    /// Writes `runs.csv`, `histogram.csv` and `summary.json` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<(), HarnessError> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("runs.csv"), self.runs_csv())?;
        std::fs::write(dir.join("histogram.csv"), self.histogram_csv())?;
        std::fs::write(dir.join("summary.json"), self.summary_json())?;
        Ok(())
    }
}
