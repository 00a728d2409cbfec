//! Command-line front end.
//!
//! Exit codes: 0 success, 1 invalid input (bad flags, malformed or
//! inconsistent JSON, failed checks), 2 runtime failure.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde_json::json;

use saddle_milp::analysis::{regularization_gap, suboptimality_certificate, BetaCeilings};
use saddle_milp::harness::{generate_instance, monte_carlo, prepare, solve_prepared, HarnessError};
use saddle_milp::model::{compute_radius, compute_rho, validate_slater};
use saddle_milp::simnet::{audit_staleness, Backend};
use saddle_milp::{ExperimentConfig, InstanceFile, RunTrace};

#[derive(Parser, Debug)]
#[command(
    name = "saddle-milp",
    version,
    about = "Asynchronous primal-dual solver for constraint-coupled MILPs"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Profile {
    Desk,
    Large,
}

#[derive(clap::Args, Debug, Default)]
struct Common {
    /// Experiment configuration JSON (defaults to the selected profile)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in profile used when no --config is given
    #[arg(long, value_enum, default_value = "desk")]
    profile: Option<Profile>,
    /// Master seed; overrides the configuration
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (or file, for `generate`)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args, Debug, Default)]
struct Overrides {
    /// Per-tick probability that a pending message arrives
    #[arg(long)]
    p_deliver: Option<f64>,
    /// Per-tick probability that a primal agent updates
    #[arg(long)]
    p_update: Option<f64>,
    /// Bound B on message delay and update gaps; duals update every B ticks
    #[arg(long)]
    delay_bound: Option<u64>,
    /// Maximum number of dual epochs
    #[arg(long)]
    epochs: Option<u64>,
    /// Stopping distance to the reference saddle point
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Draw a random instance
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Solve an instance and round the result
    Solve {
        instance: PathBuf,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        overrides: Overrides,
        /// Include iterates in trace.json
        #[arg(long)]
        full_trace: bool,
        /// Run primal steps of a tick on the thread pool
        #[arg(long)]
        parallel: bool,
    },
    /// Many random instances; writes runs.csv, histogram.csv and summary.json
    Montecarlo {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        overrides: Overrides,
        /// Number of instances; overrides the configuration
        #[arg(long)]
        runs: Option<usize>,
    },
    /// Check an instance and report its derived constants
    Validate {
        instance: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Compare the errors in a trace.json with its envelopes
    Envelope { trace: PathBuf },
}

enum Failure {
    Invalid(String),
    Runtime(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::Config(_) | HarnessError::Model(_) | HarnessError::Analysis(_) => {
                Failure::Invalid(e.to_string())
            }
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        if field == "." || field == "?" {
            return Failure::Invalid(format!("{}: {}", path.display(), e.inner()));
        }
        Failure::Invalid(format!(
            "{}: field `{field}`: {}",
            path.display(),
            e.inner()
        ))
    })
}

fn load_config(
    common: &Common,
    overrides: Option<&Overrides>,
) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match (&common.config, common.profile) {
        (Some(p), _) => read_json(p)?,
        (None, Some(Profile::Large)) => ExperimentConfig::large(),
        (None, _) => ExperimentConfig::desk(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(o) = overrides {
        if let Some(v) = o.p_deliver {
            cfg.p_deliver = v;
        }
        if let Some(v) = o.p_update {
            cfg.p_update = v;
        }
        if let Some(v) = o.delay_bound {
            cfg.delay_bound = v;
        }
        if let Some(v) = o.epochs {
            cfg.max_epochs = v;
        }
        if let Some(v) = o.tol {
            cfg.stop_tol = v;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        }
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

/// Writes to stdout; a closed pipe is not an error.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{text}");
}

fn pretty(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).expect("serializable")
}

fn load_instance(path: &Path) -> Result<(InstanceFile, Vec<f64>), Failure> {
    let file: InstanceFile = read_json(path)?;
    let Some(z) = file.slater_point.clone() else {
        return Err(Failure::Invalid(format!(
            "{}: field `slater_point` is required to build the relaxed problem",
            path.display()
        )));
    };
    Ok((file, z))
}

fn generate(common: Common) -> Result<(), Failure> {
    let cfg = load_config(&common, None)?;
    let inst = generate_instance(&cfg, cfg.seed)?;
    let file = InstanceFile {
        slater_point: Some(vec![0.0; inst.dim()]),
        instance: inst,
    };
    let text = pretty(&file);
    match common.out {
        Some(p) if p.is_dir() => write(&p.join("instance.json"), &text),
        Some(p) => write(&p, &text),
        None => {
            emit(&text);
            Ok(())
        }
    }
}

fn solve(
    instance: PathBuf,
    common: Common,
    overrides: Overrides,
    full_trace: bool,
    parallel: bool,
) -> Result<(), Failure> {
    let cfg = load_config(&common, Some(&overrides))?;
    let (file, zbar) = load_instance(&instance)?;
    let prepared = prepare(&cfg, file.instance, zbar)?;
    let backend = if parallel {
        Backend::Parallel
    } else {
        Backend::Sequential
    };
    let rep = solve_prepared(&cfg, &prepared, cfg.seed, full_trace, backend)?;
    let summary = json!({
        "converged": rep.trace.converged,
        "epochs": rep.trace.epochs_run(),
        "ticks": rep.trace.ticks,
        "final_primal_distance": rep.trace.epochs.last().map(|e| e.primal_distance),
        "final_dual_distance": rep.trace.epochs.last().map(|e| e.dual_distance),
        "gamma": rep.gamma,
        "beta": rep.beta,
        "theta": rep.theta,
        "saddle_cost": rep.saddle_cost,
        "certificate": rep.certificate,
        "envelopes": rep.trace.envelope_report(),
        "audit": audit_staleness(&rep.trace),
        "solution": rep.recovered,
        "relaxed_z": rep.trace.final_z,
        "relaxed_lambda": rep.trace.final_lambda,
    });
    if let Some(dir) = common.out {
        write(&dir.join("trace.csv"), &rep.trace.to_csv())?;
        write(&dir.join("trace.json"), &rep.trace.to_json())?;
        write(&dir.join("solution.json"), &pretty(&summary))?;
    }
    emit(&pretty(&summary));
    Ok(())
}

fn montecarlo(common: Common, overrides: Overrides, runs: Option<usize>) -> Result<(), Failure> {
    let mut cfg = load_config(&common, Some(&overrides))?;
    if let Some(r) = runs {
        cfg.runs = r;
    }
    let summary = monte_carlo(&cfg)?;
    let dir = common
        .out
        .or_else(|| cfg.out_dir.clone().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    summary.write(&dir).map_err(Failure::from)?;
    emit(&summary.summary_json());
    Ok(())
}

fn validate(instance: PathBuf, common: Common) -> Result<(), Failure> {
    let cfg = load_config(&common, None)?;
    let (file, zbar) = load_instance(&instance)?;
    let inst = &file.instance;
    let rho = compute_rho(inst);
    let radius = compute_radius(inst);
    let margin = validate_slater(inst, &rho, &zbar).map_err(|e| Failure::Invalid(e.to_string()))?;
    let mut report = json!({
        "blocks": inst.num_blocks(),
        "dim": inst.dim(),
        "constraints": inst.num_constraints(),
        "rho": rho,
        "radius": radius,
        "slater_margin": margin,
    });
    let outcome = prepare(&cfg, file.instance.clone(), zbar);
    match &outcome {
        Ok(p) => {
            let c = &p.constants;
            report["dual_bound"] = json!(p.relaxed.dual_bound());
            report["a_norm"] = json!(c.a_norm);
            report["beta_ceilings"] = json!(c.ceilings);
            report["beta_admissible"] = json!(c.ceilings.admissible());
            report["beta"] = json!(c.beta);
            report["gamma"] = json!(c.gamma);
            report["q_d"] = json!(c.q_d);
            report["regularization_gap"] = json!(regularization_gap(&p.relaxed));
            report["certificate"] = json!(suboptimality_certificate(&p.relaxed));
            report["valid"] = json!(true);
        }
        Err(e) => {
            if let Ok(a) = saddle_milp::analysis::spectral_norm(inst.coupling()) {
                if let Ok(k) = cfg.kappa() {
                    report["a_norm"] = json!(a);
                    report["beta_ceilings"] = json!(BetaCeilings::new(a, k));
                }
            }
            report["valid"] = json!(false);
            report["error"] = json!(e.to_string());
        }
    }
    emit(&pretty(&report));
    match outcome {
        Ok(_) => Ok(()),
        Err(e) => Err(Failure::Invalid(e.to_string())),
    }
}

fn envelope(trace: PathBuf) -> Result<(), Failure> {
    let t: RunTrace = read_json(&trace)?;
    let rep = t.envelope_report();
    let audit = audit_staleness(&t);
    let audit_ok = audit.as_ref().is_none_or(|a| a.holds());
    emit(&pretty(&json!({
            "epochs": t.epochs.len(),
            "checked": rep.checked,
            "dual_violations": rep.dual_violations,
            "primal_violations": rep.primal_violations,
            "audit": audit,
            "audit_holds": audit_ok,
    })));
    if rep.violations() > 0 || !audit_ok {
        return Err(Failure::Invalid(format!(
            "{} envelope violations",
            rep.violations()
        )));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Generate { common } => generate(common),
        Command::Solve {
            instance,
            common,
            overrides,
            full_trace,
            parallel,
        } => solve(instance, common, overrides, full_trace, parallel),
        Command::Montecarlo {
            common,
            overrides,
            runs,
        } => montecarlo(common, overrides, runs),
        Command::Validate { instance, common } => validate(instance, common),
        Command::Envelope { trace } => envelope(trace),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
