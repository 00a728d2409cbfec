//! Seeded discrete-event simulation of the asynchronous primal-dual method.
//!
//! Tick `k` proceeds as follows:
//!
//! 1. if `k = t B` for a scheduled dual epoch `t`, every dual agent reads the
//!    true primal iterate, steps, and the new dual vector reaches every agent
//!    before anything else happens (the barrier);
//! 2. every primal agent whose update set contains `k` steps on its block;
//! 3. each fresh block value is sent to the primal agents sharing a coupling
//!    row with it, with a random delay of at most `B - 1` ticks;
//! 4. messages due at tick `k` are delivered, in (sender, send order).
//!
//! A block value produced at tick `k` is iterate `k + 1`, and a message
//! delivered at the end of tick `k` is first used at tick `k + 1`.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{DualAgent, PrimalAgent, StepSizes};
use crate::analysis::{
    dual_envelope, primal_envelope, validate_step_sizes, AnalysisError, RateConstants,
};
use crate::lagrangian::{
    dual_block_grad_raw, primal_block_grad_raw, project_box, project_dual_ball, DualBall,
};
use crate::linalg::{all_finite, bit_hash, dist};
use crate::model::{BlockPartition, RelaxedInstance};
use crate::oracle::{exact_saddle, OracleError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Steps(#[from] AnalysisError),
    #[error("invalid schedule: {0}")]
    Schedule(String),
    #[error("iterate became non-finite at tick {tick}")]
    NonFinite { tick: u64 },
    #[error("reference saddle point: {0}")]
    Reference(#[from] OracleError),
    #[error("partition does not match the instance: {0}")]
    Partition(String),
}

/// Law of the delay between sending and delivering a block update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DelayLaw {
    /// One Bernoulli(`p_deliver`) trial per tick, forced on the `B - 1`th.
    #[default]
    Geometric,
    /// Uniform on `0..B`; ignores `p_deliver`.
    Uniform,
}

/// Ticks `t B` at which the dual agents update.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DualEpochs {
    /// `t = 1, 2, 3, ...`
    #[default]
    EveryB,
    /// Strictly increasing positive `t` values.
    Explicit(Vec<u64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsyncSchedule {
    pub delay_bound: u64,
    pub p_update: f64,
    pub p_deliver: f64,
    #[serde(default)]
    pub delay_law: DelayLaw,
    #[serde(default)]
    pub dual_epochs: DualEpochs,
    pub seed: u64,
}

impl AsyncSchedule {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.delay_bound == 0 {
            return Err(SimError::Schedule("delay bound must be at least 1".into()));
        }
        for (name, p) in [("p_update", self.p_update), ("p_deliver", self.p_deliver)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SimError::Schedule(format!(
                    "{name} = {p} is not a probability"
                )));
            }
        }
        if let DualEpochs::Explicit(ts) = &self.dual_epochs {
            if ts.first() == Some(&0) || ts.windows(2).any(|w| w[1] <= w[0]) {
                return Err(SimError::Schedule(
                    "explicit dual epochs must be positive and strictly increasing".into(),
                ));
            }
        }
        Ok(())
    }

    fn epoch_t(&self, n: u64) -> Option<u64> {
        match &self.dual_epochs {
            DualEpochs::EveryB => Some(n),
            DualEpochs::Explicit(ts) => {
                if n == 0 {
                    Some(0)
                } else {
                    ts.get(n as usize - 1).copied()
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InFlightMessage {
    pub from_block: usize,
    pub to_agent: usize,
    pub payload: Arc<[f64]>,
    pub sent_tick: u64,
    pub deliver_tick: u64,
    seq: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    #[default]
    Sequential,
    /// Primal steps of one tick run on the rayon pool.
    Parallel,
}

/// Reference saddle point the run is measured against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub z: Vec<f64>,
    pub lambda: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub max_epochs: u64,
    pub stop_tol: f64,
    /// Computed with the exact oracle when absent.
    pub reference: Option<Reference>,
    /// Rate constants with theta; enables the envelope columns.
    pub constants: Option<RateConstants>,
    pub record_vectors: bool,
    pub audit: bool,
    pub backend: Backend,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            max_epochs: 10_000,
            stop_tol: 1e-4,
            reference: None,
            constants: None,
            record_vectors: false,
            audit: true,
            backend: Backend::Sequential,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    /// Epoch index `t_n`; the barrier fired at tick `t_n B`.
    pub t: u64,
    pub tick: u64,
    pub primal_distance: f64,
    pub dual_distance: f64,
    /// Bound on the squared dual distance.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dual_envelope: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub primal_envelope: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub z: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lambda: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub delay_bound: u64,
    pub max_message_age: u64,
    pub max_update_gap: u64,
    pub min_update_gap: u64,
    /// Largest `k - tau` over every foreign block held at every primal step.
    pub max_staleness: u64,
    pub updates: u64,
    pub messages_delivered: u64,
    /// Every dual agent read the same primal vector, and every agent held the
    /// same dual vector after every barrier.
    pub barrier_consistent: bool,
}

impl AuditReport {
    fn new(delay_bound: u64) -> Self {
        Self {
            delay_bound,
            max_message_age: 0,
            max_update_gap: 0,
            min_update_gap: u64::MAX,
            max_staleness: 0,
            updates: 0,
            messages_delivered: 0,
            barrier_consistent: true,
        }
    }

    /// Both bounded-delay conditions and barrier consistency.
    pub fn holds(&self) -> bool {
        self.max_message_age < self.delay_bound
            && self.max_update_gap <= self.delay_bound
            && self.max_staleness < self.delay_bound
            && self.barrier_consistent
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub epochs: Vec<EpochRecord>,
    pub ticks: u64,
    pub converged: bool,
    pub lambda0_distance: f64,
    pub final_z: Vec<f64>,
    pub final_lambda: Vec<f64>,
    pub reference: Reference,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub constants: Option<RateConstants>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub audit: Option<AuditReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnvelopeReport {
    pub checked: usize,
    pub dual_violations: usize,
    pub primal_violations: usize,
}

impl EnvelopeReport {
    pub fn violations(&self) -> usize {
        self.dual_violations + self.primal_violations
    }
}

impl RunTrace {
    /// Number of dual epochs run (epoch 0 is the initial state).
    pub fn epochs_run(&self) -> u64 {
        self.epochs.last().map_or(0, |e| e.epoch)
    }

    /// Compares observed errors with the recorded envelopes.
    pub fn envelope_report(&self) -> EnvelopeReport {
        let mut rep = EnvelopeReport {
            checked: 0,
            dual_violations: 0,
            primal_violations: 0,
        };
        for e in &self.epochs {
            if let Some(env) = e.dual_envelope {
                rep.checked += 1;
                if e.dual_distance * e.dual_distance > env {
                    rep.dual_violations += 1;
                }
            }
            if let Some(env) = e.primal_envelope {
                rep.checked += 1;
                if e.primal_distance > env {
                    rep.primal_violations += 1;
                }
            }
        }
        rep
    }

    /// One row per dual epoch.
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "epoch,t,tick,primal_distance,dual_distance,dual_envelope,primal_envelope\n",
        );
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                e.epoch,
                e.t,
                e.tick,
                e.primal_distance,
                e.dual_distance,
                opt(e.dual_envelope),
                opt(e.primal_envelope)
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("trace serializes")
    }
}

/// Checks the bounded-delay conditions recorded during a run.
pub fn audit_staleness(trace: &RunTrace) -> Option<AuditReport> {
    trace.audit.clone()
}

struct Channel {
    to: usize,
    rng: ChaCha8Rng,
    last_deliver: u64,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Primal agents `i != j` sharing at least one nonzero coupling row with block `j`.
fn neighbours(relaxed: &RelaxedInstance) -> Vec<Vec<usize>> {
    let base = relaxed.base();
    let a = base.coupling();
    let m = base.num_blocks();
    let touches: Vec<Vec<bool>> = (0..m)
        .map(|i| {
            (0..a.rows())
                .map(|r| a.row(r)[base.block_range(i)].iter().any(|&v| v != 0.0))
                .collect()
        })
        .collect();
    (0..m)
        .map(|j| {
            (0..m)
                .filter(|&i| i != j && (0..a.rows()).any(|r| touches[i][r] && touches[j][r]))
                .collect()
        })
        .collect()
}

fn check_partition(relaxed: &RelaxedInstance, partition: &BlockPartition) -> Result<(), SimError> {
    let base = relaxed.base();
    if partition.num_primal_agents() != base.num_blocks()
        || partition
            .primal()
            .iter()
            .enumerate()
            .any(|(i, r)| *r != base.block_range(i))
    {
        return Err(SimError::Partition(
            "primal ranges must follow the blocks".into(),
        ));
    }
    if partition.dual().last().map_or(0, |r| r.end) != base.num_constraints() {
        return Err(SimError::Partition(
            "dual ranges must cover every row".into(),
        ));
    }
    Ok(())
}

/// Runs the asynchronous method until the iterate is within `stop_tol` of the
/// reference saddle point at a dual epoch, or `max_epochs` epochs have passed.
pub fn run(
    relaxed: &RelaxedInstance,
    partition: &BlockPartition,
    schedule: &AsyncSchedule,
    steps: StepSizes,
    options: &RunOptions,
) -> Result<RunTrace, SimError> {
    schedule.validate()?;
    check_partition(relaxed, partition)?;
    validate_step_sizes(relaxed, steps)?;
    let base = relaxed.base();
    let m = base.num_blocks();
    let y = base.num_constraints();
    let b = schedule.delay_bound;

    let reference = match &options.reference {
        Some(r) => r.clone(),
        None => {
            let sp = exact_saddle(relaxed, 1e-10)?;
            Reference {
                z: sp.z,
                lambda: sp.lambda,
            }
        }
    };

    let z0 = relaxed.slater_point().to_vec();
    let lambda0 = vec![0.0; y];
    let mut primal: Vec<PrimalAgent> = (0..m)
        .map(|i| PrimalAgent::new(relaxed, i, z0.clone(), lambda0.clone(), steps.gamma))
        .collect();
    let mut dual: Vec<DualAgent> = partition
        .dual()
        .iter()
        .enumerate()
        .map(|(q, rows)| {
            DualAgent::new(
                relaxed,
                q,
                rows.clone(),
                z0.clone(),
                lambda0.clone(),
                steps.beta,
            )
        })
        .collect();

    let nbrs = neighbours(relaxed);
    let mut update_rngs: Vec<ChaCha8Rng> = (0..m)
        .map(|i| stream_rng(schedule.seed, i as u64))
        .collect();
    let mut channels: Vec<Vec<Channel>> = nbrs
        .iter()
        .enumerate()
        .map(|(j, list)| {
            list.iter()
                .map(|&i| Channel {
                    to: i,
                    rng: stream_rng(schedule.seed, (1 << 40) | ((j as u64) << 20) | i as u64),
                    last_deliver: 0,
                })
                .collect()
        })
        .collect();
    let mut ring: Vec<Vec<InFlightMessage>> = (0..b).map(|_| Vec::new()).collect();
    let mut seq = 0u64;
    let mut last_update: Vec<i64> = vec![-1; m];
    let mut history: Vec<Vec<u64>> = vec![Vec::new(); m];
    let mut audit = AuditReport::new(b);

    let lambda0_distance = dist(&lambda0, &reference.lambda);
    let envelope_constants = options.constants.filter(|c| c.q_p.is_some());
    let record = |n: u64, t: u64, k: u64, z: &[f64], lambda: &[f64], prev_t: u64| {
        let (dual_envelope, primal_envelope) = match &envelope_constants {
            Some(c) => (
                dual_envelope(c, lambda0_distance, n).ok(),
                if n >= 1 {
                    primal_envelope(c, lambda0_distance, n, t - prev_t).ok()
                } else {
                    None
                },
            ),
            None => (None, None),
        };
        EpochRecord {
            epoch: n,
            t,
            tick: k,
            primal_distance: dist(z, &reference.z),
            dual_distance: dist(lambda, &reference.lambda),
            dual_envelope,
            primal_envelope,
            z: options.record_vectors.then(|| z.to_vec()),
            lambda: options.record_vectors.then(|| lambda.to_vec()),
        }
    };

    let true_z = |agents: &[PrimalAgent]| -> Vec<f64> {
        let mut z = Vec::with_capacity(base.dim());
        for a in agents {
            z.extend_from_slice(a.own_block());
        }
        z
    };

    let mut epochs = vec![record(0, 0, 0, &z0, &lambda0, 0)];
    let close = |e: &EpochRecord| e.primal_distance.max(e.dual_distance) < options.stop_tol;
    let mut converged = close(&epochs[0]);
    let mut lambda = lambda0.clone();
    let mut n = 0u64;
    let mut prev_t = 0u64;
    let mut next_barrier = if options.max_epochs == 0 {
        None
    } else {
        schedule.epoch_t(1).map(|t| t * b)
    };
    let mut k = 0u64;
    let mut updating = vec![false; m];

    while !converged {
        let Some(barrier_tick) = next_barrier else {
            break;
        };
        if k == barrier_tick {
            let z = true_z(&primal);
            let zh = bit_hash(&z);
            for d in dual.iter_mut() {
                d.refresh_primal(&z);
                if bit_hash(d.local_z()) != zh {
                    audit.barrier_consistent = false;
                }
                d.dual_step(relaxed);
            }
            for d in &dual {
                lambda[d.rows()].copy_from_slice(d.own_block());
            }
            if !all_finite(&lambda) {
                return Err(SimError::NonFinite { tick: k });
            }
            let lh = bit_hash(&lambda);
            for a in primal.iter_mut() {
                a.receive_dual(&lambda);
                if bit_hash(a.local_lambda()) != lh {
                    audit.barrier_consistent = false;
                }
            }
            for d in dual.iter_mut() {
                d.receive_dual(&lambda);
            }
            n += 1;
            let t = k / b;
            epochs.push(record(n, t, k, &z, &lambda, prev_t));
            prev_t = t;
            converged = close(epochs.last().expect("just pushed"));
            next_barrier = if n >= options.max_epochs {
                None
            } else {
                schedule.epoch_t(n + 1).map(|t| t * b)
            };
            if converged || next_barrier.is_none() {
                break;
            }
        }

        for i in 0..m {
            let draw: f64 = update_rngs[i].random();
            let forced = k as i64 - last_update[i] >= b as i64;
            updating[i] = draw < schedule.p_update || forced;
        }

        if options.audit {
            for (i, a) in primal.iter().enumerate() {
                if !updating[i] {
                    continue;
                }
                for &j in &nbrs[i] {
                    let s = a.stamp(j);
                    let h = &history[j];
                    let idx = h.partition_point(|&u| u < s);
                    let tau = h.get(idx).map_or(k, |&u| u.min(k));
                    audit.max_staleness = audit.max_staleness.max(k - tau);
                }
            }
        }

        match options.backend {
            Backend::Sequential => {
                for (a, &u) in primal.iter_mut().zip(&updating) {
                    if u {
                        a.primal_step(relaxed, k);
                    }
                }
            }
            Backend::Parallel => {
                primal
                    .par_iter_mut()
                    .zip(updating.par_iter())
                    .for_each(|(a, &u)| {
                        if u {
                            a.primal_step(relaxed, k);
                        }
                    });
            }
        }

        for j in 0..m {
            if !updating[j] {
                continue;
            }
            if !all_finite(primal[j].own_block()) {
                return Err(SimError::NonFinite { tick: k });
            }
            let gap = (k as i64 - last_update[j]) as u64;
            audit.max_update_gap = audit.max_update_gap.max(gap);
            audit.min_update_gap = audit.min_update_gap.min(gap);
            audit.updates += 1;
            last_update[j] = k as i64;
            if options.audit {
                history[j].push(k);
            }
            let payload: Arc<[f64]> = Arc::from(primal[j].own_block());
            for ch in channels[j].iter_mut() {
                let d = match schedule.delay_law {
                    DelayLaw::Geometric => {
                        let mut d = 0;
                        while d + 1 < b && ch.rng.random::<f64>() >= schedule.p_deliver {
                            d += 1;
                        }
                        d
                    }
                    DelayLaw::Uniform => ch.rng.random_range(0..b),
                };
                let deliver = (k + d).max(ch.last_deliver);
                ch.last_deliver = deliver;
                ring[(deliver % b) as usize].push(InFlightMessage {
                    from_block: j,
                    to_agent: ch.to,
                    payload: Arc::clone(&payload),
                    sent_tick: k,
                    deliver_tick: deliver,
                    seq,
                });
                seq += 1;
            }
        }

        let mut due = std::mem::take(&mut ring[(k % b) as usize]);
        due.sort_unstable_by_key(|msg| (msg.from_block, msg.seq));
        for msg in &due {
            debug_assert_eq!(msg.deliver_tick, k);
            audit.max_message_age = audit.max_message_age.max(msg.deliver_tick - msg.sent_tick);
            audit.messages_delivered += 1;
            primal[msg.to_agent]
                .receive_primal_block(relaxed, msg.from_block, &msg.payload, msg.sent_tick + 1)
                .expect("simulator routes only foreign blocks of matching width");
        }
        due.clear();
        ring[(k % b) as usize] = due;

        k += 1;
    }

    let final_z = true_z(&primal);
    if audit.updates == 0 {
        audit.min_update_gap = 0;
    }
    Ok(RunTrace {
        epochs,
        ticks: k,
        converged,
        lambda0_distance,
        final_z,
        final_lambda: lambda,
        reference,
        constants: envelope_constants,
        audit: options.audit.then_some(audit),
    })
}

/// Centralized synchronous projected gradient descent-ascent: every tick the
/// whole primal vector steps, and from tick 1 on the whole dual vector steps
/// first, using the same block arithmetic as the agents. Returns `(z, lambda)`
/// after each of `epochs` dual steps.
pub fn synchronous_reference(
    relaxed: &RelaxedInstance,
    partition: &BlockPartition,
    steps: StepSizes,
    epochs: u64,
) -> Vec<(Vec<f64>, Vec<f64>)> {
    let base = relaxed.base();
    let mut z = relaxed.slater_point().to_vec();
    let mut lambda = vec![0.0; base.num_constraints()];
    let mut out = Vec::with_capacity(epochs as usize);
    for k in 0..=epochs {
        if k >= 1 {
            let mut next = lambda.clone();
            for rows in partition.dual() {
                let g = dual_block_grad_raw(relaxed, rows.clone(), &z, &lambda);
                let moved: Vec<f64> = lambda[rows.clone()]
                    .iter()
                    .zip(&g)
                    .map(|(l, gl)| l + steps.beta * gl)
                    .collect();
                let ball = DualBall {
                    radius: relaxed.dual_bound(),
                    dim: rows.len(),
                };
                next[rows.clone()].copy_from_slice(&project_dual_ball(&moved, ball));
            }
            lambda = next;
            out.push((z.clone(), lambda.clone()));
            if k == epochs {
                break;
            }
        }
        let g = primal_block_grad_raw(relaxed, 0..base.dim(), &z, &lambda);
        let moved: Vec<f64> = z
            .iter()
            .zip(&g)
            .map(|(zj, gj)| zj - steps.gamma * gj)
            .collect();
        let mut next = Vec::with_capacity(z.len());
        for (i, blk) in base.blocks().iter().enumerate() {
            next.extend(project_box(&moved[base.block_range(i)], blk));
        }
        z = next;
    }
    out
}
