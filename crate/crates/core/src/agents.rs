//! Primal and dual agent state machines.
//!
//! Each agent holds full-length local copies of `z` and `lambda` and only ever
//! writes its own block. Primal agents run projected gradient descent on their
//! block whenever the scheduler lets them; dual agents run projected gradient
//! ascent on their rows at barrier ticks.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lagrangian::{
    dual_block_grad_raw, primal_block_grad_raw, project_box, project_dual_ball, DualBall,
};
use crate::model::RelaxedInstance;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("agent {agent} cannot receive its own block")]
    OwnBlock { agent: usize },
    #[error("block {block} has width {expected}, got a payload of {got}")]
    Dimension {
        block: usize,
        expected: usize,
        got: usize,
    },
    #[error("block {block} does not exist")]
    NoSuchBlock { block: usize },
    #[error("step sizes must be positive and finite (gamma = {gamma}, beta = {beta})")]
    BadSteps { gamma: f64, beta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSizes {
    pub gamma: f64,
    pub beta: f64,
}

impl StepSizes {
    pub fn new(gamma: f64, beta: f64) -> Result<Self, AgentError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(gamma) && ok(beta) {
            Ok(Self { gamma, beta })
        } else {
            Err(AgentError::BadSteps { gamma, beta })
        }
    }
}

/// Primal agent `i`: owns primal block `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrimalAgent {
    id: usize,
    block: Range<usize>,
    z: Vec<f64>,
    lambda: Vec<f64>,
    gamma: f64,
    last_update: Option<u64>,
    /// Iterate index of the held copy of every primal block.
    stamps: Vec<u64>,
}

impl PrimalAgent {
    pub fn new(
        relaxed: &RelaxedInstance,
        id: usize,
        z0: Vec<f64>,
        lambda0: Vec<f64>,
        gamma: f64,
    ) -> Self {
        let base = relaxed.base();
        assert!(id < base.num_blocks(), "no block {id}");
        assert_eq!(z0.len(), base.dim());
        assert_eq!(lambda0.len(), base.num_constraints());
        Self {
            id,
            block: base.block_range(id),
            z: z0,
            lambda: lambda0,
            gamma,
            last_update: None,
            stamps: vec![0; base.num_blocks()],
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn block(&self) -> Range<usize> {
        self.block.clone()
    }

    pub fn local_z(&self) -> &[f64] {
        &self.z
    }

    pub fn local_lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn own_block(&self) -> &[f64] {
        &self.z[self.block.clone()]
    }

    pub fn last_update(&self) -> Option<u64> {
        self.last_update
    }

    /// Iterate index of the copy of block `j` this agent currently holds.
    pub fn stamp(&self, j: usize) -> u64 {
        self.stamps[j]
    }

    /// One projected gradient step on the agent's own block at tick `k`.
    /// The result is iterate `k + 1` of that block.
    pub fn primal_step(&mut self, relaxed: &RelaxedInstance, k: u64) {
        let g = primal_block_grad_raw(relaxed, self.block.clone(), &self.z, &self.lambda);
        let moved: Vec<f64> = self.z[self.block.clone()]
            .iter()
            .zip(&g)
            .map(|(zj, gj)| zj - self.gamma * gj)
            .collect();
        let blk = relaxed.base().block(self.id);
        let next = project_box(&moved, blk);
        debug_assert!(blk.hull_contains(&next));
        self.z[self.block.clone()].copy_from_slice(&next);
        self.last_update = Some(k);
        self.stamps[self.id] = k + 1;
    }

    /// Overwrites the local copy of block `j` with a delivered value carrying
    /// iterate index `stamp`.
    pub fn receive_primal_block(
        &mut self,
        relaxed: &RelaxedInstance,
        j: usize,
        value: &[f64],
        stamp: u64,
    ) -> Result<(), AgentError> {
        if j == self.id {
            return Err(AgentError::OwnBlock { agent: self.id });
        }
        let base = relaxed.base();
        if j >= base.num_blocks() {
            return Err(AgentError::NoSuchBlock { block: j });
        }
        let range = base.block_range(j);
        if range.len() != value.len() {
            return Err(AgentError::Dimension {
                block: j,
                expected: range.len(),
                got: value.len(),
            });
        }
        self.z[range].copy_from_slice(value);
        self.stamps[j] = stamp;
        Ok(())
    }

    /// Installs the dual vector broadcast at a barrier.
    pub fn receive_dual(&mut self, lambda: &[f64]) {
        self.lambda.copy_from_slice(lambda);
    }
}

/// Dual agent `q`: owns a contiguous range of coupling rows.
#[derive(Debug, Clone, PartialEq)]
pub struct DualAgent {
    id: usize,
    rows: Range<usize>,
    z: Vec<f64>,
    lambda: Vec<f64>,
    beta: f64,
    ball: DualBall,
}

impl DualAgent {
    pub fn new(
        relaxed: &RelaxedInstance,
        id: usize,
        rows: Range<usize>,
        z0: Vec<f64>,
        lambda0: Vec<f64>,
        beta: f64,
    ) -> Self {
        let base = relaxed.base();
        assert!(rows.end <= base.num_constraints());
        assert_eq!(z0.len(), base.dim());
        assert_eq!(lambda0.len(), base.num_constraints());
        let ball = DualBall {
            radius: relaxed.dual_bound(),
            dim: rows.len(),
        };
        Self {
            id,
            rows,
            z: z0,
            lambda: lambda0,
            beta,
            ball,
        }
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn rows(&self) -> Range<usize> {
        self.rows.clone()
    }

    pub fn local_z(&self) -> &[f64] {
        &self.z
    }

    pub fn local_lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn own_block(&self) -> &[f64] {
        &self.lambda[self.rows.clone()]
    }

    pub fn ball(&self) -> DualBall {
        self.ball
    }

    /// Barrier read of the true primal iterate.
    pub fn refresh_primal(&mut self, z: &[f64]) {
        self.z.copy_from_slice(z);
    }

    /// Keeps foreign dual blocks in sync for bookkeeping; they never enter
    /// this agent's own update.
    pub fn receive_dual(&mut self, lambda: &[f64]) {
        self.lambda.copy_from_slice(lambda);
    }

    /// Projected gradient ascent on the agent's rows.
    pub fn dual_step(&mut self, relaxed: &RelaxedInstance) {
        let g = dual_block_grad_raw(relaxed, self.rows.clone(), &self.z, &self.lambda);
        let moved: Vec<f64> = self.lambda[self.rows.clone()]
            .iter()
            .zip(&g)
            .map(|(l, gl)| l + self.beta * gl)
            .collect();
        let next = project_dual_ball(&moved, self.ball);
        debug_assert!(self.ball.contains(&next, 1e-9 * (1.0 + self.ball.radius)));
        self.lambda[self.rows.clone()].copy_from_slice(&next);
    }
}
