//! Approximate solver for constraint-coupled mixed-integer linear programs.
//!
//! The integer program is tightened, convexified and regularized; the saddle
//! point of the regularized Lagrangian is computed by an asynchronous
//! block-based primal-dual method (simulated with bounded delays), and the
//! result is rounded back to a mixed-integer point. The theoretical constants
//! and convergence envelopes are computed alongside, and small instances can
//! be checked against exact oracles.

// NaN must fail these checks, so `!(x > 0.0)` is intended
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agents;
pub mod analysis;
pub mod harness;
pub mod lagrangian;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod recovery;
pub mod simnet;

pub use agents::{AgentError, DualAgent, PrimalAgent, StepSizes};
pub use analysis::{AnalysisError, RateConstants};
pub use harness::{ExperimentConfig, HarnessError};
pub use lagrangian::{DualBall, Kappa, LagrangianError};
pub use linalg::Matrix;
pub use model::{
    BlockPartition, BlockSet, InstanceFile, MilpInstance, ModelError, RelaxedInstance,
};
pub use oracle::OracleError;
pub use recovery::{RecoveredSolution, RecoveryError};
pub use simnet::{AsyncSchedule, RunOptions, RunTrace, SimError};
