//! Regularized Lagrangian
//!
//! `L(z, lambda) = c^T z + (alpha/2)|z|^2 + lambda^T (A z - b + rho) - (delta/2)|lambda|^2`
//!
//! with its block gradients and the two projections used by the agents.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{dot, norm};
use crate::model::{BlockSet, RelaxedInstance};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LagrangianError {
    #[error("{what} has length {got}, expected {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error(
        "regularization weights must be positive and finite (alpha = {alpha}, delta = {delta})"
    )]
    BadKappa { alpha: f64, delta: f64 },
}

/// Tikhonov weights: `alpha` on the primal, `delta` on the dual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawKappa")]
pub struct Kappa {
    alpha: f64,
    delta: f64,
}

#[derive(Deserialize)]
struct RawKappa {
    alpha: f64,
    delta: f64,
}

impl TryFrom<RawKappa> for Kappa {
    type Error = LagrangianError;
    fn try_from(r: RawKappa) -> Result<Self, Self::Error> {
        Kappa::new(r.alpha, r.delta)
    }
}

impl Kappa {
    pub fn new(alpha: f64, delta: f64) -> Result<Self, LagrangianError> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(alpha) && ok(delta) {
            Ok(Self { alpha, delta })
        } else {
            Err(LagrangianError::BadKappa { alpha, delta })
        }
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

/// Dual block set `{lambda >= 0, |lambda|_1 <= radius}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualBall {
    pub radius: f64,
    pub dim: usize,
}

impl DualBall {
    pub fn contains(&self, v: &[f64], tol: f64) -> bool {
        v.len() == self.dim
            && v.iter().all(|&x| x >= -tol)
            && v.iter().sum::<f64>() <= self.radius + tol
    }
}

fn check(what: &'static str, expected: usize, got: usize) -> Result<(), LagrangianError> {
    if expected == got {
        Ok(())
    } else {
        Err(LagrangianError::Dimension {
            what,
            expected,
            got,
        })
    }
}

fn check_pair(relaxed: &RelaxedInstance, z: &[f64], lambda: &[f64]) -> Result<(), LagrangianError> {
    check("primal vector", relaxed.base().dim(), z.len())?;
    check(
        "dual vector",
        relaxed.base().num_constraints(),
        lambda.len(),
    )
}

pub fn eval_lagrangian(
    relaxed: &RelaxedInstance,
    z: &[f64],
    lambda: &[f64],
) -> Result<f64, LagrangianError> {
    check_pair(relaxed, z, lambda)?;
    let kappa = relaxed.kappa();
    let zn = norm(z);
    let ln = norm(lambda);
    let g = relaxed.constraint_value(z);
    Ok(
        relaxed.base().objective(z) + 0.5 * kappa.alpha() * zn * zn + dot(lambda, &g)
            - 0.5 * kappa.delta() * ln * ln,
    )
}

/// `c_i + alpha z_[i] + A_i^T lambda` for the block occupying `cols`.
pub fn primal_block_grad(
    relaxed: &RelaxedInstance,
    cols: Range<usize>,
    z: &[f64],
    lambda: &[f64],
) -> Result<Vec<f64>, LagrangianError> {
    check_pair(relaxed, z, lambda)?;
    Ok(primal_block_grad_raw(relaxed, cols, z, lambda))
}

pub(crate) fn primal_block_grad_raw(
    relaxed: &RelaxedInstance,
    cols: Range<usize>,
    z: &[f64],
    lambda: &[f64],
) -> Vec<f64> {
    let alpha = relaxed.kappa().alpha();
    let mut g = relaxed
        .base()
        .coupling()
        .t_matvec_cols(lambda, cols.clone());
    for ((gj, cj), zj) in g
        .iter_mut()
        .zip(&relaxed.base().cost()[cols.clone()])
        .zip(&z[cols])
    {
        *gj += cj + alpha * zj;
    }
    g
}

/// `(A z - b + rho)_[q] - delta lambda_[q]` for the dual rows `rows`.
pub fn dual_block_grad(
    relaxed: &RelaxedInstance,
    rows: Range<usize>,
    z: &[f64],
    lambda: &[f64],
) -> Result<Vec<f64>, LagrangianError> {
    check_pair(relaxed, z, lambda)?;
    Ok(dual_block_grad_raw(relaxed, rows, z, lambda))
}

pub(crate) fn dual_block_grad_raw(
    relaxed: &RelaxedInstance,
    rows: Range<usize>,
    z: &[f64],
    lambda: &[f64],
) -> Vec<f64> {
    let a = relaxed.base().coupling();
    let delta = relaxed.kappa().delta();
    rows.map(|r| dot(a.row(r), z) - relaxed.tightened_rhs()[r] - delta * lambda[r])
        .collect()
}

/// Full gradient in `z`.
pub fn primal_grad(
    relaxed: &RelaxedInstance,
    z: &[f64],
    lambda: &[f64],
) -> Result<Vec<f64>, LagrangianError> {
    primal_block_grad(relaxed, 0..relaxed.base().dim(), z, lambda)
}

/// Full gradient in `lambda`.
pub fn dual_grad(
    relaxed: &RelaxedInstance,
    z: &[f64],
    lambda: &[f64],
) -> Result<Vec<f64>, LagrangianError> {
    dual_block_grad(relaxed, 0..relaxed.base().num_constraints(), z, lambda)
}

/// Euclidean projection onto the convex hull of a block's local set, which
/// for a box is a coordinate-wise clamp.
pub fn project_box(v: &[f64], block: &BlockSet) -> Vec<f64> {
    v.iter()
        .enumerate()
        .map(|(j, &x)| {
            let (l, u) = block.hull_bounds(j);
            x.clamp(l, u)
        })
        .collect()
}

/// Projection onto the whole primal domain.
pub fn project_domain(relaxed: &RelaxedInstance, z: &[f64]) -> Vec<f64> {
    let base = relaxed.base();
    let mut out = Vec::with_capacity(z.len());
    for (i, blk) in base.blocks().iter().enumerate() {
        out.extend(project_box(&z[base.block_range(i)], blk));
    }
    out
}

/// Exact Euclidean projection onto `{lambda >= 0, |lambda|_1 <= radius}`.
///
/// Negative entries are clipped first; if the l1 norm still exceeds the
/// radius, the point is projected onto the scaled simplex by the sort-based
/// threshold rule `max(v - tau, 0)`.
pub fn project_dual_ball(v: &[f64], ball: DualBall) -> Vec<f64> {
    let clipped: Vec<f64> = v.iter().map(|&x| x.max(0.0)).collect();
    let total: f64 = clipped.iter().sum();
    if total <= ball.radius {
        return clipped;
    }
    if ball.radius <= 0.0 {
        return vec![0.0; v.len()];
    }
    let mut sorted = clipped.clone();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - ball.radius) / (k + 1) as f64;
        if u - t > 0.0 {
            tau = t;
        } else {
            break;
        }
    }
    clipped.iter().map(|&x| (x - tau).max(0.0)).collect()
}
