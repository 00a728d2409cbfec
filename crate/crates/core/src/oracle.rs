//! Exact references for small instances: the MILP optimum by enumeration,
//! the regularized saddle point, best responses, and a vertex census of the
//! tightened relaxation.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lagrangian::{dual_grad, primal_grad, project_domain, project_dual_ball, DualBall};
use crate::linalg::{dist, dot, Matrix};
use crate::model::{MilpInstance, RelaxedInstance};

/// Largest number of integer points `exact_milp` will visit.
pub const ENUMERATION_LIMIT: f64 = 1e7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("enumeration would visit {count:.3e} points (limit {limit:.0e})")]
    TooLarge { count: f64, limit: f64 },
    #[error("no integer point satisfies the coupling constraints")]
    Infeasible,
    #[error("coordinate {0} is continuous; enumeration needs pure-integer blocks")]
    NotPureInteger(usize),
    #[error("saddle iteration stopped after {iterations} iterations with residual {residual:.3e}")]
    MaxIterations { iterations: usize, residual: f64 },
    #[error("dual vector has length {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MilpOptimum {
    pub x: Vec<f64>,
    pub cost: f64,
}

/// Minimizes `c^T x` over all integer points of the blocks' boxes subject to
/// `A x <= b`. The first minimizer in odometer order wins ties.
pub fn exact_milp(milp: &MilpInstance) -> Result<MilpOptimum, OracleError> {
    let bounds = milp.hull_bounds();
    let mut count = 1.0_f64;
    for (j, &(l, u)) in bounds.iter().enumerate() {
        let blk = milp.block(milp.block_of(j));
        if !blk.integral()[j - milp.block_range(milp.block_of(j)).start] {
            return Err(OracleError::NotPureInteger(j));
        }
        count *= u - l + 1.0;
    }
    if count > ENUMERATION_LIMIT {
        return Err(OracleError::TooLarge {
            count,
            limit: ENUMERATION_LIMIT,
        });
    }
    let a = milp.coupling();
    let b = milp.rhs();
    let c = milp.cost();
    let n = bounds.len();
    let mut x: Vec<f64> = bounds.iter().map(|&(l, _)| l).collect();
    let mut best: Option<MilpOptimum> = None;
    loop {
        let feasible = (0..a.rows()).all(|r| dot(a.row(r), &x) <= b[r]);
        if feasible {
            let cost = dot(c, &x);
            if best.as_ref().is_none_or(|o| cost < o.cost) {
                best = Some(MilpOptimum { x: x.clone(), cost });
            }
        }
        // odometer, last coordinate fastest
        let mut j = n;
        loop {
            if j == 0 {
                return best.ok_or(OracleError::Infeasible);
            }
            j -= 1;
            if x[j] < bounds[j].1 {
                x[j] += 1.0;
                break;
            }
            x[j] = bounds[j].0;
        }
    }
}

/// Minimizer of `L(., lambda)` over the primal domain. The Lagrangian is a
/// separable quadratic with curvature `alpha` in every coordinate, so the
/// minimizer is the clamped unconstrained stationary point.
pub fn best_response(relaxed: &RelaxedInstance, lambda: &[f64]) -> Vec<f64> {
    let base = relaxed.base();
    let alpha = relaxed.kappa().alpha();
    let atl = base.coupling().t_matvec(lambda);
    base.hull_bounds()
        .into_iter()
        .enumerate()
        .map(|(j, (l, u))| (-(base.cost()[j] + atl[j]) / alpha).clamp(l, u))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaddlePoint {
    pub z: Vec<f64>,
    pub lambda: Vec<f64>,
    pub iterations: usize,
    pub residual: f64,
}

/// Fixed-point residual `|z - P_Z[z - grad_z]| + |lambda - P_M[lambda + grad_lambda]|`
/// with unit steps, where `M` is the product of the dual balls over `dual_blocks`.
pub fn kkt_residual(
    relaxed: &RelaxedInstance,
    z: &[f64],
    lambda: &[f64],
    dual_blocks: &[Range<usize>],
) -> f64 {
    let gz = primal_grad(relaxed, z, lambda).expect("primal vector length");
    let moved: Vec<f64> = z.iter().zip(&gz).map(|(a, g)| a - g).collect();
    let pz = project_domain(relaxed, &moved);
    let gl = dual_grad(relaxed, z, lambda).expect("dual vector length");
    let mut pl = Vec::with_capacity(lambda.len());
    for rows in dual_blocks {
        let v: Vec<f64> = rows.clone().map(|r| lambda[r] + gl[r]).collect();
        pl.extend(project_dual_ball(
            &v,
            DualBall {
                radius: relaxed.dual_bound(),
                dim: rows.len(),
            },
        ));
    }
    dist(z, &pz) + dist(lambda, &pl)
}

/// Default iteration cap of [`exact_saddle`].
pub const SADDLE_MAX_ITER: usize = 20_000_000;

/// The unique saddle point of the regularized Lagrangian, to KKT residual `tol`.
pub fn exact_saddle(relaxed: &RelaxedInstance, tol: f64) -> Result<SaddlePoint, OracleError> {
    let y = relaxed.base().num_constraints();
    exact_saddle_from(relaxed, &vec![0.0; y], tol, SADDLE_MAX_ITER)
}

/// Dual ascent with exact primal minimization (Uzawa iteration), started at
/// `lambda0`. The dual function is `(|A|^2/alpha + delta)`-smooth; the step
/// uses the Frobenius norm as a cheap upper bound of the spectral norm.
pub fn exact_saddle_from(
    relaxed: &RelaxedInstance,
    lambda0: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<SaddlePoint, OracleError> {
    let base = relaxed.base();
    let y = base.num_constraints();
    if lambda0.len() != y {
        return Err(OracleError::Dimension {
            expected: y,
            got: lambda0.len(),
        });
    }
    let kappa = relaxed.kappa();
    let fro = base.coupling().frobenius_norm();
    let step = 1.0 / (fro * fro / kappa.alpha() + kappa.delta());
    let all_rows = 0..y;
    let whole = std::slice::from_ref(&all_rows);
    let mut lambda: Vec<f64> = lambda0.iter().map(|v| v.max(0.0)).collect();
    let mut residual = f64::INFINITY;
    for it in 0..=max_iter {
        let z = best_response(relaxed, &lambda);
        residual = kkt_residual(relaxed, &z, &lambda, whole);
        if residual < tol {
            return Ok(SaddlePoint {
                z,
                lambda,
                iterations: it,
                residual,
            });
        }
        let g = relaxed.constraint_value(&z);
        for (l, gi) in lambda.iter_mut().zip(&g) {
            *l = (*l + step * (gi - kappa.delta() * *l)).max(0.0);
        }
    }
    Err(OracleError::MaxIterations {
        iterations: max_iter,
        residual,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexCensus {
    pub vertices: usize,
    pub max_fractional_blocks: usize,
    /// Vertices with more fractional blocks than coupling rows.
    pub violations: usize,
}

const CENSUS_MAX_DIM: usize = 12;
const CENSUS_MAX_ROWS: usize = 4;
const INT_TOL: f64 = 1e-9;

/// Enumerates the vertices of `{z in hull(Z) : A z <= b - rho}` and counts, at
/// each, the blocks holding a non-integral value in an integral coordinate.
///
/// A vertex is a feasible point where `n` linearly independent constraints are
/// tight: some subset `S` of coupling rows plus box bounds on all but `|S|`
/// coordinates.
pub fn vertex_integrality_census(relaxed: &RelaxedInstance) -> Result<VertexCensus, OracleError> {
    let base = relaxed.base();
    let n = base.dim();
    let y = base.num_constraints();
    if n > CENSUS_MAX_DIM || y > CENSUS_MAX_ROWS {
        return Err(OracleError::TooLarge {
            count: (n as f64).exp2(),
            limit: (CENSUS_MAX_DIM as f64).exp2(),
        });
    }
    let bounds = base.hull_bounds();
    let a = base.coupling();
    let rhs = relaxed.tightened_rhs();
    let mut found: Vec<Vec<f64>> = Vec::new();

    for rows_mask in 0u32..(1 << y) {
        let rows: Vec<usize> = (0..y).filter(|r| rows_mask >> r & 1 == 1).collect();
        let s = rows.len();
        if s > n {
            continue;
        }
        for free in subsets(n, s) {
            let fixed: Vec<usize> = (0..n).filter(|j| !free.contains(j)).collect();
            for corner in 0u32..(1 << fixed.len()) {
                let mut z = vec![0.0; n];
                for (bit, &j) in fixed.iter().enumerate() {
                    z[j] = if corner >> bit & 1 == 1 {
                        bounds[j].1
                    } else {
                        bounds[j].0
                    };
                }
                if s > 0 {
                    let mut m = Matrix::zeros(s, s);
                    let mut t = vec![0.0; s];
                    for (ri, &r) in rows.iter().enumerate() {
                        for (ci, &j) in free.iter().enumerate() {
                            m.set(ri, ci, a.get(r, j));
                        }
                        t[ri] = rhs[r] - fixed.iter().map(|&j| a.get(r, j) * z[j]).sum::<f64>();
                    }
                    let Some(sol) = solve(m, t) else { continue };
                    for (ci, &j) in free.iter().enumerate() {
                        z[j] = sol[ci];
                    }
                }
                let scale = 1.0 + z.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
                let in_box = z
                    .iter()
                    .zip(&bounds)
                    .all(|(&v, &(l, u))| v >= l - INT_TOL * scale && v <= u + INT_TOL * scale);
                let feasible = (0..y).all(|r| dot(a.row(r), &z) <= rhs[r] + INT_TOL * scale);
                if !(in_box && feasible) {
                    continue;
                }
                if !found.iter().any(|v| {
                    v.iter()
                        .zip(&z)
                        .all(|(p, q)| (p - q).abs() <= INT_TOL * scale)
                }) {
                    found.push(z);
                }
            }
        }
    }

    let mut max_frac = 0;
    let mut violations = 0;
    for v in &found {
        let frac = (0..base.num_blocks())
            .filter(|&i| {
                let blk = base.block(i);
                base.block_range(i)
                    .enumerate()
                    .any(|(jj, j)| blk.integral()[jj] && (v[j] - v[j].round()).abs() > 1e-7)
            })
            .count();
        max_frac = max_frac.max(frac);
        if frac > y {
            violations += 1;
        }
    }
    Ok(VertexCensus {
        vertices: found.len(),
        max_fractional_blocks: max_frac,
        violations,
    })
}

/// All `k`-subsets of `0..n` in lexicographic order.
fn subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for j in start..n {
            cur.push(j);
            rec(j + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::with_capacity(k), &mut out);
    out
}

/// Gaussian elimination with partial pivoting; `None` if (numerically) singular.
fn solve(mut m: Matrix, mut t: Vec<f64>) -> Option<Vec<f64>> {
    let s = t.len();
    let scale = (0..s)
        .flat_map(|r| m.row(r).to_vec())
        .fold(0.0_f64, |acc, v| acc.max(v.abs()));
    for col in 0..s {
        let piv = (col..s).max_by(|&p, &q| m.get(p, col).abs().total_cmp(&m.get(q, col).abs()))?;
        if m.get(piv, col).abs() <= 1e-12 * scale.max(f64::MIN_POSITIVE) {
            return None;
        }
        if piv != col {
            for c in 0..s {
                let (a, b) = (m.get(col, c), m.get(piv, c));
                m.set(col, c, b);
                m.set(piv, c, a);
            }
            t.swap(col, piv);
        }
        for r in col + 1..s {
            let f = m.get(r, col) / m.get(col, col);
            for c in col..s {
                m.set(r, c, m.get(r, c) - f * m.get(col, c));
            }
            t[r] -= f * t[col];
        }
    }
    let mut x = vec![0.0; s];
    for r in (0..s).rev() {
        let tail: f64 = (r + 1..s).map(|c| m.get(r, c) * x[c]).sum();
        x[r] = (t[r] - tail) / m.get(r, r);
    }
    Some(x)
}
