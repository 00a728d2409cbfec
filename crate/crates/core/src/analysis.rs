//! Step-size ceilings, contraction factors, convergence envelopes, the
//! regularization gap and the suboptimality certificate.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::StepSizes;
use crate::lagrangian::{project_box, project_dual_ball, DualBall, Kappa};
use crate::linalg::{dist, dot, norm, Matrix};
use crate::model::RelaxedInstance;
use crate::oracle::best_response;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("dual step {beta} is not below the {binding} ceiling {ceiling}")]
    BetaTooLarge {
        beta: f64,
        ceiling: f64,
        binding: &'static str,
    },
    #[error("dual step must be positive and finite, got {0}")]
    BetaNonPositive(f64),
    #[error("primal step must be positive and finite, got {0}")]
    GammaNonPositive(f64),
    #[error("power iteration did not converge in {0} iterations")]
    PowerIteration(usize),
    #[error("primal iteration does not contract at gamma = {gamma} (observed ratio {ratio})")]
    GammaUnstable { gamma: f64, ratio: f64 },
    #[error("primal contraction constant is unknown; estimate theta first")]
    MissingTheta,
    #[error("theta * gamma must lie in (0, 1], got {0}")]
    BadTheta(f64),
    #[error("primal envelope needs n >= 1")]
    EnvelopeIndex,
}

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITER: usize = 200;

/// Largest singular value of `a`, by power iteration on `A A^T` from a fixed
/// pseudo-random start.
pub fn spectral_norm(a: &Matrix) -> Result<f64, AnalysisError> {
    let y = a.rows();
    if y == 0 || a.cols() == 0 {
        return Ok(0.0);
    }
    let g = a.gram_rows();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v: Vec<f64> = (0..y).map(|_| rng.random_range(0.5..1.5)).collect();
    let n0 = norm(&v);
    v.iter_mut().for_each(|x| *x /= n0);
    let mut est = 0.0;
    for _ in 0..POWER_MAX_ITER {
        let w = g.matvec(&v);
        let wn = norm(&w);
        if wn == 0.0 {
            return Ok(0.0);
        }
        let next = dot(&v, &w);
        v = w.into_iter().map(|x| x / wn).collect();
        if (next - est).abs() <= POWER_TOL * next.abs() {
            return Ok(next.sqrt());
        }
        est = next;
    }
    Err(AnalysisError::PowerIteration(POWER_MAX_ITER))
}

/// Upper limits on the dual step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaCeilings {
    /// `2 alpha / (|A| + 2 alpha delta)`
    pub coupling: f64,
    /// `2 delta / (1 + delta^2)`, exactly the range where `q_d < 1`
    pub dual: f64,
    /// `2 alpha / (|A|^2 + 2 alpha delta)`, the limit under which one dual
    /// step at the exact best response is a contraction
    pub contraction: f64,
}

impl BetaCeilings {
    pub fn new(a_norm: f64, kappa: Kappa) -> Self {
        let (alpha, delta) = (kappa.alpha(), kappa.delta());
        Self {
            coupling: 2.0 * alpha / (a_norm + 2.0 * alpha * delta),
            dual: 2.0 * delta / (1.0 + delta * delta),
            contraction: 2.0 * alpha / (a_norm * a_norm + 2.0 * alpha * delta),
        }
    }

    /// Ceiling enforced by [`validate_step_sizes`].
    pub fn admissible(&self) -> f64 {
        self.coupling.min(self.dual)
    }

    /// Default dual step: 0.9 times the smallest of the three ceilings.
    pub fn default_beta(&self) -> f64 {
        0.9 * self.admissible().min(self.contraction)
    }
}

pub fn q_dual(beta: f64, delta: f64) -> f64 {
    (1.0 - beta * delta).powi(2) + beta * beta
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateConstants {
    pub q_d: f64,
    /// `1 - theta gamma`; absent until theta is known.
    pub q_p: Option<f64>,
    pub theta: Option<f64>,
    pub a_norm: f64,
    pub radius: f64,
    pub dual_bound: f64,
    pub alpha: f64,
    pub delta: f64,
    pub beta: f64,
    pub gamma: f64,
    pub ceilings: BetaCeilings,
}

impl RateConstants {
    pub fn with_theta(mut self, theta: f64) -> Result<Self, AnalysisError> {
        let tg = theta * self.gamma;
        if !(tg > 0.0 && tg <= 1.0) {
            return Err(AnalysisError::BadTheta(tg));
        }
        self.theta = Some(theta);
        self.q_p = Some(1.0 - tg);
        Ok(self)
    }

    fn q_p(&self) -> Result<f64, AnalysisError> {
        self.q_p.ok_or(AnalysisError::MissingTheta)
    }

    /// Per-epoch additive term of the dual envelope.
    fn dual_offset(&self) -> Result<f64, AnalysisError> {
        let q_p = self.q_p()?;
        let r2 = self.radius * self.radius;
        let a2 = self.a_norm * self.a_norm;
        Ok((4.0 * r2 * self.q_d * q_p * q_p + 8.0 * r2 * self.beta * self.beta * q_p) * a2)
    }
}

/// Checks both step sizes and returns the rate constants (without theta).
pub fn validate_step_sizes(
    relaxed: &RelaxedInstance,
    steps: StepSizes,
) -> Result<RateConstants, AnalysisError> {
    let a_norm = spectral_norm(relaxed.base().coupling())?;
    validate_with_norm(relaxed, steps, a_norm)
}

/// Same as [`validate_step_sizes`] with a precomputed spectral norm.
pub fn validate_with_norm(
    relaxed: &RelaxedInstance,
    steps: StepSizes,
    a_norm: f64,
) -> Result<RateConstants, AnalysisError> {
    if !(steps.gamma.is_finite() && steps.gamma > 0.0) {
        return Err(AnalysisError::GammaNonPositive(steps.gamma));
    }
    if !(steps.beta.is_finite() && steps.beta > 0.0) {
        return Err(AnalysisError::BetaNonPositive(steps.beta));
    }
    let kappa = relaxed.kappa();
    let ceilings = BetaCeilings::new(a_norm, kappa);
    let (binding, ceiling) = if ceilings.coupling <= ceilings.dual {
        ("coupling", ceilings.coupling)
    } else {
        ("dual", ceilings.dual)
    };
    if steps.beta >= ceiling {
        return Err(AnalysisError::BetaTooLarge {
            beta: steps.beta,
            ceiling,
            binding,
        });
    }
    Ok(RateConstants {
        q_d: q_dual(steps.beta, kappa.delta()),
        q_p: None,
        theta: None,
        a_norm,
        radius: relaxed.radius(),
        dual_bound: relaxed.dual_bound(),
        alpha: kappa.alpha(),
        delta: kappa.delta(),
        beta: steps.beta,
        gamma: steps.gamma,
        ceilings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThetaEstimate {
    /// Worst per-iteration ratio `|z_{k+1} - z*| / |z_k - z*|` observed.
    pub observed_rate: f64,
    /// `(1 - observed_rate) / (2 gamma)`: the fitted constant with a 2x margin.
    pub theta: f64,
}

const THETA_ITERS: usize = 200;

/// Runs the synchronous primal iteration at each fixed dual vector in `probes`
/// from two opposite corners of the domain, and fits the contraction constant
/// from the worst observed step ratio.
pub fn estimate_theta(
    relaxed: &RelaxedInstance,
    gamma: f64,
    probes: &[Vec<f64>],
) -> Result<ThetaEstimate, AnalysisError> {
    if !(gamma.is_finite() && gamma > 0.0) {
        return Err(AnalysisError::GammaNonPositive(gamma));
    }
    let base = relaxed.base();
    let bounds = base.hull_bounds();
    let starts: [Vec<f64>; 2] = [
        bounds.iter().map(|b| b.0).collect(),
        bounds.iter().map(|b| b.1).collect(),
    ];
    let alpha = relaxed.kappa().alpha();
    let mut worst = 0.0_f64;
    for lambda in probes {
        let target = best_response(relaxed, lambda);
        let lin: Vec<f64> = {
            let atl = base.coupling().t_matvec(lambda);
            base.cost().iter().zip(&atl).map(|(c, a)| c + a).collect()
        };
        for start in &starts {
            let mut z = start.clone();
            let mut err = dist(&z, &target);
            // below this the ratios are dominated by rounding
            let floor = 1e-8 * (1.0 + norm(&target) + norm(start));
            for _ in 0..THETA_ITERS {
                if err <= floor {
                    break;
                }
                let moved: Vec<f64> = z
                    .iter()
                    .zip(&lin)
                    .map(|(zj, lj)| zj - gamma * (lj + alpha * zj))
                    .collect();
                let mut next = Vec::with_capacity(z.len());
                for (i, blk) in base.blocks().iter().enumerate() {
                    next.extend(project_box(&moved[base.block_range(i)], blk));
                }
                let next_err = dist(&next, &target);
                worst = worst.max(next_err / err);
                z = next;
                err = next_err;
                if !err.is_finite() {
                    break;
                }
            }
        }
    }
    if !(worst < 1.0) {
        return Err(AnalysisError::GammaUnstable {
            gamma,
            ratio: worst,
        });
    }
    Ok(ThetaEstimate {
        observed_rate: worst,
        theta: (1.0 - worst) / (2.0 * gamma),
    })
}

/// Probe duals for [`estimate_theta`]: zero, the saddle dual, and a seeded
/// random point of the dual ball.
pub fn default_theta_probes(
    relaxed: &RelaxedInstance,
    lambda_hat: &[f64],
    seed: u64,
) -> Vec<Vec<f64>> {
    let y = relaxed.base().num_constraints();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..y)
        .map(|_| rng.random_range(0.0..relaxed.dual_bound()))
        .collect();
    let random = project_dual_ball(
        &raw,
        DualBall {
            radius: relaxed.dual_bound(),
            dim: y,
        },
    );
    vec![vec![0.0; y], lambda_hat.to_vec(), random]
}

/// Halves gamma until the primal iteration contracts on every probe.
pub fn stabilize_gamma(
    relaxed: &RelaxedInstance,
    mut gamma: f64,
    probes: &[Vec<f64>],
    max_halvings: usize,
) -> Result<(f64, ThetaEstimate), AnalysisError> {
    for _ in 0..max_halvings {
        match estimate_theta(relaxed, gamma, probes) {
            Ok(t) => return Ok((gamma, t)),
            Err(AnalysisError::GammaUnstable { .. }) => gamma *= 0.5,
            Err(e) => return Err(e),
        }
    }
    estimate_theta(relaxed, gamma, probes).map(|t| (gamma, t))
}

/// Bound on `|lambda(t_n B) - lambda_hat|^2`:
/// `q_d^n d0^2 + C sum_{i=0}^{n} q_d^i`.
pub fn dual_envelope(c: &RateConstants, lambda0_dist: f64, n: u64) -> Result<f64, AnalysisError> {
    let offset = c.dual_offset()?;
    let q = c.q_d;
    let n_i = i32::try_from(n).unwrap_or(i32::MAX);
    let sum = if q == 1.0 {
        (n + 1) as f64
    } else {
        (1.0 - q.powi(n_i.saturating_add(1))) / (1.0 - q)
    };
    Ok(q.powi(n_i) * lambda0_dist * lambda0_dist + offset * sum)
}

/// Bound on `|z(t_n B) - z_hat|`:
/// `2 q_p^gap r + (|A|/alpha) sqrt(dual_envelope(n - 1))`.
pub fn primal_envelope(
    c: &RateConstants,
    lambda0_dist: f64,
    n: u64,
    epoch_gap: u64,
) -> Result<f64, AnalysisError> {
    if n == 0 {
        return Err(AnalysisError::EnvelopeIndex);
    }
    let q_p = c.q_p()?;
    let gap = i32::try_from(epoch_gap).unwrap_or(i32::MAX);
    let first = 2.0 * q_p.powi(gap) * c.radius;
    Ok(first + c.a_norm / c.alpha * dual_envelope(c, lambda0_dist, n - 1)?.sqrt())
}

/// Bound on `|c^T z_hat - c^T z*|` caused by the two regularization terms.
pub fn regularization_gap(relaxed: &RelaxedInstance) -> f64 {
    let k = relaxed.kappa();
    regularization_gap_raw(
        norm(relaxed.base().cost()),
        relaxed.dual_bound(),
        k.alpha(),
        k.delta(),
        relaxed.radius(),
    )
}

pub fn regularization_gap_raw(
    c_norm: f64,
    dual_bound: f64,
    alpha: f64,
    delta: f64,
    radius: f64,
) -> f64 {
    c_norm * dual_bound * (delta / (2.0 * alpha)).sqrt() + 0.5 * alpha * radius
}

/// Cost spread `max c_l^T x - min c_l^T x` of each block over its local set.
pub fn cost_spreads(relaxed: &RelaxedInstance) -> Vec<f64> {
    let base = relaxed.base();
    base.blocks()
        .iter()
        .enumerate()
        .map(|(i, blk)| blk.linear_range(&base.cost()[base.block_range(i)]))
        .collect()
}

/// Upper bound on `c^T z_hat - c^T x*`: `y max_l eta_l` plus the regularization gap.
pub fn suboptimality_certificate(relaxed: &RelaxedInstance) -> f64 {
    let y = relaxed.base().num_constraints() as f64;
    let eta = cost_spreads(relaxed).into_iter().fold(0.0_f64, f64::max);
    y * eta + regularization_gap(relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    /// `(l2 - l1)^T (g(z1) - g(z2))`
    pub monotone_lhs: f64,
    /// `(alpha / |A|^2) |g(z2) - g(z1)|^2`
    pub monotone_rhs: f64,
    /// `|l2 - l1|`
    pub lipschitz_lhs: f64,
    /// `(alpha / |A|) |z2 - z1|`
    pub lipschitz_rhs: f64,
}

impl MonotonicityReport {
    /// Both inequalities, with a relative slack for rounding.
    pub fn holds(&self) -> bool {
        let ok = |lhs: f64, rhs: f64| lhs >= rhs - 1e-9 * (1.0 + lhs.abs().max(rhs.abs()));
        ok(self.monotone_lhs, self.monotone_rhs) && ok(self.lipschitz_lhs, self.lipschitz_rhs)
    }
}

/// Evaluates the best-response monotonicity and Lipschitz inequalities for a
/// pair of dual vectors.
pub fn check_monotonicity(
    relaxed: &RelaxedInstance,
    a_norm: f64,
    l1: &[f64],
    l2: &[f64],
) -> MonotonicityReport {
    let alpha = relaxed.kappa().alpha();
    let z1 = best_response(relaxed, l1);
    let z2 = best_response(relaxed, l2);
    let g1 = relaxed.constraint_value(&z1);
    let g2 = relaxed.constraint_value(&z2);
    let dl: Vec<f64> = l2.iter().zip(l1).map(|(a, b)| a - b).collect();
    let dg: Vec<f64> = g1.iter().zip(&g2).map(|(a, b)| a - b).collect();
    let dgn = norm(&dg);
    MonotonicityReport {
        monotone_lhs: dot(&dl, &dg),
        monotone_rhs: if a_norm == 0.0 {
            0.0
        } else {
            alpha / (a_norm * a_norm) * dgn * dgn
        },
        lipschitz_lhs: norm(&dl),
        lipschitz_rhs: if a_norm == 0.0 {
            0.0
        } else {
            alpha / a_norm * dist(&z1, &z2)
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::*;
    use crate::model::{BlockSet, MilpInstance};

    #[test]
    fn spectral_norm_known_matrices() {
        let a = Matrix::from_rows(&[vec![3.0, 0.0], vec![0.0, 4.0]], 2).unwrap();
        assert!((spectral_norm(&a).unwrap() - 4.0).abs() < 1e-9);
        let b = Matrix::from_rows(&[vec![1.0, 1.0]], 2).unwrap();
        assert!((spectral_norm(&b).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        // top eigenvector orthogonal to the all-ones vector
        let c = Matrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]], 2).unwrap();
        assert!((spectral_norm(&c).unwrap() - 2f64.sqrt()).abs() < 1e-9);
        assert_eq!(spectral_norm(&Matrix::zeros(2, 3)).unwrap(), 0.0);
    }

    #[test]
    fn spectral_norm_matches_dense_svd_bound() {
        // Compare against the largest eigenvalue of a 2x2 Gram matrix in closed form.
        let a = Matrix::from_rows(&[vec![0.3, 0.9, 0.1], vec![0.7, 0.2, 0.5]], 3).unwrap();
        let g = a.gram_rows();
        let (p, q, r) = (g.get(0, 0), g.get(0, 1), g.get(1, 1));
        let top = 0.5 * (p + r) + ((0.5 * (p - r)).powi(2) + q * q).sqrt();
        assert!((spectral_norm(&a).unwrap() - top.sqrt()).abs() < 1e-9);
    }

    #[test]
    fn ceilings_reference_values() {
        let k = Kappa::new(1e-4, 1e-3).unwrap();
        let c = BetaCeilings::new(2.0, k);
        assert!((c.coupling - 9.9999990e-5).abs() < 1e-12);
        assert!((c.dual - 1.999998e-3).abs() < 1e-9);
        assert!((c.admissible() - 1.0e-4).abs() < 1e-10);
        assert!(c.contraction < c.coupling);
    }

    #[test]
    fn q_dual_reference_values() {
        // 0.999999^2 + 1e-6 = 0.999998000001 + 0.000001
        assert!((q_dual(0.001, 0.001) - 0.999999000001).abs() < 1e-15);
        assert!(q_dual(0.1, 1e-3) > 1.0);
    }

    #[test]
    fn q_dual_below_one_iff_beta_below_dual_ceiling() {
        for &delta in &[1e-3, 0.1, 0.3, 1.0, 3.0] {
            let ceil = 2.0 * delta / (1.0 + delta * delta);
            for f in [0.01, 0.5, 0.99, 0.999] {
                assert!(q_dual(f * ceil, delta) < 1.0);
            }
            for f in [1.001, 1.5, 3.0] {
                assert!(q_dual(f * ceil, delta) > 1.0);
            }
        }
    }

    #[test]
    fn validation_rejects_large_beta() {
        let rel = toy_relaxed(0.01, 0.01);
        let a_norm = 2f64.sqrt();
        let err = validate_with_norm(
            &rel,
            StepSizes {
                gamma: 0.1,
                beta: 0.1,
            },
            a_norm,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            AnalysisError::BetaTooLarge {
                binding: "coupling",
                ..
            }
        ));
        let ok = validate_with_norm(
            &rel,
            StepSizes {
                gamma: 0.1,
                beta: 0.001,
            },
            a_norm,
        )
        .unwrap();
        assert!(ok.q_d < 1.0);
        assert!(matches!(
            validate_step_sizes(
                &rel,
                StepSizes {
                    gamma: 0.0,
                    beta: 0.001
                }
            ),
            Err(AnalysisError::GammaNonPositive(_))
        ));
    }

    fn toy_constants() -> RateConstants {
        let rel = toy_relaxed(0.5, 0.2);
        let beta = BetaCeilings::new(2f64.sqrt(), rel.kappa()).default_beta();
        validate_step_sizes(&rel, StepSizes { gamma: 0.2, beta })
            .unwrap()
            .with_theta(2.0)
            .unwrap()
    }

    #[test]
    fn dual_envelope_closed_form_matches_loop() {
        let c = toy_constants();
        let q_p = c.q_p.unwrap();
        let offset = (4.0 * c.radius.powi(2) * c.q_d * q_p * q_p
            + 8.0 * c.radius.powi(2) * c.beta.powi(2) * q_p)
            * c.a_norm.powi(2);
        assert!((dual_envelope(&c, 1.5, 0).unwrap() - (2.25 + offset)).abs() < 1e-12);
        for n in [1u64, 2, 7, 40] {
            let mut looped = c.q_d.powi(n as i32) * 2.25;
            for i in 0..=n {
                looped += offset * c.q_d.powi(i as i32);
            }
            let closed = dual_envelope(&c, 1.5, n).unwrap();
            assert!((closed - looped).abs() <= 1e-12 * looped);
        }
        let limit = offset / (1.0 - c.q_d);
        let far = dual_envelope(&c, 1.5, 100_000).unwrap();
        assert!((far - limit).abs() <= 1e-12 * limit);
    }

    #[test]
    fn primal_envelope_shape() {
        let c = toy_constants();
        let q_p = c.q_p.unwrap();
        let n1 = primal_envelope(&c, 1.0, 1, 1).unwrap();
        let expect =
            2.0 * q_p * c.radius + c.a_norm / c.alpha * dual_envelope(&c, 1.0, 0).unwrap().sqrt();
        assert!((n1 - expect).abs() < 1e-12);
        let tail = primal_envelope(&c, 1.0, 5, 10_000).unwrap();
        let lim = c.a_norm / c.alpha * dual_envelope(&c, 1.0, 4).unwrap().sqrt();
        assert!((tail - lim).abs() < 1e-9);
        // monotone in n once the initial dual error exceeds the fixed offset
        let mut prev = f64::INFINITY;
        for n in 1..60 {
            let v = primal_envelope(&c, 100.0, n, 1).unwrap();
            assert!(v <= prev + 1e-12);
            prev = v;
        }
        assert_eq!(
            primal_envelope(&c, 1.0, 0, 1),
            Err(AnalysisError::EnvelopeIndex)
        );
    }

    #[test]
    fn envelopes_need_theta() {
        let rel = toy_relaxed(0.5, 0.2);
        let c = validate_step_sizes(
            &rel,
            StepSizes {
                gamma: 0.2,
                beta: 0.01,
            },
        )
        .unwrap();
        assert_eq!(dual_envelope(&c, 1.0, 3), Err(AnalysisError::MissingTheta));
        assert!(c.with_theta(10.0).is_err());
    }

    #[test]
    fn toy_regularization_gap_and_certificate() {
        let rel = toy_relaxed(0.01, 0.01);
        assert!((rel.dual_bound() - 4.0).abs() < 1e-12);
        let gap = regularization_gap(&rel);
        let expect = 2f64.sqrt() * 4.0 * 0.5f64.sqrt() + 0.005 * 8f64.sqrt();
        assert!((gap - expect).abs() < 1e-12);
        assert!((gap - 4.0141).abs() < 1e-4);
        let cert = suboptimality_certificate(&rel);
        assert!((cert - (2.0 + expect)).abs() < 1e-12);
        assert!((cert - 6.0141).abs() < 1e-4);
    }

    #[test]
    fn gap_limits() {
        assert_eq!(regularization_gap_raw(3.0, 5.0, 0.2, 0.0, 7.0), 0.1 * 7.0);
        let small = regularization_gap_raw(3.0, 5.0, 1e-8, 2e-8, 7.0);
        // The first term only depends on delta/alpha, so it survives the limit.
        assert!((small - 15.0).abs() < 1e-6);
    }

    #[test]
    fn zero_cost_certificate_is_half_alpha_r() {
        let t = toy();
        let inst = MilpInstance::new(
            t.blocks().to_vec(),
            vec![0.0, 0.0],
            t.coupling().clone(),
            t.rhs().to_vec(),
        )
        .unwrap();
        let rel =
            RelaxedInstance::new(inst, Kappa::new(0.01, 0.01).unwrap(), vec![0.0, 0.0]).unwrap();
        assert!((suboptimality_certificate(&rel) - 0.005 * 8f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn theta_estimate_on_unclamped_problem() {
        // Wide box and small cost: the iteration never clamps, so the observed
        // rate is exactly 1 - gamma alpha.
        let inst = MilpInstance::new(
            vec![BlockSet::new(vec![-100.0; 2], vec![100.0; 2], vec![false; 2]).unwrap()],
            vec![1.0, -2.0],
            Matrix::from_rows(&[vec![1.0, 1.0]], 2).unwrap(),
            vec![1000.0],
        )
        .unwrap();
        let rel =
            RelaxedInstance::new(inst, Kappa::new(0.5, 0.1).unwrap(), vec![0.0, 0.0]).unwrap();
        let est = estimate_theta(&rel, 0.4, &[vec![0.0], vec![1.0]]).unwrap();
        assert!((est.observed_rate - 0.8).abs() < 1e-6);
        assert!((est.theta - 0.2 / 0.8).abs() < 1e-5);
        assert!(matches!(
            estimate_theta(&rel, 5.0, &[vec![0.0]]),
            Err(AnalysisError::GammaUnstable { .. })
        ));
        let (g, _) = stabilize_gamma(&rel, 5.0, &[vec![0.0]], 10).unwrap();
        assert!(g <= 2.5 && g * 0.5 < 4.0);
    }

    #[test]
    fn monotonicity_trivial_and_random() {
        let rel = toy_relaxed(0.3, 0.1);
        let a_norm = 2f64.sqrt();
        let r = check_monotonicity(&rel, a_norm, &[1.0], &[1.0]);
        assert_eq!(r.monotone_lhs, 0.0);
        assert_eq!(r.lipschitz_rhs, 0.0);
        assert!(r.holds());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let l1 = [rng.random_range(0.0..4.0)];
            let l2 = [rng.random_range(0.0..4.0)];
            assert!(check_monotonicity(&rel, a_norm, &l1, &l2).holds());
        }
    }

    #[test]
    fn monotonicity_kernel_direction_leaves_best_response_unchanged() {
        // A^T has a kernel: both rows are equal, so moving along (1, -1) in the
        // dual changes nothing on the primal side.
        let inst = MilpInstance::new(
            vec![
                BlockSet::integer_box(1, -5.0, 5.0).unwrap(),
                BlockSet::integer_box(1, -5.0, 5.0).unwrap(),
            ],
            vec![0.3, -0.2],
            Matrix::from_rows(&[vec![1.0, 2.0], vec![1.0, 2.0]], 2).unwrap(),
            vec![100.0, 100.0],
        )
        .unwrap();
        let rel =
            RelaxedInstance::new(inst, Kappa::new(0.5, 0.1).unwrap(), vec![0.0, 0.0]).unwrap();
        let l1 = [0.7, 0.2];
        let l2 = [0.2, 0.7];
        assert_eq!(best_response(&rel, &l1), best_response(&rel, &l2));
        let rep = check_monotonicity(
            &rel,
            spectral_norm(rel.base().coupling()).unwrap(),
            &l1,
            &l2,
        );
        assert_eq!(rep.lipschitz_rhs, 0.0);
        assert!(rep.holds());
    }
}
