//! Rounding the relaxed solution back to a mixed-integer point and scoring it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::dot;
use crate::model::MilpInstance;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecoveryError {
    #[error("reference optimum is zero; relative suboptimality is undefined")]
    ZeroOptimum,
    #[error("point has length {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveredSolution {
    pub x: Vec<f64>,
    pub cost: f64,
    pub feasible_local: Vec<bool>,
    /// `A x <= b` against the original right-hand side.
    pub feasible_coupling: bool,
    /// `b - A x`
    pub coupling_slack: Vec<f64>,
    pub relative_subopt: Option<f64>,
}

impl RecoveredSolution {
    pub fn feasible(&self) -> bool {
        self.feasible_coupling && self.feasible_local.iter().all(|&b| b)
    }
}

/// Rounds every integral coordinate to the nearest integer (ties to even),
/// clamps it into its box and checks the result against the original problem.
pub fn round_solution(z: &[f64], milp: &MilpInstance) -> Result<RecoveredSolution, RecoveryError> {
    if z.len() != milp.dim() {
        return Err(RecoveryError::Dimension {
            expected: milp.dim(),
            got: z.len(),
        });
    }
    let mut x = z.to_vec();
    let mut feasible_local = Vec::with_capacity(milp.num_blocks());
    for (i, blk) in milp.blocks().iter().enumerate() {
        let range = milp.block_range(i);
        for (jj, j) in range.clone().enumerate() {
            if blk.integral()[jj] {
                let (l, u) = blk.hull_bounds(jj);
                x[j] = x[j].round_ties_even().clamp(l, u);
            }
        }
        let xs = &x[range];
        let ok = xs.iter().enumerate().all(|(jj, &v)| {
            v >= blk.lower()[jj]
                && v <= blk.upper()[jj]
                && (!blk.integral()[jj] || v.fract() == 0.0)
        });
        feasible_local.push(ok);
    }
    let ax = milp.coupling().matvec(&x);
    let coupling_slack: Vec<f64> = milp.rhs().iter().zip(&ax).map(|(b, a)| b - a).collect();
    let feasible_coupling = coupling_slack
        .iter()
        .zip(milp.rhs())
        .all(|(s, b)| *s >= -1e-9 * (1.0 + b.abs()));
    Ok(RecoveredSolution {
        cost: dot(milp.cost(), &x),
        x,
        feasible_local,
        feasible_coupling,
        coupling_slack,
        relative_subopt: None,
    })
}

/// `|c^T x - reference| / |reference|`
pub fn relative_suboptimality(
    milp: &MilpInstance,
    x: &[f64],
    reference_cost: f64,
) -> Result<f64, RecoveryError> {
    relative_gap(dot(milp.cost(), x), reference_cost)
}

pub fn relative_gap(cost: f64, reference_cost: f64) -> Result<f64, RecoveryError> {
    if reference_cost == 0.0 {
        return Err(RecoveryError::ZeroOptimum);
    }
    Ok((cost - reference_cost).abs() / reference_cost.abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::model::fixtures::toy;
    use crate::model::BlockSet;
    use proptest::prelude::*;

    #[test]
    fn toy_rounding_is_feasible() {
        let r = round_solution(&[1.4, 1.6], &toy()).unwrap();
        assert_eq!(r.x, vec![1.0, 2.0]);
        assert!(r.feasible());
        assert_eq!(r.cost, -3.0);
        assert_eq!(relative_suboptimality(&toy(), &r.x, -3.0).unwrap(), 0.0);
    }

    #[test]
    fn ties_go_to_even_and_integral_points_are_fixed() {
        let inst = MilpInstance::new(
            vec![BlockSet::new(vec![-3.0, 0.0], vec![3.0, 1.0], vec![true, false]).unwrap()],
            vec![1.0, 1.0],
            Matrix::zeros(1, 2),
            vec![0.0],
        )
        .unwrap();
        assert_eq!(
            round_solution(&[0.5, 0.5], &inst).unwrap().x,
            vec![0.0, 0.5]
        );
        assert_eq!(
            round_solution(&[1.5, 0.25], &inst).unwrap().x,
            vec![2.0, 0.25]
        );
        assert_eq!(
            round_solution(&[-2.5, 0.0], &inst).unwrap().x,
            vec![-2.0, 0.0]
        );
        assert_eq!(
            round_solution(&[2.0, 1.0], &inst).unwrap().x,
            vec![2.0, 1.0]
        );
    }

    #[test]
    fn infeasible_coupling_detected() {
        let r = round_solution(&[1.6, 1.6], &toy()).unwrap();
        assert_eq!(r.x, vec![2.0, 2.0]);
        assert!(!r.feasible_coupling);
        assert_eq!(r.coupling_slack, vec![-1.0]);
    }

    #[test]
    fn relative_gap_cases() {
        assert!((relative_gap(-1.0, -3.0).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(relative_gap(1.0, 0.0), Err(RecoveryError::ZeroOptimum));
    }

    #[test]
    fn fractional_bounds_clamp_to_admissible_integers() {
        let inst = MilpInstance::new(
            vec![BlockSet::new(vec![0.2], vec![2.7], vec![true]).unwrap()],
            vec![1.0],
            Matrix::zeros(1, 1),
            vec![0.0],
        )
        .unwrap();
        assert_eq!(round_solution(&[0.2], &inst).unwrap().x, vec![1.0]);
        assert_eq!(round_solution(&[2.7], &inst).unwrap().x, vec![2.0]);
    }

    proptest! {
        #[test]
        fn rounding_moves_at_most_half_and_stays_local(a in -5.0f64..5.0, b in -5.0f64..5.0, c in -5.0f64..5.0) {
            let inst = MilpInstance::new(
                vec![BlockSet::new(vec![-5.0, -5.0], vec![5.0, 5.0], vec![true, false]).unwrap(),
                     BlockSet::integer_box(1, -5.0, 5.0).unwrap()],
                vec![1.0; 3],
                Matrix::zeros(1, 3),
                vec![0.0],
            ).unwrap();
            let r = round_solution(&[a, b, c], &inst).unwrap();
            prop_assert!(r.feasible_local.iter().all(|&v| v));
            prop_assert!((r.x[0] - a).abs() <= 0.5 && (r.x[2] - c).abs() <= 0.5);
            prop_assert_eq!(r.x[1], b);
        }
    }
}
