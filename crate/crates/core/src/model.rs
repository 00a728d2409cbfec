//! Problem data for the original constraint-coupled MILP and its tightened,
//! convexified counterpart, together with the constants derived from them:
//! the tightening vector, the radius of the primal domain, the Slater margin
//! and the bound on the dual multipliers.

use std::ops::Range;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lagrangian::Kappa;
use crate::linalg::{dot, norm, Matrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("block {block}: {reason}")]
    InvalidBlock { block: usize, reason: String },
    #[error("instance has no blocks")]
    NoBlocks,
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("point violates the box of coordinate {coord}: {value} not in [{lower}, {upper}]")]
    NotInBox {
        coord: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },
    #[error("tightened coupling constraints admit no Slater point at the supplied point (margin {margin})")]
    InfeasibleTightening { margin: f64 },
    #[error("dual bound denominator is not positive ({0}); the point is not strictly feasible")]
    NonPositiveDenominator(f64),
    #[error("invalid partition: {0}")]
    Partition(String),
}

/// Local set of one block: a box with an integrality mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawBlock")]
pub struct BlockSet {
    lower: Vec<f64>,
    upper: Vec<f64>,
    integral: Vec<bool>,
}

#[derive(Deserialize)]
struct RawBlock {
    lower: Vec<f64>,
    upper: Vec<f64>,
    integral: Vec<bool>,
}

impl TryFrom<RawBlock> for BlockSet {
    type Error = ModelError;

    fn try_from(raw: RawBlock) -> Result<Self, Self::Error> {
        BlockSet::new(raw.lower, raw.upper, raw.integral)
    }
}

impl BlockSet {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>, integral: Vec<bool>) -> Result<Self, ModelError> {
        let invalid = |reason: String| ModelError::InvalidBlock { block: 0, reason };
        if lower.len() != upper.len() || lower.len() != integral.len() {
            return Err(invalid(format!(
                "lower/upper/integral lengths differ ({}, {}, {})",
                lower.len(),
                upper.len(),
                integral.len()
            )));
        }
        if lower.is_empty() {
            return Err(invalid("block has no coordinates".into()));
        }
        for j in 0..lower.len() {
            let (l, u) = (lower[j], upper[j]);
            if !l.is_finite() || !u.is_finite() {
                return Err(invalid(format!("coordinate {j} has a non-finite bound")));
            }
            if l > u {
                return Err(invalid(format!("coordinate {j} has lower {l} > upper {u}")));
            }
            if integral[j] && l.ceil() > u.floor() {
                return Err(invalid(format!(
                    "integral coordinate {j} has no integer in [{l}, {u}]"
                )));
            }
        }
        Ok(Self {
            lower,
            upper,
            integral,
        })
    }

    /// Pure-integer box `[lower, upper]^dim`.
    pub fn integer_box(dim: usize, lower: f64, upper: f64) -> Result<Self, ModelError> {
        Self::new(vec![lower; dim], vec![upper; dim], vec![true; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn integral(&self) -> &[bool] {
        &self.integral
    }

    pub fn is_pure_integer(&self) -> bool {
        self.integral.iter().all(|&b| b)
    }

    /// Bounds of the convex hull along coordinate `j`: integral coordinates are
    /// snapped inward to the nearest admissible integers.
    #[inline]
    pub fn hull_bounds(&self, j: usize) -> (f64, f64) {
        if self.integral[j] {
            (self.lower[j].ceil(), self.upper[j].floor())
        } else {
            (self.lower[j], self.upper[j])
        }
    }

    /// Whether `x` lies in the hull box (integrality ignored).
    pub fn hull_contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x.iter().enumerate().all(|(j, &v)| {
                let (l, u) = self.hull_bounds(j);
                l <= v && v <= u
            })
    }

    /// Range of the linear functional `w^T x` over the block's mixed-integer set.
    pub fn linear_range(&self, w: &[f64]) -> f64 {
        w.iter()
            .enumerate()
            .map(|(j, &wj)| {
                let (l, u) = self.hull_bounds(j);
                wj.abs() * (u - l)
            })
            .sum()
    }
}

/// The original constraint-coupled MILP: minimize `c^T x` subject to
/// `A x <= b` and `x_l in X_l` for every block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawInstance", into = "RawInstance")]
pub struct MilpInstance {
    blocks: Vec<BlockSet>,
    offsets: Vec<usize>,
    c: Vec<f64>,
    a: Matrix,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawInstance {
    blocks: Vec<BlockSet>,
    c: Vec<f64>,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl TryFrom<RawInstance> for MilpInstance {
    type Error = ModelError;

    fn try_from(raw: RawInstance) -> Result<Self, Self::Error> {
        let cols = raw.c.len();
        let a = Matrix::from_rows(&raw.a, cols).ok_or_else(|| {
            let bad = raw.a.iter().find(|r| r.len() != cols).map_or(0, Vec::len);
            ModelError::Dimension {
                what: "coupling matrix row",
                expected: cols,
                got: bad,
            }
        })?;
        MilpInstance::new(raw.blocks, raw.c, a, raw.b)
    }
}

impl From<MilpInstance> for RawInstance {
    fn from(m: MilpInstance) -> Self {
        RawInstance {
            a: m.a.to_rows(),
            blocks: m.blocks,
            c: m.c,
            b: m.b,
        }
    }
}

impl MilpInstance {
    pub fn new(
        blocks: Vec<BlockSet>,
        c: Vec<f64>,
        a: Matrix,
        b: Vec<f64>,
    ) -> Result<Self, ModelError> {
        if blocks.is_empty() {
            return Err(ModelError::NoBlocks);
        }
        let mut offsets = Vec::with_capacity(blocks.len() + 1);
        let mut total = 0;
        offsets.push(0);
        for blk in &blocks {
            total += blk.dim();
            offsets.push(total);
        }
        if c.len() != total {
            return Err(ModelError::Dimension {
                what: "cost vector",
                expected: total,
                got: c.len(),
            });
        }
        if a.cols() != total {
            return Err(ModelError::Dimension {
                what: "coupling matrix columns",
                expected: total,
                got: a.cols(),
            });
        }
        if a.rows() != b.len() {
            return Err(ModelError::Dimension {
                what: "right-hand side",
                expected: a.rows(),
                got: b.len(),
            });
        }
        if !crate::linalg::all_finite(&c) {
            return Err(ModelError::NonFinite("cost vector"));
        }
        if !crate::linalg::all_finite(&b) {
            return Err(ModelError::NonFinite("right-hand side"));
        }
        if (0..a.rows()).any(|r| !crate::linalg::all_finite(a.row(r))) {
            return Err(ModelError::NonFinite("coupling matrix"));
        }
        Ok(Self {
            blocks,
            offsets,
            c,
            a,
            b,
        })
    }

    pub fn blocks(&self) -> &[BlockSet] {
        &self.blocks
    }

    pub fn block(&self, i: usize) -> &BlockSet {
        &self.blocks[i]
    }

    /// Number of blocks `m`.
    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Number of coupling constraints `y`.
    pub fn num_constraints(&self) -> usize {
        self.b.len()
    }

    /// Total primal dimension.
    pub fn dim(&self) -> usize {
        self.c.len()
    }

    /// Column range of block `i` inside the full primal vector.
    pub fn block_range(&self, i: usize) -> Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn cost(&self) -> &[f64] {
        &self.c
    }

    pub fn coupling(&self) -> &Matrix {
        &self.a
    }

    pub fn rhs(&self) -> &[f64] {
        &self.b
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        dot(&self.c, x)
    }

    /// Index of the block owning primal coordinate `col`.
    pub fn block_of(&self, col: usize) -> usize {
        self.offsets.partition_point(|&o| o <= col) - 1
    }

    /// Hull bounds of every coordinate of the full primal vector.
    pub fn hull_bounds(&self) -> Vec<(f64, f64)> {
        self.blocks
            .iter()
            .flat_map(|b| (0..b.dim()).map(move |j| b.hull_bounds(j)))
            .collect()
    }

    /// Checks that `z` lies in the product of the hull boxes.
    pub fn check_in_domain(&self, z: &[f64]) -> Result<(), ModelError> {
        if z.len() != self.dim() {
            return Err(ModelError::Dimension {
                what: "primal point",
                expected: self.dim(),
                got: z.len(),
            });
        }
        for (coord, (&v, (l, u))) in z.iter().zip(self.hull_bounds()).enumerate() {
            if !(l <= v && v <= u) {
                return Err(ModelError::NotInBox {
                    coord,
                    value: v,
                    lower: l,
                    upper: u,
                });
            }
        }
        Ok(())
    }
}

/// Tightening vector: for each coupling row, `y` times the largest spread of
/// that row's contribution over any single block's local set.
pub fn compute_rho(instance: &MilpInstance) -> Vec<f64> {
    let y = instance.num_constraints() as f64;
    let a = instance.coupling();
    (0..instance.num_constraints())
        .map(|row| {
            let coeffs = a.row(row);
            let spread = instance
                .blocks()
                .iter()
                .enumerate()
                .map(|(i, blk)| blk.linear_range(&coeffs[instance.block_range(i)]))
                .fold(0.0_f64, f64::max);
            y * spread
        })
        .collect()
}

/// Radius of the smallest origin-centred ball containing the primal domain.
pub fn compute_radius(instance: &MilpInstance) -> f64 {
    instance
        .hull_bounds()
        .into_iter()
        .map(|(l, u)| {
            let m = l.abs().max(u.abs());
            m * m
        })
        .sum::<f64>()
        .sqrt()
}

/// Slater margin `min_j (b_j - rho_j - A_j z)`; positive iff `z` is strictly
/// feasible for the tightened coupling constraints.
pub fn validate_slater(instance: &MilpInstance, rho: &[f64], z: &[f64]) -> Result<f64, ModelError> {
    instance.check_in_domain(z)?;
    if rho.len() != instance.num_constraints() {
        return Err(ModelError::Dimension {
            what: "tightening vector",
            expected: instance.num_constraints(),
            got: rho.len(),
        });
    }
    let az = instance.coupling().matvec(z);
    Ok(instance
        .rhs()
        .iter()
        .zip(rho)
        .zip(&az)
        .map(|((b, r), a)| b - r - a)
        .fold(f64::INFINITY, f64::min))
}

/// Bound on the l1 norm of the regularized dual optimum, evaluated at the
/// Slater point `zbar`. Note the numerator carries `+ ||c|| r`, the lower
/// bound on `-min_z c^T z` over the ball of radius `r`.
pub fn dual_bound_at(
    instance: &MilpInstance,
    rho: &[f64],
    zbar: &[f64],
    radius: f64,
    alpha: f64,
) -> Result<f64, ModelError> {
    let denom = validate_slater(instance, rho, zbar)?;
    if !(denom > 0.0) {
        return Err(ModelError::NonPositiveDenominator(denom));
    }
    let zn = norm(zbar);
    let numer = instance.objective(zbar) + 0.5 * alpha * zn * zn + norm(instance.cost()) * radius;
    Ok(numer / denom)
}

/// The tightened, convexified problem plus the regularization weights and the
/// derived constants used by the solver and the analysis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelaxedInstance {
    base: MilpInstance,
    rho: Vec<f64>,
    tightened_rhs: Vec<f64>,
    slater_point: Vec<f64>,
    slater_margin: f64,
    radius: f64,
    kappa: Kappa,
    dual_bound: f64,
}

impl RelaxedInstance {
    pub fn new(
        base: MilpInstance,
        kappa: Kappa,
        slater_point: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let rho = compute_rho(&base);
        Self::with_rho(base, kappa, slater_point, rho)
    }

    /// Same as [`RelaxedInstance::new`] with a caller-chosen tightening vector.
    pub fn with_rho(
        base: MilpInstance,
        kappa: Kappa,
        slater_point: Vec<f64>,
        rho: Vec<f64>,
    ) -> Result<Self, ModelError> {
        if rho.iter().any(|&r| !(r >= 0.0)) {
            return Err(ModelError::NonFinite("tightening vector (must be >= 0)"));
        }
        let radius = compute_radius(&base);
        let margin = validate_slater(&base, &rho, &slater_point)?;
        if !(margin > 0.0) {
            return Err(ModelError::InfeasibleTightening { margin });
        }
        let dual_bound = dual_bound_at(&base, &rho, &slater_point, radius, kappa.alpha())?;
        let tightened_rhs = base.rhs().iter().zip(&rho).map(|(b, r)| b - r).collect();
        Ok(Self {
            base,
            rho,
            tightened_rhs,
            slater_point,
            slater_margin: margin,
            radius,
            kappa,
            dual_bound,
        })
    }

    pub fn base(&self) -> &MilpInstance {
        &self.base
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    /// `b - rho`
    pub fn tightened_rhs(&self) -> &[f64] {
        &self.tightened_rhs
    }

    pub fn slater_point(&self) -> &[f64] {
        &self.slater_point
    }

    pub fn slater_margin(&self) -> f64 {
        self.slater_margin
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn kappa(&self) -> Kappa {
        self.kappa
    }

    /// Shared l1 radius `Lambda` of every dual block.
    pub fn dual_bound(&self) -> f64 {
        self.dual_bound
    }

    /// Constraint function of the tightened problem, `g(z) = A z - b + rho`.
    pub fn constraint_value(&self, z: &[f64]) -> Vec<f64> {
        let mut g = self.base.coupling().matvec(z);
        for (gi, bt) in g.iter_mut().zip(&self.tightened_rhs) {
            *gi -= bt;
        }
        g
    }
}

/// Assignment of primal blocks and dual rows to agents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockPartition {
    primal: Vec<Range<usize>>,
    dual: Vec<Range<usize>>,
}

impl BlockPartition {
    /// One primal agent per block; the `y` dual rows are split into
    /// `dual_agents` contiguous blocks whose sizes differ by at most one.
    pub fn new(instance: &MilpInstance, dual_agents: usize) -> Result<Self, ModelError> {
        let y = instance.num_constraints();
        if y > 0 && (dual_agents == 0 || dual_agents > y) {
            return Err(ModelError::Partition(format!(
                "{dual_agents} dual agents cannot own {y} dual rows"
            )));
        }
        if y == 0 && dual_agents != 0 {
            return Err(ModelError::Partition(
                "no coupling rows, but dual agents requested".into(),
            ));
        }
        let primal = (0..instance.num_blocks())
            .map(|i| instance.block_range(i))
            .collect();
        let mut dual = Vec::with_capacity(dual_agents);
        let mut start = 0;
        for q in 0..dual_agents {
            let size = y / dual_agents + usize::from(q < y % dual_agents);
            dual.push(start..start + size);
            start += size;
        }
        Ok(Self { primal, dual })
    }

    /// Builds a partition from explicit ranges, checking they tile both spaces.
    pub fn from_ranges(
        instance: &MilpInstance,
        primal: Vec<Range<usize>>,
        dual: Vec<Range<usize>>,
    ) -> Result<Self, ModelError> {
        let tiles = |ranges: &[Range<usize>], total: usize| {
            let mut next = 0;
            for r in ranges {
                if r.start != next || r.end <= r.start {
                    return false;
                }
                next = r.end;
            }
            next == total
        };
        if !tiles(&primal, instance.dim()) || primal.len() != instance.num_blocks() {
            return Err(ModelError::Partition(
                "primal ranges do not tile the blocks".into(),
            ));
        }
        if primal
            .iter()
            .enumerate()
            .any(|(i, r)| *r != instance.block_range(i))
        {
            return Err(ModelError::Partition(
                "primal ranges must follow block boundaries".into(),
            ));
        }
        if !tiles(&dual, instance.num_constraints()) {
            return Err(ModelError::Partition(
                "dual ranges do not tile the rows".into(),
            ));
        }
        Ok(Self { primal, dual })
    }

    pub fn primal(&self) -> &[Range<usize>] {
        &self.primal
    }

    pub fn dual(&self) -> &[Range<usize>] {
        &self.dual
    }

    pub fn num_primal_agents(&self) -> usize {
        self.primal.len()
    }

    pub fn num_dual_agents(&self) -> usize {
        self.dual.len()
    }
}

/// Instance document as stored on disk: the MILP plus an optional Slater point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceFile {
    #[serde(flatten)]
    pub instance: MilpInstance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slater_point: Option<Vec<f64>>,
}
