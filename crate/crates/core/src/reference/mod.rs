//! Reference solvers used to validate the ADMM placement path: exhaustive
//! search for the minimum ABS count, the exact epigraph LP of the relaxed
//! problem, and a reweighted LP over per-position activation levels.

pub mod simplex;

pub use simplex::{LpProblem, LpSolution, GAP_TOL};

use crate::channel::CapacityMatrix;
use crate::error::{Error, Result};
use crate::matrix::DenseMatrix;
use crate::placement::{is_cover, round_and_repair};

/// Largest column count accepted by [`exhaustive_min_abs`].
pub const EXHAUSTIVE_MAX_COLUMNS: usize = 25;

#[derive(Debug, Clone, PartialEq)]
pub struct ExhaustiveResult {
    pub count: usize,
    /// Lexicographically first cover of minimum size, ascending.
    pub subset: Vec<usize>,
}

fn check_feasible(c: &CapacityMatrix, r_min: f64) -> Result<()> {
    if !(r_min.is_finite() && r_min > 0.0) {
        return Err(Error::InvalidInput(format!("r_min must be positive, got {r_min}")));
    }
    if c.rows() == 0 || c.cols() == 0 {
        return Err(Error::EmptyProblem("capacity matrix has no rows or columns".into()));
    }
    let uncovered = c.uncoverable_users(r_min);
    if !uncovered.is_empty() {
        return Err(Error::Infeasible { users: uncovered });
    }
    Ok(())
}

/// Smallest number of columns whose sum reaches `r_min` on every row.
///
/// Subsets are enumerated as lexicographic combinations of increasing size,
/// so the returned witness is the first cover in that order.
pub fn exhaustive_min_abs(c: &CapacityMatrix, r_min: f64) -> Result<ExhaustiveResult> {
    let g = c.cols();
    if g > EXHAUSTIVE_MAX_COLUMNS {
        return Err(Error::Guard { size: g, limit: EXHAUSTIVE_MAX_COLUMNS });
    }
    check_feasible(c, r_min)?;
    for k in 1..=g {
        let mut idx: Vec<usize> = (0..k).collect();
        loop {
            if is_cover(c, &idx, r_min) {
                return Ok(ExhaustiveResult { count: k, subset: idx });
            }
            // advance to the next combination
            let Some(i) = (0..k).rev().find(|&i| idx[i] < g - k + i) else {
                break;
            };
            idx[i] += 1;
            for j in i + 1..k {
                idx[j] = idx[j - 1] + 1;
            }
        }
    }
    unreachable!("the full set covers every user")
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpigraphSolution {
    /// `w^T s` in rate units.
    pub objective: f64,
    pub r: DenseMatrix,
    pub s: Vec<f64>,
    /// Certified duality gap, in rate units.
    pub gap: f64,
}

/// Exact optimum of
///
/// ```text
/// minimize  w^T s
/// s.t.      R 1 = r_min 1,  0 <= R <= C,  R[:, g] <= s_g 1
/// ```
///
/// Rates are divided by `r_min` before solving.
pub fn solve_epigraph_lp(c: &CapacityMatrix, r_min: f64, w: &[f64]) -> Result<EpigraphSolution> {
    check_feasible(c, r_min)?;
    let (m_count, g_count) = (c.rows(), c.cols());
    if w.len() != g_count || w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::InvalidInput("weights must be G nonnegative numbers".into()));
    }
    let n_r = m_count * g_count;
    let n = n_r + g_count;
    let mut obj = vec![0.0; n];
    obj[n_r..].copy_from_slice(w);
    let mut lp = LpProblem::new(obj);
    for m in 0..m_count {
        let mut row = vec![0.0; n];
        row[m * g_count..(m + 1) * g_count].fill(1.0);
        lp.add_eq(row, 1.0);
    }
    for m in 0..m_count {
        for g in 0..g_count {
            let mut row = vec![0.0; n];
            row[m * g_count + g] = 1.0;
            row[n_r + g] = -1.0;
            lp.add_le(row, 0.0);
            lp.upper[m * g_count + g] = c.get(m, g) / r_min;
        }
    }
    let sol = lp.solve()?;
    let r = DenseMatrix::from_vec(m_count, g_count, sol.x[..n_r].iter().map(|v| v * r_min).collect());
    let s = sol.x[n_r..].iter().map(|v| v * r_min).collect();
    Ok(EpigraphSolution { objective: sol.objective * r_min, r, s, gap: sol.gap * r_min })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaLpResult {
    /// Activation levels from the last LP, in `[0, 1]`.
    pub alpha: Vec<f64>,
    /// Repaired and pruned selection, ascending.
    pub selected: Vec<usize>,
    /// LP optimum of every round.
    pub objective_trace: Vec<f64>,
    /// Largest certified duality gap over the rounds.
    pub max_gap: f64,
}

/// Reweighted LP relaxation over activations `alpha in [0, 1]^G`:
///
/// ```text
/// minimize  w^T alpha   s.t.  C alpha >= r_min 1
/// ```
///
/// The first round uses `w = 1`; later rounds use `w_g = 1 / (eps + alpha_g)`.
/// Columns with `alpha_g > tau` seed the selection, which is then repaired and
/// pruned with [`round_and_repair`].
pub fn solve_alpha_lp(c: &CapacityMatrix, r_min: f64, rounds: usize, eps: f64, tau: f64) -> Result<AlphaLpResult> {
    check_feasible(c, r_min)?;
    if rounds == 0 {
        return Err(Error::InvalidInput("rounds must be at least 1".into()));
    }
    if eps.is_nan() || eps <= 0.0 {
        return Err(Error::InvalidInput("eps must be positive".into()));
    }
    let g_count = c.cols();
    let mut w = vec![1.0; g_count];
    let mut alpha = vec![0.0; g_count];
    let mut objective_trace = Vec::with_capacity(rounds);
    let mut max_gap = 0.0f64;
    for round in 0..rounds {
        let mut lp = LpProblem::new(w.clone());
        for m in 0..c.rows() {
            lp.add_le(c.row(m).iter().map(|v| -v / r_min).collect(), -1.0);
        }
        lp.upper = vec![1.0; g_count];
        let sol = lp.solve()?;
        objective_trace.push(sol.objective);
        max_gap = max_gap.max(sol.gap);
        alpha = sol.x;
        if round + 1 < rounds {
            w = alpha.iter().map(|a| 1.0 / (eps + a)).collect();
        }
    }
    let selected = round_and_repair(c, r_min, &alpha, tau)?;
    Ok(AlphaLpResult { alpha, selected, objective_trace, max_gap })
}
