//! Minimum-count ABS placement on a flight grid.
//!
//! The combinatorial problem "pick the fewest grid points whose summed
//! capacities give every user at least `r_min`" is relaxed to a reweighted
//! group-sparse rate allocation solved with ADMM ([`admm`]). Grid points that
//! carry a non-negligible rate column become ABS positions; the selection is
//! then repaired and pruned greedily against the actual capacities.

pub mod admm;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::channel::{prune_zero_columns, CapacityMatrix};
use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::matrix::DenseMatrix;

pub use admm::{
    admm_solve, group_objective, reweight, x_step_bracket, x_step_column, x_step_residual_fn,
    z_step_bracket, z_step_residual_fn, z_step_row, AdmmConfig, AdmmOutput, AdmmState, TraceRow,
};

/// Which iterate the selection is read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractFrom {
    /// `R`, which satisfies the slack bounds.
    #[default]
    Rates,
    /// `Z`, which satisfies the row sums and capacity bounds exactly.
    Auxiliary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlacementConfig {
    pub admm: AdmmConfig,
    /// Total ADMM solves: one with uniform weights, then one per reweighting.
    pub reweight_rounds: usize,
    pub reweight_eps: f64,
    /// A column counts as an ABS when `||r_g||_inf > threshold * r_min`.
    pub threshold: f64,
    pub extract_from: ExtractFrom,
}

impl Default for PlacementConfig {
    fn default() -> Self {
        PlacementConfig {
            admm: AdmmConfig::default(),
            reweight_rounds: 4,
            reweight_eps: 1e-3,
            threshold: 1e-3,
            extract_from: ExtractFrom::Rates,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlacementResult {
    /// Selected grid indices (columns of the input matrix), ascending.
    pub selected: Vec<usize>,
    pub positions: Vec<Point3>,
    /// `sum_{g in selected} C[m, g]` per user, bits/s.
    pub user_rates: Vec<f64>,
    pub feasible: bool,
    /// Final ADMM objective of each reweighting round.
    pub objective_trace: Vec<f64>,
    /// ADMM iterations summed over rounds.
    pub iterations: usize,
    /// Whether the last round met its tolerances.
    pub converged: bool,
    /// Per-iteration residuals over all rounds.
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

impl PlacementResult {
    pub fn count(&self) -> usize {
        self.selected.len()
    }

    /// Writes the residual trace as CSV `iteration,primal,dual,objective`.
    pub fn write_trace_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["iteration", "primal", "dual", "objective"])?;
        for t in &self.trace {
            wtr.write_record(&[
                t.iteration.to_string(),
                t.primal.to_string(),
                t.dual.to_string(),
                t.objective.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// True when the columns in `set` give every user at least `r_min`.
pub fn is_cover(c: &CapacityMatrix, set: &[usize], r_min: f64) -> bool {
    (0..c.rows()).all(|m| set.iter().map(|&g| c.get(m, g)).sum::<f64>() >= r_min)
}

/// Scores closer than this fraction of `r_min` count as equal when ordering
/// columns, so round-off from a different column order cannot flip a tie.
const SCORE_RESOLUTION: f64 = 1e-9;

/// Orders columns by quantized score, then total capacity, then capacities
/// row by row. Only columns that agree on all three fall back to the index.
fn compare_strength(c: &CapacityMatrix, r_min: f64, scores: &[f64], a: usize, b: usize) -> Ordering {
    let q = |g: usize| (scores[g] / (r_min * SCORE_RESOLUTION)).round();
    let total = |g: usize| (0..c.rows()).map(|m| c.get(m, g)).sum::<f64>();
    q(a).total_cmp(&q(b))
        .then_with(|| total(a).total_cmp(&total(b)))
        .then_with(|| {
            (0..c.rows())
                .map(|m| c.get(m, a).total_cmp(&c.get(m, b)))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

/// Turns per-column scores into a feasible, irredundant selection.
///
/// Starts from `{g : scores[g] > cutoff}` and adds the remaining columns,
/// strongest first, until every user is covered. Then visits the selection
/// weakest first and drops each column whose removal keeps the cover. Strength
/// is the score, with ties broken by capacity and finally by index (lower
/// index counts as stronger). Returns indices in ascending order.
pub fn round_and_repair(c: &CapacityMatrix, r_min: f64, scores: &[f64], cutoff: f64) -> Result<Vec<usize>> {
    assert_eq!(scores.len(), c.cols());
    let all: Vec<usize> = (0..c.cols()).collect();
    if !is_cover(c, &all, r_min) {
        return Err(Error::Infeasible { users: c.uncoverable_users(r_min) });
    }
    let stronger = |a: &usize, b: &usize| compare_strength(c, r_min, scores, *b, *a).then(a.cmp(b));
    let mut selected: Vec<usize> = all.iter().copied().filter(|&g| scores[g] > cutoff).collect();
    if !is_cover(c, &selected, r_min) {
        let mut rest: Vec<usize> = all.iter().copied().filter(|&g| scores[g] <= cutoff).collect();
        rest.sort_by(stronger);
        for g in rest {
            selected.push(g);
            if is_cover(c, &selected, r_min) {
                break;
            }
        }
    }
    let mut order = selected.clone();
    order.sort_by(stronger);
    for g in order.into_iter().rev() {
        let without: Vec<usize> = selected.iter().copied().filter(|&x| x != g).collect();
        if is_cover(c, &without, r_min) {
            selected = without;
        }
    }
    selected.sort_unstable();
    Ok(selected)
}

/// Chooses ABS positions among the columns of `c`.
///
/// Columns with all-zero capacity are dropped first. The remaining problem is
/// solved with `reweight_rounds` warm-started ADMM runs, the weights after
/// each run set to `1 / (eps + ||r_g||_inf / r_min)`. The final iterate is
/// rounded with [`round_and_repair`].
pub fn solve_placement(c: &CapacityMatrix, r_min: f64, cfg: &PlacementConfig) -> Result<PlacementResult> {
    if !(r_min.is_finite() && r_min > 0.0) {
        return Err(Error::InvalidInput(format!("r_min must be positive, got {r_min}")));
    }
    if cfg.reweight_rounds == 0 {
        return Err(Error::InvalidInput("reweight_rounds must be at least 1".into()));
    }
    if c.rows() == 0 {
        return Err(Error::EmptyProblem("no users".into()));
    }
    let uncovered = c.uncoverable_users(r_min);
    if !uncovered.is_empty() {
        return Err(Error::Infeasible { users: uncovered });
    }
    let (reduced, index_map) = prune_zero_columns(c, 0.0)?;

    let mut w = vec![1.0; reduced.cols()];
    let mut warm: Option<AdmmState> = None;
    let mut objective_trace = Vec::with_capacity(cfg.reweight_rounds);
    let mut trace = Vec::new();
    let mut converged = false;
    for round in 0..cfg.reweight_rounds {
        let out = admm_solve(&reduced, r_min, &w, &cfg.admm, warm.as_ref())?;
        objective_trace.push(out.objective());
        converged = out.converged;
        trace.extend_from_slice(&out.trace);
        if round + 1 < cfg.reweight_rounds {
            w = reweight(&out.state.r, r_min, cfg.reweight_eps);
        }
        warm = Some(out.state);
    }
    let state = warm.expect("at least one round");
    let source: &DenseMatrix = match cfg.extract_from {
        ExtractFrom::Rates => &state.r,
        ExtractFrom::Auxiliary => &state.z,
    };
    let scores: Vec<f64> = (0..source.cols()).map(|g| source.column_inf_norm(g)).collect();
    let local = round_and_repair(&reduced, r_min, &scores, cfg.threshold * r_min)?;
    let selected: Vec<usize> = local.iter().map(|&g| index_map[g]).collect();
    Ok(finish(c, r_min, selected, objective_trace, state.k, converged, trace))
}

fn finish(
    c: &CapacityMatrix,
    r_min: f64,
    selected: Vec<usize>,
    objective_trace: Vec<f64>,
    iterations: usize,
    converged: bool,
    trace: Vec<TraceRow>,
) -> PlacementResult {
    let user_rates: Vec<f64> = (0..c.rows())
        .map(|m| selected.iter().map(|&g| c.get(m, g)).sum())
        .collect();
    PlacementResult {
        feasible: user_rates.iter().all(|&r| r >= r_min),
        positions: selected.iter().map(|&g| c.grid_points()[g]).collect(),
        selected,
        user_rates,
        objective_trace,
        iterations,
        converged,
        trace,
    }
}
