//! ADMM solver for the group-sparse rate allocation problem
//!
//! ```text
//! minimize_R  sum_g w_g ||r_g||_inf
//! s.t.        R 1 = r_min 1,  0 <= R <= C
//! ```
//!
//! written in epigraph form with slacks `s_g >= r_g` and split as
//! `X = [R; s]`, `Z = R`. Each iteration solves one scalar root-finding
//! problem per column (X-step) and one per row (Z-step), followed by the
//! scaled dual update `U <- U + R - Z`.
//!
//! Internally every rate is divided by `r_min`, so the iteration runs with
//! `r_min = 1` and `rho` is interpreted on that scale. States passed in and
//! out are in the caller's units.

use serde::{Deserialize, Serialize};

use crate::channel::CapacityMatrix;
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::matrix::DenseMatrix;

/// Below this many matrix entries a parallel request runs sequentially; the
/// per-iteration fork/join would dominate.
const PARALLEL_MIN_ENTRIES: usize = 1 << 14;

const BISECTION_MAX_STEPS: usize = 2000;

/// Finds `x` in `[lo, hi]` with `f(x) = target` for nonincreasing `f`, given
/// `f(lo) >= target >= f(hi)`. Bisects until the bracket cannot shrink further
/// in floating point.
pub(crate) fn bisect_nonincreasing(mut lo: f64, mut hi: f64, target: f64, f: impl Fn(f64) -> f64) -> f64 {
    for _ in 0..BISECTION_MAX_STEPS {
        let mid = lo + 0.5 * (hi - lo);
        if !(mid > lo && mid < hi) {
            break;
        }
        if f(mid) >= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    if (f(lo) - target).abs() <= (f(hi) - target).abs() {
        lo
    } else {
        hi
    }
}

/// `F(s) = sum_m max(v_m - s, 0)`, the X-step root function.
pub fn x_step_residual_fn(v: &[f64], s: f64) -> f64 {
    v.iter().map(|&x| (x - s).max(0.0)).sum()
}

/// Bracket `[min(v) - w/(M rho), max(v) - w/(M rho)]` containing the X-step root,
/// where `v = z - u`.
pub fn x_step_bracket(v: &[f64], w: f64, rho: f64) -> (f64, f64) {
    let shift = w / (v.len() as f64 * rho);
    let (lo, hi) = v
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    (lo - shift, hi - shift)
}

/// X-step on one column, in place: `v` holds `z_g - u_g` on entry and `r_g`
/// on exit. Returns the slack `s_g`.
///
/// With `w = 0` the slack constraint is inactive, `r_g = z_g - u_g` and the
/// returned slack is `max(r_g)`.
pub(crate) fn x_step_in_place(v: &mut [f64], w: f64, rho: f64) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    if w == 0.0 {
        return v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    }
    let target = w / rho;
    let (lo, hi) = x_step_bracket(v, w, rho);
    let s = bisect_nonincreasing(lo, hi, target, |s| x_step_residual_fn(v, s));
    v.iter_mut().for_each(|x| *x = x.min(s));
    s
}

/// Solves the per-column X-step: returns `(r_g, s_g)` with
/// `r_g = min(z_g - u_g, s_g 1)` and `s_g` the root of
/// `1^T max(z_g - u_g - s 1, 0) = w_g / rho`.
pub fn x_step_column(z_col: &[f64], u_col: &[f64], w: f64, rho: f64) -> (Vec<f64>, f64) {
    assert_eq!(z_col.len(), u_col.len());
    assert!(rho > 0.0, "rho must be positive");
    assert!(w >= 0.0, "weights must be nonnegative");
    let mut v: Vec<f64> = z_col.iter().zip(u_col).map(|(z, u)| z - u).collect();
    let s = x_step_in_place(&mut v, w, rho);
    (v, s)
}

/// `G(lambda) = sum_g max(0, min(c_g, a_g - lambda))`, the Z-step root function,
/// with `a = r + u`.
pub fn z_step_residual_fn(a: &[f64], c: &[f64], lambda: f64) -> f64 {
    a.iter().zip(c).map(|(&a, &c)| (a - lambda).min(c).max(0.0)).sum()
}

/// Bracket for the Z-step root with `a = r + u`:
/// `lo = min_g(a_g - c_g)` and `hi = max{a_g : c_g > r_min/G} - r_min/G`.
///
/// Returns `None` when no entry exceeds `r_min / G`.
pub fn z_step_bracket(a: &[f64], c: &[f64], r_min: f64) -> Option<(f64, f64)> {
    let level = r_min / a.len() as f64;
    let lo = a.iter().zip(c).map(|(a, c)| a - c).fold(f64::INFINITY, f64::min);
    let hi = a
        .iter()
        .zip(c)
        .filter(|(_, &c)| c > level)
        .map(|(&a, _)| a)
        .fold(f64::NEG_INFINITY, f64::max);
    if hi == f64::NEG_INFINITY {
        None
    } else {
        Some((lo, hi - level))
    }
}

/// Z-step on one row, in place: `a` holds `r_m + u_m` on entry and `z_m` on
/// exit. Returns the multiplier `lambda`, or `None` when `1^T c < r_min`.
pub(crate) fn z_step_in_place(a: &mut [f64], c: &[f64], r_min: f64) -> Option<f64> {
    let total: f64 = c.iter().sum();
    if total < r_min {
        return None;
    }
    let bracket = z_step_bracket(a, c, r_min);
    let (lo, hi) = match bracket {
        Some(b) if total > r_min => b,
        // only the full-capacity row is feasible
        _ => {
            let lambda = a.iter().zip(c).map(|(a, c)| a - c).fold(f64::INFINITY, f64::min);
            a.copy_from_slice(c);
            return Some(lambda);
        }
    };
    let lambda = bisect_nonincreasing(lo, hi, r_min, |l| z_step_residual_fn(a, c, l));
    a.iter_mut().zip(c).for_each(|(x, &c)| *x = (*x - lambda).min(c).max(0.0));
    Some(lambda)
}

/// Solves the per-row Z-step, the projection of `r_m + u_m` onto
/// `{z : 1^T z = r_min, 0 <= z <= c_m}`.
///
/// `user` only labels the error when `1^T c_m < r_min`.
pub fn z_step_row(user: usize, r_row: &[f64], u_row: &[f64], c_row: &[f64], r_min: f64) -> Result<Vec<f64>> {
    assert_eq!(r_row.len(), u_row.len());
    assert_eq!(r_row.len(), c_row.len());
    let mut a: Vec<f64> = r_row.iter().zip(u_row).map(|(r, u)| r + u).collect();
    match z_step_in_place(&mut a, c_row, r_min) {
        Some(_) => Ok(a),
        None => Err(Error::Infeasible { users: vec![user] }),
    }
}

/// Iteration controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdmmConfig {
    /// Step size on the `r_min = 1` scale.
    pub rho: f64,
    /// Absolute tolerance as a fraction of `r_min`.
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    pub exec: Execution,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        AdmmConfig { rho: 1.0, eps_abs: 1e-6, eps_rel: 1e-4, max_iter: 10_000, exec: Execution::Parallel }
    }
}

/// Iterates of the solver, in the caller's rate units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmmState {
    pub r: DenseMatrix,
    pub z: DenseMatrix,
    /// Scaled duals.
    pub u: DenseMatrix,
    /// Per-column slacks from the last X-step.
    pub s: Vec<f64>,
    pub w: Vec<f64>,
    pub rho: f64,
    /// Iterations performed so far.
    pub k: usize,
}

/// One row of the convergence trace. Residuals and objective are in the
/// caller's rate units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub primal: f64,
    pub dual: f64,
    /// `sum_g w_g max_m Z[m, g]`.
    pub objective: f64,
    /// `max_m |sum_g Z[m, g] - r_min| / r_min` after this iteration's Z-step.
    pub row_sum_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmOutput {
    pub state: AdmmState,
    pub converged: bool,
    pub trace: Vec<TraceRow>,
}

impl AdmmOutput {
    pub fn objective(&self) -> f64 {
        self.trace.last().map(|t| t.objective).unwrap_or(f64::NAN)
    }

    /// Largest row-sum error over all iterations.
    pub fn max_row_sum_error(&self) -> f64 {
        self.trace.iter().fold(0.0, |m, t| m.max(t.row_sum_error))
    }
}

/// `sum_g w_g max_m |A[m, g]|`.
pub fn group_objective(a: &DenseMatrix, w: &[f64]) -> f64 {
    (0..a.cols()).map(|g| w[g] * a.column_inf_norm(g)).sum()
}

/// Weights for the next reweighting round:
/// `w_g = 1 / (eps + ||r_g||_inf / r_min)`.
pub fn reweight(r: &DenseMatrix, r_min: f64, eps: f64) -> Vec<f64> {
    assert!(eps > 0.0, "reweighting eps must be positive");
    (0..r.cols())
        .map(|g| 1.0 / (eps + r.column_inf_norm(g) / r_min))
        .collect()
}

/// Runs ADMM from `warm` (or from `Z = min(C, r_min/G)`, `U = 0`) until the
/// primal and dual residuals drop below
/// `eps_abs r_min sqrt(MG) + eps_rel max(||R||, ||Z||)` or `max_iter` is hit.
pub fn admm_solve(
    c: &CapacityMatrix,
    r_min: f64,
    w: &[f64],
    cfg: &AdmmConfig,
    warm: Option<&AdmmState>,
) -> Result<AdmmOutput> {
    let (m_count, g_count) = (c.rows(), c.cols());
    if !(r_min.is_finite() && r_min > 0.0) {
        return Err(Error::InvalidInput(format!("r_min must be positive, got {r_min}")));
    }
    if !(cfg.rho.is_finite() && cfg.rho > 0.0) {
        return Err(Error::InvalidInput(format!("rho must be positive, got {}", cfg.rho)));
    }
    if w.len() != g_count || w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
        return Err(Error::InvalidInput("weights must be G nonnegative numbers".into()));
    }
    if m_count == 0 || g_count == 0 {
        return Err(Error::EmptyProblem("capacity matrix has no rows or columns".into()));
    }
    let uncovered = c.uncoverable_users(r_min);
    if !uncovered.is_empty() {
        return Err(Error::Infeasible { users: uncovered });
    }

    let inv = 1.0 / r_min;
    let cap: Vec<f64> = c.values().iter().map(|v| v * inv).collect();
    let rho = cfg.rho;
    let exec = if m_count * g_count >= PARALLEL_MIN_ENTRIES { cfg.exec } else { Execution::Sequential };

    // R is kept column-major for the X-step, with the column's slack appended;
    // Z and U are row-major.
    let stride = m_count + 1;
    let mut rt = vec![0.0; stride * g_count];
    let mut z;
    let mut u;
    let mut k0 = 0;
    match warm {
        Some(st) => {
            if st.z.rows() != m_count || st.z.cols() != g_count {
                return Err(Error::InvalidInput("warm-start state has wrong shape".into()));
            }
            z = st.z.data().iter().map(|v| v * inv).collect::<Vec<_>>();
            u = st.u.data().iter().map(|v| v * inv).collect::<Vec<_>>();
            k0 = st.k;
        }
        None => {
            let level = 1.0 / g_count as f64;
            z = cap.iter().map(|&c| c.min(level)).collect::<Vec<_>>();
            u = vec![0.0; m_count * g_count];
        }
    }

    let mut z_old = z.clone();
    let mut trace = Vec::new();
    let mut converged = false;
    let sqrt_n = ((m_count * g_count) as f64).sqrt();

    for it in 1..=cfg.max_iter {
        // X-step. Each chunk of `rt` is one column followed by its slack.
        {
            let (z, u) = (&z, &u);
            exec::for_each_chunk_mut(exec, &mut rt, stride, |g, chunk| {
                let (col, slack) = chunk.split_at_mut(m_count);
                for (m, x) in col.iter_mut().enumerate() {
                    let i = m * g_count + g;
                    *x = z[i] - u[i];
                }
                slack[0] = x_step_in_place(col, w[g], rho);
            });
        }

        // Z-step, one row per chunk of `z`.
        z_old.copy_from_slice(&z);
        {
            let (rt, u, cap) = (&rt, &u, &cap);
            exec::for_each_chunk_mut(exec, &mut z, g_count, |m, row| {
                for (g, x) in row.iter_mut().enumerate() {
                    *x = rt[g * stride + m] + u[m * g_count + g];
                }
                let c_row = &cap[m * g_count..(m + 1) * g_count];
                // rows were checked feasible above
                z_step_in_place(row, c_row, 1.0).expect("feasible row");
            });
        }

        // U-step and residuals.
        let mut primal_sq = 0.0;
        let mut dual_sq = 0.0;
        let mut r_sq = 0.0;
        let mut z_sq = 0.0;
        for m in 0..m_count {
            for g in 0..g_count {
                let i = m * g_count + g;
                let r = rt[g * stride + m];
                let diff = r - z[i];
                u[i] += diff;
                primal_sq += diff * diff;
                let dz = z[i] - z_old[i];
                dual_sq += dz * dz;
                r_sq += r * r;
                z_sq += z[i] * z[i];
            }
        }
        let primal = primal_sq.sqrt();
        let dual = rho * dual_sq.sqrt();
        let threshold = cfg.eps_abs * sqrt_n + cfg.eps_rel * r_sq.sqrt().max(z_sq.sqrt());

        let objective: f64 = (0..g_count)
            .map(|g| w[g] * (0..m_count).fold(0.0f64, |acc, m| acc.max(z[m * g_count + g])))
            .sum();
        let row_sum_error = (0..m_count)
            .map(|m| (z[m * g_count..(m + 1) * g_count].iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max);
        trace.push(TraceRow {
            iteration: k0 + it,
            primal: primal * r_min,
            dual: dual * r_min,
            objective: objective * r_min,
            row_sum_error,
        });

        if primal <= threshold && dual <= threshold {
            converged = true;
            break;
        }
    }

    let mut r = DenseMatrix::zeros(m_count, g_count);
    for m in 0..m_count {
        for g in 0..g_count {
            r.set(m, g, rt[g * stride + m] * r_min);
        }
    }
    let state = AdmmState {
        r,
        z: DenseMatrix::from_vec(m_count, g_count, z.into_iter().map(|v| v * r_min).collect()),
        u: DenseMatrix::from_vec(m_count, g_count, u.into_iter().map(|v| v * r_min).collect()),
        s: (0..g_count).map(|g| rt[g * stride + m_count] * r_min).collect(),
        w: w.to_vec(),
        rho,
        k: k0 + trace.len(),
    };
    Ok(AdmmOutput { state, converged, trace })
}
