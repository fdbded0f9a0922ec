//! Dense two-phase simplex with Bland's pivoting rule.
//!
//! Meant for the small problems used as references, not for speed. After the
//! tableau reports optimality the final basis is re-solved from the original
//! data with an LU factorization, which yields a primal point, a dual point and
//! the reduced costs. The solution is accepted only when both are feasible to
//! tolerance and the duality gap is below [`GAP_TOL`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest accepted `|c^T x - b^T y|`, relative to `1 + |c^T x|`.
pub const GAP_TOL: f64 = 1e-8;

const PIVOT_TOL: f64 = 1e-10;
const COST_TOL: f64 = 1e-11;
const CERT_TOL: f64 = 1e-8;
const MAX_PIVOTS: usize = 200_000;

/// `minimize c^T x  s.t.  A_eq x = b_eq,  A_ub x <= b_ub,  lower <= x <= upper`.
///
/// Lower bounds must be finite; upper bounds may be `+inf`.
#[derive(Debug, Clone, PartialEq)]
pub struct LpProblem {
    pub objective: Vec<f64>,
    pub a_eq: Vec<Vec<f64>>,
    pub b_eq: Vec<f64>,
    pub a_ub: Vec<Vec<f64>>,
    pub b_ub: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Optimal point with its certificate.
#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
    /// Dual objective of the certified basis.
    pub dual_objective: f64,
    /// `|objective - dual_objective|`.
    pub gap: f64,
    /// Most negative reduced cost, as a positive number (0 when dual feasible).
    pub dual_infeasibility: f64,
    /// Most negative basic value, as a positive number.
    pub primal_infeasibility: f64,
    pub pivots: usize,
}

impl LpProblem {
    /// Problem with `n` variables in `[0, inf)` and no constraints.
    pub fn new(objective: Vec<f64>) -> Self {
        let n = objective.len();
        LpProblem {
            objective,
            a_eq: Vec::new(),
            b_eq: Vec::new(),
            a_ub: Vec::new(),
            b_ub: Vec::new(),
            lower: vec![0.0; n],
            upper: vec![f64::INFINITY; n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn add_eq(&mut self, row: Vec<f64>, rhs: f64) {
        self.a_eq.push(row);
        self.b_eq.push(rhs);
    }

    pub fn add_le(&mut self, row: Vec<f64>, rhs: f64) {
        self.a_ub.push(row);
        self.b_ub.push(rhs);
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.num_vars();
        let bad = |msg: &str| Err(Error::InvalidInput(format!("LP: {msg}")));
        if self.a_eq.len() != self.b_eq.len() || self.a_ub.len() != self.b_ub.len() {
            return bad("row and rhs counts differ");
        }
        if self.lower.len() != n || self.upper.len() != n {
            return bad("bound vectors have the wrong length");
        }
        if self.a_eq.iter().chain(&self.a_ub).any(|r| r.len() != n) {
            return bad("constraint row has the wrong length");
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        if !finite(&self.objective)
            || !finite(&self.b_eq)
            || !finite(&self.b_ub)
            || !finite(&self.lower)
            || self.a_eq.iter().chain(&self.a_ub).any(|r| !finite(r))
        {
            return bad("non-finite data");
        }
        for j in 0..n {
            if self.upper[j].is_nan() || self.upper[j] < self.lower[j] {
                return bad("upper bound below lower bound");
            }
        }
        Ok(())
    }

    pub fn solve(&self) -> Result<LpSolution> {
        self.validate()?;
        let std = StandardForm::from_problem(self);
        let (basis, pivots) = std.simplex()?;
        let cert = std.certify(&basis)?;
        let mut x = vec![0.0; self.num_vars()];
        for (j, xj) in x.iter_mut().enumerate() {
            *xj = cert.y[j] + self.lower[j];
        }
        let objective = self.objective.iter().zip(&x).map(|(c, x)| c * x).sum::<f64>();
        let dual_objective = cert.dual_objective + std.offset;
        let gap = (objective - dual_objective).abs();
        let sol = LpSolution {
            x,
            objective,
            dual_objective,
            gap,
            dual_infeasibility: cert.dual_infeasibility,
            primal_infeasibility: cert.primal_infeasibility,
            pivots,
        };
        if gap > GAP_TOL * (1.0 + objective.abs())
            || sol.dual_infeasibility > CERT_TOL * (1.0 + std.cost_scale)
            || sol.primal_infeasibility > CERT_TOL * (1.0 + std.rhs_scale)
        {
            return Err(Error::Lp(format!(
                "certificate failed: gap {gap:e}, dual infeasibility {:e}, primal infeasibility {:e}",
                sol.dual_infeasibility, sol.primal_infeasibility
            )));
        }
        Ok(sol)
    }
}

/// `min c^T y s.t. A y = b, y >= 0` with `b >= 0`, built from an [`LpProblem`]
/// by shifting out lower bounds and adding one slack per inequality and per
/// finite upper bound.
struct StandardForm {
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
    c: Vec<f64>,
    /// Per row, a slack column with coefficient +1 usable as initial basis.
    slack_basis: Vec<Option<usize>>,
    /// `c^T lower`.
    offset: f64,
    cost_scale: f64,
    rhs_scale: f64,
}

struct Certificate {
    y: Vec<f64>,
    dual_objective: f64,
    dual_infeasibility: f64,
    primal_infeasibility: f64,
}

impl StandardForm {
    fn from_problem(p: &LpProblem) -> Self {
        let n = p.num_vars();
        let bounded: Vec<usize> = (0..n).filter(|&j| p.upper[j].is_finite()).collect();
        let n_slack = p.a_ub.len() + bounded.len();
        let width = n + n_slack;
        let shift = |row: &[f64], rhs: f64| rhs - row.iter().zip(&p.lower).map(|(a, l)| a * l).sum::<f64>();

        let mut a = Vec::new();
        let mut b = Vec::new();
        let mut slack_basis = Vec::new();
        let mut push = |mut row: Vec<f64>, mut rhs: f64, slack: Option<usize>| {
            let mut usable = slack;
            if rhs < 0.0 {
                row.iter_mut().for_each(|x| *x = -*x);
                rhs = -rhs;
                usable = None;
            }
            a.push(row);
            b.push(rhs);
            slack_basis.push(usable);
        };
        for (row, &rhs) in p.a_eq.iter().zip(&p.b_eq) {
            let mut r = row.clone();
            r.resize(width, 0.0);
            push(r, shift(row, rhs), None);
        }
        for (i, (row, &rhs)) in p.a_ub.iter().zip(&p.b_ub).enumerate() {
            let mut r = row.clone();
            r.resize(width, 0.0);
            r[n + i] = 1.0;
            push(r, shift(row, rhs), Some(n + i));
        }
        for (k, &j) in bounded.iter().enumerate() {
            let mut r = vec![0.0; width];
            r[j] = 1.0;
            let col = n + p.a_ub.len() + k;
            r[col] = 1.0;
            push(r, p.upper[j] - p.lower[j], Some(col));
        }
        let mut c = p.objective.clone();
        c.resize(width, 0.0);
        let offset = p.objective.iter().zip(&p.lower).map(|(c, l)| c * l).sum();
        let cost_scale = c.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let rhs_scale = b.iter().fold(0.0f64, |m, x: &f64| m.max(x.abs()));
        StandardForm { a, b, c, slack_basis, offset, cost_scale, rhs_scale }
    }

    /// Runs both phases; returns the optimal basis (one column per kept row,
    /// `usize::MAX` marking rows found redundant) and the pivot count.
    fn simplex(&self) -> Result<(Vec<usize>, usize)> {
        let m = self.a.len();
        let n = self.c.len();
        let artificial: Vec<usize> = (0..m).filter(|&i| self.slack_basis[i].is_none()).collect();
        let width = n + artificial.len();

        let mut t = Tableau {
            rows: self.a.iter().map(|r| {
                let mut r = r.clone();
                r.resize(width, 0.0);
                r
            }).collect(),
            rhs: self.b.clone(),
            obj: vec![0.0; width],
            obj_rhs: 0.0,
            basis: vec![0; m],
            pivots: 0,
        };
        for i in 0..m {
            if let Some(s) = self.slack_basis[i] {
                t.basis[i] = s;
            }
        }
        for (k, &i) in artificial.iter().enumerate() {
            t.rows[i][n + k] = 1.0;
            t.basis[i] = n + k;
        }

        // Phase 1: minimize the sum of artificials.
        if !artificial.is_empty() {
            for &i in &artificial {
                for j in 0..n {
                    t.obj[j] -= t.rows[i][j];
                }
                t.obj_rhs -= t.rhs[i];
            }
            t.run(width)?;
            let infeas = -t.obj_rhs;
            if infeas > 1e-9 * (1.0 + self.rhs_scale) {
                return Err(Error::Lp(format!("infeasible (phase one residual {infeas:e})")));
            }
            // Drive zero-level artificials out of the basis; rows where that is
            // impossible are linearly dependent and dropped.
            for i in 0..m {
                if t.basis[i] < n {
                    continue;
                }
                let j = (0..n)
                    .filter(|&j| t.rows[i][j].abs() > 1e-9)
                    .max_by(|&a, &b| t.rows[i][a].abs().total_cmp(&t.rows[i][b].abs()).then(b.cmp(&a)));
                match j {
                    Some(j) => t.pivot(i, j),
                    None => t.basis[i] = usize::MAX,
                }
            }
        }

        // Phase 2 on the original columns.
        t.obj = vec![0.0; width];
        t.obj[..n].copy_from_slice(&self.c);
        t.obj_rhs = 0.0;
        for i in 0..m {
            let bi = t.basis[i];
            if bi == usize::MAX {
                continue;
            }
            let cb = self.c[bi];
            if cb != 0.0 {
                for j in 0..width {
                    t.obj[j] -= cb * t.rows[i][j];
                }
                t.obj_rhs -= cb * t.rhs[i];
            }
        }
        t.run(n)?;
        Ok((t.basis, t.pivots))
    }

    fn certify(&self, basis: &[usize]) -> Result<Certificate> {
        let n = self.c.len();
        let rows: Vec<usize> = (0..basis.len()).filter(|&i| basis[i] != usize::MAX).collect();
        let k = rows.len();
        let bmat = DMatrix::from_fn(k, k, |r, c| self.a[rows[r]][basis[rows[c]]]);
        let lu = bmat.clone().lu();
        let rhs = DVector::from_iterator(k, rows.iter().map(|&i| self.b[i]));
        let xb = lu
            .solve(&rhs)
            .ok_or_else(|| Error::Lp("singular final basis".into()))?;
        let cb = DVector::from_iterator(k, rows.iter().map(|&i| self.c[basis[i]]));
        let dual = bmat
            .transpose()
            .lu()
            .solve(&cb)
            .ok_or_else(|| Error::Lp("singular final basis".into()))?;

        let mut y = vec![0.0; n];
        let mut primal_infeasibility = 0.0f64;
        for (r, &i) in rows.iter().enumerate() {
            y[basis[i]] = xb[r].max(0.0);
            primal_infeasibility = primal_infeasibility.max(-xb[r]);
        }
        let mut dual_infeasibility = 0.0f64;
        for j in 0..n {
            let aty: f64 = rows.iter().enumerate().map(|(r, &i)| self.a[i][j] * dual[r]).sum();
            dual_infeasibility = dual_infeasibility.max(aty - self.c[j]);
        }
        // dropped rows are implied by the kept ones, so their duals are zero
        let dual_objective = rows.iter().enumerate().map(|(r, &i)| self.b[i] * dual[r]).sum();
        Ok(Certificate { y, dual_objective, dual_infeasibility, primal_infeasibility })
    }
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    /// Reduced costs.
    obj: Vec<f64>,
    /// Minus the current objective value.
    obj_rhs: f64,
    basis: Vec<usize>,
    pivots: usize,
}

impl Tableau {
    fn pivot(&mut self, r: usize, e: usize) {
        let p = self.rows[r][e];
        self.rows[r].iter_mut().for_each(|x| *x /= p);
        self.rhs[r] /= p;
        let (pivot_row, pivot_rhs) = (self.rows[r].clone(), self.rhs[r]);
        for i in 0..self.rows.len() {
            if i == r {
                continue;
            }
            let f = self.rows[i][e];
            if f != 0.0 {
                for (x, p) in self.rows[i].iter_mut().zip(&pivot_row) {
                    *x -= f * p;
                }
                self.rows[i][e] = 0.0;
                self.rhs[i] -= f * pivot_rhs;
                if self.rhs[i] < 0.0 && self.rhs[i] > -1e-12 {
                    self.rhs[i] = 0.0;
                }
            }
        }
        let f = self.obj[e];
        if f != 0.0 {
            for (x, p) in self.obj.iter_mut().zip(&pivot_row) {
                *x -= f * p;
            }
            self.obj[e] = 0.0;
            self.obj_rhs -= f * pivot_rhs;
        }
        self.basis[r] = e;
        self.pivots += 1;
    }

    /// Bland's rule over columns `0..allowed`.
    fn run(&mut self, allowed: usize) -> Result<()> {
        loop {
            if self.pivots >= MAX_PIVOTS {
                return Err(Error::Lp("pivot limit reached".into()));
            }
            let Some(e) = (0..allowed).find(|&j| self.obj[j] < -COST_TOL) else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows.len() {
                if self.basis[i] == usize::MAX {
                    continue;
                }
                let a = self.rows[i][e];
                if a > PIVOT_TOL {
                    let ratio = self.rhs[i] / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((li, lr)) => {
                            if ratio < lr || (ratio == lr && self.basis[i] < self.basis[li]) {
                                Some((i, ratio))
                            } else {
                                Some((li, lr))
                            }
                        }
                    };
                }
            }
            match leave {
                Some((r, _)) => self.pivot(r, e),
                None => return Err(Error::Lp("unbounded".into())),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn textbook_max_problem() {
        // max 3x + 5y s.t. x <= 4, 2y <= 12, 3x + 2y <= 18
        let mut p = LpProblem::new(vec![-3.0, -5.0]);
        p.add_le(vec![1.0, 0.0], 4.0);
        p.add_le(vec![0.0, 2.0], 12.0);
        p.add_le(vec![3.0, 2.0], 18.0);
        let s = p.solve().unwrap();
        assert!((s.objective + 36.0).abs() < 1e-12);
        assert!((s.x[0] - 2.0).abs() < 1e-12 && (s.x[1] - 6.0).abs() < 1e-12);
        assert!(s.gap <= 1e-12);
    }

    #[test]
    fn equalities_and_bounds() {
        // min x - y s.t. x + y = 1, 0.25 <= x <= 2, y <= 0.5
        let mut p = LpProblem::new(vec![1.0, -1.0]);
        p.add_eq(vec![1.0, 1.0], 1.0);
        p.lower = vec![0.25, 0.0];
        p.upper = vec![2.0, 0.5];
        let s = p.solve().unwrap();
        assert!((s.x[0] - 0.5).abs() < 1e-12);
        assert!((s.x[1] - 0.5).abs() < 1e-12);
        assert!(s.objective.abs() < 1e-12);
    }

    #[test]
    fn redundant_equalities() {
        let mut p = LpProblem::new(vec![1.0, 2.0]);
        p.add_eq(vec![1.0, 1.0], 1.0);
        p.add_eq(vec![2.0, 2.0], 2.0);
        let s = p.solve().unwrap();
        assert!((s.objective - 1.0).abs() < 1e-12);
    }

    #[test]
    fn reports_infeasible_and_unbounded() {
        let mut p = LpProblem::new(vec![1.0]);
        p.add_eq(vec![1.0], 2.0);
        p.upper = vec![1.0];
        assert!(matches!(p.solve(), Err(Error::Lp(m)) if m.contains("infeasible")));

        let mut p = LpProblem::new(vec![-1.0, 0.0]);
        p.add_le(vec![-1.0, 1.0], 1.0);
        assert!(matches!(p.solve(), Err(Error::Lp(m)) if m.contains("unbounded")));
    }

    #[test]
    fn degenerate_cycling_example() {
        // Beale's example, which cycles under the largest-coefficient rule
        let mut p = LpProblem::new(vec![-0.75, 150.0, -0.02, 6.0]);
        p.add_le(vec![0.25, -60.0, -0.04, 9.0], 0.0);
        p.add_le(vec![0.5, -90.0, -0.02, 3.0], 0.0);
        p.add_le(vec![0.0, 0.0, 1.0, 0.0], 1.0);
        let s = p.solve().unwrap();
        assert!((s.objective + 0.05).abs() < 1e-12);
    }

    #[test]
    fn rejects_malformed() {
        let mut p = LpProblem::new(vec![1.0, 1.0]);
        p.add_le(vec![1.0], 1.0);
        assert!(matches!(p.solve(), Err(Error::InvalidInput(_))));
    }
}
