//! Synthetic urban scenarios and the Monte Carlo experiment harness.
//!
//! The city is a rectangle cut into `2S - 1` equal strips per axis. Even strips
//! are streets and odd strips hold buildings, so `S` streets per axis leave
//! `(S - 1)^2` solid buildings of common height. Ground users are drawn
//! uniformly on the streets; ABS candidates are a regular grid over the
//! altitude band with points inside buildings or no-fly boxes removed.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{build_capacity_matrix, CapacityMatrix, ChannelParams};
use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::geometry::{Box3, Point3, RegularGrid3};
use crate::placement::{solve_placement, PlacementConfig};
use crate::reference::{exhaustive_min_abs, solve_alpha_lp};
use crate::tomography::SlfField;

/// Geometry of an urban scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UrbanSpec {
    /// Extent along x and y, m.
    pub area: [f64; 2],
    pub streets_per_axis: usize,
    pub building_height: f64,
    /// SLF value inside buildings, dB/m.
    pub absorption: f64,
    /// Allowed ABS altitudes `[lo, hi]`, m.
    pub flight_band: [f64; 2],
    pub slf_dims: [usize; 3],
    pub flight_dims: [usize; 3],
    pub no_fly: Vec<Box3>,
    /// Sample users on streets only; otherwise anywhere in the area.
    pub users_on_streets: bool,
}

impl Default for UrbanSpec {
    fn default() -> Self {
        UrbanSpec {
            area: [500.0, 400.0],
            streets_per_axis: 4,
            building_height: 30.0,
            absorption: 3.0,
            flight_band: [50.0, 150.0],
            slf_dims: [12, 10, 6],
            flight_dims: [5, 5, 3],
            no_fly: Vec::new(),
            users_on_streets: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UrbanScenario {
    pub spec: UrbanSpec,
    /// Building footprints as boxes from the ground to the building height,
    /// present even when that height is zero.
    pub blocks: Vec<Box3>,
    pub slf: SlfField,
    /// Unfiltered flight grid.
    pub flight_grid: RegularGrid3,
    /// Linear indices into `flight_grid` of the allowed points.
    pub flight_indices: Vec<usize>,
    pub flight_points: Vec<Point3>,
    pub channel: ChannelParams,
}

impl UrbanSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.area.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
            return bad(format!("area must be positive, got {:?}", self.area));
        }
        if self.streets_per_axis < 2 {
            return bad(format!("need at least 2 streets per axis, got {}", self.streets_per_axis));
        }
        if !(self.building_height.is_finite() && self.building_height >= 0.0) {
            return bad(format!("building height must be >= 0, got {}", self.building_height));
        }
        if !(self.absorption.is_finite() && self.absorption >= 0.0) {
            return bad(format!("absorption must be >= 0, got {}", self.absorption));
        }
        let [lo, hi] = self.flight_band;
        if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && lo <= hi) {
            return bad(format!("flight band must satisfy 0 < lo <= hi, got {:?}", self.flight_band));
        }
        if self.flight_dims[2] > 1 && lo == hi {
            return bad("a flat flight band needs exactly one altitude layer".into());
        }
        if self.slf_dims.iter().chain(&self.flight_dims).any(|&n| n == 0) {
            return bad("grid dims must be positive".into());
        }
        Ok(())
    }

    /// Street or building strip widths along x and y.
    pub fn strip_width(&self) -> [f64; 2] {
        let n = (2 * self.streets_per_axis - 1) as f64;
        [self.area[0] / n, self.area[1] / n]
    }
}

/// Builds buildings, the SLF and the filtered flight grid.
///
/// The SLF covers `[0, Lx] x [0, Ly] x [0, top]` where `top` is the larger of
/// the building height and the flight ceiling, raised by a relative `1e-9` so
/// the ceiling lies strictly inside the voxel domain.
pub fn build_urban(spec: &UrbanSpec, channel: ChannelParams) -> Result<UrbanScenario> {
    spec.validate()?;
    channel.validate()?;
    let [lx, ly] = spec.area;
    let [wx, wy] = spec.strip_width();
    let h = spec.building_height;

    let mut blocks = Vec::new();
    for i in (1..2 * spec.streets_per_axis - 1).step_by(2) {
        for j in (1..2 * spec.streets_per_axis - 1).step_by(2) {
            blocks.push(Box3::new(
                Point3::new(i as f64 * wx, j as f64 * wy, 0.0),
                Point3::new((i + 1) as f64 * wx, (j + 1) as f64 * wy, h),
            )?);
        }
    }

    let top = spec.flight_band[1].max(h) * (1.0 + 1e-9);
    let slf_grid = RegularGrid3::covering(Point3::new(0.0, 0.0, 0.0), Point3::new(lx, ly, top), spec.slf_dims)?;
    let mut slf = SlfField::zeros(slf_grid.clone());
    if h > 0.0 {
        for (q, p) in slf_grid.points().enumerate() {
            if blocks.iter().any(|b| b.contains(p)) {
                slf.values_mut()[q] = spec.absorption;
            }
        }
    }

    let [gx, gy, gz] = spec.flight_dims;
    let [zlo, zhi] = spec.flight_band;
    let (z0, dz) = if gz == 1 { (0.5 * (zlo + zhi), 1.0) } else { (zlo, (zhi - zlo) / (gz - 1) as f64) };
    let flight_grid = RegularGrid3::new(
        Point3::new(0.5 * lx / gx as f64, 0.5 * ly / gy as f64, z0),
        [lx / gx as f64, ly / gy as f64, dz],
        spec.flight_dims,
    )?;
    let mut flight_indices = Vec::new();
    let mut flight_points = Vec::new();
    for (i, p) in flight_grid.points().enumerate() {
        let blocked = (h > 0.0 && blocks.iter().any(|b| b.contains(p))) || spec.no_fly.iter().any(|b| b.contains(p));
        if !blocked {
            flight_indices.push(i);
            flight_points.push(p);
        }
    }
    if flight_points.is_empty() {
        return Err(Error::EmptyProblem("no allowed flight-grid points".into()));
    }
    Ok(UrbanScenario { spec: spec.clone(), blocks, slf, flight_grid, flight_indices, flight_points, channel })
}

impl UrbanScenario {
    /// True when `(x, y)` is outside every building footprint.
    pub fn on_street(&self, x: f64, y: f64) -> bool {
        !self.blocks.iter().any(|b| b.contains_xy(x, y))
    }

    pub fn capacity_matrix(&self, users: &[Point3], exec: Execution) -> Result<CapacityMatrix> {
        build_capacity_matrix(&self.channel, users, &self.flight_points, &self.slf, exec)
    }
}

/// Draws `m` i.i.d. ground positions, uniform over the streets (or the whole
/// area when `users_on_streets` is off), by rejection sampling with a
/// ChaCha8 stream seeded from `seed`.
pub fn sample_users(scenario: &UrbanScenario, m: usize, seed: u64) -> Result<Vec<Point3>> {
    if m == 0 {
        return Err(Error::InvalidInput("need at least one user".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [lx, ly] = scenario.spec.area;
    let grid = scenario.slf.grid();
    let mut users = Vec::with_capacity(m);
    while users.len() < m {
        let p = Point3::new(rng.random_range(0.0..lx), rng.random_range(0.0..ly), 0.0);
        if scenario.spec.users_on_streets && !scenario.on_street(p.x, p.y) {
            continue;
        }
        if grid.in_voxel_domain(p) {
            users.push(p);
        }
    }
    Ok(users)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVar {
    NumUsers,
    BuildingHeight,
    MinRate,
}

impl SweepVar {
    pub fn name(self) -> &'static str {
        match self {
            SweepVar::NumUsers => "num_users",
            SweepVar::BuildingHeight => "building_height",
            SweepVar::MinRate => "min_rate",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Admm,
    AlphaLp,
    Exhaustive,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::Admm => "admm",
            SolverKind::AlphaLp => "alpha_lp",
            SolverKind::Exhaustive => "exhaustive",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub sweep: SweepVar,
    pub values: Vec<f64>,
    pub repetitions: usize,
    /// Repetition `k` uses seed `seed + k` for every sweep value.
    pub seed: u64,
    /// User count when not swept.
    pub num_users: usize,
    pub urban: UrbanSpec,
    pub channel: ChannelParams,
    pub solvers: Vec<SolverKind>,
    pub placement: PlacementConfig,
    /// Fan-out over (sweep value, repetition) pairs.
    pub exec: Execution,
    /// Record wall-clock times; off keeps outputs reproducible byte for byte.
    pub timing: bool,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::InvalidInput("repetitions must be at least 1".into()));
        }
        if self.values.is_empty() {
            return Err(Error::InvalidInput("sweep values must be nonempty".into()));
        }
        if self.solvers.is_empty() {
            return Err(Error::InvalidInput("no solvers configured".into()));
        }
        for &v in &self.values {
            let ok = match self.sweep {
                SweepVar::NumUsers => v >= 1.0 && v.fract() == 0.0,
                SweepVar::BuildingHeight => v.is_finite() && v >= 0.0,
                SweepVar::MinRate => v.is_finite() && v > 0.0,
            };
            if !ok {
                return Err(Error::InvalidInput(format!("invalid {} value {v}", self.sweep.name())));
            }
        }
        if self.sweep != SweepVar::NumUsers && self.num_users == 0 {
            return Err(Error::InvalidInput("num_users must be at least 1".into()));
        }
        self.urban.validate()?;
        self.channel.validate()
    }

    pub fn seed_for(&self, repetition: usize) -> u64 {
        self.seed.wrapping_add(repetition as u64)
    }
}

/// One solver run on one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub sweep_value: f64,
    pub repetition: usize,
    pub solver: SolverKind,
    /// ABS count; `None` when the instance or the solve failed.
    pub n: Option<usize>,
    pub feasible: bool,
    pub wall_ms: f64,
    pub seed: u64,
    pub error: Option<String>,
}

/// Aggregate over repetitions. Failed or infeasible runs are excluded from the
/// mean and counted in `n_infeasible`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub sweep_value: f64,
    pub solver: SolverKind,
    pub mean_n: Option<f64>,
    /// Sample standard deviation over `sqrt(n_feasible)`; 0 for a single run.
    pub stderr: Option<f64>,
    pub n_feasible: usize,
    pub n_infeasible: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub sweep: SweepVar,
    pub runs: Vec<RunRecord>,
    pub summary: Vec<SummaryRow>,
}

/// Solves one instance with one solver, returning `(N, feasible)`.
pub fn run_solver(kind: SolverKind, c: &CapacityMatrix, r_min: f64, cfg: &PlacementConfig) -> Result<(usize, bool)> {
    match kind {
        SolverKind::Admm => {
            let res = solve_placement(c, r_min, cfg)?;
            Ok((res.count(), res.feasible))
        }
        SolverKind::AlphaLp => {
            let res = solve_alpha_lp(c, r_min, cfg.reweight_rounds, cfg.reweight_eps, cfg.threshold)?;
            let feasible = crate::placement::is_cover(c, &res.selected, r_min);
            Ok((res.selected.len(), feasible))
        }
        SolverKind::Exhaustive => {
            let res = exhaustive_min_abs(c, r_min)?;
            Ok((res.count, true))
        }
    }
}

fn run_instance(spec: &ExperimentSpec, value: f64, rep: usize) -> Vec<RunRecord> {
    let seed = spec.seed_for(rep);
    let mut urban = spec.urban.clone();
    let mut channel = spec.channel;
    let mut m = spec.num_users;
    match spec.sweep {
        SweepVar::NumUsers => m = value as usize,
        SweepVar::BuildingHeight => urban.building_height = value,
        SweepVar::MinRate => channel.min_rate = value,
    }
    let mut cfg = spec.placement;
    cfg.admm.exec = Execution::Sequential;

    let instance = build_urban(&urban, channel).and_then(|sc| {
        let users = sample_users(&sc, m, seed)?;
        sc.capacity_matrix(&users, Execution::Sequential)
    });
    spec.solvers
        .iter()
        .map(|&solver| {
            let start = Instant::now();
            let outcome = instance.as_ref().map_err(|e| e.to_string()).and_then(|c| {
                run_solver(solver, c, channel.min_rate, &cfg).map_err(|e| e.to_string())
            });
            let wall_ms = if spec.timing { start.elapsed().as_secs_f64() * 1e3 } else { 0.0 };
            let (n, feasible, error) = match outcome {
                Ok((n, f)) => (Some(n), f, None),
                Err(e) => (None, false, Some(e)),
            };
            RunRecord { sweep_value: value, repetition: rep, solver, n, feasible, wall_ms, seed, error }
        })
        .collect()
}

/// Runs every (sweep value, repetition) instance with every solver.
///
/// Instances run in parallel when `spec.exec` asks for it; records come back
/// ordered by sweep value, repetition and solver regardless.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let reps = spec.repetitions;
    let per_instance = exec::map_indexed(spec.exec, spec.values.len() * reps, |k| {
        run_instance(spec, spec.values[k / reps], k % reps)
    });
    let runs: Vec<RunRecord> = per_instance.into_iter().flatten().collect();
    let summary = summarize(&spec.values, &spec.solvers, &runs);
    Ok(ExperimentResult { sweep: spec.sweep, runs, summary })
}

/// Mean and standard error of `N` per (sweep value, solver) over feasible runs.
pub fn summarize(values: &[f64], solvers: &[SolverKind], runs: &[RunRecord]) -> Vec<SummaryRow> {
    let mut rows = Vec::with_capacity(values.len() * solvers.len());
    for &v in values {
        for &solver in solvers {
            let mine: Vec<&RunRecord> = runs.iter().filter(|r| r.sweep_value == v && r.solver == solver).collect();
            let ns: Vec<f64> = mine
                .iter()
                .filter(|r| r.feasible)
                .filter_map(|r| r.n.map(|n| n as f64))
                .collect();
            let k = ns.len();
            let (mean_n, stderr) = if k == 0 {
                (None, None)
            } else {
                let mean = ns.iter().sum::<f64>() / k as f64;
                let se = if k < 2 {
                    0.0
                } else {
                    let var = ns.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
                    (var / k as f64).sqrt()
                };
                (Some(mean), Some(se))
            };
            rows.push(SummaryRow {
                sweep_value: v,
                solver,
                mean_n,
                stderr,
                n_feasible: k,
                n_infeasible: mine.len() - k,
            });
        }
    }
    rows
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ExperimentResult {
    /// Per-run CSV: `sweep_var,sweep_value,repetition,solver,N,feasible,wall_ms,seed`.
    pub fn write_runs_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["sweep_var", "sweep_value", "repetition", "solver", "N", "feasible", "wall_ms", "seed"])?;
        for r in &self.runs {
            wtr.write_record(&[
                self.sweep.name().to_string(),
                r.sweep_value.to_string(),
                r.repetition.to_string(),
                r.solver.name().to_string(),
                opt(r.n),
                r.feasible.to_string(),
                r.wall_ms.to_string(),
                r.seed.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Aggregated CSV:
    /// `sweep_var,sweep_value,solver,mean_N,stderr,n_feasible,n_infeasible`.
    pub fn write_summary_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["sweep_var", "sweep_value", "solver", "mean_N", "stderr", "n_feasible", "n_infeasible"])?;
        for r in &self.summary {
            wtr.write_record(&[
                self.sweep.name().to_string(),
                r.sweep_value.to_string(),
                r.solver.name().to_string(),
                opt(r.mean_n),
                opt(r.stderr),
                r.n_feasible.to_string(),
                r.n_infeasible.to_string(),
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}
