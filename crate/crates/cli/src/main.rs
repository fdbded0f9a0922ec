//! `absplace`: shadowing maps, ABS placement, experiment sweeps and oracle runs.

mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use absplace_core::channel::{capacity_bps, gain_db};
use absplace_core::geometry::{Point3, Segment3};
use absplace_core::placement::solve_placement;
use absplace_core::reference::exhaustive_min_abs;
use absplace_core::scenario::{build_urban, run_experiment, sample_users, UrbanScenario};
use absplace_core::tomography::{shadowing_ellipsoid_sum, shadowing_line_integral, SlfField};
use absplace_core::{Error as CoreError, Execution};
use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "absplace", version, about = "Radio-tomographic maps and aerial base station placement")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Shadowing, gain and capacity between two points.
    Map(MapArgs),
    /// Place ABSs for one sampled user set.
    Place(RunArgs),
    /// Monte Carlo sweep over the configured variable.
    Experiment(ExperimentArgs),
    /// Exhaustive minimum ABS count for one sampled user set.
    Oracle(OracleArgs),
}

/// Options shared by every command. Flags override the config file, which
/// overrides built-in defaults.
#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`).
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    num_users: Option<usize>,
    /// Minimum rate, bits/s.
    #[arg(long)]
    min_rate: Option<f64>,
    /// Building height, m.
    #[arg(long)]
    building_height: Option<f64>,
    /// Run everything on the calling thread.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct MapArgs {
    #[command(flatten)]
    common: Common,
    /// Transmitter position `x,y,z`.
    #[arg(long, value_parser = parse_point)]
    tx: Point3,
    /// Receiver position `x,y,z`.
    #[arg(long, value_parser = parse_point)]
    rx: Point3,
    /// Read the SLF from a text tensor file instead of building the scenario.
    #[arg(long)]
    slf: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Also write the capacity matrix as CSV.
    #[arg(long)]
    dump_capacity: bool,
}

#[derive(Args)]
struct ExperimentArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    repetitions: Option<usize>,
}

#[derive(Args)]
struct OracleArgs {
    #[command(flatten)]
    common: Common,
    /// Also run the ADMM placement and report its gap to the optimum.
    #[arg(long)]
    compare_admm: bool,
}

fn parse_point(s: &str) -> std::result::Result<Point3, String> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<std::result::Result<_, _>>()?;
    match parts[..] {
        [x, y, z] => Ok(Point3::new(x, y, z)),
        _ => Err(format!("expected x,y,z, got {s:?}")),
    }
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(o) = &self.out {
            cfg.output.dir = o.clone();
        }
        if let Some(s) = self.seed {
            cfg.scenario.seed = s;
            cfg.experiment.seed = Some(s);
        }
        if let Some(m) = self.num_users {
            cfg.scenario.num_users = m;
        }
        if let Some(h) = self.building_height {
            cfg.scenario.building_height = h;
        }
        if let Some(r) = self.min_rate {
            let mut ch = match cfg.channel.take() {
                Some(c) => c,
                None => toml::from_str("carrier_frequency = 2.4e9")?,
            };
            ch.min_rate = r;
            cfg.channel = Some(ch);
        }
        if self.sequential {
            cfg.solver.exec = Execution::Sequential;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn exec_of(cfg: &RunConfig) -> Execution {
    cfg.solver.exec
}

fn scenario(cfg: &RunConfig) -> Result<UrbanScenario> {
    Ok(build_urban(&cfg.scenario.urban(), cfg.channel()?)?)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<String> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    let mut f = create(dir, name)?;
    f.write_all(text.as_bytes())?;
    f.flush()?;
    Ok(text)
}

#[derive(Serialize)]
struct MapOutput {
    xi_traversal: f64,
    xi_ellipsoid: f64,
    gain_db: f64,
    capacity_mbps: f64,
}

fn cmd_map(args: &MapArgs) -> Result<()> {
    let cfg = args.common.load()?;
    let params = cfg.channel()?;
    let slf = match &args.slf {
        Some(p) => SlfField::load(p)?,
        None => scenario(&cfg)?.slf,
    };
    let seg = Segment3::new(args.tx, args.rx);
    let xi = shadowing_line_integral(&slf, &seg)?;
    let width = cfg.scenario.ellipsoid_width.unwrap_or(params.wavelength);
    let xi_ellipsoid = shadowing_ellipsoid_sum(&slf, &seg, width)?;
    let gain = gain_db(&params, args.tx, args.rx, xi)?;
    let out = MapOutput {
        xi_traversal: xi,
        xi_ellipsoid,
        gain_db: gain,
        capacity_mbps: capacity_bps(&params, gain) / 1e6,
    };
    println!("{}", serde_json::to_string_pretty(&out)?);
    Ok(())
}

#[derive(Serialize)]
struct PlaceOutput {
    n: usize,
    feasible: bool,
    min_rate_bps: f64,
    /// Indices into the allowed flight points.
    selected: Vec<usize>,
    /// Linear indices into the unfiltered flight grid.
    grid_indices: Vec<usize>,
    positions: Vec<[f64; 3]>,
    users: Vec<[f64; 3]>,
    user_rates_bps: Vec<f64>,
    iterations: usize,
    converged: bool,
    objective_trace: Vec<f64>,
}

fn cmd_place(args: &RunArgs) -> Result<()> {
    let cfg = args.common.load()?;
    let sc = scenario(&cfg)?;
    let users = sample_users(&sc, cfg.scenario.num_users, cfg.scenario.seed)?;
    let c = sc.capacity_matrix(&users, exec_of(&cfg))?;
    let dir = &cfg.output.dir;
    if args.dump_capacity {
        let mut f = create(dir, "capacity.csv")?;
        c.write_csv(&mut f)?;
        f.flush()?;
    }
    let r_min = sc.channel.min_rate;
    let res = solve_placement(&c, r_min, &cfg.solver.placement()?)?;
    let out = PlaceOutput {
        n: res.count(),
        feasible: res.feasible,
        min_rate_bps: r_min,
        grid_indices: res.selected.iter().map(|&g| sc.flight_indices[g]).collect(),
        selected: res.selected.clone(),
        positions: res.positions.iter().map(|p| p.to_array()).collect(),
        users: users.iter().map(|p| p.to_array()).collect(),
        user_rates_bps: res.user_rates.clone(),
        iterations: res.iterations,
        converged: res.converged,
        objective_trace: res.objective_trace.clone(),
    };
    let text = write_json(dir, "placement.json", &out)?;

    let mut f = create(dir, "positions.csv")?;
    {
        let mut w = csv::Writer::from_writer(&mut f);
        w.write_record(["abs", "grid_index", "x", "y", "z"])?;
        for (k, (&g, p)) in out.grid_indices.iter().zip(&res.positions).enumerate() {
            w.write_record(&[k.to_string(), g.to_string(), p.x.to_string(), p.y.to_string(), p.z.to_string()])?;
        }
        w.flush()?;
    }
    f.flush()?;
    if cfg.output.trace {
        let mut f = create(dir, "trace.csv")?;
        res.write_trace_csv(&mut f)?;
        f.flush()?;
    }
    print!("{text}");
    if !res.feasible {
        let users = (0..c.rows()).filter(|&m| res.user_rates[m] < r_min).collect();
        return Err(CoreError::Infeasible { users }.into());
    }
    Ok(())
}

fn cmd_experiment(args: &ExperimentArgs) -> Result<()> {
    let mut cfg = args.common.load()?;
    if let Some(r) = args.repetitions {
        cfg.experiment.repetitions = r;
        cfg.validate()?;
    }
    let spec = cfg.experiment_spec()?;
    let res = run_experiment(&spec)?;
    let dir = &cfg.output.dir;
    let mut f = create(dir, "runs.csv")?;
    res.write_runs_csv(&mut f)?;
    f.flush()?;
    let mut f = create(dir, "summary.csv")?;
    res.write_summary_csv(&mut f)?;
    f.flush()?;
    let mut stdout = std::io::stdout().lock();
    res.write_summary_csv(&mut stdout)?;
    for r in res.runs.iter().filter(|r| r.error.is_some()) {
        eprintln!(
            "{}={} repetition {} {}: {}",
            res.sweep.name(),
            r.sweep_value,
            r.repetition,
            r.solver.name(),
            r.error.as_deref().unwrap_or_default()
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct OracleOutput {
    n_star: usize,
    subset: Vec<usize>,
    grid_indices: Vec<usize>,
    positions: Vec<[f64; 3]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    admm: Option<AdmmComparison>,
}

#[derive(Serialize)]
struct AdmmComparison {
    n: usize,
    selected: Vec<usize>,
    feasible: bool,
    /// `N_admm - N*`.
    gap: i64,
}

fn cmd_oracle(args: &OracleArgs) -> Result<()> {
    let cfg = args.common.load()?;
    let sc = scenario(&cfg)?;
    let users = sample_users(&sc, cfg.scenario.num_users, cfg.scenario.seed)?;
    let c = sc.capacity_matrix(&users, exec_of(&cfg))?;
    let r_min = sc.channel.min_rate;
    let ex = exhaustive_min_abs(&c, r_min)?;
    let admm = if args.compare_admm {
        let res = solve_placement(&c, r_min, &cfg.solver.placement()?)?;
        Some(AdmmComparison {
            n: res.count(),
            gap: res.count() as i64 - ex.count as i64,
            selected: res.selected,
            feasible: res.feasible,
        })
    } else {
        None
    };
    let out = OracleOutput {
        n_star: ex.count,
        grid_indices: ex.subset.iter().map(|&g| sc.flight_indices[g]).collect(),
        positions: ex.subset.iter().map(|&g| sc.flight_points[g].to_array()).collect(),
        subset: ex.subset,
        admm,
    };
    let text = write_json(&cfg.output.dir, "oracle.json", &out)?;
    print!("{text}");
    Ok(())
}

fn init_threads() -> Result<()> {
    let Ok(v) = std::env::var("ABSPLACE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| anyhow!("ABSPLACE_THREADS must be a positive integer, got {v:?}"))?;
    if n == 0 {
        bail!("ABSPLACE_THREADS must be a positive integer, got {v:?}");
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    Ok(())
}

/// 2 for domain errors, 3 for infeasibility, 4 for guard violations, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    match err.chain().find_map(|e| e.downcast_ref::<CoreError>()) {
        Some(CoreError::Domain(_)) => 2,
        Some(CoreError::Infeasible { .. }) => 3,
        Some(CoreError::Guard { .. }) => 4,
        _ => 1,
    }
}

fn run(cli: &Cli) -> Result<()> {
    init_threads()?;
    match &cli.command {
        Command::Map(a) => cmd_map(a),
        Command::Place(a) => cmd_place(a),
        Command::Experiment(a) => cmd_experiment(a),
        Command::Oracle(a) => cmd_oracle(a),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
