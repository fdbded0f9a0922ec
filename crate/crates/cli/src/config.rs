//! Run configuration: one TOML document shared by every subcommand.

use std::path::{Path, PathBuf};

use absplace_core::channel::{dbm_to_watts, ChannelParams};
use absplace_core::geometry::Box3;
use absplace_core::placement::{AdmmConfig, ExtractFrom, PlacementConfig};
use absplace_core::scenario::{ExperimentSpec, SolverKind, SweepVar, UrbanSpec};
use absplace_core::Execution;
use anyhow::{bail, ensure, Context, Result};
use serde::Deserialize;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub channel: Option<ChannelSection>,
    #[serde(default)]
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    /// m; give this or `carrier_frequency`.
    pub wavelength: Option<f64>,
    /// Hz.
    pub carrier_frequency: Option<f64>,
    #[serde(default = "default_bandwidth")]
    pub bandwidth: f64,
    #[serde(default = "default_tx_power")]
    pub tx_power: f64,
    /// W; alternatively `noise_power_dbm`.
    pub noise_power: Option<f64>,
    pub noise_power_dbm: Option<f64>,
    #[serde(default = "default_min_rate")]
    pub min_rate: f64,
}

fn default_bandwidth() -> f64 {
    20e6
}
fn default_tx_power() -> f64 {
    0.1
}
fn default_min_rate() -> f64 {
    5e6
}

impl ChannelSection {
    pub fn params(&self) -> Result<ChannelParams> {
        let noise = match (self.noise_power, self.noise_power_dbm) {
            (Some(_), Some(_)) => bail!("channel: give only one of noise_power and noise_power_dbm"),
            (Some(w), None) => w,
            (None, Some(dbm)) => dbm_to_watts(dbm),
            (None, None) => dbm_to_watts(-96.0),
        };
        let p = match (self.wavelength, self.carrier_frequency) {
            (Some(l), None) => ChannelParams::new(l, self.bandwidth, self.tx_power, noise, self.min_rate)?,
            (None, Some(f)) => {
                ChannelParams::from_carrier_frequency(f, self.bandwidth, self.tx_power, noise, self.min_rate)?
            }
            _ => bail!("channel: give exactly one of wavelength and carrier_frequency"),
        };
        Ok(p)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    pub area: [f64; 2],
    pub streets_per_axis: usize,
    pub building_height: f64,
    pub absorption: f64,
    pub flight_band: [f64; 2],
    pub slf_dims: [usize; 3],
    pub flight_dims: [usize; 3],
    pub no_fly: Vec<Box3>,
    pub users_on_streets: bool,
    pub num_users: usize,
    pub seed: u64,
    /// Ellipsoid width for the conventional shadowing sum; defaults to the wavelength.
    pub ellipsoid_width: Option<f64>,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        let u = UrbanSpec::default();
        ScenarioSection {
            area: u.area,
            streets_per_axis: u.streets_per_axis,
            building_height: u.building_height,
            absorption: u.absorption,
            flight_band: u.flight_band,
            slf_dims: u.slf_dims,
            flight_dims: u.flight_dims,
            no_fly: u.no_fly,
            users_on_streets: u.users_on_streets,
            num_users: 6,
            seed: 1,
            ellipsoid_width: None,
        }
    }
}

impl ScenarioSection {
    pub fn urban(&self) -> UrbanSpec {
        UrbanSpec {
            area: self.area,
            streets_per_axis: self.streets_per_axis,
            building_height: self.building_height,
            absorption: self.absorption,
            flight_band: self.flight_band,
            slf_dims: self.slf_dims,
            flight_dims: self.flight_dims,
            no_fly: self.no_fly.clone(),
            users_on_streets: self.users_on_streets,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub rho: f64,
    pub eps_abs: f64,
    pub eps_rel: f64,
    pub max_iter: usize,
    pub reweight_rounds: usize,
    pub reweight_eps: f64,
    pub threshold: f64,
    pub extract_from: ExtractFrom,
    pub exec: Execution,
}

impl Default for SolverSection {
    fn default() -> Self {
        let p = PlacementConfig::default();
        SolverSection {
            rho: p.admm.rho,
            eps_abs: p.admm.eps_abs,
            eps_rel: p.admm.eps_rel,
            max_iter: p.admm.max_iter,
            reweight_rounds: p.reweight_rounds,
            reweight_eps: p.reweight_eps,
            threshold: p.threshold,
            extract_from: p.extract_from,
            exec: p.admm.exec,
        }
    }
}

impl SolverSection {
    pub fn placement(&self) -> Result<PlacementConfig> {
        ensure!(self.rho.is_finite() && self.rho > 0.0, "solver.rho must be positive");
        ensure!(self.eps_abs >= 0.0 && self.eps_rel >= 0.0, "solver tolerances must be >= 0");
        ensure!(self.max_iter >= 1, "solver.max_iter must be at least 1");
        ensure!(self.reweight_rounds >= 1, "solver.reweight_rounds must be at least 1");
        ensure!(self.reweight_eps > 0.0, "solver.reweight_eps must be positive");
        ensure!(self.threshold >= 0.0, "solver.threshold must be >= 0");
        Ok(PlacementConfig {
            admm: AdmmConfig {
                rho: self.rho,
                eps_abs: self.eps_abs,
                eps_rel: self.eps_rel,
                max_iter: self.max_iter,
                exec: self.exec,
            },
            reweight_rounds: self.reweight_rounds,
            reweight_eps: self.reweight_eps,
            threshold: self.threshold,
            extract_from: self.extract_from,
        })
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub sweep: SweepVar,
    pub values: Vec<f64>,
    pub repetitions: usize,
    /// Falls back to `scenario.seed`.
    pub seed: Option<u64>,
    pub solvers: Vec<SolverKind>,
    pub timing: bool,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        ExperimentSection {
            sweep: SweepVar::MinRate,
            values: vec![5e6],
            repetitions: 20,
            seed: None,
            solvers: vec![SolverKind::Admm],
            timing: false,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: PathBuf,
    /// Also write the ADMM residual trace from `place`.
    pub trace: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: PathBuf::from("out"), trace: true }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn channel(&self) -> Result<ChannelParams> {
        match &self.channel {
            Some(c) => c.params(),
            None => Ok(ChannelParams::urban_default(default_min_rate())),
        }
    }

    /// Checks every section so that no command starts on a bad document.
    pub fn validate(&self) -> Result<()> {
        self.channel()?;
        self.scenario.urban().validate()?;
        ensure!(self.scenario.num_users >= 1, "scenario.num_users must be at least 1");
        if let Some(w) = self.scenario.ellipsoid_width {
            ensure!(w.is_finite() && w > 0.0, "scenario.ellipsoid_width must be positive");
        }
        self.solver.placement()?;
        self.experiment_spec()?.validate()?;
        Ok(())
    }

    pub fn experiment_spec(&self) -> Result<ExperimentSpec> {
        Ok(ExperimentSpec {
            sweep: self.experiment.sweep,
            values: self.experiment.values.clone(),
            repetitions: self.experiment.repetitions,
            seed: self.experiment.seed.unwrap_or(self.scenario.seed),
            num_users: self.scenario.num_users,
            urban: self.scenario.urban(),
            channel: self.channel()?,
            solvers: self.experiment.solvers.clone(),
            placement: self.solver.placement()?,
            exec: self.solver.exec,
            timing: self.experiment.timing,
        })
    }
}
