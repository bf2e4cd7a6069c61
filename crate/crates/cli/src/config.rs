//! Run configuration: one JSON document per run, checked in full before any
//! computation starts.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use deadline_core::analysis::{default_battery, Instance, Property, Tolerances};
use deadline_core::simulator::CorrelatedBernoulli;
use deadline_core::utility::{is_more_concave, DEFAULT_SHAPE_GRID};
use deadline_core::value_solver::{ModelParams, TwoPaymentSpec};
use deadline_core::{UtilitySpec, ValueGrid, ZetaFamily};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub utility: Option<UtilitySpec>,
    #[serde(default)]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub seed: u64,
    /// Output directory. Left out of the config hash.
    #[serde(default = "default_out", skip_serializing)]
    pub out: PathBuf,
    #[serde(default)]
    pub simulate: Option<SimulateConfig>,
    #[serde(default)]
    pub two_payment: Option<TwoPaymentConfig>,
    #[serde(default)]
    pub procrastinate: Option<ProcrastinateConfig>,
    #[serde(default)]
    pub verify: Option<VerifyConfig>,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub lambda: f64,
    pub deadline: f64,
    pub n: usize,
    pub t_min: f64,
    /// Defaults to `1e-3/λ`.
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub quad_points: Option<usize>,
}

impl ModelConfig {
    pub fn params(&self) -> ModelParams {
        let mut p = ModelParams::new(self.lambda, self.deadline, self.n, self.t_min);
        if let Some(dt) = self.dt {
            p.dt = dt;
        }
        if let Some(q) = self.quad_points {
            p.quad_points = q;
        }
        p
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub x0: usize,
    pub t0: f64,
    pub paths: usize,
    /// Also write one CSV line per simulated agent.
    #[serde(default = "yes")]
    pub write_traces: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TwoPaymentConfig {
    pub x: usize,
    pub x_bar: usize,
    pub t_bar: f64,
    pub p1: f64,
    pub p2: f64,
    /// Correlation controls to sweep; eleven evenly spaced admissible values
    /// by default.
    #[serde(default)]
    pub c_values: Option<Vec<f64>>,
    #[serde(default = "fifty")]
    pub query_points: usize,
}

fn fifty() -> usize {
    50
}

fn two() -> f64 {
    2.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcrastinateConfig {
    /// What the agent wrongly believes `ζ` to be; `μ` is shared.
    pub believed_zeta: ZetaFamily,
    /// Overestimate factor of the opportunity rate.
    #[serde(default = "two")]
    pub kappa: f64,
    #[serde(default = "fifty")]
    pub theta_points: usize,
    #[serde(default = "fifty")]
    pub time_points: usize,
    /// First lattice time; defaults to the earliest time the rate-misperceiving
    /// agent can be evaluated on the grid.
    #[serde(default)]
    pub t_from: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BatteryConfig {
    /// Only `"default"` is recognized.
    Named(String),
    Instances(Vec<Instance>),
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    #[serde(default)]
    pub battery: Option<BatteryConfig>,
    #[serde(default)]
    pub properties: Option<Vec<String>>,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Check a stored value grid (as written by `solve`) instead of solving a
    /// battery. Needs `utility` and `model`.
    #[serde(default)]
    pub grid_csv: Option<PathBuf>,
}

/// Command-line values that replace config fields.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub properties: Option<Vec<String>>,
}

pub fn load(path: &Path, overrides: &Overrides) -> Result<RunConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read config file {}", path.display()))?;
    let mut config: RunConfig =
        serde_json::from_str(&text).with_context(|| format!("invalid config file {}", path.display()))?;
    if let Some(out) = &overrides.out {
        config.out = out.clone();
    }
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    if let Some(props) = &overrides.properties {
        config.verify.get_or_insert_with(VerifyConfig::default).properties = Some(props.clone());
    }
    Ok(config)
}

impl RunConfig {
    /// SHA-256 of the effective config, output directory excluded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    fn section<'a, T>(value: &'a Option<T>, name: &str) -> Result<&'a T> {
        value.as_ref().ok_or_else(|| anyhow!("config is missing the `{name}` section"))
    }

    /// Validated utility and model parameters.
    pub fn model(&self) -> Result<(UtilitySpec, ModelParams)> {
        let spec = Self::section(&self.utility, "utility")?.clone();
        let params = Self::section(&self.model, "model")?.params();
        params.validate()?;
        spec.validate_for_stock(params.n)?;
        Ok((spec, params))
    }

    pub fn simulation(&self) -> Result<(UtilitySpec, ModelParams, SimulateConfig)> {
        let (spec, params) = self.model()?;
        let sim = Self::section(&self.simulate, "simulate")?.clone();
        ensure!(sim.paths > 0, "simulate.paths must be positive");
        ensure!(sim.x0 <= params.n, "simulate.x0 = {} exceeds model.n = {}", sim.x0, params.n);
        ensure!(
            sim.t0 >= params.t_min && sim.t0 <= params.deadline,
            "simulate.t0 = {} outside [t_min, deadline] = [{}, {}]",
            sim.t0,
            params.t_min,
            params.deadline
        );
        Ok((spec, params, sim))
    }

    pub fn two_payment(&self) -> Result<(UtilitySpec, TwoPaymentSpec, Vec<CorrelatedBernoulli>, usize)> {
        let (spec, params) = self.model()?;
        let cfg = Self::section(&self.two_payment, "two_payment")?;
        let tp = TwoPaymentSpec { base: params, x: cfg.x, x_bar: cfg.x_bar, t_bar: cfg.t_bar };
        tp.validate()?;
        ensure!(tp.t_bar > tp.base.t_min, "two_payment.t_bar must lie after model.t_min");
        ensure!(cfg.query_points > 0, "two_payment.query_points must be positive");
        let (lo, hi) = CorrelatedBernoulli::c_range(cfg.p1, cfg.p2);
        let cs = cfg
            .c_values
            .clone()
            .unwrap_or_else(|| (0..=10).map(|k| lo + (hi - lo) * k as f64 / 10.0).collect());
        ensure!(!cs.is_empty(), "two_payment.c_values is empty");
        let dists = cs
            .iter()
            .map(|&c| CorrelatedBernoulli::new(cfg.p1, cfg.p2, c).context("two_payment.c_values"))
            .collect::<Result<Vec<_>>>()?;
        Ok((spec, tp, dists, cfg.query_points))
    }

    pub fn procrastination(&self) -> Result<(UtilitySpec, UtilitySpec, ModelParams, ProcrastinateConfig, f64)> {
        let (spec, params) = self.model()?;
        let cfg = Self::section(&self.procrastinate, "procrastinate")?.clone();
        let believed = UtilitySpec::new(cfg.believed_zeta.clone(), spec.mu_family().clone())
            .context("procrastinate.believed_zeta")?;
        if !is_more_concave(&spec, &believed, DEFAULT_SHAPE_GRID)? {
            bail!("procrastinate.believed_zeta is not strictly more concave than utility.zeta");
        }
        ensure!(cfg.kappa.is_finite() && cfg.kappa >= 1.0, "procrastinate.kappa must be >= 1");
        ensure!(cfg.theta_points >= 2 && cfg.time_points >= 2, "lattice needs at least 2 points per axis");
        let earliest = params.deadline - (params.deadline - params.t_min) / cfg.kappa;
        let t_from = cfg.t_from.unwrap_or(earliest);
        ensure!(
            t_from >= earliest && t_from < params.deadline,
            "procrastinate.t_from = {t_from} must lie in [{earliest}, deadline) so that the believed clock stays on the grid"
        );
        Ok((spec, believed, params, cfg, t_from))
    }

    pub fn verification(&self) -> Result<VerifyPlan> {
        let default_cfg = VerifyConfig::default();
        let cfg = self.verify.as_ref().unwrap_or(&default_cfg);
        let properties = match &cfg.properties {
            None => Property::ALL.to_vec(),
            Some(ids) => {
                ensure!(!ids.is_empty(), "verify.properties is empty");
                ids.iter().map(|id| id.parse::<Property>().map_err(anyhow::Error::from)).collect::<Result<_>>()?
            }
        };
        if let Some(path) = &cfg.grid_csv {
            ensure!(cfg.battery.is_none(), "verify.grid_csv and verify.battery are mutually exclusive");
            let (spec, params) = self.model()?;
            let file = fs::File::open(path).with_context(|| format!("cannot read grid file {}", path.display()))?;
            let grid = ValueGrid::read_csv(file, params)
                .with_context(|| format!("invalid grid file {}", path.display()))?;
            return Ok(VerifyPlan::Grid { spec, grid, tolerances: cfg.tolerances.clone(), properties });
        }
        let battery = match &cfg.battery {
            None => default_battery(),
            Some(BatteryConfig::Named(name)) if name == "default" => default_battery(),
            Some(BatteryConfig::Named(name)) => bail!("unknown battery '{name}'"),
            Some(BatteryConfig::Instances(list)) => list.clone(),
        };
        ensure!(!battery.is_empty(), "verify.battery is empty");
        for (k, inst) in battery.iter().enumerate() {
            inst.params.validate().with_context(|| format!("verify.battery[{k}]"))?;
            inst.spec.validate_for_stock(inst.params.n).with_context(|| format!("verify.battery[{k}]"))?;
        }
        Ok(VerifyPlan::Battery { battery, tolerances: cfg.tolerances.clone(), properties })
    }
}

pub enum VerifyPlan {
    Battery { battery: Vec<Instance>, tolerances: Tolerances, properties: Vec<Property> },
    Grid { spec: UtilitySpec, grid: ValueGrid, tolerances: Tolerances, properties: Vec<Property> },
}
