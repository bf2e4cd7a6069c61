//! Numerical verification of the structural properties of the model over a
//! battery of instances, plus deadline-pressure diagnostics.
//!
//! Every check reports the worst violation it measured next to its
//! tolerance, so a pass is never vacuous. A strict inequality `a < b` is
//! measured as `a − b` and passes when that stays within
//! [`Tolerances::strict_slack`].

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{choose, cutoffs_unchecked, CutoffTable};
use crate::utility::{is_log_concave_zeta, MuFamily, UtilitySpec, ZetaFamily, DEFAULT_SHAPE_GRID};
use crate::value_solver::{solve, EmaxKernel, ModelParams, ValueGrid};

/// The checks run by [`verify_all`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Property {
    ValuePositive,
    ValueDecreasingInTime,
    ValueIncreasingInStock,
    ValueConcaveInStock,
    ValueConcaveInTime,
    ValueBelowCeiling,
    MarginalDecreasingInTime,
    EmaxCrossCheck,
    Asymptote,
    PreferenceReversal,
    CutoffOrder,
    CutoffsApproaching,
    Decomposition,
    MoreConcaveMarginal,
    CutoffCrossover,
    Homogeneity,
    LambdaDilation,
}

impl Property {
    pub const ALL: [Property; 17] = [
        Property::ValuePositive,
        Property::ValueDecreasingInTime,
        Property::ValueIncreasingInStock,
        Property::ValueConcaveInStock,
        Property::ValueConcaveInTime,
        Property::ValueBelowCeiling,
        Property::MarginalDecreasingInTime,
        Property::EmaxCrossCheck,
        Property::Asymptote,
        Property::PreferenceReversal,
        Property::CutoffOrder,
        Property::CutoffsApproaching,
        Property::Decomposition,
        Property::MoreConcaveMarginal,
        Property::CutoffCrossover,
        Property::Homogeneity,
        Property::LambdaDilation,
    ];

    /// Checks that need nothing beyond the solved grid itself.
    pub const GRID_ONLY: [Property; 12] = [
        Property::ValuePositive,
        Property::ValueDecreasingInTime,
        Property::ValueIncreasingInStock,
        Property::ValueConcaveInStock,
        Property::ValueConcaveInTime,
        Property::ValueBelowCeiling,
        Property::MarginalDecreasingInTime,
        Property::EmaxCrossCheck,
        Property::PreferenceReversal,
        Property::CutoffOrder,
        Property::CutoffsApproaching,
        Property::Decomposition,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Property::ValuePositive => "value_positive",
            Property::ValueDecreasingInTime => "value_decreasing_in_time",
            Property::ValueIncreasingInStock => "value_increasing_in_stock",
            Property::ValueConcaveInStock => "value_concave_in_stock",
            Property::ValueConcaveInTime => "value_concave_in_time",
            Property::ValueBelowCeiling => "value_below_ceiling",
            Property::MarginalDecreasingInTime => "marginal_decreasing_in_time",
            Property::EmaxCrossCheck => "emax_cross_check",
            Property::Asymptote => "asymptote",
            Property::PreferenceReversal => "preference_reversal",
            Property::CutoffOrder => "cutoff_order",
            Property::CutoffsApproaching => "cutoffs_approaching",
            Property::Decomposition => "decomposition",
            Property::MoreConcaveMarginal => "more_concave_marginal",
            Property::CutoffCrossover => "cutoff_crossover",
            Property::Homogeneity => "homogeneity",
            Property::LambdaDilation => "lambda_dilation",
        }
    }
}

impl fmt::Display for Property {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Property {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Property::ALL
            .into_iter()
            .find(|p| p.id() == s)
            .ok_or_else(|| Error::invalid("property", format!("unknown property id '{s}'")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    Skipped,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub property_id: String,
    pub instance_descriptor: String,
    pub status: Status,
    /// Largest measured violation; `None` when skipped.
    pub worst_violation: Option<f64>,
    pub tolerance: f64,
    pub notes: String,
}

impl PropertyReport {
    fn measured(property: Property, instance: &str, worst: f64, tolerance: f64, notes: String) -> Self {
        let status = if worst <= tolerance { Status::Pass } else { Status::Fail };
        PropertyReport {
            property_id: property.id().into(),
            instance_descriptor: instance.into(),
            status,
            worst_violation: Some(worst),
            tolerance,
            notes,
        }
    }

    fn skipped(property: Property, instance: &str, tolerance: f64, reason: impl Into<String>) -> Self {
        PropertyReport {
            property_id: property.id().into(),
            instance_descriptor: instance.into(),
            status: Status::Skipped,
            worst_violation: None,
            tolerance,
            notes: reason.into(),
        }
    }
}

/// Fixed-width table, one line per report.
pub fn render_table(reports: &[PropertyReport]) -> String {
    let mut out = format!(
        "{:<28} {:<44} {:<8} {:>12} {:>10}  notes\n",
        "property", "instance", "status", "worst", "tol"
    );
    for r in reports {
        let status = match r.status {
            Status::Pass => "pass",
            Status::Fail => "FAIL",
            Status::Skipped => "skipped",
        };
        let worst = r.worst_violation.map_or("-".to_string(), |w| format!("{w:.3e}"));
        out.push_str(&format!(
            "{:<28} {:<44} {:<8} {:>12} {:>10.1e}  {}\n",
            r.property_id, r.instance_descriptor, status, worst, r.tolerance, r.notes
        ));
    }
    out
}

/// Tolerances and auxiliary settings of the checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Tolerances {
    /// Allowed failure of strict inequalities and of the time-concavity bound.
    pub strict_slack: f64,
    pub emax_cross_check: f64,
    /// `λ(T − t_min)` of the dedicated asymptote solve.
    pub asymptote_horizon: f64,
    pub asymptote: f64,
    /// Step of the asymptote solve, in units of `1/λ`.
    pub asymptote_step: f64,
    pub decomposition: f64,
    pub homogeneity: f64,
    pub homogeneity_factors: Vec<f64>,
    pub dilation: f64,
    pub dilation_kappa: f64,
    /// Delay of the larger payment in the preference-reversal check, in
    /// units of `1/λ`.
    pub reversal_delay: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            strict_slack: 1e-9,
            emax_cross_check: 1e-7,
            asymptote_horizon: 1e3,
            asymptote: 1e-3,
            asymptote_step: 0.02,
            decomposition: 1e-5,
            homogeneity: 1e-9,
            homogeneity_factors: vec![0.1, 2.0, 7.0],
            dilation: 1e-6,
            dilation_kappa: 2.0,
            reversal_delay: 1.0,
        }
    }
}

/// One battery entry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub spec: UtilitySpec,
    pub params: ModelParams,
}

impl Instance {
    pub fn descriptor(&self) -> String {
        describe(&self.spec, &self.params)
    }
}

fn describe(spec: &UtilitySpec, params: &ModelParams) -> String {
    let zeta = match spec.zeta_family() {
        ZetaFamily::Power { k } => format!("theta^{k}"),
        ZetaFamily::ReflectedPower { k } => format!("1-(1-theta)^{k}"),
        ZetaFamily::Tabulated { .. } => "tabulated".to_string(),
    };
    let mu = match spec.mu_family() {
        MuFamily::Power { gamma } => format!("x^{gamma}"),
        MuFamily::Table { .. } => "table".to_string(),
    };
    format!("zeta={zeta} mu={mu} n={} lambda={}", params.n, params.lambda)
}

/// The 36-instance battery: three `ζ`, two `μ`, `n ∈ {1, 2, 4}`,
/// `λ ∈ {0.5, 2}`, deadline 10 and horizon `20/λ`.
pub fn default_battery() -> Vec<Instance> {
    let zetas = [
        ZetaFamily::Power { k: 1.0 },
        ZetaFamily::Power { k: 2.0 },
        ZetaFamily::ReflectedPower { k: 2.0 },
    ];
    let mus = [0.5, 0.7];
    let mut battery = Vec::new();
    for zeta in &zetas {
        for &gamma in &mus {
            for n in [1, 2, 4] {
                for lambda in [0.5, 2.0] {
                    let spec = UtilitySpec::new(zeta.clone(), MuFamily::Power { gamma }).expect("valid battery spec");
                    let params = ModelParams::new(lambda, 10.0, n, 10.0 - 20.0 / lambda);
                    battery.push(Instance { spec, params });
                }
            }
        }
    }
    battery
}

/// A strictly more concave `ζ` with the same `μ`, used as the comparison
/// utility. `None` for tabulated `ζ`.
pub fn more_concave_partner(spec: &UtilitySpec) -> Option<UtilitySpec> {
    let zeta = match spec.zeta_family() {
        ZetaFamily::Power { k } => ZetaFamily::Power { k: k / 2.0 },
        ZetaFamily::ReflectedPower { k } => ZetaFamily::ReflectedPower { k: k + 1.0 },
        ZetaFamily::Tabulated { .. } => return None,
    };
    UtilitySpec::new(zeta, spec.mu_family().clone()).ok()
}

/// Runs every property on every instance.
pub fn verify_all(battery: &[Instance], tolerances: &Tolerances) -> Result<Vec<PropertyReport>> {
    verify_selected(battery, tolerances, &Property::ALL)
}

/// Runs the listed properties on every instance. Reports are sorted by
/// property id, then instance.
pub fn verify_selected(
    battery: &[Instance],
    tolerances: &Tolerances,
    properties: &[Property],
) -> Result<Vec<PropertyReport>> {
    if battery.is_empty() {
        return Err(Error::invalid("battery", "must contain at least one instance"));
    }
    if properties.is_empty() {
        return Err(Error::invalid("properties", "select at least one property"));
    }
    let mut reports: Vec<PropertyReport> = battery
        .par_iter()
        .flat_map_iter(|inst| verify_instance(inst, tolerances, properties))
        .collect();
    sort_reports(&mut reports);
    Ok(reports)
}

fn sort_reports(reports: &mut [PropertyReport]) {
    reports.sort_by(|a, b| {
        a.property_id
            .cmp(&b.property_id)
            .then_with(|| a.instance_descriptor.cmp(&b.instance_descriptor))
    });
}

fn tolerance_for(p: Property, tol: &Tolerances) -> f64 {
    match p {
        Property::EmaxCrossCheck => tol.emax_cross_check,
        Property::Asymptote => tol.asymptote,
        Property::Decomposition => tol.decomposition,
        Property::Homogeneity => tol.homogeneity,
        Property::LambdaDilation => tol.dilation,
        _ => tol.strict_slack,
    }
}

fn verify_instance(inst: &Instance, tol: &Tolerances, properties: &[Property]) -> Vec<PropertyReport> {
    let name = inst.descriptor();
    let grid = match solve(&inst.spec, &inst.params) {
        Ok(g) => g,
        Err(e) => {
            return properties
                .iter()
                .map(|&p| PropertyReport::skipped(p, &name, tolerance_for(p, tol), format!("solver failed: {e}")))
                .collect();
        }
    };
    let mut table: Option<CutoffTable> = None;
    let mut partner: Option<std::result::Result<(UtilitySpec, ValueGrid), String>> = None;
    let mut out = Vec::with_capacity(properties.len());
    for &p in properties {
        let report = match p {
            Property::Asymptote => check_asymptote(&inst.spec, &inst.params, tol, &name),
            Property::Homogeneity => check_homogeneity(&inst.spec, &grid, tol, &name),
            Property::LambdaDilation => check_dilation(&inst.spec, &grid, tol, &name),
            Property::MoreConcaveMarginal | Property::CutoffCrossover => {
                let comparison = partner.get_or_insert_with(|| {
                    let spec = more_concave_partner(&inst.spec).ok_or("no more-concave partner for a tabulated zeta")?;
                    let w = solve(&spec, &inst.params).map_err(|e| format!("comparison solve failed: {e}"))?;
                    Ok((spec, w))
                });
                match comparison {
                    Err(reason) => PropertyReport::skipped(p, &name, tol.strict_slack, reason.clone()),
                    Ok((spec_w, w)) if p == Property::MoreConcaveMarginal => check_more_concave_marginal(&grid, w, tol, &name),
                    Ok((spec_w, w)) => {
                        let phi = table.get_or_insert_with(|| cutoffs_unchecked(&grid, &inst.spec).expect("valid grid"));
                        check_crossover(phi, &grid, &inst.spec, w, spec_w, tol, &name)
                    }
                }
            }
            _ => {
                let phi = table.get_or_insert_with(|| cutoffs_unchecked(&grid, &inst.spec).expect("valid grid"));
                grid_property(p, &inst.spec, &grid, phi, tol, &name)
            }
        };
        out.push(report);
    }
    out
}

/// Runs the grid-only properties on a supplied grid, for example one read
/// from disk or deliberately damaged.
pub fn verify_grid(spec: &UtilitySpec, grid: &ValueGrid, tolerances: &Tolerances) -> Result<Vec<PropertyReport>> {
    spec.validate_for_stock(grid.capacity())?;
    let name = describe(spec, &grid.params);
    let table = cutoffs_unchecked(grid, spec)?;
    let mut reports: Vec<PropertyReport> = Property::GRID_ONLY
        .iter()
        .map(|&p| grid_property(p, spec, grid, &table, tolerances, &name))
        .collect();
    sort_reports(&mut reports);
    Ok(reports)
}

fn grid_property(
    p: Property,
    spec: &UtilitySpec,
    grid: &ValueGrid,
    table: &CutoffTable,
    tol: &Tolerances,
    name: &str,
) -> PropertyReport {
    let slack = tol.strict_slack;
    let rows = grid.rows();
    let times = grid.times();
    let last = rows.len() - 1;
    let n = grid.capacity();
    let mu = match spec.mu_table(n) {
        Ok(m) => m,
        Err(e) => return PropertyReport::skipped(p, name, slack, e.to_string()),
    };
    let before_deadline = 0..last;
    match p {
        Property::ValuePositive => {
            let worst = worst_of(before_deadline.flat_map(|k| (1..=n).map(move |i| -rows[k][i])));
            PropertyReport::measured(p, name, worst, slack, "max of -V_i(t), t < T".into())
        }
        Property::ValueDecreasingInTime => {
            let worst = worst_of(before_deadline.flat_map(|k| (1..=n).map(move |i| rows[k + 1][i] - rows[k][i])));
            PropertyReport::measured(p, name, worst, slack, "max of V_i(t+dt) - V_i(t)".into())
        }
        Property::ValueIncreasingInStock => {
            let worst = worst_of(before_deadline.flat_map(|k| (1..=n).map(move |i| rows[k][i - 1] - rows[k][i])));
            PropertyReport::measured(p, name, worst, slack, "max of V_i - V_{i+1}".into())
        }
        Property::ValueConcaveInStock => {
            if n < 2 {
                return PropertyReport::skipped(p, name, slack, "needs n >= 2");
            }
            let worst = worst_of(before_deadline.flat_map(|k| {
                (1..n).map(move |i| (rows[k][i + 1] - rows[k][i]) - (rows[k][i] - rows[k][i - 1]))
            }));
            PropertyReport::measured(p, name, worst, slack, "max of dV_{i+1} - dV_i".into())
        }
        Property::ValueConcaveInTime => {
            let worst = worst_of((1..last).flat_map(|k| {
                let (h0, h1) = (times[k] - times[k - 1], times[k + 1] - times[k]);
                let hbar = 0.5 * (h0 + h1);
                (1..=n).map(move |i| {
                    let s0 = (rows[k][i] - rows[k - 1][i]) / h0;
                    let s1 = (rows[k + 1][i] - rows[k][i]) / h1;
                    (s1 - s0) * hbar
                })
            }));
            PropertyReport::measured(p, name, worst, slack, "max second time difference of V_i".into())
        }
        Property::ValueBelowCeiling => {
            let worst = worst_of((0..=last).flat_map(|k| {
                let mu1 = mu[1];
                (1..=n).map(move |i| rows[k][i] - i as f64 * mu1)
            }));
            PropertyReport::measured(p, name, worst, slack, "max of V_i - i*mu(1)".into())
        }
        Property::MarginalDecreasingInTime => {
            let worst = worst_of(before_deadline.flat_map(|k| {
                (0..n).map(move |i| (rows[k + 1][i + 1] - rows[k + 1][i]) - (rows[k][i + 1] - rows[k][i]))
            }));
            PropertyReport::measured(p, name, worst, slack, "max of dV_i(t+dt) - dV_i(t)".into())
        }
        Property::EmaxCrossCheck => {
            let kernel = match EmaxKernel::new(spec, n, grid.params.quad_points) {
                Ok(k) => k,
                Err(e) => return PropertyReport::skipped(p, name, tol.emax_cross_check, e.to_string()),
            };
            let worst = worst_of(rows.iter().flat_map(|row| {
                let kernel = &kernel;
                (1..=n).map(move |x| kernel.estimate(row, x).discrepancy())
            }));
            PropertyReport::measured(p, name, worst, tol.emax_cross_check, "quadrature vs envelope walk".into())
        }
        Property::PreferenceReversal => check_reversal(grid, tol, name),
        Property::CutoffOrder => check_cutoff_order(table, slack, name),
        Property::CutoffsApproaching => match is_log_concave_zeta(spec, DEFAULT_SHAPE_GRID) {
            Ok(true) => check_cutoffs_approaching(table, slack, name),
            Ok(false) => PropertyReport::skipped(p, name, slack, "zeta is not log-concave"),
            Err(e) => PropertyReport::skipped(p, name, slack, e.to_string()),
        },
        Property::Decomposition => check_decomposition(spec, grid, &mu, tol, name),
        _ => unreachable!("{p} needs more than the grid"),
    }
}

fn worst_of(values: impl Iterator<Item = f64>) -> f64 {
    values.fold(f64::NEG_INFINITY, |acc, v| if v.is_nan() { f64::INFINITY } else { acc.max(v) })
}

/// Cutoffs in `(0, 1]` before `T` and 0 at `T`, `φ_{i,i}` always defined, and
/// `φ_{i+1,j+1} < φ_{i,j} < φ_{i+1,j}`.
fn check_cutoff_order(table: &CutoffTable, slack: f64, name: &str) -> PropertyReport {
    let p = Property::CutoffOrder;
    let last = table.times.len() - 1;
    let mut worst = f64::NEG_INFINITY;
    let mut notes = String::from("max of phi_{i+1,j+1} - phi_{i,j} and phi_{i,j} - phi_{i+1,j}");
    for k in 0..=last {
        for i in 1..=table.n {
            if table.phi(k, i, i).is_none() {
                worst = f64::MAX;
                notes = format!("phi_{i},{i} undefined at t={}", table.times[k]);
            }
            for j in 1..=i {
                let Some(v) = table.phi(k, i, j) else { continue };
                if k == last {
                    worst = worst.max(v.abs());
                    continue;
                }
                worst = worst.max(-v).max(v - 1.0);
                if i < table.n {
                    if let Some(lo) = table.phi(k, i + 1, j + 1) {
                        worst = worst.max(lo - v);
                    }
                    if let Some(hi) = table.phi(k, i + 1, j) {
                        worst = worst.max(v - hi);
                    }
                }
            }
        }
    }
    PropertyReport::measured(p, name, worst, slack, notes)
}

/// Under log-concave `ζ`, `φ_{i+1,j} − φ_{i,j}` strictly decreases in `t`.
fn check_cutoffs_approaching(table: &CutoffTable, slack: f64, name: &str) -> PropertyReport {
    let p = Property::CutoffsApproaching;
    if table.n < 2 {
        return PropertyReport::skipped(p, name, slack, "needs n >= 2");
    }
    let gap = |k: usize, i: usize, j: usize| Some(table.phi(k, i + 1, j)? - table.phi(k, i, j)?);
    let mut worst = f64::NEG_INFINITY;
    for k in 0..table.times.len() - 1 {
        for i in 1..table.n {
            for j in 1..=i {
                if let (Some(a), Some(b)) = (gap(k, i, j), gap(k + 1, i, j)) {
                    worst = worst.max(b - a);
                }
            }
        }
    }
    PropertyReport::measured(p, name, worst, slack, "max increase of phi_{i+1,j} - phi_{i,j}".into())
}

/// `g(t) = V(t, 1) − V(t + d, 2)` rises through zero exactly once.
fn check_reversal(grid: &ValueGrid, tol: &Tolerances, name: &str) -> PropertyReport {
    let p = Property::PreferenceReversal;
    if grid.capacity() < 2 {
        return PropertyReport::skipped(p, name, tol.strict_slack, "needs n >= 2");
    }
    let delay = tol.reversal_delay / grid.params.lambda;
    let deadline = grid.params.deadline;
    let horizon_end = deadline - delay;
    if horizon_end <= grid.t_start() {
        return PropertyReport::skipped(p, name, tol.strict_slack, "grid shorter than the delay");
    }
    let mut ts: Vec<f64> = grid.times().iter().copied().filter(|&t| t < horizon_end).collect();
    ts.push(horizon_end);
    let g: Vec<f64> = ts
        .iter()
        .map(|&t| {
            let later = (t + delay).min(deadline);
            grid.value(t, 1).unwrap_or(f64::NAN) - grid.value(later, 2).unwrap_or(f64::NAN)
        })
        .collect();
    let decrease = worst_of(g.windows(2).map(|w| w[0] - w[1]));
    let first = g[0];
    let last = -g[g.len() - 1];
    let changes = g.windows(2).filter(|w| (w[0] < 0.0) != (w[1] < 0.0)).count();
    let mut worst = decrease.max(first).max(last);
    if changes != 1 {
        worst = f64::MAX;
    }
    let crossing = g.iter().position(|v| *v >= 0.0).map(|k| ts[k]);
    let notes = format!(
        "g(t_min)={first:.4}, g(T-d)={:.4}, sign changes={changes}, crossing near t={}",
        -last,
        crossing.map_or("none".into(), |t| format!("{t:.4}"))
    );
    PropertyReport::measured(p, name, worst, tol.strict_slack, notes)
}

/// `∫_a^b (1 − ζ⁻¹(y)) dy`.
fn tail_integral(spec: &UtilitySpec, a: f64, b: f64) -> f64 {
    (b - a) - (spec.inverse_integral(b) - spec.inverse_integral(a))
}

/// `V'_{i+1} − V'_i` from the cutoff decomposition of the right-hand side.
pub fn decomposition_rhs(spec: &UtilitySpec, mu: &[f64], lambda: f64, row: &[f64], i: usize) -> f64 {
    let d = |m: usize| row[m] - row[m - 1];
    let mut total = 0.0;
    for k in 0..i {
        let dm = mu[k + 1] - mu[k];
        let lo = (d(i + 1 - k) / dm).min(1.0);
        let hi = (d(i - k) / dm).min(1.0);
        total += dm * tail_integral(spec, lo, hi);
    }
    let dm = mu[i + 1] - mu[i];
    total += dm * tail_integral(spec, (d(1) / dm).min(1.0), 1.0);
    -lambda * total
}

fn check_decomposition(spec: &UtilitySpec, grid: &ValueGrid, mu: &[f64], tol: &Tolerances, name: &str) -> PropertyReport {
    let p = Property::Decomposition;
    let rows = grid.rows();
    let times = grid.times();
    let n = grid.capacity();
    let lambda = grid.params.lambda;
    let mut worst = f64::NEG_INFINITY;
    for k in 1..rows.len() - 1 {
        let h = times[k + 1] - times[k - 1];
        for i in 0..n {
            let fd = ((rows[k + 1][i + 1] - rows[k + 1][i]) - (rows[k - 1][i + 1] - rows[k - 1][i])) / h;
            let formula = decomposition_rhs(spec, mu, lambda, &rows[k], i);
            worst = worst.max((fd - formula).abs());
        }
    }
    PropertyReport::measured(p, name, worst, tol.decomposition, "central differences vs cutoff integrals".into())
}

/// `V_i(t_min)` against `i·μ(1)` on a dedicated long-horizon solve.
fn check_asymptote(spec: &UtilitySpec, params: &ModelParams, tol: &Tolerances, name: &str) -> PropertyReport {
    let p = Property::Asymptote;
    let long = ModelParams {
        t_min: params.deadline - tol.asymptote_horizon / params.lambda,
        dt: tol.asymptote_step / params.lambda,
        ..params.clone()
    };
    let grid = match solve(spec, &long) {
        Ok(g) => g,
        Err(e) => return PropertyReport::skipped(p, name, tol.asymptote, format!("long solve failed: {e}")),
    };
    let mu1 = spec.mu(1).unwrap_or(f64::NAN);
    let row = grid.row(0);
    let gaps: Vec<f64> = (1..=params.n).map(|i| i as f64 * mu1 - row[i]).collect();
    let worst = worst_of(gaps.iter().map(|g| g.abs()));
    let notes = format!(
        "lambda*(T-t_min)={}, gaps i*mu(1)-V_i: [{}]",
        long.horizon(),
        gaps.iter().map(|g| format!("{g:.3e}")).collect::<Vec<_>>().join(", ")
    );
    PropertyReport::measured(p, name, worst, tol.asymptote, notes)
}

/// `k·u` yields `k·V` with identical choices.
fn check_homogeneity(spec: &UtilitySpec, grid: &ValueGrid, tol: &Tolerances, name: &str) -> PropertyReport {
    let p = Property::Homogeneity;
    let n = grid.capacity();
    let mut worst: f64 = 0.0;
    let mut mismatches = 0usize;
    for &k in &tol.homogeneity_factors {
        let scaled_spec = match spec.scaled(k, n) {
            Ok(s) => s,
            Err(e) => return PropertyReport::skipped(p, name, tol.homogeneity, e.to_string()),
        };
        let scaled = match solve(&scaled_spec, &grid.params) {
            Ok(g) => g,
            Err(e) => return PropertyReport::skipped(p, name, tol.homogeneity, format!("scaled solve failed: {e}")),
        };
        match scaled.max_abs_diff(&grid.scaled(k)) {
            Ok(d) => worst = worst.max(d),
            Err(e) => return PropertyReport::skipped(p, name, tol.homogeneity, e.to_string()),
        }
        mismatches += policy_mismatches(spec, grid, &scaled_spec, &scaled);
    }
    if mismatches > 0 {
        worst = f64::MAX;
    }
    let notes = format!("k in {:?}, {mismatches} policy mismatches", tol.homogeneity_factors);
    PropertyReport::measured(p, name, worst, tol.homogeneity, notes)
}

/// Lattice points where the two grids prescribe different saving choices.
/// A difference only counts when the first grid is not indifferent between
/// the two choices, so exact ties broken by rounding are ignored.
fn policy_mismatches(spec_a: &UtilitySpec, a: &ValueGrid, spec_b: &UtilitySpec, b: &ValueGrid) -> usize {
    let stride = (a.times().len() / 100).max(1);
    let mu = spec_a.mu_table(a.capacity()).unwrap_or_default();
    let mut count = 0;
    for idx in (0..a.times().len()).step_by(stride) {
        let row = a.row(idx);
        for x in 1..=a.capacity() {
            for j in 0..50 {
                let theta = (j as f64 + 0.5) / 50.0;
                let (Ok(ya), Ok(yb)) = (choose(spec_a, row, theta, x), choose(spec_b, b.row(idx), theta, x)) else {
                    count += 1;
                    continue;
                };
                if ya != yb {
                    let z = spec_a.zeta(theta);
                    let value = |y: usize| mu[x - y] * z + row[y];
                    if (value(ya) - value(yb)).abs() > 1e-12 * (1.0 + value(ya).abs()) {
                        count += 1;
                    }
                }
            }
        }
    }
    count
}

/// Solving at `κλ` equals the `λ` solution at dilated time `T + κ(t − T)`.
fn check_dilation(spec: &UtilitySpec, grid: &ValueGrid, tol: &Tolerances, name: &str) -> PropertyReport {
    let p = Property::LambdaDilation;
    let kappa = tol.dilation_kappa;
    let base = &grid.params;
    let fast = ModelParams {
        lambda: kappa * base.lambda,
        t_min: base.deadline - (base.deadline - base.t_min) / kappa,
        dt: base.dt / kappa,
        ..base.clone()
    };
    let w = match solve(spec, &fast) {
        Ok(g) => g,
        Err(e) => return PropertyReport::skipped(p, name, tol.dilation, format!("fast solve failed: {e}")),
    };
    let mut worst: f64 = 0.0;
    for (t, row) in w.times().iter().zip(w.rows()) {
        let dilated = (base.deadline + kappa * (t - base.deadline)).max(grid.t_start());
        match grid.row_at(dilated) {
            Ok(v) => {
                for (a, b) in row.iter().zip(&v) {
                    worst = worst.max((a - b).abs());
                }
            }
            Err(e) => return PropertyReport::skipped(p, name, tol.dilation, e.to_string()),
        }
    }
    PropertyReport::measured(p, name, worst, tol.dilation, format!("kappa={kappa}"))
}

/// With `ξ` more concave than `ζ`, `W_i − W_{i−1} > V_i − V_{i−1}` before `T`.
fn check_more_concave_marginal(v: &ValueGrid, w: &ValueGrid, tol: &Tolerances, name: &str) -> PropertyReport {
    let p = Property::MoreConcaveMarginal;
    let last = v.rows().len() - 1;
    let n = v.capacity();
    let worst = worst_of((0..last).flat_map(|k| {
        let (a, b) = (v.row(k), w.row(k));
        (1..=n).map(move |i| (a[i] - a[i - 1]) - (b[i] - b[i - 1]))
    }));
    PropertyReport::measured(p, name, worst, tol.strict_slack, "max of dV - dW".into())
}

/// Near `T` the more concave agent's cutoffs sit below, `ψ_{i,j} < φ_{i,j}`;
/// for `j < i` the curves cross before `ψ_{i,j}` reaches 1.
fn check_crossover(
    phi: &CutoffTable,
    v: &ValueGrid,
    spec_v: &UtilitySpec,
    w: &ValueGrid,
    spec_w: &UtilitySpec,
    tol: &Tolerances,
    name: &str,
) -> PropertyReport {
    let p = Property::CutoffCrossover;
    let psi = match cutoffs_unchecked(w, spec_w) {
        Ok(t) => t,
        Err(e) => return PropertyReport::skipped(p, name, tol.strict_slack, e.to_string()),
    };
    let last = phi.times.len() - 1;
    let mu = spec_v.mu_table(phi.n).unwrap_or_default();
    let mut worst = f64::NEG_INFINITY;
    let near = last - 1;
    for i in 1..=phi.n {
        for j in 1..=i {
            if let (Some(a), Some(b)) = (phi.phi(near, i, j), psi.phi(near, i, j)) {
                worst = worst.max(b - a);
            }
        }
    }
    let mut crossings = Vec::new();
    let mut off_grid = 0;
    for i in 2..=phi.n {
        for j in 1..i {
            let Some(start) = psi.domain_start(i, j) else {
                off_grid += 1;
                continue;
            };
            // sign change of φ − ψ on the stored grid, scanning back from T
            let mut found = None;
            for k in (0..last).rev() {
                match (phi.phi(k, i, j), psi.phi(k, i, j)) {
                    (Some(a), Some(b)) if a - b < 0.0 => {
                        found = Some(phi.times[k]);
                        break;
                    }
                    (_, None) => break,
                    _ => {}
                }
            }
            // at ψ's domain start, ψ = 1 while φ must still be below 1
            let row = v.row_at(start).unwrap_or_default();
            let arg = (row[j] - row[j - 1]) / (mu[i - j + 1] - mu[i - j]);
            let phi_at_start = if arg <= 1.0 { spec_v.zeta_inverse_clamped(arg) } else { f64::INFINITY };
            worst = worst.max(phi_at_start - 1.0);
            match found {
                Some(t) => crossings.push(format!("({i},{j}) t~{t:.3} psi^-1(1)={start:.4}")),
                None => {
                    worst = f64::MAX;
                    crossings.push(format!("({i},{j}) no crossing"));
                }
            }
        }
    }
    let notes = format!(
        "psi<phi near T; {} crossings [{}]; {off_grid} pairs with psi defined on the whole grid",
        crossings.len(),
        crossings.join("; ")
    );
    PropertyReport::measured(p, name, worst, tol.strict_slack, notes)
}

/// `f(t) = 1 − e^{−λ(T−t)}`, the probability of another opportunity before
/// the deadline and the discount factor of the matching discrete-time model.
pub fn effective_discount(lambda: f64, deadline: f64, t: f64) -> Result<f64> {
    if t > deadline {
        return Err(Error::domain(format!("time {t} after the deadline {deadline}")));
    }
    Ok(-(-lambda * (deadline - t)).exp_m1())
}

/// Marginal-value ratio conditional on another opportunity arriving.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EulerRatio {
    pub t: f64,
    /// `1/(1 − e^{−λ(T−t)})`.
    pub analytic: f64,
    /// `E[ΔE(t⁺) | t⁺ ≤ T] / ΔV(t)` for the last unit of the stock, with
    /// `ΔE` the change in the expected best response, integrated over the
    /// stored grid by the trapezoid rule.
    pub discrete: f64,
}

/// Analytic and grid-measured deadline pressure at `t`.
pub fn euler_ratio_diagnostic(grid: &ValueGrid, spec: &UtilitySpec, t: f64) -> Result<EulerRatio> {
    let deadline = grid.params.deadline;
    if !(t < deadline) {
        return Err(Error::domain(format!("time {t} is not before the deadline {deadline}")));
    }
    let lambda = grid.params.lambda;
    let x = grid.capacity();
    let kernel = EmaxKernel::new(spec, x, grid.params.quad_points)?;
    let marginal_emax = |row: &[f64]| kernel.quadrature(row, x) - kernel.quadrature(row, x - 1);
    let prob = effective_discount(lambda, deadline, t)?;

    let mut nodes = vec![(t, marginal_emax(&grid.row_at(t)?))];
    for (s, row) in grid.times().iter().zip(grid.rows()) {
        if *s > t {
            nodes.push((*s, marginal_emax(row)));
        }
    }
    let weight = |s: f64| lambda * (-lambda * (s - t)).exp();
    let integral: f64 = nodes
        .windows(2)
        .map(|w| 0.5 * (w[1].0 - w[0].0) * (weight(w[0].0) * w[0].1 + weight(w[1].0) * w[1].1))
        .sum();
    let current = grid.delta_resource(t, x - 1)?;
    Ok(EulerRatio { t, analytic: 1.0 / prob, discrete: integral / prob / current })
}
