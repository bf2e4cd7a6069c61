//! Saving rules and cutoff curves derived from a solved value grid, plus the
//! two misperception transforms that make an agent save too much.
//!
//! With discrete-concave `V` and concave `μ`, an agent holding `i` units keeps
//! at least `j` of them exactly when `θ ≤ φ_{i,j}(t)`, where
//! `φ_{i,j} = ζ⁻¹((V_j − V_{j−1}) / (μ(i−j+1) − μ(i−j)))`. The cutoff is
//! undefined when the argument of `ζ⁻¹` exceeds 1: even a perfect opportunity
//! is not worth the `j`-th unit.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::utility::{is_more_concave, UtilitySpec, DEFAULT_SHAPE_GRID};
use crate::value_solver::ValueGrid;

/// Time resolution of [`CutoffTable::domain_start`].
pub const DOMAIN_START_TOL: f64 = 1e-4;

/// Tolerance when validating the cutoff invariants on a solved grid.
pub const CUTOFF_TOL: f64 = 1e-8;

/// `φ_{i,j}(t)` for `1 ≤ j ≤ i ≤ n` at every stored time of a grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CutoffTable {
    pub n: usize,
    pub deadline: f64,
    pub times: Vec<f64>,
    /// `phi[k][i-1][j-1]`; `None` where undefined.
    phi: Vec<Vec<Vec<Option<f64>>>>,
    /// `domain_start[i-1][j-1]`: earliest time `φ_{i,j}` is defined, or
    /// `None` when it is defined on the whole grid.
    domain_start: Vec<Vec<Option<f64>>>,
}

impl CutoffTable {
    /// `φ_{i,j}` at stored time index `k`.
    pub fn phi(&self, k: usize, i: usize, j: usize) -> Option<f64> {
        assert!(1 <= j && j <= i && i <= self.n, "cutoff index ({i}, {j}) out of range");
        self.phi[k][i - 1][j - 1]
    }

    /// `φ_{i,j}(t)`, linear between stored times; `None` if either
    /// neighbouring value is undefined or `t` is off the grid.
    pub fn phi_at(&self, t: f64, i: usize, j: usize) -> Option<f64> {
        let last = self.times.len() - 1;
        if t < self.times[0] || t > self.times[last] {
            return None;
        }
        let k = self.times.partition_point(|s| *s <= t).saturating_sub(1).min(last);
        if k == last || self.times[k] == t {
            return self.phi(k, i, j);
        }
        let (a, b) = (self.phi(k, i, j)?, self.phi(k + 1, i, j)?);
        let w = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        Some((1.0 - w) * a + w * b)
    }

    pub fn domain_start(&self, i: usize, j: usize) -> Option<f64> {
        self.domain_start[i - 1][j - 1]
    }

    /// Checks the table invariants: defined values in `(0, 1]` before the
    /// deadline and 0 at it, decrease in time, `φ_{i,i}` always defined and
    /// `φ_{i+1,j+1} < φ_{i,j} < φ_{i+1,j}`. Strict comparisons are allowed to
    /// fail by at most `tol`.
    pub fn validate(&self, tol: f64) -> Result<()> {
        let last = self.times.len() - 1;
        let fail = |k: usize, detail: String| {
            Err(Error::Precondition(format!("cutoff table at t={}: {detail}", self.times[k])))
        };
        for k in 0..=last {
            let at_deadline = (self.times[k] - self.deadline).abs() <= 1e-12 * (1.0 + self.deadline.abs());
            for i in 1..=self.n {
                if self.phi(k, i, i).is_none() {
                    return fail(k, format!("phi_{i},{i} undefined"));
                }
                for j in 1..=i {
                    let Some(p) = self.phi(k, i, j) else { continue };
                    if at_deadline {
                        if p.abs() > tol {
                            return fail(k, format!("phi_{i},{j}(T) = {p}"));
                        }
                    } else if !(p > -tol && p <= 1.0 + tol) {
                        return fail(k, format!("phi_{i},{j} = {p} outside (0, 1]"));
                    }
                    if k < last {
                        if let Some(q) = self.phi(k + 1, i, j) {
                            if q > p + tol {
                                return fail(k, format!("phi_{i},{j} increases in time"));
                            }
                        }
                    }
                    if i < self.n {
                        if let (Some(lo), Some(hi)) = (self.phi(k, i + 1, j + 1), self.phi(k, i + 1, j)) {
                            if at_deadline {
                                continue;
                            }
                            if lo >= p + tol {
                                return fail(k, format!("phi_{},{} >= phi_{i},{j}", i + 1, j + 1));
                            }
                            if p >= hi + tol {
                                return fail(k, format!("phi_{i},{j} >= phi_{},{j}", i + 1));
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Long format: `t,i,j,phi,defined`. Undefined entries have an empty
    /// `phi` field.
    pub fn write_csv<W: Write>(&self, writer: W, preamble: &[String]) -> Result<()> {
        let mut writer = writer;
        for line in preamble {
            writeln!(writer, "# {line}")?;
        }
        let mut csv = csv::Writer::from_writer(writer);
        csv.write_record(["t", "i", "j", "phi", "defined"])?;
        for (k, t) in self.times.iter().enumerate() {
            for i in 1..=self.n {
                for j in 1..=i {
                    let (value, defined) = match self.phi(k, i, j) {
                        Some(p) => (format!("{p:.12}"), "1"),
                        None => (String::new(), "0"),
                    };
                    csv.write_record([format!("{t:.12}"), i.to_string(), j.to_string(), value, defined.into()])?;
                }
            }
        }
        csv.flush()?;
        Ok(())
    }
}

/// `(V_j − V_{j−1}) / (μ(i−j+1) − μ(i−j))`, the argument of `ζ⁻¹` in `φ_{i,j}`.
fn cutoff_argument(row: &[f64], mu: &[f64], i: usize, j: usize) -> f64 {
    (row[j] - row[j - 1]) / (mu[i - j + 1] - mu[i - j])
}

/// Cutoff table of a solved grid; fails if the grid yields a table that
/// breaks its invariants.
pub fn cutoffs(grid: &ValueGrid, spec: &UtilitySpec) -> Result<CutoffTable> {
    let table = cutoffs_unchecked(grid, spec)?;
    table.validate(CUTOFF_TOL)?;
    Ok(table)
}

/// Cutoff table without the invariant checks, for inspecting damaged grids.
pub fn cutoffs_unchecked(grid: &ValueGrid, spec: &UtilitySpec) -> Result<CutoffTable> {
    let n = grid.capacity();
    let mu = spec.mu_table(n)?;
    let phi: Vec<Vec<Vec<Option<f64>>>> = grid
        .rows()
        .iter()
        .map(|row| {
            (1..=n)
                .map(|i| {
                    (1..=i)
                        .map(|j| {
                            let arg = cutoff_argument(row, &mu, i, j);
                            (arg <= 1.0).then(|| spec.zeta_inverse_clamped(arg))
                        })
                        .collect()
                })
                .collect()
        })
        .collect();

    let times = grid.times().to_vec();
    let mut domain_start = Vec::with_capacity(n);
    for i in 1..=n {
        let mut starts = Vec::with_capacity(i);
        for j in 1..=i {
            let undefined = |k: usize| phi[k][i - 1][j - 1].is_none();
            let Some(k) = (0..times.len()).rev().find(|&k| undefined(k)) else {
                starts.push(None);
                continue;
            };
            if k + 1 == times.len() {
                starts.push(Some(times[k]));
                continue;
            }
            let excess = |t: f64| -> Result<f64> {
                let row = grid.row_at(t)?;
                Ok(cutoff_argument(&row, &mu, i, j) - 1.0)
            };
            let (mut lo, mut hi) = (times[k], times[k + 1]);
            while hi - lo > DOMAIN_START_TOL * 1e-2 {
                let mid = 0.5 * (lo + hi);
                if excess(mid)? > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            starts.push(Some(hi));
        }
        domain_start.push(starts);
    }

    Ok(CutoffTable {
        n,
        deadline: grid.params.deadline,
        times,
        phi,
        domain_start,
    })
}

/// Best `y` given a value row; ties go to the larger `y`.
pub fn choose(spec: &UtilitySpec, row: &[f64], theta: f64, x: usize) -> Result<usize> {
    if x >= row.len() {
        return Err(Error::domain(format!("stock {x} beyond value row of length {}", row.len())));
    }
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::domain(format!("quality {theta} outside [0, 1]")));
    }
    let mu = spec.mu_table(x)?;
    let z = spec.zeta(theta);
    let mut best = (f64::NEG_INFINITY, 0);
    for (y, v) in row.iter().enumerate().take(x + 1) {
        let value = mu[x - y] * z + v;
        if value >= best.0 {
            best = (value, y);
        }
    }
    Ok(best.1)
}

/// `y(θ, t, x)`: how many of `x` units to keep when an opportunity of
/// quality `θ` arrives at `t`.
pub fn saving_rule(grid: &ValueGrid, spec: &UtilitySpec, theta: f64, t: f64, x: usize) -> Result<usize> {
    if t > grid.params.deadline {
        return Err(Error::domain(format!("time {t} after the deadline")));
    }
    if x > grid.capacity() {
        return Err(Error::domain(format!("stock {x} beyond grid capacity {}", grid.capacity())));
    }
    choose(spec, &grid.row_at(t)?, theta, x)
}

/// `θ̃ = ζ̃⁻¹(ζ(θ))`, the quality an agent with curvature `ζ̃` believes it sees.
pub fn misperceived_theta(true_spec: &UtilitySpec, believed_spec: &UtilitySpec, theta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&theta) {
        return Err(Error::domain(format!("quality {theta} outside [0, 1]")));
    }
    believed_spec.zeta_inverse(true_spec.zeta(theta).clamp(0.0, 1.0))
}

/// An agent who evaluates opportunities with a more concave `ζ̃` than the
/// true `ζ` and plans with the value function that belief implies.
#[derive(Clone, Debug)]
pub struct Procrastinator<'a> {
    true_spec: &'a UtilitySpec,
    believed_spec: &'a UtilitySpec,
    believed_grid: &'a ValueGrid,
}

impl<'a> Procrastinator<'a> {
    pub fn new(
        true_spec: &'a UtilitySpec,
        believed_spec: &'a UtilitySpec,
        believed_grid: &'a ValueGrid,
    ) -> Result<Self> {
        if !is_more_concave(true_spec, believed_spec, DEFAULT_SHAPE_GRID)? {
            return Err(Error::Precondition(
                "believed utility is not strictly more concave than the true one".into(),
            ));
        }
        Ok(Procrastinator { true_spec, believed_spec, believed_grid })
    }

    pub fn saving(&self, theta: f64, t: f64, x: usize) -> Result<usize> {
        let believed = misperceived_theta(self.true_spec, self.believed_spec, theta)?;
        saving_rule(self.believed_grid, self.believed_spec, believed, t, x)
    }
}

/// One-shot form of [`Procrastinator::saving`].
pub fn procrastinator_policy(
    true_spec: &UtilitySpec,
    believed_spec: &UtilitySpec,
    believed_grid: &ValueGrid,
    theta: f64,
    t: f64,
    x: usize,
) -> Result<usize> {
    Procrastinator::new(true_spec, believed_spec, believed_grid)?.saving(theta, t, x)
}

/// Believed value row of an agent who thinks opportunities arrive `κ` times
/// faster: `V(T + κ(t − T))` from the true-rate grid.
pub fn dilated_row(grid: &ValueGrid, kappa: f64, t: f64) -> Result<Vec<f64>> {
    if !(kappa.is_finite() && kappa >= 1.0) {
        return Err(Error::invalid("kappa", format!("must be >= 1, got {kappa}")));
    }
    let deadline = grid.params.deadline;
    if t > deadline {
        return Err(Error::domain(format!("time {t} after the deadline")));
    }
    let dilated = deadline + kappa * (t - deadline);
    if dilated < grid.t_start() {
        return Err(Error::domain(format!(
            "dilated time {dilated} precedes the grid start {}",
            grid.t_start()
        )));
    }
    grid.row_at(dilated)
}

/// Saving rule of an agent who overestimates the opportunity rate by `κ`.
pub fn lambda_misperception_policy(
    spec: &UtilitySpec,
    grid_true_lambda: &ValueGrid,
    kappa: f64,
    theta: f64,
    t: f64,
    x: usize,
) -> Result<usize> {
    if x > grid_true_lambda.capacity() {
        return Err(Error::domain(format!("stock {x} beyond grid capacity")));
    }
    choose(spec, &dilated_row(grid_true_lambda, kappa, t)?, theta, x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::utility::{MuFamily, ZetaFamily};
    use crate::value_solver::{solve, ModelParams};

    fn linear_grid(n: usize, t_min: f64) -> (UtilitySpec, ValueGrid) {
        let spec = UtilitySpec::power(1.0, 0.5).unwrap();
        let grid = solve(&spec, &ModelParams::new(1.0, 10.0, n, t_min)).unwrap();
        (spec, grid)
    }

    #[test]
    fn single_unit_cutoff_is_value() {
        let (spec, grid) = linear_grid(1, 6.0);
        let table = cutoffs(&grid, &spec).unwrap();
        assert!((table.phi_at(8.0, 1, 1).unwrap() - 0.5).abs() < 1e-6);
        assert_eq!(table.phi(table.times.len() - 1, 1, 1), Some(0.0));
        assert_eq!(table.domain_start(1, 1), None);
    }

    #[test]
    fn saving_rule_examples() {
        let (spec, grid) = linear_grid(1, 6.0);
        assert_eq!(saving_rule(&grid, &spec, 0.6, 8.0, 1).unwrap(), 0);
        assert_eq!(saving_rule(&grid, &spec, 0.4, 8.0, 1).unwrap(), 1);
        assert_eq!(saving_rule(&grid, &spec, 0.0, 8.0, 1).unwrap(), 1);
        assert_eq!(saving_rule(&grid, &spec, 0.3, 10.0, 1).unwrap(), 0);
        assert!(saving_rule(&grid, &spec, 0.3, 10.5, 1).is_err());
        assert!(saving_rule(&grid, &spec, 0.3, 8.0, 2).is_err());
    }

    #[test]
    fn lower_cutoff_becomes_undefined_in_the_past() {
        let (spec, grid) = linear_grid(2, -10.0);
        let table = cutoffs(&grid, &spec).unwrap();
        let start = table.domain_start(2, 1).expect("phi_2,1 undefined somewhere");
        assert!(start > -10.0 && start < 10.0);
        assert!(table.phi_at(start - 0.01, 2, 1).is_none());
        assert!(table.phi_at(start + 0.01, 2, 1).is_some());
        assert_eq!(table.domain_start(2, 2), None);
        let row = grid.row_at(start).unwrap();
        let arg = (row[1] - row[0]) / (2f64.sqrt() - 1.0);
        assert!((arg - 1.0).abs() < 1e-4);
    }

    #[test]
    fn misperception_examples() {
        let lin = UtilitySpec::power(1.0, 0.5).unwrap();
        let root = UtilitySpec::power(0.5, 0.5).unwrap();
        let sq = UtilitySpec::power(2.0, 0.5).unwrap();
        assert_eq!(misperceived_theta(&lin, &root, 0.0).unwrap(), 0.0);
        assert!((misperceived_theta(&lin, &root, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert!((misperceived_theta(&lin, &root, 0.5).unwrap() - 0.25).abs() < 1e-12);
        assert!((misperceived_theta(&sq, &lin, 0.5).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn procrastinator_needs_more_concave_belief() {
        let (lin, grid) = linear_grid(1, 8.0);
        let convex = UtilitySpec::new(ZetaFamily::Power { k: 2.0 }, MuFamily::Power { gamma: 0.5 }).unwrap();
        let err = procrastinator_policy(&lin, &convex, &grid, 0.5, 9.0, 1).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }

    #[test]
    fn faster_rate_belief_raises_threshold() {
        let (spec, grid) = linear_grid(1, 0.0);
        let believed = dilated_row(&grid, 2.0, 8.0).unwrap();
        let expected = crate::value_solver::closed_form_single(1.0, 10.0, 6.0).unwrap();
        assert!((believed[1] - expected).abs() < 1e-6);
        assert!((expected - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(lambda_misperception_policy(&spec, &grid, 2.0, 0.6, 8.0, 1).unwrap(), 1);
        assert_eq!(lambda_misperception_policy(&spec, &grid, 2.0, 0.7, 8.0, 1).unwrap(), 0);
        assert_eq!(saving_rule(&grid, &spec, 0.6, 8.0, 1).unwrap(), 0);
        assert!(lambda_misperception_policy(&spec, &grid, 2.0, 0.7, 2.0, 1).is_err());
        assert!(lambda_misperception_policy(&spec, &grid, 0.5, 0.7, 8.0, 1).is_err());
    }
}
