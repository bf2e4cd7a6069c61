//! Backward solution of the value ODE
//! `dV_i/dt = λ[V_i − E max_y {u(θ, i−y) + V_y}]` with `V(T, ·) = 0`.
//!
//! [`solve`] integrates with classic fixed-step RK4 from the deadline down to
//! `t_min`, storing every step. [`oracle_discrete_time`] is an independent
//! brute-force backward induction used to check it, and
//! [`solve_two_payment`] handles a second payment arriving at a fixed time.

pub mod emax;
mod grid;
mod oracle;
mod two_payment;

pub use emax::{emax, emax_detailed, EmaxEstimate, EmaxKernel, CROSS_CHECK_TOL};
pub use grid::{ModelParams, SolveDiagnostics, ValueGrid, MIN_QUAD_POINTS};
pub use oracle::{oracle_discrete_time, oracle_choice};
pub use two_payment::{solve_two_payment, solve_two_payment_with, TwoPaymentGrid, TwoPaymentSpec};

use crate::error::{Error, Result};
use crate::utility::UtilitySpec;

/// Tolerance for the structural checks run on every solved grid.
pub const INVARIANT_TOL: f64 = 1e-8;

/// Tolerance of the `k·u` homogeneity postcondition.
pub const SCALE_TOL: f64 = 1e-9;

/// `V(t, 1) = 1 − 2/(λ(T−t)+2)` for `ζ(θ) = θ`, `μ(1) = 1`.
pub fn closed_form_single(lambda: f64, deadline: f64, t: f64) -> Result<f64> {
    if !(t <= deadline) {
        return Err(Error::domain(format!("time {t} is after the deadline {deadline}")));
    }
    if !(lambda > 0.0) {
        return Err(Error::invalid("lambda", "must be > 0"));
    }
    Ok(1.0 - 2.0 / (lambda * (deadline - t) + 2.0))
}

/// Solves for `V` on `[t_min, T]`.
pub fn solve(spec: &UtilitySpec, params: &ModelParams) -> Result<ValueGrid> {
    params.validate()?;
    spec.validate_for_stock(params.n)?;
    let kernel = EmaxKernel::new(spec, params.n, params.quad_points)?;
    let terminal = vec![0.0; params.n + 1];
    let (times, values, diagnostics) = integrate_backward(
        &kernel,
        params.lambda,
        terminal,
        params.deadline,
        params.t_min,
        params.dt,
    )?;
    let grid = ValueGrid::from_parts(params.clone(), times, values)?.with_diagnostics(diagnostics);
    grid.validate_value_function(kernel.mu()[1], INVARIANT_TOL)?;
    if grid.diagnostics().degraded_evaluations > 0 {
        log::warn!(
            "{} E-max evaluations failed the cross-check (worst {:.3e})",
            grid.diagnostics().degraded_evaluations,
            grid.diagnostics().max_emax_discrepancy
        );
    }
    Ok(grid)
}

/// Solves for the utility `k·u` and asserts that the result is `k` times the
/// unscaled grid with the same saving choices.
pub fn solve_scaled(spec: &UtilitySpec, params: &ModelParams, k: f64) -> Result<ValueGrid> {
    if !(k.is_finite() && k > 0.0) {
        return Err(Error::invalid("k", format!("scale must be finite and > 0, got {k}")));
    }
    let base = solve(spec, params)?;
    let scaled_spec = spec.scaled(k, params.n)?;
    let scaled = solve(&scaled_spec, params)?;

    let reference = base.scaled(k);
    let diff = scaled.max_abs_diff(&reference)?;
    if !(diff <= SCALE_TOL * k.max(1.0)) {
        return Err(Error::Solver {
            time: params.t_min,
            detail: format!("scaled grid departs from k*V by {diff:e}"),
        });
    }

    let base_mu = spec.mu_table(params.n)?;
    let scaled_mu = scaled_spec.mu_table(params.n)?;
    let stride = (base.times().len() / 50).max(1);
    for idx in (0..base.times().len()).step_by(stride) {
        for x in 1..=params.n {
            for j in 0..=40 {
                let theta = (j as f64 + 0.5) / 41.0;
                let z = spec.zeta(theta);
                let a = choice_with_gap(&base_mu, base.row(idx), x, z);
                let b = choice_with_gap(&scaled_mu, scaled.row(idx), x, z);
                if a.1 > 1e-9 && a.0 != b.0 {
                    return Err(Error::Solver {
                        time: base.times()[idx],
                        detail: format!("scaling changed the saving choice at theta={theta}, x={x}"),
                    });
                }
            }
        }
    }
    Ok(scaled)
}

/// Best `y` and its margin over the runner-up.
fn choice_with_gap(mu: &[f64], row: &[f64], x: usize, z: f64) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    let mut second = f64::NEG_INFINITY;
    for y in 0..=x {
        let v = mu[x - y] * z + row[y];
        if v >= best.1 {
            second = best.1;
            best = (y, v);
        } else if v > second {
            second = v;
        }
    }
    (best.0, best.1 - second)
}

type Trajectory = (Vec<f64>, Vec<Vec<f64>>, SolveDiagnostics);

/// RK4 for `dV_i/dt = λ[V_i − emax(V, i)]`, all `i` in the row, from
/// `t_start` backward to `t_end`. Returned times are increasing.
pub(crate) fn integrate_backward(
    kernel: &EmaxKernel<'_>,
    lambda: f64,
    start: Vec<f64>,
    t_start: f64,
    t_end: f64,
    dt: f64,
) -> Result<Trajectory> {
    let times_desc = ModelParams::backward_times(t_start, t_end, dt);
    let width = start.len();
    let mut diagnostics = SolveDiagnostics::default();
    let mut rows = Vec::with_capacity(times_desc.len());
    rows.push(start);

    let rhs = |row: &[f64], out: &mut [f64], diag: &mut SolveDiagnostics| {
        for x in 0..width {
            let est = if x == 0 {
                EmaxEstimate { quadrature: row[0], envelope: row[0] }
            } else {
                diag.emax_evaluations += 1;
                kernel.estimate(row, x)
            };
            let d = est.discrepancy();
            if d > diag.max_emax_discrepancy {
                diag.max_emax_discrepancy = d;
            }
            if est.degraded() {
                diag.degraded_evaluations += 1;
            }
            out[x] = lambda * (row[x] - est.value());
        }
    };

    let mut k1 = vec![0.0; width];
    let mut k2 = vec![0.0; width];
    let mut k3 = vec![0.0; width];
    let mut k4 = vec![0.0; width];
    let mut stage = vec![0.0; width];

    for w in times_desc.windows(2) {
        let h = w[0] - w[1];
        let current = rows.last().expect("non-empty");
        if !emax::is_discrete_concave(current, 1e-9) {
            diagnostics.non_concave_rows += 1;
        }
        rhs(current, &mut k1, &mut diagnostics);
        for i in 0..width {
            stage[i] = current[i] - 0.5 * h * k1[i];
        }
        rhs(&stage, &mut k2, &mut diagnostics);
        for i in 0..width {
            stage[i] = current[i] - 0.5 * h * k2[i];
        }
        rhs(&stage, &mut k3, &mut diagnostics);
        for i in 0..width {
            stage[i] = current[i] - h * k3[i];
        }
        rhs(&stage, &mut k4, &mut diagnostics);
        let next: Vec<f64> = (0..width)
            .map(|i| current[i] - h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect();
        for (i, (&new, &old)) in next.iter().zip(current).enumerate() {
            if !new.is_finite() {
                return Err(Error::Solver { time: w[1], detail: format!("V_{i} is not finite") });
            }
            if new < old - INVARIANT_TOL {
                return Err(Error::Solver {
                    time: w[1],
                    detail: format!(
                        "V_{i} decreased backward in time ({old} -> {new}); step {h} is unstable"
                    ),
                });
            }
        }
        rows.push(next);
    }

    let mut times = times_desc;
    times.reverse();
    rows.reverse();
    Ok((times, rows, diagnostics))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_examples() {
        assert_eq!(closed_form_single(1.0, 10.0, 10.0).unwrap(), 0.0);
        assert!((closed_form_single(1.0, 10.0, 8.0).unwrap() - 0.5).abs() < 1e-15);
        assert!((closed_form_single(1.0, 10.0, -1e6).unwrap() - 1.0).abs() < 1e-4);
        assert!(matches!(closed_form_single(1.0, 10.0, 10.5), Err(Error::Domain(_))));
    }

    #[test]
    fn linear_single_unit_matches_closed_form() {
        let spec = UtilitySpec::power(1.0, 0.5).unwrap();
        let params = ModelParams::new(1.0, 10.0, 1, 0.0);
        let grid = solve(&spec, &params).unwrap();
        for t in [0.0, 2.5, 8.0, 9.9, 10.0] {
            let exact = closed_form_single(1.0, 10.0, t).unwrap();
            assert!((grid.value(t, 1).unwrap() - exact).abs() < 1e-6, "t={t}");
        }
        assert_eq!(grid.row_at(10.0).unwrap(), vec![0.0, 0.0]);
        assert_eq!(grid.diagnostics().degraded_evaluations, 0);
    }

    #[test]
    fn scaling_multiplies_values() {
        let spec = UtilitySpec::power(1.0, 0.5).unwrap();
        let params = ModelParams::new(1.0, 10.0, 1, 6.0);
        let grid = solve_scaled(&spec, &params, 3.0).unwrap();
        assert!((grid.value(8.0, 1).unwrap() - 1.5).abs() < 3e-6);
        let same = solve_scaled(&spec, &params, 1.0).unwrap();
        assert!(same.max_abs_diff(&solve(&spec, &params).unwrap()).unwrap() < 1e-15);
    }

    #[test]
    fn rejects_bad_params() {
        let spec = UtilitySpec::power(1.0, 0.5).unwrap();
        let params = ModelParams::new(1.0, 10.0, 1, 0.0).with_dt(0.2);
        assert!(matches!(solve(&spec, &params), Err(Error::Invalid { .. })));
        assert!(solve_scaled(&spec, &ModelParams::new(1.0, 10.0, 1, 9.0), 0.0).is_err());
    }
}
