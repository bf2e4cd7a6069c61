//! Brute-force discrete-time backward induction.
//!
//! Time advances in steps of `dt_fine`. In each step an opportunity arrives
//! with probability `λ·dt_fine`, its quality is drawn uniformly from the
//! midpoints of a `theta_grid`-cell partition of `[0, 1]`, and the agent picks
//! the amount to keep by exhaustive search. Shares no code with the ODE
//! solver beyond the utility evaluation.

use super::grid::{ModelParams, ValueGrid};
use crate::error::{Error, Result};
use crate::utility::UtilitySpec;

/// Largest admissible per-step opportunity probability (exclusive).
pub const MAX_STEP_PROBABILITY: f64 = 0.05;

/// Backward induction on a fine grid. `discount`, if given, multiplies the
/// continuation value `V(t+dt, y)` chosen at an opportunity by `f(t+dt)`.
pub fn oracle_discrete_time(
    spec: &UtilitySpec,
    params: &ModelParams,
    dt_fine: f64,
    theta_grid: usize,
    discount: Option<&(dyn Fn(f64) -> f64 + Sync)>,
) -> Result<ValueGrid> {
    let probe = ModelParams { dt: dt_fine.min(0.1 / params.lambda), ..params.clone() };
    probe.validate()?;
    if !(dt_fine > 0.0 && params.lambda * dt_fine < MAX_STEP_PROBABILITY) {
        return Err(Error::Precondition(format!(
            "lambda*dt_fine = {} must lie in (0, {MAX_STEP_PROBABILITY})",
            params.lambda * dt_fine
        )));
    }
    if theta_grid == 0 {
        return Err(Error::invalid("theta_grid", "must be positive"));
    }
    spec.validate_for_stock(params.n)?;

    let n = params.n;
    let mu = spec.mu_table(n)?;
    let zetas: Vec<f64> = (0..theta_grid)
        .map(|j| spec.zeta((j as f64 + 0.5) / theta_grid as f64))
        .collect();

    let times_desc = ModelParams::backward_times(params.deadline, params.t_min, dt_fine);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(times_desc.len());
    rows.push(vec![0.0; n + 1]);
    let mut continuation = vec![0.0; n + 1];
    for w in times_desc.windows(2) {
        let (t_next, t) = (w[0], w[1]);
        let p = params.lambda * (t_next - t);
        let next = rows.last().expect("non-empty");
        let f = discount.map_or(1.0, |f| f(t_next));
        for (c, v) in continuation.iter_mut().zip(next) {
            *c = f * v;
        }
        let mut row = vec![0.0; n + 1];
        for x in 1..=n {
            let mut total = 0.0;
            for &z in &zetas {
                let mut best = f64::NEG_INFINITY;
                for y in 0..=x {
                    let v = mu[x - y] * z + continuation[y];
                    if v > best {
                        best = v;
                    }
                }
                total += best;
            }
            row[x] = p * total / theta_grid as f64 + (1.0 - p) * next[x];
        }
        rows.push(row);
    }

    let mut times = times_desc;
    times.reverse();
    rows.reverse();
    let grid_params = ModelParams { dt: dt_fine, ..params.clone() };
    ValueGrid::from_parts(grid_params, times, rows)
}

/// Exhaustive argmax of `u(θ, x−y) + continuation[y]`; ties go to the larger
/// `y`.
pub fn oracle_choice(spec: &UtilitySpec, continuation: &[f64], x: usize, theta: f64) -> Result<usize> {
    if x >= continuation.len() {
        return Err(Error::domain(format!("stock {x} exceeds continuation length")));
    }
    let mut best = (f64::NEG_INFINITY, 0);
    for (y, c) in continuation.iter().enumerate().take(x + 1) {
        let v = spec.eval_u(theta, x - y)? + c;
        if v >= best.0 {
            best = (v, y);
        }
    }
    Ok(best.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::value_solver::closed_form_single;

    #[test]
    fn converges_to_closed_form() {
        let spec = UtilitySpec::power(1.0, 0.5).unwrap();
        let params = ModelParams::new(1.0, 10.0, 1, 7.0);
        let grid = oracle_discrete_time(&spec, &params, 1e-4, 2000, None).unwrap();
        let exact = closed_form_single(1.0, 10.0, 8.0).unwrap();
        assert!((grid.value(8.0, 1).unwrap() - exact).abs() < 2e-3);
    }

    #[test]
    fn worthless_future_spends_everything() {
        let spec = UtilitySpec::power(2.0, 0.5).unwrap();
        for j in 1..=20 {
            let theta = j as f64 / 20.0;
            assert_eq!(oracle_choice(&spec, &[0.0; 4], 3, theta).unwrap(), 0);
        }
    }

    #[test]
    fn coarse_step_is_rejected() {
        let spec = UtilitySpec::power(1.0, 0.5).unwrap();
        let params = ModelParams::new(1.0, 10.0, 1, 9.0);
        let err = oracle_discrete_time(&spec, &params, 0.06, 100, None).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
    }
}
