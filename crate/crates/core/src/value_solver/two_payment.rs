//! Value of holding `x` units now with `x̄` more arriving at a fixed time `t̄`.
//!
//! After `t̄` the agent simply holds `x + x̄`, so `Ṽ(t, i) = V(t, i + x̄)`.
//! Before `t̄` the same ODE is integrated backward from that jump condition.
//! `Ṽ_0` is positive there: the pending payment has value even with nothing
//! in hand.

use serde::{Deserialize, Serialize};

use super::emax::EmaxKernel;
use super::grid::{ModelParams, ValueGrid};
use super::{integrate_backward, solve};
use crate::error::{Error, Result};
use crate::utility::UtilitySpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoPaymentSpec {
    /// Parameters of the underlying solve; `base.n` must cover `x + x_bar`.
    pub base: ModelParams,
    /// Stock in hand.
    pub x: usize,
    /// Size of the future payment.
    pub x_bar: usize,
    /// Arrival time of the future payment.
    pub t_bar: f64,
}

impl TwoPaymentSpec {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.x_bar == 0 {
            return Err(Error::invalid("x_bar", "future payment must be at least one unit"));
        }
        if self.x + self.x_bar > self.base.n {
            return Err(Error::invalid(
                "x",
                format!("x + x_bar = {} exceeds the solved capacity {}", self.x + self.x_bar, self.base.n),
            ));
        }
        if !self.t_bar.is_finite() || self.t_bar > self.base.deadline {
            return Err(Error::domain(format!(
                "payment time {} is after the deadline {}",
                self.t_bar, self.base.deadline
            )));
        }
        if self.t_bar < self.base.t_min {
            return Err(Error::domain(format!(
                "payment time {} precedes the grid start {}",
                self.t_bar, self.base.t_min
            )));
        }
        Ok(())
    }
}

/// `Ṽ` before the payment joined with `V(·, · + x̄)` after it.
#[derive(Clone, Debug)]
pub struct TwoPaymentGrid {
    pub spec: TwoPaymentSpec,
    before: ValueGrid,
    after: ValueGrid,
}

impl TwoPaymentGrid {
    /// `Ṽ(t, i)` for `i ≤ x`.
    pub fn value(&self, t: f64, i: usize) -> Result<f64> {
        if i > self.spec.x {
            return Err(Error::domain(format!("stock {i} exceeds x = {}", self.spec.x)));
        }
        if t < self.spec.t_bar {
            self.before.value(t, i)
        } else {
            self.after.value(t, i + self.spec.x_bar)
        }
    }

    /// The solution on `[t_min, t̄]` alone, columns `0..=x`.
    pub fn before_payment(&self) -> &ValueGrid {
        &self.before
    }

    /// The single-payment grid `V` this was built on.
    pub fn base(&self) -> &ValueGrid {
        &self.after
    }
}

/// Solves `V` with `tp.base` and then `Ṽ`.
pub fn solve_two_payment(spec: &UtilitySpec, tp: &TwoPaymentSpec) -> Result<TwoPaymentGrid> {
    tp.validate()?;
    let base = solve(spec, &tp.base)?;
    solve_two_payment_with(spec, tp, &base)
}

/// Builds `Ṽ` on top of an already solved `V`.
pub fn solve_two_payment_with(
    spec: &UtilitySpec,
    tp: &TwoPaymentSpec,
    base: &ValueGrid,
) -> Result<TwoPaymentGrid> {
    tp.validate()?;
    if base.capacity() < tp.x + tp.x_bar {
        return Err(Error::Precondition(format!(
            "value grid holds stock up to {}, need {}",
            base.capacity(),
            tp.x + tp.x_bar
        )));
    }
    if tp.t_bar < base.t_start() || tp.t_bar > base.t_end() {
        return Err(Error::Precondition(format!(
            "value grid [{}, {}] does not cover the payment time {}",
            base.t_start(),
            base.t_end(),
            tp.t_bar
        )));
    }

    let jump: Vec<f64> = (0..=tp.x)
        .map(|i| base.value(tp.t_bar, i + tp.x_bar))
        .collect::<Result<_>>()?;
    let kernel = EmaxKernel::new(spec, tp.x, tp.base.quad_points)?;
    let t_end = base.t_start();
    let (times, values, diagnostics) = if tp.t_bar > t_end {
        integrate_backward(&kernel, tp.base.lambda, jump, tp.t_bar, t_end, tp.base.dt)?
    } else {
        (vec![tp.t_bar], vec![jump], Default::default())
    };
    let params = ModelParams { n: tp.x, deadline: tp.t_bar, ..tp.base.clone() };
    let before = ValueGrid::from_parts(params, times, values)?.with_diagnostics(diagnostics);
    Ok(TwoPaymentGrid { spec: tp.clone(), before, after: base.clone() })
}
