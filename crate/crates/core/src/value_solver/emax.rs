//! Expected best response `E_θ max_y { ζ(θ)·μ(x−y) + v[y] }`, θ ~ U[0, 1].
//!
//! Each choice of `y` is a line in `z = ζ(θ)` with slope `μ(x−y)` and
//! intercept `v[y]`, so the integrand is the upper envelope of `x+1` lines
//! pulled back through `ζ`. Two independent evaluations are provided:
//!
//! * [`EmaxKernel::quadrature`] integrates the pointwise maximum with composite
//!   Simpson panels. Panels whose endpoints select different lines are split
//!   at the crossing found by bisection on `θ`; smooth pieces are refined
//!   adaptively. Only pointwise evaluations of `ζ` are used.
//! * [`EmaxKernel::envelope`] walks the envelope in `z`, maps the breakpoints
//!   through `ζ⁻¹` (clamped to 1) and integrates each piece with the
//!   antiderivative of `ζ`.
//!
//! The quadrature value is authoritative; the envelope value is a cross-check.

use crate::error::{Error, Result};
use crate::utility::UtilitySpec;

/// Largest tolerated disagreement between the two evaluations.
pub const CROSS_CHECK_TOL: f64 = 1e-7;

/// Default number of Simpson panels.
pub const DEFAULT_QUAD_POINTS: usize = 64;

const SIMPSON_TOL_PER_WIDTH: f64 = 1e-13;
const MAX_DEPTH: u32 = 50;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EmaxEstimate {
    pub quadrature: f64,
    pub envelope: f64,
}

impl EmaxEstimate {
    pub fn value(&self) -> f64 {
        self.quadrature
    }

    pub fn discrepancy(&self) -> f64 {
        (self.quadrature - self.envelope).abs()
    }

    /// The two methods disagree by more than [`CROSS_CHECK_TOL`].
    pub fn degraded(&self) -> bool {
        !(self.discrepancy() <= CROSS_CHECK_TOL)
    }
}

/// `E max_y {u(θ, x−y) + v_row[y]}` with the default panel count.
pub fn emax(spec: &UtilitySpec, v_row: &[f64], x: usize) -> Result<f64> {
    let estimate = emax_detailed(spec, v_row, x, DEFAULT_QUAD_POINTS)?;
    if estimate.degraded() {
        log::warn!(
            "emax cross-check disagreement {:.3e} exceeds {CROSS_CHECK_TOL:e}",
            estimate.discrepancy()
        );
    }
    Ok(estimate.value())
}

/// Both evaluations of `E max`, for callers that want to inspect the
/// cross-check.
pub fn emax_detailed(
    spec: &UtilitySpec,
    v_row: &[f64],
    x: usize,
    quad_points: usize,
) -> Result<EmaxEstimate> {
    if v_row.is_empty() || x >= v_row.len() {
        return Err(Error::domain(format!(
            "stock {x} needs a value row of length > {x}, got {}",
            v_row.len()
        )));
    }
    if quad_points == 0 {
        return Err(Error::invalid("quad_points", "must be positive"));
    }
    let n = v_row.len() - 1;
    let kernel = EmaxKernel::new(spec, n, quad_points)?;
    if !is_discrete_concave(&v_row[..=x], 1e-9) {
        log::warn!("emax called with a value row that is not discrete-concave");
    }
    Ok(kernel.estimate(v_row, x))
}

/// `Δ` strictly decreasing up to `slack`.
pub(crate) fn is_discrete_concave(row: &[f64], slack: f64) -> bool {
    row.windows(3).all(|w| (w[2] - w[1]) - (w[1] - w[0]) <= slack)
}

/// Precomputed `μ(0..=n)` plus the utility, reused across solver steps.
#[derive(Clone, Debug)]
pub struct EmaxKernel<'a> {
    spec: &'a UtilitySpec,
    mu: Vec<f64>,
    panels: usize,
}

impl<'a> EmaxKernel<'a> {
    pub fn new(spec: &'a UtilitySpec, n: usize, panels: usize) -> Result<Self> {
        Ok(EmaxKernel {
            spec,
            mu: spec.mu_table(n)?,
            panels: panels.max(1),
        })
    }

    pub fn spec(&self) -> &UtilitySpec {
        self.spec
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn estimate(&self, row: &[f64], x: usize) -> EmaxEstimate {
        EmaxEstimate {
            quadrature: self.quadrature(row, x),
            envelope: self.envelope(row, x),
        }
    }

    /// Value of the best choice at `θ` and the choice itself; ties go to the
    /// larger `y`.
    #[inline]
    fn best(&self, row: &[f64], x: usize, theta: f64) -> (f64, usize) {
        let z = self.spec.zeta(theta);
        let mut best = (f64::NEG_INFINITY, 0);
        for (y, v) in row.iter().enumerate().take(x + 1) {
            let value = self.mu[x - y] * z + v;
            if value >= best.0 {
                best = (value, y);
            }
        }
        best
    }

    pub fn quadrature(&self, row: &[f64], x: usize) -> f64 {
        if x == 0 {
            return row[0];
        }
        let h = 1.0 / self.panels as f64;
        let mut total = 0.0;
        let (_, mut y_left) = self.best(row, x, 0.0);
        // consecutive panels on the same line are integrated as one run
        let mut run_start = 0.0;
        for p in 0..self.panels {
            let a = p as f64 * h;
            let b = if p + 1 == self.panels { 1.0 } else { (p + 1) as f64 * h };
            let (_, y_right) = self.best(row, x, b);
            if y_right != y_left {
                total += self.line_integral(row, x, y_left, run_start, a);
                total += self.panel(row, x, a, b, y_left, y_right, 0);
                run_start = b;
            }
            y_left = y_right;
        }
        total + self.line_integral(row, x, y_left, run_start, 1.0)
    }

    #[allow(clippy::too_many_arguments)]
    fn panel(&self, row: &[f64], x: usize, a: f64, b: f64, ya: usize, yb: usize, depth: u32) -> f64 {
        if ya == yb {
            return self.line_integral(row, x, ya, a, b);
        }
        // The two endpoint lines cross exactly once inside [a, b].
        let (slope_a, icpt_a) = (self.mu[x - ya], row[ya]);
        let (slope_b, icpt_b) = (self.mu[x - yb], row[yb]);
        let gap = |theta: f64| (slope_a - slope_b) * self.spec.zeta(theta) + (icpt_a - icpt_b);
        let (mut lo, mut hi) = (a, b);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if gap(mid) >= 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let cross = 0.5 * (lo + hi);
        let (best, y_cross) = self.best(row, x, cross);
        let on_a = slope_a * self.spec.zeta(cross) + icpt_a;
        if y_cross == ya || y_cross == yb || best - on_a <= 1e-13 * (1.0 + best.abs()) || depth >= MAX_DEPTH {
            return self.line_integral(row, x, ya, a, cross) + self.line_integral(row, x, yb, cross, b);
        }
        // a third line wins at the crossing; split there
        self.panel(row, x, a, cross, ya, y_cross, depth + 1)
            + self.panel(row, x, cross, b, y_cross, yb, depth + 1)
    }

    /// `∫_a^b μ(x−y)ζ(θ) + row[y] dθ` with adaptive Simpson on `ζ`.
    fn line_integral(&self, row: &[f64], x: usize, y: usize, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let slope = self.mu[x - y];
        let zeta_part = if slope == 0.0 {
            0.0
        } else {
            let f = |t: f64| self.spec.zeta(t);
            let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
            adaptive_simpson(&f, a, b, fa, fm, fb, simpson(a, b, fa, fm, fb), 0)
        };
        slope * zeta_part + row[y] * (b - a)
    }

    pub fn envelope(&self, row: &[f64], x: usize) -> f64 {
        if x == 0 {
            return row[0];
        }
        // Walk the upper envelope in z = ζ(θ) from z = 0; slopes grow as y shrinks.
        let mut current = 0;
        for y in 0..=x {
            if row[y] > row[current] || (row[y] == row[current] && y < current) {
                current = y;
            }
        }
        let mut z_lo = 0.0;
        let mut theta_lo = 0.0;
        let mut total = 0.0;
        loop {
            let mut next: Option<(f64, usize)> = None;
            for y in 0..current {
                let rise = self.mu[x - y] - self.mu[x - current];
                let z = (row[current] - row[y]) / rise;
                let z = z.max(z_lo);
                if next.is_none_or(|(best, _)| z < best) {
                    next = Some((z, y));
                }
            }
            let (z_hi, theta_hi, follower) = match next {
                Some((z, y)) if z < 1.0 => (z, self.spec.zeta_inverse_clamped(z), Some(y)),
                _ => (1.0, 1.0, None),
            };
            let slope = self.mu[x - current];
            total += slope * (self.spec.zeta_integral(theta_hi) - self.spec.zeta_integral(theta_lo))
                + row[current] * (theta_hi - theta_lo);
            match follower {
                Some(y) => {
                    current = y;
                    z_lo = z_hi;
                    theta_lo = theta_hi;
                }
                None => break,
            }
        }
        total
    }
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn adaptive_simpson(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let diff = left + right - whole;
    if depth >= MAX_DEPTH || diff.abs() <= 15.0 * SIMPSON_TOL_PER_WIDTH * (b - a) {
        return left + right + diff / 15.0;
    }
    adaptive_simpson(f, a, m, fa, flm, fm, left, depth + 1)
        + adaptive_simpson(f, m, b, fm, frm, fb, right, depth + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::utility::{MuFamily, ZetaFamily};

    fn linear() -> UtilitySpec {
        UtilitySpec::power(1.0, 0.5).unwrap()
    }

    /// Midpoint-rule brute force over a fine θ grid.
    fn brute(spec: &UtilitySpec, row: &[f64], x: usize, cells: usize) -> f64 {
        let mu = spec.mu_table(row.len() - 1).unwrap();
        (0..cells)
            .map(|c| {
                let z = spec.zeta((c as f64 + 0.5) / cells as f64);
                (0..=x).map(|y| mu[x - y] * z + row[y]).fold(f64::NEG_INFINITY, f64::max)
            })
            .sum::<f64>()
            / cells as f64
    }

    #[test]
    fn terminal_row_is_mean_quality() {
        let value = emax(&linear(), &[0.0, 0.0], 1).unwrap();
        assert!((value - 0.5).abs() < 1e-15);
    }

    #[test]
    fn hand_integral() {
        // ∫₀^½ ½ dθ + ∫_½^1 θ dθ
        let est = emax_detailed(&linear(), &[0.0, 0.5], 1, 64).unwrap();
        assert!((est.quadrature - 0.625).abs() < 1e-14);
        assert!((est.envelope - 0.625).abs() < 1e-14);
    }

    #[test]
    fn zero_stock_is_row_value() {
        let spec = UtilitySpec::power(2.0, 0.7).unwrap();
        assert_eq!(emax(&spec, &[0.0, 0.0, 0.0], 0).unwrap(), 0.0);
        assert_eq!(emax(&spec, &[0.3, 0.9], 0).unwrap(), 0.3);
    }

    #[test]
    fn length_mismatch_is_domain_error() {
        assert!(matches!(emax(&linear(), &[0.0, 0.1], 2), Err(Error::Domain(_))));
        assert!(matches!(emax(&linear(), &[], 0), Err(Error::Domain(_))));
    }

    #[test]
    fn undefined_cutoffs_clamp_to_one() {
        // v[1] exceeds μ(1): saving always wins, E max = v[1]
        let est = emax_detailed(&linear(), &[0.0, 1.3], 1, 64).unwrap();
        assert!((est.quadrature - 1.3).abs() < 1e-14);
        assert!((est.envelope - 1.3).abs() < 1e-14);
    }

    #[test]
    fn agrees_with_brute_force_across_families() {
        let specs = [
            UtilitySpec::power(1.0, 0.5).unwrap(),
            UtilitySpec::power(2.0, 0.7).unwrap(),
            UtilitySpec::power(0.5, 0.5).unwrap(),
            UtilitySpec::new(ZetaFamily::ReflectedPower { k: 2.0 }, MuFamily::Power { gamma: 0.5 })
                .unwrap(),
        ];
        let row = [0.0, 0.62, 1.1, 1.45, 1.7];
        for spec in &specs {
            for x in 1..=4 {
                let est = emax_detailed(spec, &row, x, 64).unwrap();
                let reference = brute(spec, &row, x, 400_000);
                assert!(est.discrepancy() < 1e-10, "{spec:?} x={x} {est:?}");
                assert!((est.quadrature - reference).abs() < 1e-8, "{spec:?} x={x}");
            }
        }
    }

    #[test]
    fn non_concave_row_still_exact() {
        let spec = UtilitySpec::power(1.0, 0.5).unwrap();
        let row = [0.4, 0.5, 1.4];
        let est = emax_detailed(&spec, &row, 2, 64).unwrap();
        assert!(est.discrepancy() < 1e-12);
        assert!((est.quadrature - brute(&spec, &row, 2, 400_000)).abs() < 1e-8);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn methods_agree_on_concave_rows(
                k in 0.5f64..4.0,
                gamma in 0.2f64..0.95,
                increments in proptest::collection::vec(0.01f64..1.0, 1..6),
            ) {
                let spec = UtilitySpec::power(k, gamma).unwrap();
                let mut sorted = increments.clone();
                sorted.sort_by(|a, b| b.partial_cmp(a).unwrap());
                let mut row = vec![0.0];
                for d in sorted {
                    let last = *row.last().unwrap();
                    row.push(last + d);
                }
                let x = row.len() - 1;
                let est = emax_detailed(&spec, &row, x, 64).unwrap();
                prop_assert!(est.discrepancy() < CROSS_CHECK_TOL, "{:?}", est);
                // E max dominates every fixed choice
                prop_assert!(est.quadrature >= row[x] - 1e-12);
            }
        }
    }
}
