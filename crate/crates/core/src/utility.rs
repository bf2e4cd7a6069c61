//! Separable instantaneous utility `u(θ, x) = ζ(θ)·μ(x)`.
//!
//! `ζ` maps opportunity quality in `[0, 1]` onto `[0, 1]` with `ζ(0) = 0` and
//! `ζ(1) = 1`; `μ` maps a whole number of spent units onto utility and must be
//! strictly increasing and strictly concave. Everything the solver needs from
//! `ζ` (inverse, antiderivative, inverse antiderivative) is available in closed
//! form for the parametric families and exactly for the tabulated spline.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Finite-difference step used for grid-based shape checks.
pub const SHAPE_FD_STEP: f64 = 1e-5;

/// Default grid density for the "everywhere" shape conditions.
pub const DEFAULT_SHAPE_GRID: usize = 1000;

const NORMALIZATION_TOL: f64 = 1e-12;

/// Quality component `ζ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ZetaFamily {
    /// `ζ(θ) = θ^k`.
    Power { k: f64 },
    /// `ζ(θ) = 1 − (1 − θ)^k`.
    ReflectedPower { k: f64 },
    /// Strictly increasing `(θ, ζ(θ))` knots joined by a monotone cubic.
    Tabulated { theta: Vec<f64>, zeta: Vec<f64> },
}

/// Quantity component `μ` over whole units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum MuFamily {
    /// `μ(x) = x^γ`, `γ ∈ (0, 1]`.
    Power { gamma: f64 },
    /// Explicit `μ(0), μ(1), …, μ(m)`.
    Table { values: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct UtilityDef {
    zeta: ZetaFamily,
    mu: MuFamily,
}

/// Validated, immutable utility specification.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "UtilityDef", into = "UtilityDef")]
pub struct UtilitySpec {
    zeta: ZetaFamily,
    mu: MuFamily,
    spline: Option<Arc<MonotoneCubic>>,
}

impl PartialEq for UtilitySpec {
    fn eq(&self, other: &Self) -> bool {
        self.zeta == other.zeta && self.mu == other.mu
    }
}

impl TryFrom<UtilityDef> for UtilitySpec {
    type Error = Error;

    fn try_from(def: UtilityDef) -> Result<Self> {
        UtilitySpec::new(def.zeta, def.mu)
    }
}

impl From<UtilitySpec> for UtilityDef {
    fn from(spec: UtilitySpec) -> Self {
        UtilityDef {
            zeta: spec.zeta,
            mu: spec.mu,
        }
    }
}

impl UtilitySpec {
    pub fn new(zeta: ZetaFamily, mu: MuFamily) -> Result<Self> {
        let spline = match &zeta {
            ZetaFamily::Power { k } | ZetaFamily::ReflectedPower { k } => {
                if !(k.is_finite() && *k > 0.0) {
                    return Err(Error::invalid("zeta.k", format!("must be finite and > 0, got {k}")));
                }
                None
            }
            ZetaFamily::Tabulated { theta, zeta } => {
                Some(Arc::new(MonotoneCubic::new(theta, zeta)?))
            }
        };
        validate_mu(&mu)?;
        Ok(UtilitySpec { zeta, mu, spline })
    }

    /// `ζ(θ) = θ^k`, `μ(x) = x^γ`.
    pub fn power(k: f64, gamma: f64) -> Result<Self> {
        Self::new(ZetaFamily::Power { k }, MuFamily::Power { gamma })
    }

    pub fn zeta_family(&self) -> &ZetaFamily {
        &self.zeta
    }

    pub fn mu_family(&self) -> &MuFamily {
        &self.mu
    }

    /// Checks the constraints that depend on the stock size.
    pub fn validate_for_stock(&self, n: usize) -> Result<()> {
        match &self.mu {
            MuFamily::Power { gamma } => {
                if *gamma == 1.0 && n > 1 {
                    return Err(Error::invalid(
                        "mu.gamma",
                        "linear mu is not strictly concave; rejected for n > 1",
                    ));
                }
            }
            MuFamily::Table { values } => {
                if values.len() < n + 1 {
                    return Err(Error::invalid(
                        "mu.values",
                        format!("table covers {} units, stock needs {n}", values.len() - 1),
                    ));
                }
            }
        }
        Ok(())
    }

    /// `ζ(θ)` for `θ ∈ [0, 1]`. No range check.
    pub fn zeta(&self, theta: f64) -> f64 {
        match &self.zeta {
            ZetaFamily::Power { k } => pow(theta, *k),
            ZetaFamily::ReflectedPower { k } => 1.0 - pow(1.0 - theta, *k),
            ZetaFamily::Tabulated { .. } => self.spline().eval(theta),
        }
    }

    pub fn zeta_derivative(&self, theta: f64) -> f64 {
        match &self.zeta {
            ZetaFamily::Power { k } => k * theta.powf(k - 1.0),
            ZetaFamily::ReflectedPower { k } => k * (1.0 - theta).powf(k - 1.0),
            ZetaFamily::Tabulated { .. } => self.spline().derivative(theta),
        }
    }

    /// Closed-form `ζ''`, when one exists.
    pub fn zeta_second_derivative(&self, theta: f64) -> Option<f64> {
        match &self.zeta {
            ZetaFamily::Power { k } => Some(k * (k - 1.0) * theta.powf(k - 2.0)),
            ZetaFamily::ReflectedPower { k } => Some(-k * (k - 1.0) * (1.0 - theta).powf(k - 2.0)),
            ZetaFamily::Tabulated { .. } => None,
        }
    }

    /// `θ` with `ζ(θ) = v`.
    pub fn zeta_inverse(&self, v: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::domain(format!("zeta_inverse argument {v} outside [0, 1]")));
        }
        Ok(self.zeta_inverse_clamped(v))
    }

    /// `ζ⁻¹` with the argument clamped into `[0, 1]`.
    pub fn zeta_inverse_clamped(&self, v: f64) -> f64 {
        let v = v.clamp(0.0, 1.0);
        match &self.zeta {
            ZetaFamily::Power { k } => pow(v, 1.0 / k),
            ZetaFamily::ReflectedPower { k } => 1.0 - pow(1.0 - v, 1.0 / k),
            ZetaFamily::Tabulated { .. } => self.spline().inverse(v),
        }
    }

    /// `∫₀^θ ζ(s) ds`.
    pub fn zeta_integral(&self, theta: f64) -> f64 {
        match &self.zeta {
            ZetaFamily::Power { k } => theta.powf(k + 1.0) / (k + 1.0),
            ZetaFamily::ReflectedPower { k } => {
                theta - (1.0 - (1.0 - theta).powf(k + 1.0)) / (k + 1.0)
            }
            ZetaFamily::Tabulated { .. } => self.spline().integral(theta),
        }
    }

    /// `∫₀^v ζ⁻¹(y) dy`, by parts: `v·ζ⁻¹(v) − ∫₀^{ζ⁻¹(v)} ζ`.
    pub fn inverse_integral(&self, v: f64) -> f64 {
        let v = v.clamp(0.0, 1.0);
        let theta = self.zeta_inverse_clamped(v);
        v * theta - self.zeta_integral(theta)
    }

    /// `μ(x)`.
    pub fn mu(&self, amount: usize) -> Result<f64> {
        match &self.mu {
            MuFamily::Power { gamma } => Ok((amount as f64).powf(*gamma)),
            MuFamily::Table { values } => values.get(amount).copied().ok_or_else(|| {
                Error::domain(format!(
                    "amount {amount} beyond mu table of {} units",
                    values.len() - 1
                ))
            }),
        }
    }

    /// `μ(0..=n)`.
    pub fn mu_table(&self, n: usize) -> Result<Vec<f64>> {
        (0..=n).map(|i| self.mu(i)).collect()
    }

    /// `u(θ, amount) = ζ(θ)·μ(amount)`.
    pub fn eval_u(&self, theta: f64, amount: usize) -> Result<f64> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::domain(format!("theta {theta} outside [0, 1]")));
        }
        Ok(self.zeta(theta) * self.mu(amount)?)
    }

    /// The same `ζ` with `μ` replaced by `k·μ` tabulated over `0..=n`.
    pub fn scaled(&self, k: f64, n: usize) -> Result<Self> {
        if !(k.is_finite() && k > 0.0) {
            return Err(Error::invalid("k", format!("scale must be finite and > 0, got {k}")));
        }
        let values = self.mu_table(n)?.into_iter().map(|m| k * m).collect();
        Self::new(self.zeta.clone(), MuFamily::Table { values })
    }

    /// Arrow–Pratt coefficient `−ζ''(θ)/ζ'(θ)`.
    pub fn risk_aversion(&self, theta: f64) -> Result<f64> {
        match self.zeta_second_derivative(theta) {
            Some(second) => Ok(-second / self.zeta_derivative(theta)),
            None => Err(Error::Unsupported(
                "tabulated zeta is only C1; its Arrow-Pratt coefficient is undefined at knots"
                    .into(),
            )),
        }
    }

    fn spline(&self) -> &MonotoneCubic {
        self.spline.as_deref().expect("tabulated zeta carries a spline")
    }
}

fn validate_mu(mu: &MuFamily) -> Result<()> {
    match mu {
        MuFamily::Power { gamma } => {
            if !(gamma.is_finite() && *gamma > 0.0 && *gamma <= 1.0) {
                return Err(Error::invalid("mu.gamma", format!("must lie in (0, 1], got {gamma}")));
            }
        }
        MuFamily::Table { values } => {
            if values.len() < 2 {
                return Err(Error::invalid("mu.values", "need at least mu(0) and mu(1)"));
            }
            if values[0] != 0.0 {
                return Err(Error::invalid("mu.values", "mu(0) must be 0"));
            }
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("mu.values", "non-finite entry"));
            }
            let deltas: Vec<f64> = values.windows(2).map(|w| w[1] - w[0]).collect();
            if deltas.iter().any(|d| *d <= 0.0) {
                return Err(Error::invalid("mu.values", "mu must be strictly increasing"));
            }
            if deltas.windows(2).any(|w| w[1] >= w[0]) {
                return Err(Error::invalid("mu.values", "mu must be strictly concave"));
            }
        }
    }
    Ok(())
}

/// `x^k` with fast paths for the exponents the solver hits most.
#[inline]
fn pow(x: f64, k: f64) -> f64 {
    if k == 1.0 {
        x
    } else if k == 2.0 {
        x * x
    } else if k == 0.5 {
        x.sqrt()
    } else if k == k.trunc() && (3.0..=16.0).contains(&k) {
        x.powi(k as i32)
    } else {
        x.powf(k)
    }
}

/// `true` iff `(log ζ)'' < 0` at every interior point `i/grid`.
pub fn is_log_concave_zeta(spec: &UtilitySpec, grid: usize) -> Result<bool> {
    if grid < 2 {
        return Err(Error::invalid("grid", "need at least two cells"));
    }
    let h = SHAPE_FD_STEP;
    let log_zeta = |t: f64| spec.zeta(t).ln();
    for i in 1..grid {
        let theta = i as f64 / grid as f64;
        // keep the stencil inside (0, 1]
        let centre = theta.clamp(2.0 * h, 1.0 - h);
        let second = (log_zeta(centre + h) - 2.0 * log_zeta(centre) + log_zeta(centre - h)) / (h * h);
        if !(second < 0.0) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// `true` iff `candidate`'s `ζ` is strictly more concave than `base`'s: its
/// Arrow–Pratt coefficient is strictly larger at every interior point `i/grid`.
pub fn is_more_concave(base: &UtilitySpec, candidate: &UtilitySpec, grid: usize) -> Result<bool> {
    if grid < 2 {
        return Err(Error::invalid("grid", "need at least two cells"));
    }
    for i in 1..grid {
        let theta = i as f64 / grid as f64;
        if !(candidate.risk_aversion(theta)? > base.risk_aversion(theta)?) {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Piecewise cubic Hermite interpolant with Fritsch–Butland slopes; strictly
/// increasing whenever the knot values are.
#[derive(Debug)]
struct MonotoneCubic {
    x: Vec<f64>,
    y: Vec<f64>,
    slope: Vec<f64>,
    /// `∫₀^{x[k]}` of the interpolant.
    cumulative: Vec<f64>,
}

impl MonotoneCubic {
    fn new(x: &[f64], y: &[f64]) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::invalid("zeta.theta", "theta and zeta arrays differ in length"));
        }
        if x.len() < 2 {
            return Err(Error::invalid("zeta.theta", "need at least two knots"));
        }
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(Error::invalid("zeta", "non-finite knot"));
        }
        if x[0] != 0.0 || (x[x.len() - 1] - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::invalid("zeta.theta", "knots must span exactly [0, 1]"));
        }
        if y[0] != 0.0 || (y[y.len() - 1] - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::invalid("zeta.zeta", "need zeta(0) = 0 and zeta(1) = 1"));
        }
        if x.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("zeta.theta", "knots must be strictly increasing"));
        }
        if y.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("zeta.zeta", "values must be strictly increasing"));
        }

        let m = x.len();
        let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
        let d: Vec<f64> = (0..m - 1).map(|k| (y[k + 1] - y[k]) / h[k]).collect();
        let mut slope = vec![0.0; m];
        if m == 2 {
            slope[0] = d[0];
            slope[1] = d[0];
        } else {
            for k in 1..m - 1 {
                let w1 = 2.0 * h[k] + h[k - 1];
                let w2 = h[k] + 2.0 * h[k - 1];
                slope[k] = (w1 + w2) / (w1 / d[k - 1] + w2 / d[k]);
            }
            slope[0] = end_slope(h[0], h[1], d[0], d[1]);
            slope[m - 1] = end_slope(h[m - 2], h[m - 3], d[m - 2], d[m - 3]);
        }

        let mut spline = MonotoneCubic {
            x: x.to_vec(),
            y: y.to_vec(),
            slope,
            cumulative: vec![0.0; m],
        };
        for k in 0..m - 1 {
            spline.cumulative[k + 1] = spline.cumulative[k] + spline.segment_integral(k, 1.0);
        }
        Ok(spline)
    }

    fn segment(&self, v: f64) -> usize {
        match self.x.binary_search_by(|p| p.total_cmp(&v)) {
            Ok(k) => k.min(self.x.len() - 2),
            Err(0) => 0,
            Err(k) => (k - 1).min(self.x.len() - 2),
        }
    }

    fn local(&self, k: usize, v: f64) -> (f64, f64) {
        let h = self.x[k + 1] - self.x[k];
        (h, (v - self.x[k]) / h)
    }

    fn eval_segment(&self, k: usize, h: f64, t: f64) -> f64 {
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * self.y[k]
            + (t3 - 2.0 * t2 + t) * h * self.slope[k]
            + (-2.0 * t3 + 3.0 * t2) * self.y[k + 1]
            + (t3 - t2) * h * self.slope[k + 1]
    }

    fn eval(&self, v: f64) -> f64 {
        let k = self.segment(v);
        let (h, t) = self.local(k, v);
        self.eval_segment(k, h, t)
    }

    fn derivative(&self, v: f64) -> f64 {
        let k = self.segment(v);
        let (h, t) = self.local(k, v);
        let t2 = t * t;
        ((6.0 * t2 - 6.0 * t) * self.y[k] + (-6.0 * t2 + 6.0 * t) * self.y[k + 1]) / h
            + (3.0 * t2 - 4.0 * t + 1.0) * self.slope[k]
            + (3.0 * t2 - 2.0 * t) * self.slope[k + 1]
    }

    /// Integral over `[x[k], x[k] + t·h]`.
    fn segment_integral(&self, k: usize, t: f64) -> f64 {
        let h = self.x[k + 1] - self.x[k];
        let t2 = t * t;
        let t3 = t2 * t;
        let t4 = t3 * t;
        h * ((t4 / 2.0 - t3 + t) * self.y[k]
            + (t4 / 4.0 - 2.0 * t3 / 3.0 + t2 / 2.0) * h * self.slope[k]
            + (-t4 / 2.0 + t3) * self.y[k + 1]
            + (t4 / 4.0 - t3 / 3.0) * h * self.slope[k + 1])
    }

    fn integral(&self, v: f64) -> f64 {
        let k = self.segment(v);
        let (_, t) = self.local(k, v);
        self.cumulative[k] + self.segment_integral(k, t)
    }

    /// Bisection on the bracketing segment, then Newton polish.
    fn inverse(&self, v: f64) -> f64 {
        let k = match self.y.binary_search_by(|p| p.total_cmp(&v)) {
            Ok(k) => return self.x[k],
            Err(0) => return self.x[0],
            Err(k) if k >= self.y.len() => return self.x[self.x.len() - 1],
            Err(k) => k - 1,
        };
        let h = self.x[k + 1] - self.x[k];
        let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if self.eval_segment(k, h, mid) < v {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-15 {
                break;
            }
        }
        let mut theta = self.x[k] + 0.5 * (lo + hi) * h;
        for _ in 0..2 {
            let slope = self.derivative(theta);
            if slope <= 0.0 {
                break;
            }
            let next = theta - (self.eval(theta) - v) / slope;
            if next < self.x[k] || next > self.x[k + 1] {
                break;
            }
            theta = next;
        }
        theta
    }
}

/// One-sided three-point end slope with the usual monotonicity clamps.
fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if s.signum() != d0.signum() {
        0.0_f64.max(d0 * 1e-3)
    } else if d0.signum() != d1.signum() && s.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        s
    }
}
