//! Monte Carlo paths of opportunities and agents that act on them.
//!
//! Every trace owns a ChaCha8 stream seeded from `(master_seed, index)`, so a
//! batch gives the same numbers however rayon schedules it. Batch totals use
//! pairwise summation in index order.
//!
//! Paths stop at the deadline; an arrival exactly at `T` is kept.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::choose;
use crate::utility::UtilitySpec;
use crate::value_solver::{ModelParams, TwoPaymentGrid, ValueGrid};

/// Per-trace seed derived from a master seed and the trace index.
pub fn trace_seed(master: u64, index: u64) -> u64 {
    splitmix64(master ^ splitmix64(index.wrapping_add(0x9e37_79b9_7f4a_7c15)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Pairwise sum, reproducible for a fixed input order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 32 {
        return values.iter().sum();
    }
    let (a, b) = values.split_at(values.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

/// Opportunities `(time, θ)` on `[t0, T]` for rate `λ`.
pub fn sample_path(params: &ModelParams, t0: f64, seed: u64) -> Result<Vec<(f64, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    path_from(&mut rng, params.lambda, t0, params.deadline)
}

fn path_from(rng: &mut ChaCha8Rng, lambda: f64, t0: f64, deadline: f64) -> Result<Vec<(f64, f64)>> {
    if t0 > deadline {
        return Err(Error::domain(format!("start time {t0} after the deadline {deadline}")));
    }
    let gap = Exp::new(lambda).map_err(|e| Error::invalid("lambda", e.to_string()))?;
    let mut path = Vec::new();
    let mut t = t0;
    loop {
        t += gap.sample(rng);
        if t > deadline {
            return Ok(path);
        }
        path.push((t, rng.random::<f64>()));
    }
}

/// One simulated lifetime of an agent.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationTrace {
    pub seed: u64,
    pub opportunities: Vec<(f64, f64)>,
    /// `(spent, remaining after spending)` per opportunity.
    pub decisions: Vec<(usize, usize)>,
    pub realized_utility: f64,
}

impl SimulationTrace {
    /// Time order, deadline bound, monotone stock and utility bookkeeping.
    pub fn check(&self, spec: &UtilitySpec, deadline: f64) -> Result<()> {
        if self.opportunities.len() != self.decisions.len() {
            return Err(Error::domain("one decision per opportunity expected"));
        }
        if self.opportunities.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::domain("opportunity times not strictly increasing"));
        }
        if self.opportunities.iter().any(|o| o.0 > deadline) {
            return Err(Error::domain("opportunity after the deadline"));
        }
        if self.decisions.windows(2).any(|w| w[1].1 > w[0].1) {
            return Err(Error::domain("stock increased"));
        }
        let mut total = 0.0;
        for ((_, theta), (spent, _)) in self.opportunities.iter().zip(&self.decisions) {
            total += spec.eval_u(*theta, *spent)?;
        }
        if (total - self.realized_utility).abs() > 1e-12 * (1.0 + total.abs()) {
            return Err(Error::domain("realized utility does not match decisions"));
        }
        Ok(())
    }
}

/// Follows the optimal saving rule of `grid` from `(t0, x0)`.
pub fn run_agent(grid: &ValueGrid, spec: &UtilitySpec, x0: usize, t0: f64, seed: u64) -> Result<SimulationTrace> {
    if x0 > grid.capacity() {
        return Err(Error::domain(format!("stock {x0} beyond grid capacity {}", grid.capacity())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let opportunities = path_from(&mut rng, grid.params.lambda, t0, grid.params.deadline)?;
    let mut trace = SimulationTrace { seed, opportunities, decisions: Vec::new(), realized_utility: 0.0 };
    let mut x = x0;
    for &(t, theta) in &trace.opportunities {
        let keep = if x == 0 { 0 } else { choose(spec, &grid.row_at(t)?, theta, x)? };
        let spent = x - keep;
        trace.realized_utility += spec.eval_u(theta, spent)?;
        x = keep;
        trace.decisions.push((spent, x));
    }
    Ok(trace)
}

/// Mean, standard error and sample count of a Monte Carlo estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl BatchSummary {
    pub fn from_samples(samples: &[f64]) -> BatchSummary {
        let n = samples.len();
        if n == 0 {
            return BatchSummary { mean: f64::NAN, stderr: f64::NAN, n };
        }
        let mean = pairwise_sum(samples) / n as f64;
        let squares: Vec<f64> = samples.iter().map(|s| (s - mean) * (s - mean)).collect();
        let var = if n > 1 { pairwise_sum(&squares) / (n - 1) as f64 } else { 0.0 };
        BatchSummary { mean, stderr: (var / n as f64).sqrt(), n }
    }

    /// `|mean − target|` in standard errors.
    pub fn z_score(&self, target: f64) -> f64 {
        let diff = (self.mean - target).abs();
        if self.stderr > 0.0 {
            diff / self.stderr
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    }
}

/// Realized utility of `paths` independent agents, summarized.
pub fn simulate_batch(
    grid: &ValueGrid,
    spec: &UtilitySpec,
    x0: usize,
    t0: f64,
    master_seed: u64,
    paths: usize,
) -> Result<BatchSummary> {
    let samples: Vec<f64> = (0..paths as u64)
        .into_par_iter()
        .map(|k| run_agent(grid, spec, x0, t0, trace_seed(master_seed, k)).map(|t| t.realized_utility))
        .collect::<Result<_>>()?;
    Ok(BatchSummary::from_samples(&samples))
}

/// Full traces for `paths` agents, for export.
pub fn simulate_traces(
    grid: &ValueGrid,
    spec: &UtilitySpec,
    x0: usize,
    t0: f64,
    master_seed: u64,
    paths: usize,
) -> Result<Vec<SimulationTrace>> {
    (0..paths as u64)
        .into_par_iter()
        .map(|k| run_agent(grid, spec, x0, t0, trace_seed(master_seed, k)))
        .collect()
}

/// Two Bernoulli payments with marginals `p1`, `p2` and correlation control
/// `c`: `P(1,1) = min{p1,p2} − c`, `P(1,0) = max{p1−p2,0} + c`,
/// `P(0,1) = max{p2−p1,0} + c`, `P(0,0) = min{1−p1,1−p2} − c`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelatedBernoulli {
    pub p1: f64,
    pub p2: f64,
    pub c: f64,
}

impl CorrelatedBernoulli {
    pub fn new(p1: f64, p2: f64, c: f64) -> Result<Self> {
        for (name, p) in [("p1", p1), ("p2", p2)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::domain(format!("{name} = {p} outside [0, 1]")));
            }
        }
        let (lo, hi) = Self::c_range(p1, p2);
        let slack = 1e-12;
        if !(c >= lo - slack && c <= hi + slack) {
            return Err(Error::domain(format!("c = {c} outside admissible [{lo}, {hi}]")));
        }
        Ok(CorrelatedBernoulli { p1, p2, c: c.clamp(lo, hi) })
    }

    /// Admissible `c`: every cell of the joint table non-negative.
    pub fn c_range(p1: f64, p2: f64) -> (f64, f64) {
        (0.0, p1.min(p2).min(1.0 - p1).min(1.0 - p2).max(0.0))
    }

    /// `[[P(0,0), P(0,1)], [P(1,0), P(1,1)]]`, indexed by `(x1, x2)`.
    pub fn joint(&self) -> [[f64; 2]; 2] {
        let (p1, p2, c) = (self.p1, self.p2, self.c);
        [
            [(1.0 - p1).min(1.0 - p2) - c, (p2 - p1).max(0.0) + c],
            [(p1 - p2).max(0.0) + c, p1.min(p2) - c],
        ]
    }

    /// One draw from a shared uniform `X`: `X1 = 1[X ≤ p1]` and `X2` the
    /// indicator of a window of width `p2`, placed so that the overlap with
    /// `[0, p1]` is `min{p1,p2} − c`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (bool, bool) {
        let x: f64 = rng.random();
        let start = if self.p1 <= self.p2 { self.c } else { self.p1 - self.p2 + self.c };
        (x <= self.p1, start <= x && x <= start + self.p2)
    }
}

pub fn sample_correlated(dist: &CorrelatedBernoulli, seed: u64) -> (bool, bool) {
    dist.sample(&mut ChaCha8Rng::seed_from_u64(seed))
}

/// Expected value of the random double payment seen from time `t`, and its
/// derivative in `c`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DoublePaymentValue {
    pub value: f64,
    pub d_dc: f64,
}

/// `E = P(1,1)·Ṽ(t,x) + P(1,0)·V(t,x) + P(0,1)·V(t̄,x̄)`.
pub fn double_payment_value(grids: &TwoPaymentGrid, dist: &CorrelatedBernoulli, t: f64) -> Result<DoublePaymentValue> {
    let tp = &grids.spec;
    if !(t < tp.t_bar) {
        return Err(Error::domain(format!("time {t} is not before the payment time {}", tp.t_bar)));
    }
    let dist = CorrelatedBernoulli::new(dist.p1, dist.p2, dist.c)?;
    let both = grids.value(t, tp.x)?;
    let first = grids.base().value(t, tp.x)?;
    let second = grids.base().value(tp.t_bar, tp.x_bar)?;
    let p = dist.joint();
    Ok(DoublePaymentValue {
        value: p[1][1] * both + p[1][0] * first + p[0][1] * second,
        d_dc: -both + first + second,
    })
}

/// Monte Carlo estimate of [`double_payment_value`]. The agent learns both
/// outcomes at `t`; with both payments it follows `Ṽ` until `t̄` and `V`
/// after, otherwise `V` from whenever its stock arrives.
pub fn simulate_double_payment(
    grids: &TwoPaymentGrid,
    spec: &UtilitySpec,
    dist: &CorrelatedBernoulli,
    t: f64,
    master_seed: u64,
    paths: usize,
) -> Result<BatchSummary> {
    let tp = &grids.spec;
    if !(t < tp.t_bar) {
        return Err(Error::domain(format!("time {t} is not before the payment time {}", tp.t_bar)));
    }
    let dist = CorrelatedBernoulli::new(dist.p1, dist.p2, dist.c)?;
    let base = grids.base();
    let lambda = base.params.lambda;
    let deadline = base.params.deadline;
    let samples: Vec<f64> = (0..paths as u64)
        .into_par_iter()
        .map(|k| -> Result<f64> {
            let mut rng = ChaCha8Rng::seed_from_u64(trace_seed(master_seed, k));
            let (first, second) = dist.sample(&mut rng);
            let start = if first { t } else { tp.t_bar };
            let mut x = if first { tp.x } else { 0 };
            let path = path_from(&mut rng, lambda, start, deadline)?;
            let mut pending = second;
            if !first && second {
                x = tp.x_bar;
                pending = false;
            }
            let mut total = 0.0;
            for (s, theta) in path {
                if pending && s >= tp.t_bar {
                    x += tp.x_bar;
                    pending = false;
                }
                if x == 0 && !pending {
                    continue;
                }
                let keep = if pending {
                    choose(spec, &grids.before_payment().row_at(s)?, theta, x)?
                } else {
                    choose(spec, &base.row_at(s)?, theta, x)?
                };
                total += spec.eval_u(theta, x - keep)?;
                x = keep;
            }
            Ok(total)
        })
        .collect::<Result<_>>()?;
    Ok(BatchSummary::from_samples(&samples))
}
