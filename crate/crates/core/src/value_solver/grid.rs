use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rate, deadline, stock size and discretization of one solve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Poisson rate of spending opportunities.
    pub lambda: f64,
    /// Deadline `T`.
    pub deadline: f64,
    /// Stock size in unit pieces.
    pub n: usize,
    /// Earliest time covered by the grid.
    pub t_min: f64,
    /// Backward integration step.
    pub dt: f64,
    /// Simpson panels for the E-max integrals.
    pub quad_points: usize,
}

pub const MIN_QUAD_POINTS: usize = 64;

impl ModelParams {
    /// Default step `1e-3/λ` and [`MIN_QUAD_POINTS`] panels.
    pub fn new(lambda: f64, deadline: f64, n: usize, t_min: f64) -> Self {
        ModelParams {
            lambda,
            deadline,
            n,
            t_min,
            dt: 1e-3 / lambda,
            quad_points: MIN_QUAD_POINTS,
        }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn with_t_min(mut self, t_min: f64) -> Self {
        self.t_min = t_min;
        self
    }

    /// `λ·(T − t_min)`, the expected number of opportunities on the grid.
    pub fn horizon(&self) -> f64 {
        self.lambda * (self.deadline - self.t_min)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda > 0.0) {
            return Err(Error::invalid("lambda", format!("must be finite and > 0, got {}", self.lambda)));
        }
        if !self.deadline.is_finite() {
            return Err(Error::invalid("deadline", "must be finite"));
        }
        if self.n == 0 {
            return Err(Error::invalid("n", "stock must hold at least one unit"));
        }
        if !(self.t_min.is_finite() && self.t_min < self.deadline) {
            return Err(Error::invalid(
                "t_min",
                format!("must be finite and below the deadline {}, got {}", self.deadline, self.t_min),
            ));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::invalid("dt", format!("must be finite and > 0, got {}", self.dt)));
        }
        if self.dt * self.lambda > 0.1 * (1.0 + 1e-12) {
            return Err(Error::invalid(
                "dt",
                format!("step {} exceeds the stability guard 0.1/lambda = {}", self.dt, 0.1 / self.lambda),
            ));
        }
        if self.quad_points < MIN_QUAD_POINTS {
            return Err(Error::invalid(
                "quad_points",
                format!("need at least {MIN_QUAD_POINTS}, got {}", self.quad_points),
            ));
        }
        Ok(())
    }

    /// Times from `start` down to `end` in steps of `dt`, the last step
    /// shortened to land on `end`. Returned in decreasing order.
    pub(crate) fn backward_times(start: f64, end: f64, dt: f64) -> Vec<f64> {
        let span = start - end;
        let full = (span / dt * (1.0 - 1e-12)).floor() as usize;
        let mut times: Vec<f64> = (0..=full).map(|k| start - k as f64 * dt).collect();
        if times.last().is_some_and(|t| *t - end > 1e-9 * dt) {
            times.push(end);
        } else if let Some(last) = times.last_mut() {
            *last = end;
        }
        if span <= 0.0 {
            times.truncate(1);
        }
        times
    }
}

/// Counters gathered while integrating.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    /// Largest disagreement between the two E-max evaluations.
    pub max_emax_discrepancy: f64,
    pub emax_evaluations: u64,
    /// Evaluations whose cross-check exceeded the tolerance.
    pub degraded_evaluations: u64,
    /// Rows seen by the integrator that were not discrete-concave.
    pub non_concave_rows: u64,
}

/// Values `V_i(t)` for `i = 0..=n` on an increasing time grid, linearly
/// interpolated between stored times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueGrid {
    pub params: ModelParams,
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
    #[serde(default)]
    diagnostics: SolveDiagnostics,
}

impl ValueGrid {
    pub fn from_parts(params: ModelParams, times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::invalid("values", "need one value row per stored time"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::invalid("times", "must be strictly increasing"));
        }
        let width = values[0].len();
        if width == 0 || values.iter().any(|r| r.len() != width) {
            return Err(Error::invalid("values", "rows must share a positive length"));
        }
        Ok(ValueGrid {
            params,
            times,
            values,
            diagnostics: SolveDiagnostics::default(),
        })
    }

    pub(crate) fn with_diagnostics(mut self, diagnostics: SolveDiagnostics) -> Self {
        self.diagnostics = diagnostics;
        self
    }

    pub fn diagnostics(&self) -> &SolveDiagnostics {
        &self.diagnostics
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn row(&self, index: usize) -> &[f64] {
        &self.values[index]
    }

    /// Largest stock index stored.
    pub fn capacity(&self) -> usize {
        self.values[0].len() - 1
    }

    pub fn t_start(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Index `k` with `times[k] ≤ t ≤ times[k+1]` and the weight on `k+1`.
    fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let (lo, hi) = (self.t_start(), self.t_end());
        let slack = 1e-12 * (1.0 + lo.abs().max(hi.abs()));
        if !(t >= lo - slack && t <= hi + slack) {
            return Err(Error::domain(format!("time {t} outside grid [{lo}, {hi}]")));
        }
        if self.times.len() == 1 {
            return Ok((0, 0.0));
        }
        let t = t.clamp(lo, hi);
        let k = match self.times.binary_search_by(|p| p.total_cmp(&t)) {
            Ok(k) => return Ok((k.min(self.times.len() - 2), if k == self.times.len() - 1 { 1.0 } else { 0.0 })),
            Err(k) => k - 1,
        };
        let w = (t - self.times[k]) / (self.times[k + 1] - self.times[k]);
        Ok((k, w))
    }

    /// `V_i(t)`.
    pub fn value(&self, t: f64, i: usize) -> Result<f64> {
        if i > self.capacity() {
            return Err(Error::domain(format!("stock {i} beyond grid capacity {}", self.capacity())));
        }
        let (k, w) = self.locate(t)?;
        if w == 0.0 {
            return Ok(self.values[k][i]);
        }
        Ok((1.0 - w) * self.values[k][i] + w * self.values[k + 1][i])
    }

    /// `(V_0(t), …, V_n(t))`.
    pub fn row_at(&self, t: f64) -> Result<Vec<f64>> {
        let (k, w) = self.locate(t)?;
        if w == 0.0 {
            return Ok(self.values[k].clone());
        }
        Ok(self.values[k]
            .iter()
            .zip(&self.values[k + 1])
            .map(|(a, b)| (1.0 - w) * a + w * b)
            .collect())
    }

    /// Discrete derivative `ΔV(t, i) = V_{i+1}(t) − V_i(t)`.
    pub fn delta_resource(&self, t: f64, i: usize) -> Result<f64> {
        Ok(self.value(t, i + 1)? - self.value(t, i)?)
    }

    /// Overwrites one stored value; used to build corrupted fixtures.
    pub fn set_value(&mut self, index: usize, i: usize, value: f64) {
        self.values[index][i] = value;
    }

    /// Pointwise scaling of every stored value.
    pub fn scaled(&self, k: f64) -> ValueGrid {
        let mut out = self.clone();
        for row in &mut out.values {
            for v in row.iter_mut() {
                *v *= k;
            }
        }
        out
    }

    /// Largest pointwise difference against a grid on the same times.
    pub fn max_abs_diff(&self, other: &ValueGrid) -> Result<f64> {
        if self.times.len() != other.times.len() || self.capacity() != other.capacity() {
            return Err(Error::domain("grids differ in shape"));
        }
        Ok(self
            .values
            .iter()
            .flatten()
            .zip(other.values.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Structural checks every solved `V` must satisfy, to within `tol`:
    /// terminal and empty-stock zeros, positivity, decrease in time, increase
    /// and discrete concavity in the stock, and the `i·μ(1)` ceiling.
    pub fn validate_value_function(&self, mu_one: f64, tol: f64) -> Result<()> {
        let last = self.times.len() - 1;
        let fail = |k: usize, detail: String| Err(Error::Solver { time: self.times[k], detail });
        for (i, v) in self.values[last].iter().enumerate() {
            if v.abs() > tol {
                return fail(last, format!("V_{i}(T) = {v:e}, expected 0"));
            }
        }
        for (k, row) in self.values.iter().enumerate() {
            if row[0].abs() > tol {
                return fail(k, format!("V_0 = {:e}, expected 0", row[0]));
            }
            for i in 1..row.len() {
                if k < last && row[i] <= -tol {
                    return fail(k, format!("V_{i} = {:e} is not positive", row[i]));
                }
                if row[i] < row[i - 1] - tol {
                    return fail(k, format!("V_{i} < V_{}", i - 1));
                }
                if row[i] > i as f64 * mu_one + tol {
                    return fail(k, format!("V_{i} = {} exceeds i*mu(1)", row[i]));
                }
                if k < last && self.values[k + 1][i] > row[i] + tol {
                    return fail(k, format!("V_{i} increases in time"));
                }
            }
            if !super::emax::is_discrete_concave(row, tol) {
                return fail(k, "value row is not discrete-concave".to_string());
            }
        }
        Ok(())
    }

    /// CSV with header `t,V_0,…,V_n`. Lines in `preamble` are written first as
    /// `#` comments.
    pub fn write_csv<W: Write>(&self, writer: W, preamble: &[String]) -> Result<()> {
        let mut writer = writer;
        for line in preamble {
            writeln!(writer, "# {line}")?;
        }
        let mut csv = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((0..=self.capacity()).map(|i| format!("V_{i}")));
        csv.write_record(&header)?;
        for (t, row) in self.times.iter().zip(&self.values) {
            let mut record = vec![format!("{t:.12}")];
            record.extend(row.iter().map(|v| format!("{v:.15e}")));
            csv.write_record(&record)?;
        }
        csv.flush()?;
        Ok(())
    }

    /// Reads a grid written by [`ValueGrid::write_csv`]. The CSV carries no
    /// model parameters, so the caller supplies them.
    pub fn read_csv<R: Read>(reader: R, params: ModelParams) -> Result<Self> {
        let mut csv = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .has_headers(true)
            .from_reader(reader);
        let headers = csv.headers()?.clone();
        if headers.get(0) != Some("t") {
            return Err(Error::invalid("csv", "first column must be t"));
        }
        let mut times = Vec::new();
        let mut values = Vec::new();
        for record in csv.records() {
            let record = record?;
            let parsed: std::result::Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
            let parsed = parsed.map_err(|e| Error::invalid("csv", e.to_string()))?;
            times.push(parsed[0]);
            values.push(parsed[1..].to_vec());
        }
        ValueGrid::from_parts(params, times, values)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let grid: ValueGrid = serde_json::from_str(text)?;
        ValueGrid::from_parts(grid.params.clone(), grid.times.clone(), grid.values.clone())
            .map(|g| g.with_diagnostics(grid.diagnostics))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ValueGrid {
        ValueGrid::from_parts(
            ModelParams::new(1.0, 1.0, 1, 0.0),
            vec![0.0, 0.5, 1.0],
            vec![vec![0.0, 0.6], vec![0.0, 0.4], vec![0.0, 0.0]],
        )
        .unwrap()
    }

    #[test]
    fn interpolates_linearly() {
        let g = small();
        assert!((g.value(0.25, 1).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(g.value(1.0, 1).unwrap(), 0.0);
        assert_eq!(g.value(0.5, 1).unwrap(), 0.4);
        assert!(g.value(1.5, 1).is_err());
        assert!(g.value(0.5, 2).is_err());
        assert!((g.delta_resource(0.0, 0).unwrap() - 0.6).abs() < 1e-15);
    }

    #[test]
    fn backward_times_land_on_end() {
        let t = ModelParams::backward_times(10.0, 9.65, 0.1);
        assert_eq!(t.len(), 5);
        assert_eq!(t[0], 10.0);
        assert_eq!(*t.last().unwrap(), 9.65);
        let t = ModelParams::backward_times(1.0, 0.0, 0.25);
        assert_eq!(t, vec![1.0, 0.75, 0.5, 0.25, 0.0]);
    }

    #[test]
    fn params_validation_names_field() {
        let p = ModelParams::new(1.0, 10.0, 2, 10.0);
        match p.validate() {
            Err(Error::Invalid { field, .. }) => assert_eq!(field, "t_min"),
            other => panic!("{other:?}"),
        }
        let p = ModelParams::new(1.0, 10.0, 2, 0.0).with_dt(0.5);
        assert!(matches!(p.validate(), Err(Error::Invalid { field, .. }) if field == "dt"));
        let mut p = ModelParams::new(1.0, 10.0, 2, 0.0);
        p.quad_points = 10;
        assert!(p.validate().is_err());
    }

    #[test]
    fn csv_and_json_roundtrip() {
        let g = small();
        let mut buf = Vec::new();
        g.write_csv(&mut buf, &["hash=abc".into()]).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# hash=abc\nt,V_0,V_1\n"));
        let back = ValueGrid::read_csv(buf.as_slice(), g.params.clone()).unwrap();
        assert!(back.max_abs_diff(&g).unwrap() < 1e-14);
        let back = ValueGrid::from_json(&g.to_json().unwrap()).unwrap();
        assert_eq!(back, g);
    }
}
