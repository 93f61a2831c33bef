//! Built-in target functions and tabulated piecewise-linear maps.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Continuous map given by knots `x_0 < x_1 < ... < x_n` and values; linear in
/// between and constant beyond the ends.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseLinear {
    knots: Vec<f64>,
    values: Vec<f64>,
}

impl PiecewiseLinear {
    pub fn new(knots: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if knots.len() != values.len() {
            return Err(Error::DimensionMismatch { expected: knots.len(), got: values.len() });
        }
        if knots.is_empty() {
            return Err(Error::config("a tabulated map needs at least one knot"));
        }
        if let Some(i) = knots.iter().chain(&values).position(|v| !v.is_finite()) {
            return Err(Error::Domain(format!("non-finite table entry at position {i}")));
        }
        if let Some(i) = knots.windows(2).position(|w| w[0] >= w[1]) {
            return Err(Error::Domain(format!(
                "knots must increase strictly (knot {} = {} after {})",
                i + 1,
                knots[i + 1],
                knots[i]
            )));
        }
        Ok(PiecewiseLinear { knots, values })
    }

    /// Samples `f` at `n + 1` equispaced knots on `[lo, hi]`.
    pub fn sample(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> Result<Self> {
        let knots = uniform_knots(lo, hi, n);
        let values = knots.iter().map(|&x| f(x)).collect();
        PiecewiseLinear::new(knots, values)
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.knots[0], self.knots[self.knots.len() - 1])
    }

    /// `(min, max)` of the values, which is the range of the map.
    pub fn range(&self) -> (f64, f64) {
        let lo = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    /// Largest absolute slope between consecutive knots.
    pub fn lipschitz(&self) -> f64 {
        self.knots
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(x, y)| ((y[1] - y[0]) / (x[1] - x[0])).abs())
            .fold(0.0, f64::max)
    }

    /// Interval index and barycentric weight of the right knot for `x`.
    pub fn locate(&self, x: f64) -> (usize, f64) {
        let n = self.knots.len();
        if n == 1 || x <= self.knots[0] {
            return (0, 0.0);
        }
        if x >= self.knots[n - 1] {
            return (n - 2, 1.0);
        }
        let i = self.knots.partition_point(|&k| k <= x) - 1;
        let i = i.min(n - 2);
        let t = (x - self.knots[i]) / (self.knots[i + 1] - self.knots[i]);
        (i, t)
    }

    pub fn eval(&self, x: f64) -> f64 {
        if self.knots.len() == 1 {
            return self.values[0];
        }
        match self.locate(x) {
            (i, t) if t == 1.0 => self.values[i + 1],
            (i, t) => self.values[i] + t * (self.values[i + 1] - self.values[i]),
        }
    }

    /// Reads `x,f(x)` rows; a non-numeric first row is taken as a header.
    /// Rows are sorted by `x`; duplicate abscissae are rejected.
    pub fn from_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(text.as_bytes());
        let ctx = path.display().to_string();
        let mut rows: Vec<(f64, f64)> = Vec::new();
        for (line, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| Error::parse(format!("{ctx}:{}", line + 1), e.to_string()))?;
            if rec.iter().all(|f| f.is_empty()) {
                continue;
            }
            if rec.len() != 2 {
                return Err(Error::parse(
                    format!("{ctx}:{}", line + 1),
                    format!("expected 2 columns, found {}", rec.len()),
                ));
            }
            let parsed = (rec[0].parse::<f64>(), rec[1].parse::<f64>());
            match parsed {
                (Ok(x), Ok(y)) => rows.push((x, y)),
                _ if line == 0 => continue,
                _ => {
                    return Err(Error::parse(format!("{ctx}:{}", line + 1), "expected two numbers"));
                }
            }
        }
        if rows.len() < 2 {
            return Err(Error::parse(ctx, "need at least two samples"));
        }
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (knots, values) = rows.into_iter().unzip();
        PiecewiseLinear::new(knots, values).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
    }
}

pub(crate) fn uniform_knots(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let n = n.max(1);
    (0..=n)
        .map(|j| if j == n { hi } else { lo + (hi - lo) * j as f64 / n as f64 })
        .collect()
}

/// Named functions of the registry. On `d > 1` inputs `linear` is the coordinate
/// sum, `product` the coordinate product, and the others act on the coordinate mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Named {
    Const,
    Linear,
    Sin2pi,
    Gauss,
    StepSmooth,
    Runge,
    Product,
}

impl Named {
    pub const ALL: [Named; 7] = [
        Named::Const,
        Named::Linear,
        Named::Sin2pi,
        Named::Gauss,
        Named::StepSmooth,
        Named::Runge,
        Named::Product,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Named::Const => "const",
            Named::Linear => "linear",
            Named::Sin2pi => "sin2pi",
            Named::Gauss => "gauss",
            Named::StepSmooth => "step-smooth",
            Named::Runge => "runge",
            Named::Product => "product",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Named::ALL.into_iter().find(|n| n.name() == name)
    }

    pub fn univariate(self, x: f64) -> f64 {
        match self {
            Named::Const => 0.5,
            Named::Linear | Named::Product => x,
            Named::Sin2pi => (2.0 * std::f64::consts::PI * x).sin(),
            Named::Gauss => (-(x - 0.5) * (x - 0.5) / (2.0 * 0.15 * 0.15)).exp(),
            Named::StepSmooth => 0.5 * (1.0 + (10.0 * (x - 0.5)).tanh()),
            Named::Runge => 1.0 / (1.0 + 25.0 * (2.0 * x - 1.0) * (2.0 * x - 1.0)),
        }
    }

    pub fn eval(self, x: &[f64]) -> f64 {
        match (self, x) {
            (_, [x]) => self.univariate(*x),
            (Named::Linear, _) => x.iter().sum(),
            (Named::Product, _) => x.iter().product(),
            _ => self.univariate(x.iter().sum::<f64>() / x.len() as f64),
        }
    }
}

impl fmt::Display for Named {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A function to approximate: a registry entry or a CSV table (univariate only).
#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Named(Named),
    Table(PiecewiseLinear),
}

impl Target {
    /// Registry name, or else a path to a CSV of samples.
    pub fn resolve(spec: &str) -> Result<Target> {
        if let Some(n) = Named::parse(spec) {
            return Ok(Target::Named(n));
        }
        let path = Path::new(spec);
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) || path.exists() {
            return Ok(Target::Table(PiecewiseLinear::from_csv(path)?));
        }
        let names: Vec<&str> = Named::ALL.iter().map(|n| n.name()).collect();
        Err(Error::config(format!(
            "unknown target '{spec}' (expected one of {} or a CSV path)",
            names.join(", ")
        )))
    }

    pub fn check_dim(&self, d: usize) -> Result<()> {
        match self {
            Target::Table(_) if d != 1 => Err(Error::config("tabulated targets are univariate")),
            _ if d == 0 => Err(Error::config("dimension must be positive")),
            _ => Ok(()),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Target::Named(n) => n.eval(x),
            Target::Table(t) => t.eval(x[0]),
        }
    }

    pub fn eval_scalar(&self, x: f64) -> f64 {
        self.eval(&[x])
    }

    pub fn label(&self) -> String {
        match self {
            Target::Named(n) => n.name().to_string(),
            Target::Table(_) => "table".to_string(),
        }
    }
}
