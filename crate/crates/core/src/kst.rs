//! Superposition representations `f(x) ≈ Σ_i g_i(Σ_j h_{i,j}(x_j))` and the
//! multivariate builder that realizes them with fixed-size 1D networks.
//!
//! The bundled provider fixes affine inner maps `h_{i,j}(x) = t_i^{j−1} (x + i δ_s) / Σ_l t_i^{l−1}`
//! with `t_i = 1, 1/2, 2, 1/4, 4, ...`, so each outer function sees its own ridge
//! direction, and fits tabulated outer maps by cyclic backfitting on a tensor grid.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::activations::ActivationSpec;
use crate::encoder::{build_full_1d, skeleton_full, ApproxConfig, Approximation};
use crate::error::{Error, Result};
use crate::network::{BuildReport, Network, SearchStats};
use crate::targets::{uniform_knots, PiecewiseLinear};

/// Largest dimension handled by the bundled provider.
pub const MAX_DIM: usize = 3;
/// Share of the post-residual budget held back for off-grid slack.
const SAFETY: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InnerMap {
    /// `x -> scale (x + offset)`.
    Affine { scale: f64, offset: f64 },
    Table(PiecewiseLinear),
}

impl InnerMap {
    pub fn eval(&self, x: f64) -> f64 {
        match self {
            InnerMap::Affine { scale, offset } => scale * (x + offset),
            InnerMap::Table(t) => t.eval(x),
        }
    }

    /// Range over `[0, 1]`.
    pub fn range(&self) -> (f64, f64) {
        match self {
            InnerMap::Affine { .. } => {
                let (p, q) = (self.eval(0.0), self.eval(1.0));
                (p.min(q), p.max(q))
            }
            InnerMap::Table(t) => {
                let (lo, hi) = t.range();
                let (a, b) = (t.eval(0.0), t.eval(1.0));
                (lo.min(a).min(b), hi.max(a).max(b))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OuterMap {
    Zero,
    Table(PiecewiseLinear),
    /// The target itself; only for `d = 1`, where `g_0 = f`.
    Target,
}

impl OuterMap {
    pub fn is_zero(&self) -> bool {
        matches!(self, OuterMap::Zero)
    }
}

/// Tabulated superposition on `[0, 1]^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Superposition {
    pub d: usize,
    /// `inner[i][j]` is `h_{i,j}`, `i = 0..2d`, `j = 0..d−1`.
    pub inner: Vec<Vec<InnerMap>>,
    pub outer: Vec<OuterMap>,
    /// Outer-map domain bound `A`.
    pub bound: f64,
    /// Grid residual `max |f − Σ g_i(s_i)|`.
    pub residual: f64,
    /// Root-mean-square residual after each backfitting sweep.
    pub history: Vec<f64>,
}

impl Superposition {
    pub fn terms(&self) -> usize {
        2 * self.d + 1
    }

    /// Number of 1D sub-networks in the assembled network, `(d + 1)(2d + 1)`.
    pub fn subnetworks(&self) -> usize {
        subnetwork_count(self.d)
    }

    pub fn inner_sum(&self, i: usize, x: &[f64]) -> f64 {
        self.inner[i].iter().zip(x).map(|(h, &xj)| h.eval(xj)).sum()
    }

    /// `Σ_i g_i(Σ_j h_{i,j}(x_j))`; `f` is consulted only by [`OuterMap::Target`].
    pub fn eval(&self, f: &dyn Fn(&[f64]) -> f64, x: &[f64]) -> f64 {
        (0..self.terms())
            .map(|i| match &self.outer[i] {
                OuterMap::Zero => 0.0,
                OuterMap::Table(t) => t.eval(self.inner_sum(i, x)),
                OuterMap::Target => f(&[self.inner_sum(i, x)]),
            })
            .sum()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Superposition> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Superposition::from_text(&text)
    }

    /// Text form: a `superposition d` header, then `inner i j n` and `outer i n`
    /// blocks of `n` knot/value lines. `inner i j affine s c` is the map
    /// `x -> s (x + c)` and `outer i target` marks the target itself.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "superposition {}", self.d);
        let _ = writeln!(s, "bound {}", self.bound);
        let _ = writeln!(s, "residual {}", self.residual);
        let table = |s: &mut String, t: &PiecewiseLinear| {
            for (x, y) in t.knots().iter().zip(t.values()) {
                let _ = writeln!(s, "{x} {y}");
            }
        };
        for (i, row) in self.inner.iter().enumerate() {
            for (j, h) in row.iter().enumerate() {
                match h {
                    InnerMap::Affine { scale, offset } => {
                        let _ = writeln!(s, "inner {i} {} affine {scale} {offset}", j + 1);
                    }
                    InnerMap::Table(t) => {
                        let _ = writeln!(s, "inner {i} {} {}", j + 1, t.knots().len());
                        table(&mut s, t);
                    }
                }
            }
        }
        for (i, g) in self.outer.iter().enumerate() {
            match g {
                OuterMap::Zero => {
                    let _ = writeln!(s, "outer {i} 0");
                }
                OuterMap::Target => {
                    let _ = writeln!(s, "outer {i} target");
                }
                OuterMap::Table(t) => {
                    let _ = writeln!(s, "outer {i} {}", t.knots().len());
                    table(&mut s, t);
                }
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Superposition> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(n, l)| (n + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let err = |n: usize, m: &str| Error::parse(format!("line {n}"), m);
        let num = |n: usize, tok: Option<&str>| -> Result<f64> {
            tok.ok_or_else(|| err(n, "missing number"))?
                .parse::<f64>()
                .map_err(|e| err(n, &e.to_string()))
        };
        let count = |n: usize, tok: Option<&str>| -> Result<usize> {
            tok.ok_or_else(|| err(n, "missing count"))?
                .parse::<usize>()
                .map_err(|e| err(n, &e.to_string()))
        };

        let (n, head) = lines.next().ok_or_else(|| err(0, "empty file"))?;
        let mut tok = head.split_whitespace();
        if tok.next() != Some("superposition") {
            return Err(err(n, "expected 'superposition d'"));
        }
        let d = count(n, tok.next())?;
        if d == 0 || d > MAX_DIM {
            return Err(err(n, &format!("dimension {d} outside 1..={MAX_DIM}")));
        }
        let terms = 2 * d + 1;
        let mut bound = None;
        let mut residual = None;
        let mut inner: Vec<Vec<Option<InnerMap>>> = vec![vec![None; d]; terms];
        let mut outer: Vec<Option<OuterMap>> = vec![None; terms];

        let read_table = |lines: &mut dyn Iterator<Item = (usize, &str)>, at: usize, len: usize| {
            let mut knots = Vec::with_capacity(len);
            let mut values = Vec::with_capacity(len);
            for _ in 0..len {
                let (n, l) = lines.next().ok_or_else(|| err(at, "table ends early"))?;
                let mut t = l.split_whitespace();
                knots.push(num(n, t.next())?);
                values.push(num(n, t.next())?);
                if t.next().is_some() {
                    return Err(err(n, "expected 'knot value'"));
                }
            }
            PiecewiseLinear::new(knots, values).map_err(|e| err(at, &e.to_string()))
        };

        while let Some((n, l)) = lines.next() {
            let mut t = l.split_whitespace();
            match t.next() {
                Some("bound") => bound = Some(num(n, t.next())?),
                Some("residual") => residual = Some(num(n, t.next())?),
                Some("inner") => {
                    let i = count(n, t.next())?;
                    let j = count(n, t.next())?;
                    if i >= terms || j == 0 || j > d {
                        return Err(err(n, &format!("inner index ({i}, {j}) out of range")));
                    }
                    let spec = t.next();
                    inner[i][j - 1] = Some(if spec == Some("affine") {
                        InnerMap::Affine { scale: num(n, t.next())?, offset: num(n, t.next())? }
                    } else {
                        InnerMap::Table(read_table(&mut lines, n, count(n, spec)?)?)
                    });
                }
                Some("outer") => {
                    let i = count(n, t.next())?;
                    if i >= terms {
                        return Err(err(n, &format!("outer index {i} out of range")));
                    }
                    let spec = t.next().ok_or_else(|| err(n, "missing count"))?;
                    outer[i] = Some(match spec {
                        "target" if d == 1 => OuterMap::Target,
                        "target" => return Err(err(n, "'target' outer maps need d = 1")),
                        _ => match count(n, Some(spec))? {
                            0 => OuterMap::Zero,
                            len => OuterMap::Table(read_table(&mut lines, n, len)?),
                        },
                    });
                }
                _ => return Err(err(n, &format!("unexpected line '{l}'"))),
            }
        }
        let inner = inner
            .into_iter()
            .enumerate()
            .map(|(i, row)| {
                row.into_iter()
                    .enumerate()
                    .map(|(j, h)| h.ok_or_else(|| Error::parse("superposition", format!("inner {i} {} missing", j + 1))))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let outer = outer
            .into_iter()
            .enumerate()
            .map(|(i, g)| g.ok_or_else(|| Error::parse("superposition", format!("outer {i} missing"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(Superposition {
            d,
            inner,
            outer,
            bound: bound.unwrap_or(f64::NAN),
            residual: residual.unwrap_or(f64::NAN),
            history: Vec::new(),
        })
    }
}

pub fn subnetwork_count(d: usize) -> usize {
    (d + 1) * (2 * d + 1)
}

/// Effort limits of the backfitting provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackfitBudget {
    /// Grid points per coordinate; by default 41 for `d = 2` and 15 for `d = 3`.
    pub grid_points: Option<usize>,
    /// Knots per outer map.
    pub knots: usize,
    pub max_sweeps: usize,
    /// Stop once a sweep lowers the squared residual by less than this fraction.
    pub rel_tol: f64,
    /// Proximal ridge weight, relative to the mean diagonal of the normal equations.
    pub ridge: f64,
    /// Shift `δ_s`; by default `1 / (10 (2d + 1))`.
    pub shift: Option<f64>,
    /// Fail when the final residual exceeds this.
    pub residual_cap: Option<f64>,
}

impl Default for BackfitBudget {
    fn default() -> Self {
        BackfitBudget {
            grid_points: None,
            knots: 65,
            max_sweeps: 20000,
            rel_tol: 1e-3,
            ridge: 1e-9,
            shift: None,
            residual_cap: None,
        }
    }
}

impl BackfitBudget {
    fn validate(&self) -> Result<()> {
        if self.knots < 2 || self.max_sweeps == 0 {
            return Err(Error::config("backfit needs at least 2 knots and 1 sweep"));
        }
        if self.grid_points.is_some_and(|n| n < 2) {
            return Err(Error::config("backfit grid needs at least 2 points per coordinate"));
        }
        if !(self.rel_tol >= 0.0 && self.ridge > 0.0) {
            return Err(Error::config("rel_tol must be >= 0 and ridge > 0"));
        }
        if let Some(s) = self.shift {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::config(format!("shift must be >= 0, got {s}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Provider {
    Backfit(BackfitBudget),
    FromFiles(PathBuf),
}

impl Default for Provider {
    fn default() -> Self {
        Provider::Backfit(BackfitBudget::default())
    }
}

/// Inner maps of the bundled provider.
pub fn default_inner(d: usize, shift: f64) -> Vec<Vec<InnerMap>> {
    (0..=2 * d)
        .map(|i| {
            // 1, 1/2, 2, 1/4, 4, ...
            let e = ((i + 1) / 2) as i32;
            let t = if i % 2 == 1 { 2f64.powi(-e) } else { 2f64.powi(e) };
            let norm: f64 = (0..d).map(|j| t.powi(j as i32)).sum();
            (0..d)
                .map(|j| InnerMap::Affine { scale: t.powi(j as i32) / norm, offset: i as f64 * shift })
                .collect()
        })
        .collect()
}

fn default_grid_points(d: usize) -> usize {
    match d {
        1 => 201,
        2 => 41,
        _ => 15,
    }
}

fn tensor_grid(d: usize, n: usize) -> Vec<Vec<f64>> {
    let axis = uniform_knots(0.0, 1.0, n - 1);
    let total = n.pow(d as u32);
    (0..total)
        .map(|mut idx| {
            (0..d)
                .map(|_| {
                    let x = axis[idx % n];
                    idx /= n;
                    x
                })
                .collect()
        })
        .collect()
}

fn bound_of(sup: &Superposition, grid: &[Vec<f64>]) -> f64 {
    let mut m: f64 = 0.0;
    for x in grid {
        for i in 0..sup.terms() {
            m = m.max(sup.inner_sum(i, x).abs());
        }
    }
    1.0 + m
}

fn grid_residual(sup: &Superposition, f: &dyn Fn(&[f64]) -> f64, grid: &[Vec<f64>]) -> f64 {
    grid.iter().map(|x| (f(x) - sup.eval(f, x)).abs()).fold(0.0, f64::max)
}

/// Represents `f` on `[0, 1]^d` as a superposition.
pub fn decompose(f: &dyn Fn(&[f64]) -> f64, d: usize, provider: &Provider) -> Result<Superposition> {
    if d == 0 {
        return Err(Error::config("dimension must be positive"));
    }
    match provider {
        Provider::FromFiles(path) => {
            let mut sup = Superposition::load(path)?;
            if sup.d != d {
                return Err(Error::DimensionMismatch { expected: d, got: sup.d });
            }
            let grid = tensor_grid(d, default_grid_points(d));
            sup.bound = bound_of(&sup, &grid);
            sup.residual = grid_residual(&sup, f, &grid);
            Ok(sup)
        }
        Provider::Backfit(budget) => {
            budget.validate()?;
            if d > MAX_DIM {
                return Err(Error::config(format!("dimension {d} exceeds {MAX_DIM}")));
            }
            let shift = budget.shift.unwrap_or(1.0 / (10.0 * (2 * d + 1) as f64));
            if d == 1 {
                return Ok(exact_1d(f, shift));
            }
            let sup = backfit(f, d, shift, budget)?;
            if let Some(cap) = budget.residual_cap {
                if sup.residual > cap {
                    return Err(Error::DecompositionFailure { residual: sup.residual, cap });
                }
            }
            Ok(sup)
        }
    }
}

fn exact_1d(f: &dyn Fn(&[f64]) -> f64, shift: f64) -> Superposition {
    let mut inner = default_inner(1, shift);
    inner[0][0] = InnerMap::Affine { scale: 1.0, offset: 0.0 };
    let mut sup = Superposition {
        d: 1,
        inner,
        outer: vec![OuterMap::Target, OuterMap::Zero, OuterMap::Zero],
        bound: 0.0,
        residual: 0.0,
        history: Vec::new(),
    };
    let grid = tensor_grid(1, default_grid_points(1));
    sup.bound = bound_of(&sup, &grid);
    sup.residual = grid_residual(&sup, f, &grid);
    sup
}

/// Solves a symmetric tridiagonal system in place (Thomas algorithm).
fn solve_tridiagonal(diag: &[f64], off: &[f64], rhs: &mut [f64]) {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = diag[0];
    c[0] = if n > 1 { off[0] / d } else { 0.0 };
    rhs[0] /= d;
    for i in 1..n {
        d = diag[i] - off[i - 1] * c[i - 1];
        if i + 1 < n {
            c[i] = off[i] / d;
        }
        rhs[i] = (rhs[i] - off[i - 1] * rhs[i - 1]) / d;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= c[i] * rhs[i + 1];
    }
}

struct Term {
    knots: Vec<f64>,
    loc: Vec<(usize, f64)>,
    diag: Vec<f64>,
    off: Vec<f64>,
    coeffs: Vec<f64>,
    fitted: Vec<f64>,
}

impl Term {
    fn refit(&mut self) {
        for (p, &(k, t)) in self.loc.iter().enumerate() {
            self.fitted[p] = self.coeffs[k] + t * (self.coeffs[k + 1] - self.coeffs[k]);
        }
    }
}

fn backfit(f: &dyn Fn(&[f64]) -> f64, d: usize, shift: f64, budget: &BackfitBudget) -> Result<Superposition> {
    let n = budget.grid_points.unwrap_or_else(|| default_grid_points(d));
    let grid = tensor_grid(d, n);
    let y: Vec<f64> = grid.iter().map(|x| f(x)).collect();
    if let Some(p) = y.iter().position(|v| !v.is_finite()) {
        return Err(Error::Domain(format!("target is not finite at {:?}", grid[p])));
    }
    let inner = default_inner(d, shift);
    let m = budget.knots;
    let mut terms: Vec<Term> = inner
        .iter()
        .map(|row| {
            let s: Vec<f64> = grid.iter().map(|x| row.iter().zip(x).map(|(h, &v)| h.eval(v)).sum()).collect();
            let lo = s.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let knots = uniform_knots(lo, hi, m - 1);
            let table = PiecewiseLinear::new(knots.clone(), vec![0.0; m]).expect("increasing knots");
            let loc: Vec<(usize, f64)> = s.iter().map(|&v| table.locate(v)).collect();
            let mut diag = vec![0.0; m];
            let mut off = vec![0.0; m - 1];
            for &(k, t) in &loc {
                diag[k] += (1.0 - t) * (1.0 - t);
                diag[k + 1] += t * t;
                off[k] += (1.0 - t) * t;
            }
            let scale = diag.iter().sum::<f64>() / m as f64;
            diag.iter_mut().for_each(|v| *v += budget.ridge * scale);
            Term { knots, loc, diag, off, coeffs: vec![0.0; m], fitted: vec![0.0; grid.len()] }
        })
        .collect();
    let lambda: Vec<f64> = terms.iter().map(|t| budget.ridge * (t.diag.iter().sum::<f64>() / m as f64)).collect();

    let mut total = vec![0.0; grid.len()];
    let rss = |total: &[f64]| -> f64 { y.iter().zip(total).map(|(a, b)| (a - b) * (a - b)).sum() };
    let mut current = rss(&total);
    let mut history = Vec::new();
    let floor = 1e-28 * grid.len() as f64 * (1.0 + y.iter().map(|v| v * v).fold(0.0, f64::max));
    for _ in 0..budget.max_sweeps {
        let before = current;
        for (term, &lam) in terms.iter_mut().zip(&lambda) {
            let mut rhs: Vec<f64> = term.coeffs.iter().map(|c| lam * c).collect();
            for (p, &(k, t)) in term.loc.iter().enumerate() {
                let r = y[p] - total[p] + term.fitted[p];
                rhs[k] += (1.0 - t) * r;
                rhs[k + 1] += t * r;
            }
            solve_tridiagonal(&term.diag, &term.off, &mut rhs);
            let old_coeffs = std::mem::replace(&mut term.coeffs, rhs);
            let old_fitted = term.fitted.clone();
            term.refit();
            let trial: Vec<f64> = total
                .iter()
                .zip(&old_fitted)
                .zip(&term.fitted)
                .map(|((t, o), n)| t - o + n)
                .collect();
            let next = rss(&trial);
            if next <= current {
                total = trial;
                current = next;
            } else {
                term.coeffs = old_coeffs;
                term.fitted = old_fitted;
            }
        }
        history.push((current / grid.len() as f64).sqrt());
        if current <= floor || before - current <= budget.rel_tol * before {
            break;
        }
    }

    // move constant offsets into g_0 so that flat maps become exactly zero
    let scale = 1.0 + y.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let mut offset = 0.0;
    for term in terms.iter_mut().skip(1) {
        let c0 = term.coeffs[0];
        term.coeffs.iter_mut().for_each(|c| *c -= c0);
        offset += c0;
        if term.coeffs.iter().all(|c| c.abs() <= 1e-7 * scale) {
            term.coeffs.iter_mut().for_each(|c| *c = 0.0);
        }
    }
    terms[0].coeffs.iter_mut().for_each(|c| *c += offset);

    let outer = terms
        .iter()
        .map(|t| {
            if t.coeffs.iter().all(|&c| c == 0.0) {
                Ok(OuterMap::Zero)
            } else {
                PiecewiseLinear::new(t.knots.clone(), t.coeffs.clone()).map(OuterMap::Table)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sup = Superposition { d, inner, outer, bound: 0.0, residual: 0.0, history };
    sup.bound = bound_of(&sup, &grid);
    sup.residual = grid_residual(&sup, f, &grid);
    Ok(sup)
}

/// Outcome of [`build_multivariate`].
#[derive(Debug, Clone)]
pub struct MultiApproximation {
    pub network: Network,
    pub report: BuildReport,
    pub superposition: Superposition,
    /// 1D builds of the outer maps; `None` for zero maps.
    pub outer: Vec<Option<Approximation>>,
    /// Tolerance handed to each outer build.
    pub outer_eps: Vec<f64>,
    /// Interval each outer map was built on.
    pub outer_domains: Vec<(f64, f64)>,
}

fn selector(n: usize, j: usize) -> Vec<Vec<f64>> {
    vec![(0..n).map(|k| if k == j { 1.0 } else { 0.0 }).collect()]
}

/// `x ∈ [a, b]^d -> Σ_i φ_i(Σ_j ψ_{i,j}(z_j))` with `z = (x − a) / (b − a)`.
fn assemble(psi: &[Vec<Network>], phi: &[Network], d: usize, box_: (f64, f64)) -> Result<Network> {
    let terms = phi.len();
    let mut inner_parts = Vec::with_capacity(terms * d);
    for row in psi {
        for (j, p) in row.iter().enumerate() {
            inner_parts.push(p.affine_pre(&selector(d, j), &[0.0])?);
        }
    }
    let sums: Vec<Vec<f64>> = (0..terms)
        .map(|i| (0..terms * d).map(|k| if k / d == i { 1.0 } else { 0.0 }).collect())
        .collect();
    let inner = Network::parallel(&inner_parts)?.affine_post(&sums, &vec![0.0; terms])?;
    let outer_parts = phi
        .iter()
        .enumerate()
        .map(|(i, p)| p.affine_pre(&selector(terms, i), &[0.0]))
        .collect::<Result<Vec<_>>>()?;
    let outer = Network::parallel(&outer_parts)?.affine_post(&[vec![1.0; terms]], &[0.0])?;
    let (a, b) = box_;
    let s = 1.0 / (b - a);
    let scale: Vec<Vec<f64>> = (0..d).map(|j| (0..d).map(|k| if j == k { s } else { 0.0 }).collect()).collect();
    let inner = inner.affine_pre(&scale, &vec![-a * s; d])?;
    Network::compose(&outer, &inner)
}

/// Architecture of every multivariate build for this activation and dimension.
pub fn skeleton_multivariate(spec: &ActivationSpec, d: usize) -> Result<Network> {
    if d == 0 || d > MAX_DIM {
        return Err(Error::config(format!("dimension {d} outside 1..={MAX_DIM}")));
    }
    let phi = skeleton_full(spec)?;
    let psi: Vec<Vec<Network>> = default_inner(d, 0.0)
        .iter()
        .map(|row| row.iter().map(|h| inner_network(h)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    assemble(&psi, &vec![phi; 2 * d + 1], d, (0.0, 1.0))
}

fn inner_network(h: &InnerMap) -> Result<Network> {
    match h {
        InnerMap::Affine { scale, offset } => Network::affine(vec![vec![*scale]], vec![scale * offset]),
        InnerMap::Table(_) => Err(Error::config("tabulated inner maps need a 1D build")),
    }
}

fn mix(seed: u64, i: u64) -> u64 {
    seed ^ i.wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

fn multi_failure(spec: &ActivationSpec, d: usize, reason: String, best_error: f64, stats: SearchStats) -> Error {
    let report = skeleton_multivariate(spec, d).ok().map(|net| {
        let mut r = BuildReport::new(spec.kind(), &net);
        r.subnetworks = subnetwork_count(d);
        r.sup_error_estimate = if best_error.is_finite() { best_error } else { f64::MAX };
        r.search = stats;
        Box::new(r)
    });
    Error::SearchFailure { reason, best_error, report }
}

/// Grid points per coordinate for the final check, about `grid_size` in total.
pub fn check_points(grid_size: usize, d: usize) -> usize {
    ((grid_size as f64).powf(1.0 / d as f64).round() as usize).max(2)
}

/// Fixed-size network for `f` on `[a, b]^d`.
pub fn build_multivariate(
    f: &dyn Fn(&[f64]) -> f64,
    d: usize,
    box_: (f64, f64),
    spec: &ActivationSpec,
    cfg: &ApproxConfig,
    provider: &Provider,
) -> Result<MultiApproximation> {
    cfg.validate()?;
    if d == 0 || d > MAX_DIM {
        return Err(Error::config(format!("dimension {d} outside 1..={MAX_DIM}")));
    }
    let (a, b) = box_;
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(Error::config(format!("degenerate box [{a}, {b}]")));
    }
    let started = Instant::now();
    let unit = |z: &[f64]| -> f64 {
        let x: Vec<f64> = z.iter().map(|&t| a + (b - a) * t).collect();
        f(&x)
    };
    let sup = decompose(&unit, d, provider)?;
    if !(sup.residual < cfg.eps) {
        return Err(Error::DecompositionFailure { residual: sup.residual, cap: cfg.eps });
    }

    let terms = sup.terms();
    let active = sup.outer.iter().filter(|g| !g.is_zero()).count().max(1);
    // relaxed split first, the strict one if the check grid disagrees
    let budget = (cfg.eps - sup.residual) * (1.0 - SAFETY);
    let mut shares = vec![budget / active as f64];
    if active > 1 {
        shares.insert(0, budget / (active as f64).sqrt());
    }
    let mut stats = SearchStats::default();
    for (pass, &share) in shares.iter().enumerate() {

        let mut psi = Vec::with_capacity(terms);
        let mut inner_eps = vec![0.0; terms];
        let lip: Vec<f64> = sup
            .outer
            .iter()
            .map(|g| match g {
                OuterMap::Table(t) => t.lipschitz(),
                _ => 0.0,
            })
            .collect();
        for (i, row) in sup.inner.iter().enumerate() {
            let tabulated = row.iter().any(|h| matches!(h, InnerMap::Table(_)));
            if tabulated && matches!(sup.outer[i], OuterMap::Target) {
                return Err(Error::config("the target outer map needs affine inner maps"));
            }
            if tabulated && lip[i] > 0.0 {
                inner_eps[i] = 0.25 * share / (d as f64 * lip[i]);
            }
            let mut nets = Vec::with_capacity(d);
            for (j, h) in row.iter().enumerate() {
                let net = match h {
                    InnerMap::Affine { .. } => inner_network(h)?,
                    InnerMap::Table(t) if inner_eps[i] > 0.0 => {
                        let mut c = cfg.clone();
                        c.eps = inner_eps[i];
                        c.seed = mix(cfg.seed, (100 + 10 * i + j) as u64);
                        let built = build_full_1d(&|x| t.eval(x), (0.0, 1.0), spec, &c).map_err(|e| match e {
                            Error::SearchFailure { reason, best_error, .. } => multi_failure(
                                spec,
                                d,
                                format!("inner map ({i}, {}): {reason}", j + 1),
                                best_error,
                                stats.clone(),
                            ),
                            other => other,
                        })?;
                        stats.absorb(&built.report.search);
                        built.network
                    }
                    // the outer map is zero, so this inner map is never read
                    InnerMap::Table(_) => Network::affine(vec![vec![0.0]], vec![0.0])?,
                };
                nets.push(net);
            }
            psi.push(nets);
        }

        let skeleton = skeleton_full(spec)?;
        let mut phi = Vec::with_capacity(terms);
        let mut outer = Vec::with_capacity(terms);
        let mut outer_eps = Vec::with_capacity(terms);
        let mut outer_domains = Vec::with_capacity(terms);
        let mut max_k = 0;
        let mut min_delta = f64::INFINITY;
        for (i, g) in sup.outer.iter().enumerate() {
            let (lo, hi) = sup.inner[i].iter().fold((0.0, 0.0), |(lo, hi), h| {
                let (p, q) = h.range();
                (lo + p, hi + q)
            });
            let widen = d as f64 * inner_eps[i];
            let dom = (lo - widen, hi + widen);
            outer_domains.push(dom);
            let eps_i = if inner_eps[i] > 0.0 { 0.75 * share } else { share };
            outer_eps.push(eps_i);
            let built = match g {
                OuterMap::Zero => None,
                OuterMap::Target | OuterMap::Table(_) => {
                    let mut c = cfg.clone();
                    c.eps = eps_i;
                    c.seed = mix(cfg.seed, i as u64);
                    let eval = |s: f64| match g {
                        OuterMap::Table(t) => t.eval(s),
                        _ => unit(&[s]),
                    };
                    let built = build_full_1d(&eval, dom, spec, &c).map_err(|e| match e {
                        Error::SearchFailure { reason, best_error, .. } => multi_failure(
                            spec,
                            d,
                            format!("outer map {i}: {reason}"),
                            best_error + sup.residual,
                            stats.clone(),
                        ),
                        other => other,
                    })?;
                    stats.absorb(&built.report.search);
                    max_k = max_k.max(built.k);
                    if built.report.delta > 0.0 {
                        min_delta = min_delta.min(built.report.delta);
                    }
                    Some(built)
                }
            };
            phi.push(built.as_ref().map_or_else(|| skeleton.silenced(), |b| b.network.clone()));
            outer.push(built);
        }

        let network = assemble(&psi, &phi, d, box_)?;
        let n = check_points(cfg.grid_size, d);
        let axis = uniform_knots(a, b, n - 1);
        let total = n.pow(d as u32);
        let mut err: f64 = 0.0;
        let mut x = vec![0.0; d];
        for mut idx in 0..total {
            for xj in x.iter_mut() {
                *xj = axis[idx % n];
                idx /= n;
            }
            let y = network.forward(&x)?[0];
            err = err.max((y - f(&x)).abs());
        }
        stats.elapsed_secs = started.elapsed().as_secs_f64();
        if !(err < cfg.eps) && pass + 1 < shares.len() {
            continue;
        }
        if !(err < cfg.eps) {
            return Err(multi_failure(
                spec,
                d,
                "assembled network misses eps on the check grid".into(),
                err,
                stats,
            ));
        }
        let mut report = BuildReport::new(spec.kind(), &network);
        report.subnetworks = subnetwork_count(d);
        report.sup_error_estimate = err;
        report.grid_size = total;
        report.k = max_k;
        report.delta = if min_delta.is_finite() { min_delta } else { 0.0 };
        report.search = stats;
        return Ok(MultiApproximation { network, report, superposition: sup, outer, outer_eps, outer_domains });
    }
    unreachable!("the last pass returns")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::ActivationKind;

    #[test]
    fn tridiagonal_solver_matches_dense() {
        let diag = [4.0, 5.0, 6.0];
        let off = [1.0, 2.0];
        let b = [6.0, 20.0, 22.0];
        let mut x = b;
        solve_tridiagonal(&diag, &off, &mut x);
        let ax = [
            diag[0] * x[0] + off[0] * x[1],
            off[0] * x[0] + diag[1] * x[1] + off[1] * x[2],
            off[1] * x[1] + diag[2] * x[2],
        ];
        for (got, want) in ax.iter().zip(b) {
            assert!((got - want).abs() < 1e-12, "{x:?}");
        }
    }

    #[test]
    fn one_dimension_is_exact() {
        let f = |x: &[f64]| (3.0 * x[0]).sin();
        let sup = decompose(&f, 1, &Provider::default()).unwrap();
        assert_eq!(sup.residual, 0.0);
        assert_eq!(sup.outer[0], OuterMap::Target);
        assert!(sup.outer[1..].iter().all(OuterMap::is_zero));
    }

    #[test]
    fn text_round_trip() {
        let f = |x: &[f64]| x[0] * x[1];
        let budget = BackfitBudget { grid_points: Some(9), knots: 9, ..Default::default() };
        let sup = decompose(&f, 2, &Provider::Backfit(budget)).unwrap();
        let back = Superposition::from_text(&sup.to_text()).unwrap();
        let x = [0.3, 0.8];
        assert!((back.eval(&f, &x) - sup.eval(&f, &x)).abs() < 1e-12);
        assert!(Superposition::from_text("superposition 2\nouter 0 0\n").is_err());
    }

    #[test]
    fn skeleton_has_fixed_count() {
        let spec = ActivationSpec::for_kind(ActivationKind::Euaf);
        let net = skeleton_multivariate(&spec, 2).unwrap();
        assert_eq!(net.input_dim(), 2);
        assert_eq!(net.width(), 5 * skeleton_full(&spec).unwrap().width());
    }
}
