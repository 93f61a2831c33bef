//! Encoding K sample values into one neuron: find `(u, w, v)` with
//! `|u g(w a_k) + v − y_k| < tol_k` for every anchor `a_k`.
//!
//! The search runs a multi-level grid over `w`, then a lattice stage that treats the
//! conditions `w a_k ≈ 2 n_k ± t_k` as a closest-vector problem. Every candidate is
//! accepted only after evaluating the actual network tail at the anchors.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lattice;
use crate::activations::triangle_g;
use crate::error::{Error, Result};
use crate::network::{Network, SearchStats};

/// Budget of the density search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub w_max: f64,
    pub grid_points: usize,
    pub refine_levels: usize,
    /// Fresh shifts and anchors tried by the builders after a failed fit.
    pub restarts: usize,
    /// Closest-vector attempts per fit once the grid has failed; 0 disables the stage.
    pub lattice_trials: usize,
    /// Cap `|w a_k| <= 2^phase_bits`; `None` picks a per-activation default.
    pub phase_bits: Option<u32>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            w_max: 1e4,
            grid_points: 2048,
            refine_levels: 4,
            restarts: 8,
            lattice_trials: 20_000,
            phase_bits: None,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.w_max.is_finite() && self.w_max > 0.0) {
            return Err(Error::config(format!("w_max must be > 0, got {}", self.w_max)));
        }
        if self.grid_points < 2 {
            return Err(Error::config("grid_points must be at least 2"));
        }
        if self.refine_levels == 0 {
            return Err(Error::config("refine_levels must be positive"));
        }
        if self.restarts == 0 {
            return Err(Error::config("restarts must be positive"));
        }
        if let Some(b) = self.phase_bits {
            if !(1..=50).contains(&b) {
                return Err(Error::config(format!("phase_bits must lie in 1..=50, got {b}")));
            }
        }
        Ok(())
    }
}

/// The part of the encoder after the anchor neuron: `a -> u W(w a + 2 m0) + v`,
/// where `W` is the activation's triangle-wave witness.
#[derive(Debug, Clone)]
pub struct TailModel {
    witness: Network,
}

impl TailModel {
    pub fn new(witness: Network) -> Self {
        TailModel { witness }
    }

    /// Tail built on the exact triangle wave, `W(x) = g(x)`.
    pub fn exact() -> Self {
        use crate::activations::Activation;
        use crate::network::Tag;
        TailModel::new(Network::scalar_chain(&[(1.0, 0.0, Tag::Act(Activation::Euaf))], (1.0, 0.0)))
    }

    pub fn witness(&self) -> &Network {
        &self.witness
    }

    pub fn network(&self, u: f64, w: f64, v: f64, m0: u64) -> Network {
        let phase = Network::scalar_chain(&[], (w, 2.0 * m0 as f64));
        let inner = Network::compose(&self.witness, &phase).expect("scalar shapes");
        inner.scalar_post(u, v).expect("scalar shapes")
    }

    fn features(&self, w: f64, m0: u64, anchors: &[f64]) -> Vec<f64> {
        let net = self.network(1.0, w, 0.0, m0);
        anchors.iter().map(|&a| net.eval_scalar(a)).collect()
    }
}

/// Smallest `m0` making every phase `w a_k + 2 m0` nonnegative.
pub fn phase_offset(w: f64, anchors: &[f64]) -> u64 {
    let worst = anchors.iter().map(|&a| -(w * a)).fold(0.0, f64::max);
    (worst / 2.0).ceil() as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingFit {
    pub u: f64,
    pub w: f64,
    pub v: f64,
    pub m0: u64,
    /// Largest `|tail(a_k) − y_k|`.
    pub max_error: f64,
    /// Largest `|tail(a_k) − y_k| / tol_k`; below 1 on success.
    pub weighted_error: f64,
}

#[derive(Debug, Clone)]
pub struct FitFailure {
    pub best: Option<EncodingFit>,
}

impl FitFailure {
    pub fn best_error(&self) -> f64 {
        self.best.as_ref().map_or(f64::INFINITY, |b| b.max_error)
    }
}

/// Weighted Chebyshev line fit: minimizes `max_k |u h_k + v − y_k| / tol_k`.
/// Returns `(u, v, z)`; among optimal slopes the one closest to 0 is chosen.
pub fn chebyshev_line(h: &[f64], y: &[f64], tol: &[f64]) -> (f64, f64, f64) {
    let n = h.len();
    let level = |u: f64| -> (f64, f64) {
        // z(u) = max over pairs of (r_k − r_j) / (tol_k + tol_j), with its slope
        let mut best = (f64::NEG_INFINITY, 0.0);
        for k in 0..n {
            let rk = y[k] - u * h[k];
            for j in 0..n {
                let s = tol[k] + tol[j];
                let val = (rk - (y[j] - u * h[j])) / s;
                if val > best.0 {
                    best = (val, -(h[k] - h[j]) / s);
                }
            }
        }
        (best.0.max(0.0), best.1)
    };
    let z_of = |u: f64| level(u).0;
    let v_for = |u: f64, z: f64| {
        let lo = (0..n).map(|k| y[k] - u * h[k] - z * tol[k]).fold(f64::NEG_INFINITY, f64::max);
        let hi = (0..n).map(|k| y[k] - u * h[k] + z * tol[k]).fold(f64::INFINITY, f64::min);
        0.5 * (lo + hi)
    };

    let z0 = z_of(0.0);
    let mut slope_max: f64 = 0.0;
    let mut dy_max: f64 = 0.0;
    for k in 0..n {
        for j in 0..n {
            let s = tol[k] + tol[j];
            slope_max = slope_max.max((h[k] - h[j]).abs() / s);
            dy_max = dy_max.max((y[k] - y[j]).abs() / s);
        }
    }
    if slope_max == 0.0 || z0 == 0.0 {
        return (0.0, v_for(0.0, z0), z0);
    }
    let bound = 2.0 * (z0 + dy_max) / slope_max;
    let (mut lo, mut hi) = (-bound, bound);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let (_, slope) = level(mid);
        if slope > 0.0 {
            hi = mid;
        } else if slope < 0.0 {
            lo = mid;
        } else {
            lo = mid;
            hi = mid;
            break;
        }
        if hi - lo <= 1e-15 * bound {
            break;
        }
    }
    let mut u = 0.5 * (lo + hi);
    let mut z = z_of(u);
    // pull toward zero inside the optimal plateau
    let accept = z * (1.0 + 1e-12) + 1e-300;
    if z0 <= accept {
        u = 0.0;
        z = z0;
    } else {
        let (mut near, mut far) = (0.0, u);
        for _ in 0..200 {
            let mid = 0.5 * (near + far);
            if z_of(mid) <= accept {
                far = mid;
            } else {
                near = mid;
            }
            if (far - near).abs() <= 1e-15 * u.abs() {
                break;
            }
        }
        u = far;
        z = z_of(u);
    }
    (u, v_for(u, z), z)
}

/// Encodes `targets` at `anchors` with error below `eps / 2`, using the exact
/// triangle wave as the decoding neuron.
pub fn fit_samples(
    targets: &[f64],
    anchors: &[f64],
    eps: f64,
    search: &SearchConfig,
    seed: u64,
) -> Result<super::EncodingTriple> {
    if targets.is_empty() || targets.len() != anchors.len() {
        return Err(Error::DimensionMismatch { expected: anchors.len().max(1), got: targets.len() });
    }
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::config(format!("eps must be > 0, got {eps}")));
    }
    search.validate()?;
    let tols = vec![0.5 * eps; targets.len()];
    let prob = FitProblem { anchors, targets, tols: &tols };
    let mut rng = <ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let mut stats = SearchStats::default();
    let bits = search.phase_bits.unwrap_or(43);
    match fit_encoding(&prob, search, bits, &TailModel::exact(), &mut rng, &mut stats) {
        Ok(fit) => Ok(super::EncodingTriple {
            u: fit.u,
            w: fit.w,
            v: fit.v,
            m0: fit.m0,
            anchors: anchors.to_vec(),
            w0: None,
            max_error: fit.max_error,
        }),
        Err(fail) => Err(Error::SearchFailure {
            reason: format!("no encoding of {} samples within {:e}", targets.len(), 0.5 * eps),
            best_error: fail.best_error(),
            report: None,
        }),
    }
}

pub(crate) struct FitProblem<'a> {
    pub anchors: &'a [f64],
    pub targets: &'a [f64],
    pub tols: &'a [f64],
}

pub(crate) fn fit_encoding(
    prob: &FitProblem<'_>,
    search: &SearchConfig,
    phase_bits: u32,
    tail: &TailModel,
    rng: &mut ChaCha8Rng,
    stats: &mut SearchStats,
) -> std::result::Result<EncodingFit, FitFailure> {
    if prob.anchors.is_empty() {
        // a copy whose bump never switches on inside the domain
        return Ok(EncodingFit { u: 0.0, w: 0.0, v: 0.0, m0: 0, max_error: 0.0, weighted_error: 0.0 });
    }
    let mut state = SearchState { prob, tail, best: None };
    if let Some(fit) = state.try_flat() {
        return Ok(fit);
    }
    let a_max = prob.anchors.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let phase_cap = 2f64.powi(phase_bits as i32);
    let w_max = search.w_max.min(phase_cap / a_max.max(f64::MIN_POSITIVE));
    if let Some(fit) = state.grid_stage(search, w_max, stats) {
        return Ok(fit);
    }
    if let Some(fit) = state.lattice_stage(search.lattice_trials, phase_cap, rng, stats) {
        return Ok(fit);
    }
    Err(FitFailure { best: state.best })
}

struct SearchState<'a, 'b> {
    prob: &'a FitProblem<'b>,
    tail: &'a TailModel,
    best: Option<EncodingFit>,
}

impl SearchState<'_, '_> {
    /// Checks `(u, w, v)` on the real tail network and records the best attempt.
    fn verify(&mut self, w: f64) -> Option<EncodingFit> {
        let p = self.prob;
        let m0 = phase_offset(w, p.anchors);
        let h = self.tail.features(w, m0, p.anchors);
        let (u, v, z) = chebyshev_line(&h, p.targets, p.tols);
        if !(z.is_finite() && z < 1.0 + 1e-9) {
            self.record(u, w, v, m0, &h, z);
            return None;
        }
        let net = self.tail.network(u, w, v, m0);
        let mut max_error: f64 = 0.0;
        let mut weighted: f64 = 0.0;
        for ((&a, &y), &t) in p.anchors.iter().zip(p.targets).zip(p.tols) {
            let e = (net.eval_scalar(a) - y).abs();
            max_error = max_error.max(e);
            weighted = weighted.max(e / t);
        }
        let fit = EncodingFit { u, w, v, m0, max_error, weighted_error: weighted };
        self.keep(&fit);
        (weighted < 1.0).then_some(fit)
    }

    fn record(&mut self, u: f64, w: f64, v: f64, m0: u64, h: &[f64], z: f64) {
        let p = self.prob;
        let max_error = h
            .iter()
            .zip(p.targets)
            .map(|(&hk, &y)| (u * hk + v - y).abs())
            .fold(0.0, f64::max);
        self.keep(&EncodingFit { u, w, v, m0, max_error, weighted_error: z });
    }

    fn keep(&mut self, fit: &EncodingFit) {
        let better = self.best.as_ref().map_or(true, |b| fit.weighted_error < b.weighted_error);
        if better {
            self.best = Some(fit.clone());
        }
    }

    /// `u = 0` fits, covering one sample and flat targets.
    fn try_flat(&mut self) -> Option<EncodingFit> {
        let p = self.prob;
        let zeros = vec![0.0; p.targets.len()];
        let (_, _, z) = chebyshev_line(&zeros, p.targets, p.tols);
        if z < 1.0 {
            return self.verify(0.0);
        }
        None
    }

    fn grid_stage(&mut self, search: &SearchConfig, w_max: f64, stats: &mut SearchStats) -> Option<EncodingFit> {
        let p = self.prob;
        let mut lo = 0.0;
        let mut hi = w_max;
        let n = search.grid_points;
        let mut h = vec![0.0; p.anchors.len()];
        for _ in 0..search.refine_levels {
            let step = (hi - lo) / (n - 1) as f64;
            let mut best = (f64::INFINITY, lo);
            for i in 0..n {
                let w = lo + step * i as f64;
                for (hk, &a) in h.iter_mut().zip(p.anchors) {
                    *hk = triangle_g(w * a);
                }
                let (_, _, z) = chebyshev_line(&h, p.targets, p.tols);
                stats.w_grid_evaluations += 1;
                if z < best.0 {
                    best = (z, w);
                }
            }
            if let Some(fit) = self.verify(best.1) {
                return Some(fit);
            }
            lo = (best.1 - step).max(0.0);
            hi = (best.1 + step).min(w_max);
            if hi <= lo {
                break;
            }
        }
        None
    }

    fn lattice_stage(
        &mut self,
        trials: usize,
        phase_cap: f64,
        rng: &mut ChaCha8Rng,
        stats: &mut SearchStats,
    ) -> Option<EncodingFit> {
        let p = self.prob;
        let k_len = p.anchors.len();
        if trials == 0 || k_len < 2 {
            return None;
        }
        let pivot = (0..k_len)
            .max_by(|&i, &j| p.anchors[i].abs().total_cmp(&p.anchors[j].abs()))
            .unwrap_or(0);
        let a_p = p.anchors[pivot];
        if a_p == 0.0 {
            return None;
        }
        let others: Vec<usize> = (0..k_len).filter(|&k| k != pivot).collect();
        let ratio: Vec<f64> = p.anchors.iter().map(|&a| a / a_p).collect();
        let n_cap = 0.5 * phase_cap;
        let y_min = p.targets.iter().copied().fold(f64::INFINITY, f64::min);
        let y_max = p.targets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let span = y_max - y_min;
        let tol_min = p.tols.iter().copied().fold(f64::INFINITY, f64::min);
        let span_eff = (span - tol_min).max(0.5 * span).max(f64::MIN_POSITIVE);

        let per_basis = 64;
        let mut done = 0;
        while done < trials {
            let u_abs = span_eff * (1.0 + 0.3 * rng.gen::<f64>().powi(2));
            let u_neg = rng.gen::<bool>();
            let tau: Vec<f64> = p.tols.iter().map(|&t| 0.9 * t / u_abs).collect();
            let embed = |c: &[i128]| -> Vec<f64> {
                let np = c[0] as f64;
                let mut out = Vec::with_capacity(k_len);
                out.push(np / n_cap);
                for (i, &k) in others.iter().enumerate() {
                    let lin = (2.0 * ratio[k]).mul_add(np, -2.0 * c[i + 1] as f64);
                    out.push(lin / tau[k]);
                }
                out
            };
            let basis: Vec<Vec<i128>> = (0..k_len)
                .map(|i| (0..k_len).map(|j| i128::from(i == j)).collect())
                .collect();
            let reduced = lattice::lll(basis, &embed, 0.99);

            for _ in 0..per_basis.min(trials - done) {
                done += 1;
                stats.lattice_trials += 1;
                let (v_lo, v_hi) = if u_neg {
                    (y_max, y_min + u_abs)
                } else {
                    (y_max - u_abs, y_min)
                };
                let v = if v_hi > v_lo { v_lo + (v_hi - v_lo) * rng.gen::<f64>() } else { 0.5 * (v_lo + v_hi) };
                let u = if u_neg { -u_abs } else { u_abs };
                let c: Vec<f64> = p
                    .targets
                    .iter()
                    .map(|&y| {
                        let t = ((y - v) / u).clamp(0.0, 1.0);
                        if rng.gen::<bool>() { t } else { -t }
                    })
                    .collect();
                let mut target = Vec::with_capacity(k_len);
                target.push(0.0);
                for &k in &others {
                    target.push((c[k] - ratio[k] * c[pivot]) / tau[k]);
                }
                let point = reduced.babai(&target);
                let mut candidates = vec![point[0]];
                for row in &reduced.coeffs {
                    candidates.push(point[0] + row[0]);
                    candidates.push(point[0] - row[0]);
                }
                for np in candidates {
                    let npf = np as f64;
                    if npf.abs() > 1.02 * n_cap {
                        continue;
                    }
                    let Some(w) = admissible_w(npf, pivot, &ratio, p.anchors, &c, &tau) else {
                        continue;
                    };
                    if let Some(fit) = self.verify(w) {
                        return Some(fit);
                    }
                }
            }
        }
        None
    }
}

/// Midpoint of the `w` interval where every phase `w a_k` is within `tau_k` of
/// `2 n_k + c_k`, with `n_k` the nearest integers implied by `n_p`.
fn admissible_w(np: f64, pivot: usize, ratio: &[f64], anchors: &[f64], c: &[f64], tau: &[f64]) -> Option<f64> {
    let base = 2.0 * np + c[pivot];
    let mut lo = f64::NEG_INFINITY;
    let mut hi = f64::INFINITY;
    for k in 0..anchors.len() {
        let nk = if k == pivot { np } else { ((ratio[k] * base - c[k]) / 2.0).round() };
        let centre = 2.0 * nk + c[k];
        let (a, b) = ((centre - tau[k]) / anchors[k], (centre + tau[k]) / anchors[k]);
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        lo = lo.max(a);
        hi = hi.min(b);
        if lo > hi {
            return None;
        }
    }
    Some(0.5 * (lo + hi))
}
