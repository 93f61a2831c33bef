//! Half-interval and full-interval builders.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::blocks::{bump_network, indexed_network, skeleton_witness};
use super::fit::{fit_encoding, EncodingFit, FitProblem, TailModel};
use super::gamma::{gamma_delta, gamma_network};
use super::{anchors, default_phase_bits, select_shift, ApproxConfig, EncodingTriple, KChoice, Rescale};
use crate::activations::{bump_psi, Activation, ActivationSpec};
use crate::error::{Error, Result};
use crate::network::{BuildReport, Network, SearchStats};

/// Share of `eps` kept free for grid-estimation slack.
const SAFETY: f64 = 0.02;
/// Largest `K` considered by automatic selection.
const K_MAX: usize = 512;

#[derive(Debug, Clone)]
pub struct Approximation {
    pub network: Network,
    pub report: BuildReport,
    pub k: usize,
    /// One encoding per half-interval network (one for `build_half`, four otherwise).
    pub encodings: Vec<EncodingTriple>,
    /// Error budget accounting of the build.
    pub budget: Budget,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Budget {
    /// Error of the piecewise-constant model before encoding.
    pub model_error: f64,
    /// Largest encoding error over all samples.
    pub encoding_error: f64,
    /// Grid gap between gadget products and exact products.
    pub gamma_gap: f64,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Midrange and half-oscillation of `f` sampled on `[lo, hi]`.
fn range_stats(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> (f64, f64) {
    let mut min = f64::INFINITY;
    let mut max = f64::NEG_INFINITY;
    for j in 0..=n {
        let x = if j == n { hi } else { lo + (hi - lo) * j as f64 / n as f64 };
        let y = f(x);
        min = min.min(y);
        max = max.max(y);
    }
    (0.5 * (min + max), 0.5 * (max - min))
}

/// Estimated number of bits the lattice stage must supply.
fn encoding_cost(targets: &[f64], tols: &[f64]) -> f64 {
    let lo = targets.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = targets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if span <= 0.0 {
        return 0.0;
    }
    let bits: Vec<f64> = tols.iter().map(|&t| (span / (2.0 * t)).log2().max(0.0)).collect();
    let total: f64 = bits.iter().sum();
    total - bits.iter().copied().fold(0.0, f64::max)
}

fn check_finite_target(y: f64, x: f64) -> Result<()> {
    if y.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("target is not finite at x = {x}")))
    }
}

fn tail_for(spec: &ActivationSpec, cfg: &ApproxConfig, domain: f64) -> Result<TailModel> {
    let eps_w = match spec.activation {
        Activation::Rho1 | Activation::Rho2 => (cfg.eps / 50.0).min(1e-3),
        _ => 1.0,
    };
    Ok(TailModel::new(spec.witness(eps_w, domain)?.network))
}

fn phase_bits(spec: &ActivationSpec, cfg: &ApproxConfig) -> u32 {
    cfg.search.phase_bits.unwrap_or_else(|| default_phase_bits(spec.kind()))
}

fn failure(
    spec: &ActivationSpec,
    skeleton: Result<Network>,
    reason: String,
    best_error: f64,
    k: usize,
    cfg: &ApproxConfig,
    stats: SearchStats,
) -> Error {
    let report = skeleton.ok().map(|net| {
        let mut r = BuildReport::new(spec.kind(), &net);
        r.sup_error_estimate = if best_error.is_finite() { best_error } else { f64::MAX };
        r.grid_size = cfg.grid_size;
        r.k = k;
        r.search = stats;
        Box::new(r)
    });
    Error::SearchFailure { reason, best_error, report }
}

fn triple(fit: &EncodingFit, anchors: Vec<f64>, w0: f64) -> EncodingTriple {
    EncodingTriple {
        u: fit.u,
        w: fit.w,
        v: fit.v,
        m0: fit.m0,
        anchors,
        w0: Some(w0),
        max_error: fit.max_error,
    }
}

pub fn skeleton_half(spec: &ActivationSpec) -> Result<Network> {
    let tail = TailModel::new(skeleton_witness(spec)?);
    indexed_network(spec, &tail, 0.01, 0.0, 0.0, 0.0, 0)?.scalar_pre(2.0, 0.0)
}

pub fn skeleton_full(spec: &ActivationSpec) -> Result<Network> {
    let witness = skeleton_witness(spec)?;
    let tail = TailModel::new(witness.clone());
    let phi = indexed_network(spec, &tail, 0.01, 0.0, 0.0, 0.0, 0)?;
    let bump = bump_network(&witness)?;
    assemble_full(spec, &[phi.clone(), phi.clone(), phi.clone(), phi], &bump, 1, Rescale::new(0.0, 1.0)?, 1e-3)
}

struct HalfPlan {
    k: usize,
    targets: Vec<f64>,
    tols: Vec<f64>,
    model_error: f64,
}

fn plan_half(f: &dyn Fn(f64) -> f64, k: usize, cfg: &ApproxConfig) -> Result<Option<HalfPlan>> {
    let budget = cfg.eps * (1.0 - SAFETY);
    let n = (4 * cfg.grid_size / k).max(64);
    let mut targets = Vec::with_capacity(k);
    let mut tols = Vec::with_capacity(k);
    let mut model_error: f64 = 0.0;
    for kk in 1..=k {
        let lo = (2 * kk - 2) as f64 / (2 * k) as f64;
        let hi = (2 * kk - 1) as f64 / (2 * k) as f64;
        let (mid, half) = range_stats(f, lo, hi, n);
        check_finite_target(mid, lo)?;
        targets.push(mid);
        tols.push(budget - half);
        model_error = model_error.max(half);
    }
    let ok = tols.iter().all(|&t| t > 0.05 * cfg.eps);
    Ok(ok.then_some(HalfPlan { k, targets, tols, model_error }))
}

fn choose<P>(fixed: KChoice, plan: impl Fn(usize) -> Result<Option<P>>, cost: impl Fn(&P) -> f64) -> Result<Option<P>> {
    match fixed {
        KChoice::Fixed(k) => plan(k),
        KChoice::Auto => {
            let mut best: Option<(f64, P)> = None;
            let mut k = 1;
            while k <= K_MAX {
                if let Some(p) = plan(k)? {
                    let c = cost(&p);
                    if best.as_ref().map_or(true, |(bc, _)| c < *bc - 1e-9) {
                        best = Some((c, p));
                    }
                }
                k *= 2;
            }
            Ok(best.map(|(_, p)| p))
        }
    }
}

/// Whether `x` lies in some `I_k = [(2k−2)/2K, (2k−1)/2K]`.
pub fn in_half_support(x: f64, k: usize) -> bool {
    let t = 2.0 * k as f64 * x;
    t >= 0.0 && t - 2.0 * (t / 2.0).floor() <= 1.0 && t <= (2 * k - 1) as f64
}

/// Theorem-2 style network on `[0, 1]`: accurate on the union of `I_k = [(2k−2)/2K, (2k−1)/2K]`.
pub fn build_half(f: &dyn Fn(f64) -> f64, spec: &ActivationSpec, cfg: &ApproxConfig) -> Result<Approximation> {
    cfg.validate()?;
    let started = Instant::now();
    let mut stats = SearchStats::default();
    let plan = choose(cfg.k, |k| plan_half(f, k, cfg), |p| encoding_cost(&p.targets, &p.tols))?;
    let Some(plan) = plan else {
        let k = match cfg.k {
            KChoice::Fixed(k) => k,
            KChoice::Auto => 0,
        };
        return Err(failure(
            spec,
            skeleton_half(spec),
            "target oscillates more than eps on every admissible interval width".into(),
            f64::INFINITY,
            k,
            cfg,
            stats,
        ));
    };
    let k = plan.k;
    let bits = phase_bits(spec, cfg);
    let domain = (2f64.powi(bits as i32) + 4.0).max(2.0 * k as f64 + 4.0);
    let tail = match tail_for(spec, cfg, domain) {
        Ok(t) => t,
        Err(e) => {
            return Err(failure(spec, skeleton_half(spec), format!("witness: {e}"), f64::INFINITY, k, cfg, stats));
        }
    };

    let grid: Vec<f64> = (0..cfg.grid_size)
        .map(|j| j as f64 / (cfg.grid_size - 1) as f64)
        .filter(|&x| in_half_support(x, k))
        .collect();
    let truth: Vec<f64> = grid.iter().map(|&x| f(x)).collect();

    let mut best_error = f64::INFINITY;
    for r in 0..cfg.search.restarts as u64 {
        let w0 = select_shift(spec, k, cfg.seed.wrapping_add(r))?;
        let anchors = match anchors(spec, w0, k) {
            Ok(a) => a,
            Err(Error::CoincidentAnchors(..)) => continue,
            Err(e) => return Err(e),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, r, 0));
        let prob = FitProblem { anchors: &anchors, targets: &plan.targets, tols: &plan.tols };
        let fit = match fit_encoding(&prob, &cfg.search, bits, &tail, &mut rng, &mut stats) {
            Ok(fit) => fit,
            Err(fail) => {
                best_error = best_error.min(fail.best_error() + plan.model_error);
                stats.restarts += 1;
                continue;
            }
        };
        let net = indexed_network(spec, &tail, w0, fit.u, fit.w, fit.v, fit.m0)?.scalar_pre(2.0 * k as f64, 0.0)?;
        let err = grid
            .iter()
            .zip(&truth)
            .map(|(&x, &y)| (net.eval_scalar(x) - y).abs())
            .fold(0.0, f64::max);
        if err < cfg.eps {
            stats.elapsed_secs = started.elapsed().as_secs_f64();
            let mut report = BuildReport::new(spec.kind(), &net);
            report.sup_error_estimate = err;
            report.grid_size = grid.len();
            report.k = k;
            report.search = stats;
            return Ok(Approximation {
                network: net,
                report,
                k,
                budget: Budget { model_error: plan.model_error, encoding_error: fit.max_error, gamma_gap: 0.0 },
                encodings: vec![triple(&fit, anchors, w0)],
            });
        }
        best_error = best_error.min(err);
        stats.restarts += 1;
    }
    stats.elapsed_secs = started.elapsed().as_secs_f64();
    Err(failure(
        spec,
        skeleton_half(spec),
        format!("no encoding of {k} samples found after {} restarts", cfg.search.restarts),
        best_error,
        k,
        cfg,
        stats,
    ))
}

/// Samples needed by one shifted copy: `(k, target)` pairs.
struct CopyPlan {
    ks: Vec<usize>,
    targets: Vec<f64>,
}

struct FullPlan {
    k: usize,
    copies: Vec<CopyPlan>,
    tol: f64,
    model_error: f64,
}

impl FullPlan {
    fn max_index(&self) -> usize {
        self.copies.iter().flat_map(|c| c.ks.iter().copied()).max().unwrap_or(1)
    }

    fn cost(&self) -> f64 {
        self.copies
            .iter()
            .map(|c| encoding_cost(&c.targets, &vec![self.tol; c.targets.len()]))
            .sum()
    }
}

fn t_shift(i: usize) -> f64 {
    i as f64 / 2.0
}

fn plan_full(f: &dyn Fn(f64) -> f64, scale: Rescale, k: usize, cfg: &ApproxConfig) -> Result<Option<FullPlan>> {
    let kf = k as f64;
    let n = (4 * cfg.grid_size / k).max(64);
    let mut copies = Vec::with_capacity(4);
    for i in 1..=4 {
        let s = t_shift(i);
        let mut ks = Vec::new();
        let mut targets = Vec::new();
        let mut kk = 1;
        while ((2 * kk - 2) as f64) < kf + s {
            let z_lo = (((2 * kk - 2) as f64 - s) / (2.0 * kf)).max(0.0);
            let z_hi = (((2 * kk - 1) as f64 - s) / (2.0 * kf)).min(0.5);
            if z_hi - z_lo > 1e-15 {
                let (mid, _) = range_stats(f, scale.forward(z_lo), scale.forward(z_hi), n);
                check_finite_target(mid, scale.forward(z_lo))?;
                ks.push(kk);
                targets.push(mid);
            }
            kk += 1;
        }
        copies.push(CopyPlan { ks, targets });
    }
    // error of the exactly blended piecewise-constant model
    let dense = 4 * cfg.grid_size;
    let mut model_error: f64 = 0.0;
    for j in 0..=dense {
        let z = 0.5 * j as f64 / dense as f64;
        let fz = f(scale.forward(z));
        let mut blend = 0.0;
        for (i, copy) in copies.iter().enumerate() {
            let t = 2.0 * kf * z + t_shift(i + 1);
            let beta = bump_psi(t);
            if beta > 0.0 {
                let idx = (t / 2.0).floor() as usize + 1;
                if let Ok(pos) = copy.ks.binary_search(&idx) {
                    blend += beta * copy.targets[pos];
                }
            }
        }
        model_error = model_error.max((blend - fz).abs());
    }
    let budget = cfg.eps * (1.0 - cfg.gamma_fraction - SAFETY);
    let tol = budget - model_error;
    Ok((tol > 0.05 * cfg.eps).then_some(FullPlan { k, copies, tol, model_error }))
}

fn assemble_full(
    spec: &ActivationSpec,
    phis: &[Network],
    bump: &Network,
    k: usize,
    scale: Rescale,
    delta: f64,
) -> Result<Network> {
    let par = blend_inputs(phis, bump, k, scale)?;
    Network::compose(&gamma_network(spec, delta, 4)?, &par)
}

/// `x -> (φ_1(t_1), ψ(t_1), ..., φ_4(t_4), ψ(t_4))` with `t_i = 2K ℒ⁻¹(x) + i/2`.
fn blend_inputs(phis: &[Network], bump: &Network, k: usize, scale: Rescale) -> Result<Network> {
    let (s, c) = scale.inverse_affine();
    let kk = 2.0 * k as f64;
    let mut parts = Vec::with_capacity(8);
    for (i, phi) in phis.iter().enumerate() {
        let shift = kk * c + t_shift(i + 1);
        parts.push(phi.scalar_pre(kk * s, shift)?);
        parts.push(bump.scalar_pre(kk * s, shift)?);
    }
    Network::parallel(&parts)
}

/// Theorem-3 style network, accurate on all of `[a, b]`.
pub fn build_full_1d(
    f: &dyn Fn(f64) -> f64,
    domain: (f64, f64),
    spec: &ActivationSpec,
    cfg: &ApproxConfig,
) -> Result<Approximation> {
    cfg.validate()?;
    let scale = Rescale::new(domain.0, domain.1)?;
    let started = Instant::now();
    let mut stats = SearchStats::default();
    let plan = choose(cfg.k, |k| plan_full(f, scale, k, cfg), FullPlan::cost)?;
    let Some(plan) = plan else {
        let k = match cfg.k {
            KChoice::Fixed(k) => k,
            KChoice::Auto => 0,
        };
        return Err(failure(
            spec,
            skeleton_full(spec),
            "target oscillates more than eps on every admissible interval width".into(),
            f64::INFINITY,
            k,
            cfg,
            stats,
        ));
    };
    let k = plan.k;
    let index_max = plan.max_index();
    let bits = phase_bits(spec, cfg);
    let domain_w = (2f64.powi(bits as i32) + 4.0).max(k as f64 + 8.0);
    let tail = match tail_for(spec, cfg, domain_w) {
        Ok(t) => t,
        Err(e) => {
            return Err(failure(spec, skeleton_full(spec), format!("witness: {e}"), f64::INFINITY, k, cfg, stats));
        }
    };
    let bump = bump_network(tail.witness())?;

    let grid: Vec<f64> = (0..cfg.grid_size)
        .map(|j| {
            if j + 1 == cfg.grid_size {
                domain.1
            } else {
                domain.0 + (domain.1 - domain.0) * j as f64 / (cfg.grid_size - 1) as f64
            }
        })
        .collect();
    let truth: Vec<f64> = grid.iter().map(|&x| f(x)).collect();

    let mut best_error = f64::INFINITY;
    'restart: for r in 0..cfg.search.restarts as u64 {
        let w0 = select_shift(spec, k.max(index_max), cfg.seed.wrapping_add(r))?;
        let all_anchors = match anchors(spec, w0, index_max) {
            Ok(a) => a,
            Err(Error::CoincidentAnchors(..)) => continue,
            Err(e) => return Err(e),
        };
        let mut phis = Vec::with_capacity(4);
        let mut encodings = Vec::with_capacity(4);
        let mut encoding_error: f64 = 0.0;
        let mut bound: f64 = 0.0;
        for (i, copy) in plan.copies.iter().enumerate() {
            let local: Vec<f64> = copy.ks.iter().map(|&kk| all_anchors[kk - 1]).collect();
            let tols = vec![plan.tol; local.len()];
            let prob = FitProblem { anchors: &local, targets: &copy.targets, tols: &tols };
            let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, r, i as u64 + 1));
            match fit_encoding(&prob, &cfg.search, bits, &tail, &mut rng, &mut stats) {
                Ok(fit) => {
                    encoding_error = encoding_error.max(fit.max_error);
                    bound = bound.max(fit.u.abs() * 1.01 + fit.v.abs() + 1e-3);
                    phis.push(indexed_network(spec, &tail, w0, fit.u, fit.w, fit.v, fit.m0)?);
                    encodings.push(triple(&fit, local, w0));
                }
                Err(fail) => {
                    best_error = best_error.min(fail.best_error() + plan.model_error);
                    stats.restarts += 1;
                    continue 'restart;
                }
            }
        }

        let par = blend_inputs(&phis, &bump, k, scale)?;
        let outs: Vec<Vec<f64>> = grid.iter().map(|&x| par.forward(&[x]).expect("scalar input")).collect();
        let reach = bound + 1.0;
        let mut delta = cfg.delta.init.min(0.95 * spec.product_margin() / reach);
        let mut gap = f64::INFINITY;
        for _ in 0..cfg.delta.max_steps {
            gap = 0.0;
            for o in &outs {
                let mut exact = 0.0;
                let mut approx = 0.0;
                for p in 0..4 {
                    exact += o[2 * p] * o[2 * p + 1];
                    approx += gamma_delta(spec, o[2 * p], o[2 * p + 1], delta)?;
                }
                gap = gap.max((approx - exact).abs());
            }
            if gap < 0.9 * cfg.gamma_fraction * cfg.eps {
                break;
            }
            delta *= cfg.delta.shrink;
        }
        if !(gap < 0.9 * cfg.gamma_fraction * cfg.eps) {
            best_error = best_error.min(plan.model_error + encoding_error + gap);
            stats.restarts += 1;
            continue;
        }
        let net = Network::compose(&gamma_network(spec, delta, 4)?, &par)?;
        let err = grid
            .iter()
            .zip(&truth)
            .map(|(&x, &y)| (net.eval_scalar(x) - y).abs())
            .fold(0.0, f64::max);
        if err < cfg.eps {
            stats.elapsed_secs = started.elapsed().as_secs_f64();
            let mut report = BuildReport::new(spec.kind(), &net);
            report.sup_error_estimate = err;
            report.grid_size = grid.len();
            report.k = k;
            report.delta = delta;
            report.search = stats;
            return Ok(Approximation {
                network: net,
                report,
                k,
                encodings,
                budget: Budget { model_error: plan.model_error, encoding_error, gamma_gap: gap },
            });
        }
        best_error = best_error.min(err);
        stats.restarts += 1;
    }
    stats.elapsed_secs = started.elapsed().as_secs_f64();
    Err(failure(
        spec,
        skeleton_full(spec),
        format!("no blended network within eps after {} restarts", cfg.search.restarts),
        best_error,
        k,
        cfg,
        stats,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::ActivationKind;

    fn euaf() -> ActivationSpec {
        ActivationSpec::for_kind(ActivationKind::Euaf)
    }

    #[test]
    fn zero_target_gives_zero_network() {
        let a = build_half(&|_| 0.0, &euaf(), &ApproxConfig::new(0.1)).unwrap();
        assert_eq!(a.encodings[0].u, 0.0);
        assert_eq!(a.encodings[0].v, 0.0);
        assert_eq!(a.report.sup_error_estimate, 0.0);
    }

    #[test]
    fn constant_full_build() {
        let a = build_full_1d(&|_| 0.7, (0.0, 1.0), &euaf(), &ApproxConfig::new(0.1)).unwrap();
        assert!(a.report.sup_error_estimate < 0.1);
        assert!(a.encodings.iter().all(|e| e.u == 0.0));
    }

    #[test]
    fn skeletons_match_built_architectures() {
        let a = build_half(&|x| x, &euaf(), &ApproxConfig::new(0.1).with_k(8)).unwrap();
        assert_eq!(a.network.architecture(), skeleton_half(&euaf()).unwrap().architecture());
        assert!(a.report.sup_error_estimate < 0.1);
    }
}
