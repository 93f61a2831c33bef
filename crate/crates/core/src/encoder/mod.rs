//! Constructive fixed-size approximators.
//!
//! A half-interval network reads the interval index `k` of `x` through the
//! staircase, turns it into an anchor `a_k = ρ(mid + k w0)` and decodes the sample
//! stored for `k` with one triangle-wave neuron `u g(w a_k + 2 m0) + v`. The
//! full-interval network blends four shifted copies with the bump partition of unity.

mod blocks;
mod build;
pub mod fit;
pub mod gamma;
mod lattice;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::activations::{ActivationKind, ActivationSpec};
use crate::error::{Error, Result};

pub use blocks::{bump_network, indexed_network, skeleton_witness, stair_index_network};
pub use build::{build_full_1d, build_half, in_half_support, skeleton_full, skeleton_half, Approximation};
pub use fit::{chebyshev_line, fit_samples, EncodingFit, SearchConfig, TailModel};
pub use gamma::{gamma_delta, gamma_network};

/// Number of intervals `K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KChoice {
    Auto,
    Fixed(usize),
}

/// Geometric schedule for the product-gadget step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaSchedule {
    pub init: f64,
    pub shrink: f64,
    pub max_steps: usize,
}

impl Default for DeltaSchedule {
    fn default() -> Self {
        DeltaSchedule { init: 0.1, shrink: 0.5, max_steps: 40 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproxConfig {
    pub eps: f64,
    pub k: KChoice,
    pub search: SearchConfig,
    /// Points of the uniform grid used to estimate the sup error.
    pub grid_size: usize,
    pub delta: DeltaSchedule,
    /// Share of `eps` reserved for replacing exact products by the gadget.
    pub gamma_fraction: f64,
    pub seed: u64,
}

impl ApproxConfig {
    pub fn new(eps: f64) -> Self {
        ApproxConfig {
            eps,
            k: KChoice::Auto,
            search: SearchConfig::default(),
            grid_size: 10_000,
            delta: DeltaSchedule::default(),
            gamma_fraction: 0.05,
            seed: 0,
        }
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = KChoice::Fixed(k);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(Error::config(format!("eps must be > 0, got {}", self.eps)));
        }
        if let KChoice::Fixed(k) = self.k {
            if k == 0 {
                return Err(Error::config("K must be positive"));
            }
        }
        if self.grid_size < 2 {
            return Err(Error::config("grid_size must be at least 2"));
        }
        let d = &self.delta;
        if !(d.init > 0.0 && d.shrink > 0.0 && d.shrink < 1.0 && d.max_steps > 0) {
            return Err(Error::config(format!("invalid delta schedule {d:?}")));
        }
        if !(self.gamma_fraction > 0.0 && self.gamma_fraction < 0.5) {
            return Err(Error::config(format!(
                "gamma_fraction must lie in (0, 0.5), got {}",
                self.gamma_fraction
            )));
        }
        self.search.validate()
    }
}

/// Parameters that store K samples in one neuron.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingTriple {
    pub u: f64,
    pub w: f64,
    pub v: f64,
    pub m0: u64,
    pub anchors: Vec<f64>,
    /// Shift used to generate the anchors, when they came from [`anchors`].
    pub w0: Option<f64>,
    /// Largest `|u g(w a_k + 2 m0) + v − y_k|`, evaluated through the network.
    pub max_error: f64,
}

/// Shift `w0` for the anchors, `0 < |w0| < (β − α) / (2K)`, deterministic per seed.
pub fn select_shift(spec: &ActivationSpec, k: usize, seed: u64) -> Result<f64> {
    if k == 0 {
        return Err(Error::config("K must be positive"));
    }
    let (alpha, beta) = spec.window;
    if !(alpha < beta && (beta - alpha).is_finite()) {
        return Err(Error::config(format!("degenerate window {:?}", spec.window)));
    }
    let half = (beta - alpha) / (2.0 * k as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let xi: f64 = rng.gen_range(-1.0..1.0);
        // keep anchors apart; 3/pi leaves the bound strict
        if xi.abs() < 0.25 {
            continue;
        }
        let w0 = half * xi * (3.0 / std::f64::consts::PI);
        let cap = half * (1.0 - 1e-9);
        return Ok(w0.clamp(-cap, cap));
    }
}

/// Anchors `a_k = ρ(mid + k w0)`, `k = 1..=K`, computed exactly as the network does.
pub fn anchors(spec: &ActivationSpec, w0: f64, k: usize) -> Result<Vec<f64>> {
    let mid = spec.midpoint();
    let (alpha, beta) = spec.window;
    let mut out = Vec::with_capacity(k);
    for i in 1..=k {
        let x = (i as f64 * w0) + mid;
        if !(alpha < x && x < beta) {
            return Err(Error::WindowViolation { arg: x, lo: alpha, hi: beta });
        }
        out.push(spec.activation.apply(x));
    }
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&i, &j| out[i].total_cmp(&out[j]));
    for pair in order.windows(2) {
        let (i, j) = (pair[0], pair[1]);
        if (out[j] - out[i]).abs() <= 1e-12 * out[i].abs().max(1.0) {
            return Err(Error::CoincidentAnchors(i.min(j) + 1, i.max(j) + 1));
        }
    }
    Ok(out)
}

/// Default cap on `log2 |w a_k|`: phases must stay where the witness reproduces
/// the triangle wave and where `f64` still resolves a fraction of a period.
pub fn default_phase_bits(kind: ActivationKind) -> u32 {
    match kind {
        ActivationKind::Euaf | ActivationKind::Peuaf => 43,
        ActivationKind::Rho3 => 30,
        ActivationKind::Rho1 | ActivationKind::Rho2 => 5,
    }
}

/// Affine change of variables `ℒ(x) = 2(b − a) x + a`, mapping `[0, ½]` onto `[a, b]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rescale {
    pub a: f64,
    pub b: f64,
}

impl Rescale {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(Error::config(format!("degenerate interval [{a}, {b}]")));
        }
        Ok(Rescale { a, b })
    }

    pub fn forward(&self, x: f64) -> f64 {
        2.0 * (self.b - self.a) * x + self.a
    }

    pub fn inverse(&self, y: f64) -> f64 {
        (y - self.a) / (2.0 * (self.b - self.a))
    }

    /// Coefficients `(scale, shift)` of the inverse map.
    pub fn inverse_affine(&self) -> (f64, f64) {
        let s = 1.0 / (2.0 * (self.b - self.a));
        (s, -self.a * s)
    }
}

/// Per-coordinate rescaling of a box `[a, b]^d`.
pub fn rescale_box(a: f64, b: f64, d: usize) -> Result<Vec<Rescale>> {
    if d == 0 {
        return Err(Error::config("dimension must be positive"));
    }
    Ok(vec![Rescale::new(a, b)?; d])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn euaf() -> ActivationSpec {
        ActivationSpec::for_kind(ActivationKind::Euaf)
    }

    #[test]
    fn shift_is_bounded_and_deterministic() {
        let w0 = select_shift(&euaf(), 4, 7).unwrap();
        assert!(w0 != 0.0 && w0.abs() < 0.125);
        assert_eq!(w0, select_shift(&euaf(), 4, 7).unwrap());
        assert!(select_shift(&euaf(), 1, 3).unwrap().abs() < 0.5);
        assert!(select_shift(&euaf(), 0, 3).is_err());
    }

    #[test]
    fn anchors_are_monotone_for_euaf() {
        let a = anchors(&euaf(), 0.05, 3).unwrap();
        assert!(a[0] < a[1] && a[1] < a[2]);
        assert_eq!(a, anchors(&euaf(), 0.05, 3).unwrap());
        let single = anchors(&euaf(), 0.05, 1).unwrap();
        assert_eq!(single[0], euaf().eval(-1.5 + 0.05).unwrap());
    }

    #[test]
    fn anchors_reject_window_exit() {
        assert!(matches!(anchors(&euaf(), 0.3, 4), Err(Error::WindowViolation { .. })));
    }

    #[test]
    fn rescale_examples() {
        let r = Rescale::new(0.0, 1.0).unwrap();
        assert_eq!(r.forward(0.25), 0.5);
        let r = Rescale::new(-3.0, 5.0).unwrap();
        assert_eq!(r.forward(0.0), -3.0);
        assert_eq!(r.forward(0.5), 5.0);
        assert!(Rescale::new(1.0, 1.0).is_err());
    }
}
