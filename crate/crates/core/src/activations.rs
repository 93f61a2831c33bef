//! The super-expressive activations, their derivatives, and witness networks
//! reproducing the triangle wave `g(x) = |x - 2 floor((x + 1) / 2)|` on `[0, A]`.
//!
//! Kinks use the right-hand slope everywhere: the triangle wave has slope `+1`
//! on `[2k, 2k + 1)` and `-1` on `[2k + 1, 2k + 2)`.

use std::f64::consts::{FRAC_2_PI, FRAC_PI_2};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::encoder::gamma::gamma_network;
use crate::error::{Error, Result};
use crate::network::{Layer, Network, Tag};

/// Triangle wave with period 2, `g(0) = 0` and peaks `g(2k + 1) = 1`.
#[inline]
pub fn triangle_g(x: f64) -> f64 {
    (x - 2.0 * ((x + 1.0) / 2.0).floor()).abs()
}

/// Right-hand slope of [`triangle_g`], `+1` on ascending and `-1` on descending segments.
#[inline]
pub fn triangle_slope(x: f64) -> f64 {
    let r = x - 2.0 * ((x + 1.0) / 2.0).floor();
    if r >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Staircase `x - g(x)`: flat at `2k` on `[2k, 2k + 1]`, ramps on `[2k + 1, 2k + 2]`.
#[inline]
pub fn sawtooth_psi_stair(x: f64) -> f64 {
    x - triangle_g(x)
}

/// Unit triangular bumps `g(x + 1 - g(x + 1))` on `[2k, 2k + 1]`, zero on `[2k + 1, 2k + 2]`.
#[inline]
pub fn bump_psi(x: f64) -> f64 {
    let y = x + 1.0;
    triangle_g(y - triangle_g(y))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationKind {
    Euaf,
    Peuaf,
    Rho1,
    Rho2,
    Rho3,
}

impl ActivationKind {
    pub const ALL: [ActivationKind; 5] = [
        ActivationKind::Euaf,
        ActivationKind::Peuaf,
        ActivationKind::Rho1,
        ActivationKind::Rho2,
        ActivationKind::Rho3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ActivationKind::Euaf => "euaf",
            ActivationKind::Peuaf => "peuaf",
            ActivationKind::Rho1 => "rho1",
            ActivationKind::Rho2 => "rho2",
            ActivationKind::Rho3 => "rho3",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An element-wise activation function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Activation {
    Euaf,
    /// EUAF with positive-side frequency `w`.
    Peuaf { w: f64 },
    Rho1,
    Rho2,
    Rho3,
}

impl Activation {
    pub fn kind(self) -> ActivationKind {
        match self {
            Activation::Euaf => ActivationKind::Euaf,
            Activation::Peuaf { .. } => ActivationKind::Peuaf,
            Activation::Rho1 => ActivationKind::Rho1,
            Activation::Rho2 => ActivationKind::Rho2,
            Activation::Rho3 => ActivationKind::Rho3,
        }
    }

    /// Evaluates without checking finiteness; used on the network hot path.
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Euaf => {
                if x >= 0.0 {
                    triangle_g(x)
                } else {
                    x / (1.0 - x)
                }
            }
            Activation::Peuaf { w } => {
                if x >= 0.0 {
                    triangle_g(w * x)
                } else {
                    x / (1.0 - x)
                }
            }
            Activation::Rho1 => {
                if x <= 0.0 {
                    x / (1.0 - x)
                } else {
                    x / (1.0 + x) + triangle_g(x) / (x * x + 10.0)
                }
            }
            Activation::Rho2 => {
                if x <= 0.0 {
                    0.0
                } else {
                    x + triangle_g(x) / (x + 1.0)
                }
            }
            Activation::Rho3 => {
                if x.abs() <= 1.0 {
                    FRAC_2_PI * x.asin()
                } else {
                    (FRAC_PI_2 * x).sin()
                }
            }
        }
    }

    pub fn eval(self, x: f64) -> Result<f64> {
        check_finite(x)?;
        Ok(self.apply(x))
    }

    /// Derivative in `x`, right-hand slope at kinks and branch points.
    ///
    /// For `Rho3` the arcsine branch is used on `[-1, 1)`, so `x = -1` yields `+inf`.
    pub fn deriv_x(self, x: f64) -> Result<f64> {
        check_finite(x)?;
        Ok(match self {
            Activation::Euaf => {
                if x >= 0.0 {
                    triangle_slope(x)
                } else {
                    1.0 / ((1.0 - x) * (1.0 - x))
                }
            }
            Activation::Peuaf { w } => {
                if x >= 0.0 {
                    w * triangle_slope(w * x)
                } else {
                    1.0 / ((1.0 - x) * (1.0 - x))
                }
            }
            Activation::Rho1 => {
                if x >= 0.0 {
                    let q = x * x + 10.0;
                    1.0 / ((1.0 + x) * (1.0 + x))
                        + (triangle_slope(x) * q - triangle_g(x) * 2.0 * x) / (q * q)
                } else {
                    1.0 / ((1.0 - x) * (1.0 - x))
                }
            }
            Activation::Rho2 => {
                if x >= 0.0 {
                    let q = x + 1.0;
                    1.0 + (triangle_slope(x) * q - triangle_g(x)) / (q * q)
                } else {
                    0.0
                }
            }
            Activation::Rho3 => {
                if (-1.0..1.0).contains(&x) {
                    FRAC_2_PI / (1.0 - x * x).sqrt()
                } else {
                    FRAC_PI_2 * (FRAC_PI_2 * x).cos()
                }
            }
        })
    }

    /// Derivative of PEUAF in its frequency: `x * slope(w x)` for `x >= 0`, zero otherwise.
    /// Every other activation has no frequency and returns 0.
    pub fn deriv_w(self, x: f64) -> Result<f64> {
        check_finite(x)?;
        Ok(match self {
            Activation::Peuaf { w } if x >= 0.0 => x * triangle_slope(w * x),
            _ => 0.0,
        })
    }
}

fn check_finite(x: f64) -> Result<()> {
    if x.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("non-finite input {x}")))
    }
}

/// An activation together with the analytic data the constructions need.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivationSpec {
    pub activation: Activation,
    /// Open interval `(alpha, beta)` on which the activation is real analytic and
    /// non-polynomial; anchors are drawn from it.
    pub window: (f64, f64),
    /// Point `x0` used by the product gadget.
    pub product_point: f64,
    /// Largest open interval around `product_point` on which the activation is smooth.
    pub smooth_region: (f64, f64),
    /// Second derivative at `product_point`.
    pub curvature: f64,
}

impl ActivationSpec {
    /// Default windows and product points for each activation.
    pub fn new(activation: Activation) -> Result<Self> {
        let (window, product_point, smooth_region) = match activation {
            // negative rational branch x / (1 - x)
            Activation::Euaf | Activation::Peuaf { .. } | Activation::Rho1 => {
                ((-2.0, -1.0), -1.0, (f64::NEG_INFINITY, 0.0))
            }
            // on (0, 1) rho2 is x + x / (x + 1)
            Activation::Rho2 => ((0.0, 1.0), 0.5, (0.0, 1.0)),
            // arcsine branch, away from 0 where it is nearly linear
            Activation::Rho3 => ((0.25, 0.75), 0.5, (-1.0, 1.0)),
        };
        if let Activation::Peuaf { w } = activation {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::config(format!("PEUAF frequency must be > 0, got {w}")));
            }
        }
        Self::with_geometry(activation, window, product_point, smooth_region)
    }

    pub fn with_geometry(
        activation: Activation,
        window: (f64, f64),
        product_point: f64,
        smooth_region: (f64, f64),
    ) -> Result<Self> {
        if !(window.0 < window.1) {
            return Err(Error::config(format!("degenerate window {window:?}")));
        }
        if !(smooth_region.0 < product_point && product_point < smooth_region.1) {
            return Err(Error::config(format!(
                "product point {product_point} outside smooth region {smooth_region:?}"
            )));
        }
        let curvature = second_derivative(activation, product_point, smooth_region);
        if !(curvature.abs() > 1e-6) {
            return Err(Error::DegenerateCurvature { value: curvature });
        }
        Ok(ActivationSpec {
            activation,
            window,
            product_point,
            smooth_region,
            curvature,
        })
    }

    pub fn kind(&self) -> ActivationKind {
        self.activation.kind()
    }

    pub fn for_kind(kind: ActivationKind) -> Self {
        let activation = match kind {
            ActivationKind::Euaf => Activation::Euaf,
            ActivationKind::Peuaf => Activation::Peuaf { w: 1.0 },
            ActivationKind::Rho1 => Activation::Rho1,
            ActivationKind::Rho2 => Activation::Rho2,
            ActivationKind::Rho3 => Activation::Rho3,
        };
        Self::new(activation).expect("default geometry is valid")
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        self.activation.eval(x)
    }

    pub fn deriv_x(&self, x: f64) -> Result<f64> {
        self.activation.deriv_x(x)
    }

    pub fn deriv_w(&self, x: f64) -> Result<f64> {
        self.activation.deriv_w(x)
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.window.0 + self.window.1)
    }

    /// Distance from the product point to the edge of the smooth region.
    pub fn product_margin(&self) -> f64 {
        (self.product_point - self.smooth_region.0).min(self.smooth_region.1 - self.product_point)
    }

    /// Builds a network reproducing the triangle wave on `[0, domain]`.
    ///
    /// EUAF, PEUAF and rho3 are exact; rho1 and rho2 recover `g` algebraically and
    /// realize the remaining products with the second-difference gadget, shrinking
    /// its step until the grid error is at most `eps`.
    pub fn witness(&self, eps: f64, domain: f64) -> Result<WitnessNetwork> {
        if !(domain.is_finite() && domain > 0.0) {
            return Err(Error::config(format!("witness domain must be > 0, got {domain}")));
        }
        match self.activation {
            Activation::Euaf | Activation::Peuaf { .. } | Activation::Rho3 => Ok(WitnessNetwork {
                network: self.exact_witness_network(),
                exactness: Exactness::Exact,
                domain,
            }),
            Activation::Rho1 | Activation::Rho2 => {
                if !(eps.is_finite() && eps > 0.0) {
                    return Err(Error::config(format!("witness tolerance must be > 0, got {eps}")));
                }
                self.approximate_witness(eps, domain)
            }
        }
    }

    fn exact_witness_network(&self) -> Network {
        let act = Tag::Act(self.activation);
        match self.activation {
            Activation::Euaf => Network::scalar_chain(&[(1.0, 0.0, act)], (1.0, 0.0)),
            Activation::Peuaf { w } => Network::scalar_chain(&[(1.0 / w, 0.0, act)], (1.0, 0.0)),
            // sin(pi (2x + 5) / 2) = cos(pi x), then (2/pi) asin(cos(pi x)) = 1 - 2 g(x)
            Activation::Rho3 => {
                Network::scalar_chain(&[(2.0, 5.0, act), (1.0, 0.0, act)], (-0.5, 0.5))
            }
            Activation::Rho1 | Activation::Rho2 => unreachable!("approximate kinds"),
        }
    }

    /// Witness network for rho1/rho2 at a fixed gadget step `delta`.
    pub fn approximate_witness_network(&self, delta: f64, domain: f64) -> Result<Network> {
        let act = Tag::Act(self.activation);
        let x0 = self.product_point;
        let margin = self.product_margin();
        match self.activation {
            Activation::Rho2 => {
                // g(x) = (rho2(x) - x) * (x + 1) for x >= 0
                let first = Layer::new(vec![vec![1.0], vec![1.0]], vec![0.0, 0.0], vec![act, Tag::Identity])?;
                let factors = Layer::new(
                    vec![vec![1.0, -1.0], vec![0.0, 1.0]],
                    vec![0.0, 1.0],
                    vec![Tag::Identity, Tag::Identity],
                )?;
                let extract = Network::new(1, vec![first, factors])?;
                let bound = 1.0 + domain + 1.0;
                check_step(delta * bound, margin, x0)?;
                let product = gamma_network(self, delta, 1)?;
                Network::compose(&product, &extract)
            }
            Activation::Rho1 => {
                // g(x) = (rho1(x) + rho1(-x)) * (x^2 + 10) for x >= 0, x^2 from the gadget
                let sq_delta = delta / (domain + 1.0);
                check_step(2.0 * sq_delta * domain, margin, x0)?;
                let c = 1.0 / (sq_delta * sq_delta * self.curvature);
                let r0 = self.activation.apply(x0);
                let first = Layer::new(
                    vec![vec![1.0], vec![-1.0], vec![2.0 * sq_delta], vec![sq_delta]],
                    vec![0.0, 0.0, x0, x0],
                    vec![act; 4],
                )?;
                let factors = Layer::new(
                    vec![vec![1.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, c, -2.0 * c]],
                    vec![0.0, c * r0 + 10.0],
                    vec![Tag::Identity, Tag::Identity],
                )?;
                let extract = Network::new(1, vec![first, factors])?;
                let outer_delta = delta / (domain * domain + 11.0);
                check_step(outer_delta * (domain * domain + 12.0), margin, x0)?;
                let product = gamma_network(self, outer_delta, 1)?;
                Network::compose(&product, &extract)
            }
            _ => Err(Error::config("approximate witness only exists for rho1 and rho2")),
        }
    }

    fn approximate_witness(&self, eps: f64, domain: f64) -> Result<WitnessNetwork> {
        let grid = witness_grid(domain);
        let mut delta = 0.25 * self.product_margin().min(1.0);
        let mut best = f64::INFINITY;
        for _ in 0..60 {
            if let Ok(net) = self.approximate_witness_network(delta, domain) {
                let err = grid_error(&net, &grid);
                if err <= eps {
                    return Ok(WitnessNetwork {
                        network: net,
                        exactness: Exactness::EpsApprox(err),
                        domain,
                    });
                }
                if err < best {
                    best = err;
                }
            }
            delta *= 0.5;
        }
        Err(Error::WitnessNotAchieved {
            best_error: best,
            requested: eps,
        })
    }
}

fn check_step(reach: f64, margin: f64, x0: f64) -> Result<()> {
    if reach < margin {
        Ok(())
    } else {
        Err(Error::WindowViolation {
            arg: x0 + reach,
            lo: x0 - margin,
            hi: x0 + margin,
        })
    }
}

/// Fourth-order central difference, step chosen inside the smooth region.
fn second_derivative(act: Activation, x0: f64, region: (f64, f64)) -> f64 {
    let room = (x0 - region.0).min(region.1 - x0);
    let h = (1e-3f64).min(room / 4.0);
    let f = |x: f64| act.apply(x);
    (-f(x0 + 2.0 * h) + 16.0 * f(x0 + h) - 30.0 * f(x0) + 16.0 * f(x0 - h) - f(x0 - 2.0 * h))
        / (12.0 * h * h)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Exactness {
    Exact,
    /// Verified grid error of the approximation.
    EpsApprox(f64),
}

#[derive(Debug, Clone)]
pub struct WitnessNetwork {
    pub network: Network,
    pub exactness: Exactness,
    /// Upper end `A` of the validity domain `[0, A]`.
    pub domain: f64,
}

impl WitnessNetwork {
    pub fn eval(&self, x: f64) -> f64 {
        self.network.eval_scalar(x)
    }

    /// Sup of `|witness - g|` over a 10^4-point grid of `[0, A]`.
    pub fn grid_error(&self) -> f64 {
        grid_error(&self.network, &witness_grid(self.domain))
    }
}

fn witness_grid(domain: f64) -> Vec<f64> {
    let n = 10_000;
    (0..n).map(|i| domain * i as f64 / (n - 1) as f64).collect()
}

fn grid_error(net: &Network, grid: &[f64]) -> f64 {
    grid.iter()
        .map(|&x| (net.eval_scalar(x) - triangle_g(x)).abs())
        .fold(0.0, f64::max)
}
