//! Second-difference product gadget
//! `Γ_δ(x, y) = [ρ(x0 + δx + δy) − ρ(x0 + δy) − ρ(x0 + δx) + ρ(x0)] / (δ² ρ″(x0))`.

use crate::activations::ActivationSpec;
use crate::error::{Error, Result};
use crate::network::{Layer, Network, Tag};

fn check(spec: &ActivationSpec, delta: f64, reach: f64) -> Result<()> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::config(format!("gadget step must be > 0, got {delta}")));
    }
    if spec.curvature.abs() <= 1e-6 {
        return Err(Error::DegenerateCurvature { value: spec.curvature });
    }
    let margin = spec.product_margin();
    if delta * reach >= margin {
        let x0 = spec.product_point;
        return Err(Error::WindowViolation {
            arg: x0 + delta * reach,
            lo: x0 - margin,
            hi: x0 + margin,
        });
    }
    Ok(())
}

pub fn gamma_delta(spec: &ActivationSpec, x: f64, y: f64, delta: f64) -> Result<f64> {
    if !(x.is_finite() && y.is_finite()) {
        return Err(Error::Domain(format!("non-finite gadget input ({x}, {y})")));
    }
    check(spec, delta, x.abs() + y.abs())?;
    let r = |t: f64| spec.activation.apply(t);
    let x0 = spec.product_point;
    let num = (r(x0 + (delta * x + delta * y)) + r(x0)) - (r(x0 + delta * y) + r(x0 + delta * x));
    Ok(num / (delta * delta * spec.curvature))
}

/// Largest step for which inputs bounded by `bound` in absolute value keep every
/// gadget argument inside the smooth region.
pub fn max_delta(spec: &ActivationSpec, bound: f64) -> f64 {
    spec.product_margin() / (2.0 * bound.max(f64::MIN_POSITIVE))
}

/// Network computing `Σ_p Γ_δ(x_p, y_p)` from inputs `(x_1, y_1, ..., x_P, y_P)`,
/// with three activation neurons per pair.
pub fn gamma_network(spec: &ActivationSpec, delta: f64, pairs: usize) -> Result<Network> {
    if pairs == 0 {
        return Err(Error::config("gadget needs at least one pair"));
    }
    check(spec, delta, 0.0)?;
    let x0 = spec.product_point;
    let act = Tag::Act(spec.activation);
    let inputs = 2 * pairs;
    let mut weights = Vec::with_capacity(3 * pairs);
    for p in 0..pairs {
        for (wx, wy) in [(delta, delta), (0.0, delta), (delta, 0.0)] {
            let mut row = vec![0.0; inputs];
            row[2 * p] = wx;
            row[2 * p + 1] = wy;
            weights.push(row);
        }
    }
    let hidden = Layer::new(weights, vec![x0; 3 * pairs], vec![act; 3 * pairs])?;
    let c = 1.0 / (delta * delta * spec.curvature);
    let out_row: Vec<f64> = (0..pairs).flat_map(|_| [c, -c, -c]).collect();
    let r0 = spec.activation.apply(x0);
    let output = Layer::affine(vec![out_row], vec![pairs as f64 * c * r0])?;
    Network::new(inputs, vec![hidden, output])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::activations::ActivationKind;

    #[test]
    fn zero_factor_cancels_exactly() {
        let spec = ActivationSpec::for_kind(ActivationKind::Euaf);
        for y in [-0.7, 0.0, 0.3, 1.0] {
            assert_eq!(gamma_delta(&spec, 0.0, y, 1e-3).unwrap(), 0.0);
        }
        let net = gamma_network(&spec, 1e-3, 1).unwrap();
        assert_eq!(net.forward(&[0.0, 0.4]).unwrap()[0], 0.0);
    }

    #[test]
    fn symmetric_and_close_to_product() {
        let spec = ActivationSpec::for_kind(ActivationKind::Euaf);
        let a = gamma_delta(&spec, 0.3, -0.8, 1e-2).unwrap();
        let b = gamma_delta(&spec, -0.8, 0.3, 1e-2).unwrap();
        assert_eq!(a, b);
        assert!((gamma_delta(&spec, 1.0, 1.0, 1e-3).unwrap() - 1.0).abs() < 1e-2);
    }

    #[test]
    fn network_matches_pointwise_formula() {
        let spec = ActivationSpec::for_kind(ActivationKind::Rho3);
        let net = gamma_network(&spec, 1e-2, 2).unwrap();
        let out = net.forward(&[0.5, -0.25, 1.0, 2.0]).unwrap()[0];
        let want = gamma_delta(&spec, 0.5, -0.25, 1e-2).unwrap() + gamma_delta(&spec, 1.0, 2.0, 1e-2).unwrap();
        assert!((out - want).abs() < 1e-9, "{out} vs {want}");
        assert_eq!(net.width(), 6);
    }

    #[test]
    fn window_is_enforced() {
        let spec = ActivationSpec::for_kind(ActivationKind::Euaf);
        assert!(matches!(gamma_delta(&spec, 10.0, 10.0, 0.1), Err(Error::WindowViolation { .. })));
        assert!(gamma_delta(&spec, 1.0, 1.0, 0.0).is_err());
    }
}
