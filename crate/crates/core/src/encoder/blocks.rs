//! Network gadgets shared by the builders.

use crate::activations::{Activation, ActivationSpec};
use crate::error::Result;
use crate::network::{Layer, Network, Tag};

use super::fit::TailModel;

/// Witness with the architecture of the real one but without a tolerance search;
/// used to report architectures.
pub fn skeleton_witness(spec: &ActivationSpec) -> Result<Network> {
    match spec.activation {
        Activation::Rho1 | Activation::Rho2 => spec.approximate_witness_network(1e-3, 1.0),
        _ => Ok(spec.witness(1.0, 1.0)?.network),
    }
}

/// `t -> ψ_stair(t) / 2 + 1`, the interval index, held on its own identity neuron
/// so the next layer sees the exact integer.
pub fn stair_index_network(witness: &Network) -> Result<Network> {
    let carry = Network::parallel(&[witness.clone(), Network::identity(1)])?;
    let index = Network::new(
        2,
        vec![
            Layer::new(vec![vec![-0.5, 0.5]], vec![1.0], vec![Tag::Identity])?,
            Layer::identity(1),
        ],
    )?;
    Network::compose(&index, &carry)
}

/// `t -> ψ_bump(t) = g(t + 1 − g(t + 1))`.
pub fn bump_network(witness: &Network) -> Result<Network> {
    let carry = Network::parallel(&[witness.clone(), Network::identity(1)])?.scalar_pre(1.0, 1.0)?;
    let fold = Network::affine(vec![vec![-1.0, 1.0]], vec![0.0])?;
    let arg = Network::compose(&fold, &carry)?;
    Network::compose(witness, &arg)
}

/// `t -> u W(w ρ(mid + k(t) w0) + 2 m0) + v` with `k(t)` the stair index.
pub fn indexed_network(
    spec: &ActivationSpec,
    tail: &TailModel,
    w0: f64,
    u: f64,
    w: f64,
    v: f64,
    m0: u64,
) -> Result<Network> {
    let stair = stair_index_network(tail.witness())?;
    let anchor = Network::new(
        1,
        vec![
            Layer::new(vec![vec![w0]], vec![spec.midpoint()], vec![Tag::Act(spec.activation)])?,
            Layer::identity(1),
        ],
    )?;
    let chain = Network::compose(&anchor, &stair)?;
    Network::compose(&tail.network(u, w, v, m0), &chain)
}
