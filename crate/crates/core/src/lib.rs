//! Super-expressive activations and the fixed-size networks they make possible.
//!
//! * [`activations`]: EUAF, PEUAF and the three closure examples, with derivatives
//!   and triangle-wave witness networks.
//! * [`network`]: layered networks with per-neuron activation tags.
//! * [`encoder`]: constructive half- and full-interval approximators.
//! * [`kst`]: superposition-based multivariate builder.
//! * [`nntrain`]: a small 1D convolutional trainer with trainable PEUAF frequencies.

pub mod activations;
pub mod encoder;
pub mod error;
pub mod hexfloat;
pub mod kst;
pub mod network;
pub mod nntrain;
pub mod targets;

pub use activations::{Activation, ActivationKind, ActivationSpec, Exactness, WitnessNetwork};
pub use error::{Error, Result};
pub use network::{BuildReport, FloatEncoding, Network};
