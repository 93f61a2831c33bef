//! Small 1D convolutional classifiers with trainable-frequency activations,
//! NAdam training, synthetic signal data and occlusion analysis.

pub mod data;
pub mod model;
pub mod occlusion;
pub mod optim;
pub mod train;

pub use data::{ingest_csv, synth_bursts, synth_signals, BurstSet, CsvSchema, Dataset, SignalClass, Waveform};
pub use model::{cross_entropy, softmax, Act, LayerSpec, Mixing, Model, ModelConfig, Tensor};
pub use occlusion::{most_sensitive, occlusion_map, window_starts};
pub use optim::{Nadam, NadamConfig, Plateau};
pub use train::{evaluate, train, train_model, DataSource, History, ModelChoice, TrainConfig, TrainOutcome};
