//! Training loop, run configuration and per-epoch history.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{synth_bursts, synth_signals, Dataset, SignalClass, Waveform};
use super::model::{cross_entropy, Act, LayerSpec, Mixing, Model, ModelConfig, Tensor};
use super::optim::{Nadam, NadamConfig, Plateau};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ModelChoice {
    BaselineA,
    BaselineB,
    Custom(Vec<LayerSpec>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DataSource {
    Synthetic { classes: Vec<SignalClass>, per_class: usize, length: usize },
    /// Noise with one class-waveform burst of `burst_len` samples per signal.
    Bursts { classes: Vec<SignalClass>, per_class: usize, length: usize, burst_len: usize },
    Csv(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    pub batch: usize,
    pub optimizer: NadamConfig,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub plateau_threshold: f64,
    pub model: ModelChoice,
    pub activation: Act,
    pub base_activation: Act,
    pub mixing: Mixing,
    pub data: DataSource,
    pub test_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            epochs: 50,
            batch: 64,
            optimizer: NadamConfig::default(),
            plateau_factor: 0.2,
            plateau_patience: 5,
            plateau_threshold: 1e-4,
            model: ModelChoice::BaselineB,
            activation: Act::Peuaf,
            base_activation: Act::Relu,
            mixing: Mixing::All,
            data: DataSource::Synthetic {
                classes: default_classes(),
                per_class: 300,
                length: 128,
            },
            test_fraction: 0.3,
        }
    }
}

/// Three noisy sinusoids at distinct frequencies.
pub fn default_classes() -> Vec<SignalClass> {
    [0.04, 0.1, 0.22]
        .into_iter()
        .map(|frequency| SignalClass { frequency, waveform: Waveform::Sine, noise: 0.5 })
        .collect()
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 {
            return Err(Error::config("epochs and batch must be positive"));
        }
        self.optimizer.validate()?;
        Plateau::new(self.plateau_factor, self.plateau_patience, self.plateau_threshold).validate()?;
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::config(format!("test_fraction must lie in [0, 1), got {}", self.test_fraction)));
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment. Unknown keys are errors.
    pub fn parse(text: &str) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::default();
        let mut classes: Option<Vec<SignalClass>> = None;
        let mut per_class = 300;
        let mut length = 128;
        let mut burst_len: Option<usize> = None;
        let mut bursts = false;
        let mut csv: Option<PathBuf> = None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let ctx = format!("line {}", n + 1);
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(&ctx, "expected 'key = value'"))?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| v.parse::<f64>().map_err(|_| Error::parse(&ctx, format!("{key}: '{v}' is not a number")));
            let int = |v: &str| v.parse::<usize>().map_err(|_| Error::parse(&ctx, format!("{key}: '{v}' is not a count")));
            let act = |v: &str| Act::parse(v).ok_or_else(|| Error::parse(&ctx, format!("{key}: unknown activation '{v}'")));
            match key {
                "seed" => cfg.seed = value.parse().map_err(|_| Error::parse(&ctx, "seed: not an integer"))?,
                "epochs" => cfg.epochs = int(value)?,
                "batch" => cfg.batch = int(value)?,
                "lr" => cfg.optimizer.lr = num(value)?,
                "beta1" => cfg.optimizer.beta1 = num(value)?,
                "beta2" => cfg.optimizer.beta2 = num(value)?,
                "nadam_eps" => cfg.optimizer.eps = num(value)?,
                "plateau_factor" => cfg.plateau_factor = num(value)?,
                "plateau_patience" => cfg.plateau_patience = int(value)?,
                "plateau_threshold" => cfg.plateau_threshold = num(value)?,
                "model" => {
                    cfg.model = match value {
                        "baseline-a" => ModelChoice::BaselineA,
                        "baseline-b" => ModelChoice::BaselineB,
                        _ => return Err(Error::parse(&ctx, "model must be baseline-a or baseline-b; use 'layers' otherwise")),
                    }
                }
                "layers" => {
                    let layers = value.split(',').map(LayerSpec::parse_token).collect::<Result<Vec<_>>>()?;
                    cfg.model = ModelChoice::Custom(layers);
                }
                "activation" => cfg.activation = act(value)?,
                "base_activation" => cfg.base_activation = act(value)?,
                "mixed" => cfg.mixing = Mixing::parse(value)?,
                "dataset" => {
                    bursts = value == "bursts";
                    csv = match value {
                        "synthetic" | "bursts" => None,
                        path => Some(PathBuf::from(path)),
                    }
                }
                "synth.burst_len" => burst_len = Some(int(value)?),
                "synth.classes" => {
                    classes = Some(value.split(',').map(SignalClass::parse).collect::<Result<Vec<_>>>()?);
                }
                "synth.per_class" => per_class = int(value)?,
                "synth.length" => length = int(value)?,
                "test_fraction" => cfg.test_fraction = num(value)?,
                _ => return Err(Error::parse(&ctx, format!("unknown key '{key}'"))),
            }
        }
        let classes = classes.unwrap_or_else(default_classes);
        cfg.data = match csv {
            Some(path) => DataSource::Csv(path),
            None if bursts => {
                let burst_len = burst_len.unwrap_or(length / 4);
                DataSource::Bursts { classes, per_class, length, burst_len }
            }
            None => DataSource::Synthetic { classes, per_class, length },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TrainConfig> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        TrainConfig::parse(&text).map_err(|e| match e {
            Error::Parse { context, message } => {
                Error::Parse { context: format!("{}: {context}", path.display()), message }
            }
            other => other,
        })
    }

    /// Canonical `key = value` text that parses back to this configuration.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let o = &self.optimizer;
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "batch = {}", self.batch);
        let _ = writeln!(s, "lr = {}", o.lr);
        let _ = writeln!(s, "beta1 = {}", o.beta1);
        let _ = writeln!(s, "beta2 = {}", o.beta2);
        let _ = writeln!(s, "nadam_eps = {}", o.eps);
        let _ = writeln!(s, "plateau_factor = {}", self.plateau_factor);
        let _ = writeln!(s, "plateau_patience = {}", self.plateau_patience);
        let _ = writeln!(s, "plateau_threshold = {}", self.plateau_threshold);
        match &self.model {
            ModelChoice::BaselineA => {
                let _ = writeln!(s, "model = baseline-a");
            }
            ModelChoice::BaselineB => {
                let _ = writeln!(s, "model = baseline-b");
            }
            ModelChoice::Custom(layers) => {
                let toks: Vec<String> = layers.iter().map(LayerSpec::to_token).collect();
                let _ = writeln!(s, "layers = {}", toks.join(","));
            }
        }
        let _ = writeln!(s, "activation = {}", self.activation.name());
        let _ = writeln!(s, "base_activation = {}", self.base_activation.name());
        let mixed = match &self.mixing {
            Mixing::All => "all".to_string(),
            Mixing::None => "none".to_string(),
            Mixing::LastBlock => "last".to_string(),
            Mixing::Layers(v) => v.iter().map(usize::to_string).collect::<Vec<_>>().join(","),
        };
        let _ = writeln!(s, "mixed = {mixed}");
        match &self.data {
            DataSource::Csv(p) => {
                let _ = writeln!(s, "dataset = {}", p.display());
            }
            DataSource::Synthetic { classes, per_class, length } => {
                let toks: Vec<String> = classes.iter().map(SignalClass::to_token).collect();
                let _ = writeln!(s, "dataset = synthetic");
                let _ = writeln!(s, "synth.classes = {}", toks.join(","));
                let _ = writeln!(s, "synth.per_class = {per_class}");
                let _ = writeln!(s, "synth.length = {length}");
            }
            DataSource::Bursts { classes, per_class, length, burst_len } => {
                let toks: Vec<String> = classes.iter().map(SignalClass::to_token).collect();
                let _ = writeln!(s, "dataset = bursts");
                let _ = writeln!(s, "synth.classes = {}", toks.join(","));
                let _ = writeln!(s, "synth.per_class = {per_class}");
                let _ = writeln!(s, "synth.length = {length}");
                let _ = writeln!(s, "synth.burst_len = {burst_len}");
            }
        }
        let _ = writeln!(s, "test_fraction = {}", self.test_fraction);
        s
    }

    /// Loads or generates the dataset.
    pub fn dataset(&self) -> Result<Dataset> {
        match &self.data {
            DataSource::Synthetic { classes, per_class, length } => synth_signals(classes, *per_class, *length, self.seed),
            DataSource::Bursts { classes, per_class, length, burst_len } => {
                Ok(synth_bursts(classes, *per_class, *length, *burst_len, self.seed)?.data)
            }
            DataSource::Csv(path) => super::data::ingest_csv(path, &Default::default()),
        }
    }

    /// Layer schedule for `input_len` samples and `classes` outputs, with mixing applied.
    pub fn model_config(&self, input_len: usize, classes: usize) -> ModelConfig {
        let mut cfg = match &self.model {
            ModelChoice::BaselineA => ModelConfig::baseline_a(input_len, classes, self.activation),
            ModelChoice::BaselineB => ModelConfig::baseline_b(input_len, classes, self.activation),
            ModelChoice::Custom(layers) => ModelConfig { input_len, layers: layers.clone() },
        };
        if self.mixing != Mixing::All {
            self.mixing.apply(&mut cfg.layers, self.base_activation);
            if self.activation != Act::Peuaf {
                for l in cfg.layers.iter_mut() {
                    if l.act() == Some(Act::Peuaf) && self.base_activation != Act::Peuaf {
                        l.set_act(self.activation);
                    }
                }
            }
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub val_loss: f64,
    pub acc: f64,
    pub val_acc: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
    /// Every trainable frequency at the end of the epoch.
    pub w: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let m = self.epochs.first().map_or(0, |r| r.w.len());
        let mut s = String::from("epoch,loss,val_loss,acc,val_acc,lr");
        for i in 1..=m {
            let _ = write!(s, ",w_{i}");
        }
        s.push('\n');
        for r in &self.epochs {
            let _ = write!(s, "{},{},{},{},{},{}", r.epoch, r.loss, r.val_loss, r.acc, r.val_acc, r.lr);
            for w in &r.w {
                let _ = write!(s, ",{w}");
            }
            s.push('\n');
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: History,
    /// Set when a non-finite loss stopped training; `model` is then the last
    /// checkpoint taken at the end of a finite epoch.
    pub diverged: Option<(usize, String)>,
}

fn batch_tensor(ds: &Dataset, idx: &[usize]) -> Result<Tensor> {
    let sigs: Vec<&[f64]> = idx.iter().map(|&i| ds.signals[i].as_slice()).collect();
    Tensor::from_signals(&sigs)
}

/// Mean loss and accuracy in evaluation mode.
pub fn evaluate(model: &Model, ds: &Dataset, batch: usize) -> Result<(f64, f64)> {
    if ds.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    let idx: Vec<usize> = (0..ds.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let x = batch_tensor(ds, chunk)?;
        let logits = model.forward_eval(&x)?;
        let labels: Vec<usize> = chunk.iter().map(|&i| ds.labels[i]).collect();
        let (l, _) = cross_entropy(&logits, &labels)?;
        loss += l * chunk.len() as f64;
        correct += count_correct(&logits, &labels);
    }
    Ok((loss / ds.len() as f64, correct as f64 / ds.len() as f64))
}

fn count_correct(logits: &Tensor, labels: &[usize]) -> usize {
    logits
        .data
        .chunks(logits.c)
        .zip(labels)
        .filter(|(z, &y)| {
            let best = z
                .iter()
                .enumerate()
                .fold(0, |b, (j, &v)| if v > z[b] { j } else { b });
            best == y
        })
        .count()
}

/// Trains a fresh model; deterministic given `cfg.seed`.
pub fn train(train_set: &Dataset, test_set: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    train_set.validate()?;
    if test_set.classes() != train_set.classes() && !test_set.is_empty() {
        return Err(Error::DimensionMismatch { expected: train_set.classes(), got: test_set.classes() });
    }
    if let Some(c) = train_set.histogram().iter().position(|&n| n == 0) {
        return Err(Error::Domain(format!("class {c} has no training samples")));
    }
    let model_cfg = cfg.model_config(train_set.signal_len(), train_set.classes());
    let model = Model::new(model_cfg, cfg.seed)?;
    train_model(model, train_set, test_set, cfg)
}

/// Continues training `model`.
pub fn train_model(mut model: Model, train_set: &Dataset, test_set: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let shapes: Vec<usize> = model.params.iter().map(|p| p.value.len()).collect();
    let mut opt = Nadam::new(cfg.optimizer, &shapes);
    let mut plateau = Plateau::new(cfg.plateau_factor, cfg.plateau_patience, cfg.plateau_threshold);
    let mut lr = cfg.optimizer.lr;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5EED_0F_7A41);
    let mut history = History::default();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut checkpoint = model.clone();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for chunk in order.chunks(cfg.batch) {
            let x = batch_tensor(train_set, chunk)?;
            let labels: Vec<usize> = chunk.iter().map(|&i| train_set.labels[i]).collect();
            let cache = model.forward_train(&x)?;
            let (loss, dlogits) = cross_entropy(&cache.logits, &labels)?;
            if !loss.is_finite() {
                let msg = format!("non-finite training loss {loss} at lr {lr}");
                return Ok(TrainOutcome { model: checkpoint, history, diverged: Some((epoch, msg)) });
            }
            loss_sum += loss * chunk.len() as f64;
            correct += count_correct(&cache.logits, &labels);
            let grads = model.backward(&cache, &dlogits);
            model.update_running(&cache);
            let mut params: Vec<&mut Vec<f64>> = model.params.iter_mut().map(|p| &mut p.value).collect();
            opt.step(&mut params, &grads, lr);
            model.project_w();
        }
        let (val_loss, val_acc) = evaluate(&model, test_set, cfg.batch)?;
        let acc = correct as f64 / train_set.len() as f64;
        history.epochs.push(EpochRecord {
            epoch,
            loss: loss_sum / train_set.len() as f64,
            val_loss,
            acc,
            val_acc,
            lr,
            w: model.frequencies(),
        });
        checkpoint = model.clone();
        let monitored = if test_set.is_empty() { acc } else { val_acc };
        lr = plateau.step(monitored, lr);
    }
    Ok(TrainOutcome { model, history, diverged: None })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_text_round_trip() {
        let mut cfg = TrainConfig::default();
        cfg.seed = 11;
        cfg.mixing = Mixing::LastBlock;
        cfg.model = ModelChoice::Custom(vec![LayerSpec::Flatten, LayerSpec::Output { classes: 3 }]);
        assert_eq!(TrainConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert_eq!(TrainConfig::parse(&TrainConfig::default().to_text()).unwrap(), TrainConfig::default());
        cfg.data = DataSource::Bursts { classes: default_classes(), per_class: 5, length: 200, burst_len: 40 };
        assert_eq!(TrainConfig::parse(&cfg.to_text()).unwrap(), cfg);
        assert!(TrainConfig::parse("bogus = 1").is_err());
        assert!(TrainConfig::parse("epochs = -3").is_err());
    }

    #[test]
    fn short_run_is_deterministic_and_bounded() {
        let mut cfg = TrainConfig::default();
        cfg.epochs = 2;
        cfg.data = DataSource::Synthetic { classes: default_classes(), per_class: 12, length: 64 };
        let ds = cfg.dataset().unwrap();
        let (tr, te) = ds.split(cfg.test_fraction, cfg.seed).unwrap();
        let a = train(&tr, &te, &cfg).unwrap();
        let b = train(&tr, &te, &cfg).unwrap();
        assert_eq!(a.history.to_csv(), b.history.to_csv());
        assert_eq!(a.history.epochs.len(), 2);
        assert!(a.model.frequencies().iter().all(|w| (0.0..=1.0).contains(w)));
    }
}
