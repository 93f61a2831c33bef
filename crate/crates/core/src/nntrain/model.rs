//! Layers, shape inference, and the reverse-mode pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::activations::Activation;
use crate::error::{Error, Result};

/// Initial value of every trainable frequency.
pub const W_INIT: f64 = 0.5;

/// Batch of 1D feature maps, `n x c x l`, channel-major per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub c: usize,
    pub l: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(n: usize, c: usize, l: usize) -> Self {
        Tensor { n, c, l, data: vec![0.0; n * c * l] }
    }

    /// Single-channel batch from equal-length signals.
    pub fn from_signals(signals: &[&[f64]]) -> Result<Self> {
        let l = signals.first().map_or(0, |s| s.len());
        let mut data = Vec::with_capacity(signals.len() * l);
        for s in signals {
            if s.len() != l {
                return Err(Error::DimensionMismatch { expected: l, got: s.len() });
            }
            data.extend_from_slice(s);
        }
        Ok(Tensor { n: signals.len(), c: 1, l, data })
    }

    #[inline]
    fn at(&self, n: usize, c: usize, t: usize) -> usize {
        (n * self.c + c) * self.l + t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Act {
    Identity,
    Relu,
    Euaf,
    /// PEUAF with one trainable frequency per channel.
    Peuaf,
}

impl Act {
    pub fn parse(s: &str) -> Option<Act> {
        match s {
            "identity" | "linear" => Some(Act::Identity),
            "relu" => Some(Act::Relu),
            "euaf" => Some(Act::Euaf),
            "peuaf" => Some(Act::Peuaf),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Act::Identity => "identity",
            Act::Relu => "relu",
            Act::Euaf => "euaf",
            Act::Peuaf => "peuaf",
        }
    }

    #[inline]
    fn apply(self, z: f64, w: f64) -> f64 {
        match self {
            Act::Identity => z,
            Act::Relu => z.max(0.0),
            Act::Euaf => Activation::Euaf.apply(z),
            Act::Peuaf => Activation::Peuaf { w }.apply(z),
        }
    }

    /// `(dy/dz, dy/dw)`.
    #[inline]
    fn grads(self, z: f64, w: f64) -> (f64, f64) {
        match self {
            Act::Identity => (1.0, 0.0),
            Act::Relu => (if z > 0.0 { 1.0 } else { 0.0 }, 0.0),
            Act::Euaf => (Activation::Euaf.deriv_x(z).unwrap_or(f64::NAN), 0.0),
            Act::Peuaf => {
                let a = Activation::Peuaf { w };
                (a.deriv_x(z).unwrap_or(f64::NAN), a.deriv_w(z).unwrap_or(f64::NAN))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LayerSpec {
    Conv1d { kernel: usize, filters: usize, stride: usize, act: Act },
    BatchNorm { momentum: f64, epsilon: f64 },
    MaxPool { size: usize, stride: usize },
    GlobalAvgPool,
    Flatten,
    Dense { units: usize, act: Act },
    /// Dense layer to the classes followed by softmax.
    Output { classes: usize },
}

impl LayerSpec {
    pub fn act(&self) -> Option<Act> {
        match self {
            LayerSpec::Conv1d { act, .. } | LayerSpec::Dense { act, .. } => Some(*act),
            _ => None,
        }
    }

    pub(crate) fn set_act(&mut self, a: Act) {
        if let LayerSpec::Conv1d { act, .. } | LayerSpec::Dense { act, .. } = self {
            *act = a;
        }
    }

    /// Compact text form, e.g. `conv:3:64:1:peuaf` or `bn:0.99:0.001`.
    pub fn to_token(&self) -> String {
        match self {
            LayerSpec::Conv1d { kernel, filters, stride, act } => {
                format!("conv:{kernel}:{filters}:{stride}:{}", act.name())
            }
            LayerSpec::BatchNorm { momentum, epsilon } => format!("bn:{momentum}:{epsilon}"),
            LayerSpec::MaxPool { size, stride } => format!("maxpool:{size}:{stride}"),
            LayerSpec::GlobalAvgPool => "gap".into(),
            LayerSpec::Flatten => "flatten".into(),
            LayerSpec::Dense { units, act } => format!("dense:{units}:{}", act.name()),
            LayerSpec::Output { classes } => format!("output:{classes}"),
        }
    }

    pub fn parse_token(tok: &str) -> Result<LayerSpec> {
        let parts: Vec<&str> = tok.trim().split(':').collect();
        let bad = || Error::parse(format!("layer '{tok}'"), "malformed layer token");
        let int = |i: usize| -> Result<usize> { parts.get(i).ok_or_else(bad)?.parse().map_err(|_| bad()) };
        let float = |i: usize| -> Result<f64> { parts.get(i).ok_or_else(bad)?.parse().map_err(|_| bad()) };
        let act = |i: usize| -> Result<Act> {
            match parts.get(i) {
                None => Ok(Act::Identity),
                Some(s) => Act::parse(s).ok_or_else(|| Error::parse(format!("layer '{tok}'"), format!("unknown activation '{s}'"))),
            }
        };
        let spec = match parts[0] {
            "conv" => LayerSpec::Conv1d { kernel: int(1)?, filters: int(2)?, stride: int(3)?, act: act(4)? },
            "bn" => LayerSpec::BatchNorm {
                momentum: if parts.len() > 1 { float(1)? } else { 0.99 },
                epsilon: if parts.len() > 2 { float(2)? } else { 1e-3 },
            },
            "maxpool" => LayerSpec::MaxPool { size: int(1)?, stride: int(2)? },
            "gap" => LayerSpec::GlobalAvgPool,
            "flatten" => LayerSpec::Flatten,
            "dense" => LayerSpec::Dense { units: int(1)?, act: act(2)? },
            "output" => LayerSpec::Output { classes: int(1)? },
            _ => return Err(bad()),
        };
        Ok(spec)
    }
}

/// Which activated layers use PEUAF; the rest use the base activation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mixing {
    All,
    None,
    /// Activated layers after the last normalization or pooling layer that is
    /// followed by another activated layer; with no such layer, the last activated layer.
    LastBlock,
    Layers(Vec<usize>),
}

impl Mixing {
    pub fn parse(s: &str) -> Result<Mixing> {
        match s.trim() {
            "all" => Ok(Mixing::All),
            "none" => Ok(Mixing::None),
            "last" | "last-block" => Ok(Mixing::LastBlock),
            list => list
                .split(',')
                .map(|t| t.trim().parse::<usize>().map_err(|_| Error::parse("mixed", format!("bad layer index '{t}'"))))
                .collect::<Result<Vec<_>>>()
                .map(Mixing::Layers),
        }
    }

    /// Rewrites the activations of `layers` in place.
    pub fn apply(&self, layers: &mut [LayerSpec], base: Act) {
        let activated: Vec<usize> = (0..layers.len()).filter(|&i| layers[i].act().is_some()).collect();
        let chosen: Vec<usize> = match self {
            Mixing::All => activated.clone(),
            Mixing::None => Vec::new(),
            Mixing::Layers(list) => list.clone(),
            Mixing::LastBlock => {
                let last_act = activated.last().copied();
                let boundary = (0..layers.len()).rev().find(|&i| {
                    matches!(layers[i], LayerSpec::BatchNorm { .. } | LayerSpec::MaxPool { .. })
                        && last_act.is_some_and(|a| a > i)
                });
                match boundary {
                    Some(b) => activated.iter().copied().filter(|&i| i > b).collect(),
                    None => last_act.into_iter().collect(),
                }
            }
        };
        for &i in &activated {
            layers[i].set_act(if chosen.contains(&i) { Act::Peuaf } else { base });
        }
    }
}

/// Layer schedule for `input_len`-sample single-channel signals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_len: usize,
    pub layers: Vec<LayerSpec>,
}

impl ModelConfig {
    /// Small schedule: two `(2 x 1)` convolutions with 16 filters, each followed by
    /// batch normalization and `2 x 1` max pooling, then flatten and softmax.
    pub fn baseline_b(input_len: usize, classes: usize, act: Act) -> Self {
        let bn = LayerSpec::BatchNorm { momentum: 0.99, epsilon: 1e-3 };
        let conv = LayerSpec::Conv1d { kernel: 2, filters: 16, stride: 1, act };
        let pool = LayerSpec::MaxPool { size: 2, stride: 1 };
        ModelConfig {
            input_len,
            layers: vec![
                conv.clone(),
                bn.clone(),
                pool.clone(),
                conv,
                bn,
                pool,
                LayerSpec::Flatten,
                LayerSpec::Output { classes },
            ],
        }
    }

    /// Three blocks of two `(3 x 1)` convolutions with 64 filters, batch
    /// normalization and `3 x 1` pooling, then global average pooling and softmax.
    pub fn baseline_a(input_len: usize, classes: usize, act: Act) -> Self {
        let bn = LayerSpec::BatchNorm { momentum: 0.99, epsilon: 1e-3 };
        let conv = LayerSpec::Conv1d { kernel: 3, filters: 64, stride: 1, act };
        let pool = LayerSpec::MaxPool { size: 3, stride: 1 };
        let mut layers = Vec::new();
        for block in 0..3 {
            layers.push(conv.clone());
            layers.push(conv.clone());
            layers.push(bn.clone());
            if block < 2 {
                layers.push(pool.clone());
            }
        }
        layers.push(LayerSpec::GlobalAvgPool);
        layers.push(LayerSpec::Output { classes });
        ModelConfig { input_len, layers }
    }

    /// Output shape `(channels, length)` of every layer; checks the schedule.
    pub fn shapes(&self) -> Result<Vec<(usize, usize)>> {
        let shape_err = |i: usize, m: String| Error::config(format!("layer {i}: {m}"));
        if self.input_len == 0 {
            return Err(Error::config("input length must be positive"));
        }
        let outputs = self.layers.iter().filter(|l| matches!(l, LayerSpec::Output { .. })).count();
        if outputs != 1 || !matches!(self.layers.last(), Some(LayerSpec::Output { .. })) {
            return Err(Error::config("the model needs exactly one output layer, placed last"));
        }
        let (mut c, mut l) = (1usize, self.input_len);
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, spec) in self.layers.iter().enumerate() {
            match *spec {
                LayerSpec::Conv1d { kernel, filters, stride, .. } => {
                    if kernel == 0 || filters == 0 || stride == 0 {
                        return Err(shape_err(i, "kernel, filters and stride must be positive".into()));
                    }
                    if kernel > l {
                        return Err(shape_err(i, format!("kernel {kernel} longer than input {l}")));
                    }
                    l = (l - kernel) / stride + 1;
                    c = filters;
                }
                LayerSpec::MaxPool { size, stride } => {
                    if size == 0 || stride == 0 || size > l {
                        return Err(shape_err(i, format!("pool {size}/{stride} invalid for length {l}")));
                    }
                    l = (l - size) / stride + 1;
                }
                LayerSpec::BatchNorm { momentum, epsilon } => {
                    if !((0.0..1.0).contains(&momentum) && epsilon > 0.0) {
                        return Err(shape_err(i, "momentum must lie in [0, 1) and epsilon be > 0".into()));
                    }
                }
                LayerSpec::GlobalAvgPool => l = 1,
                LayerSpec::Flatten => {
                    c *= l;
                    l = 1;
                }
                LayerSpec::Dense { units, .. } | LayerSpec::Output { classes: units } => {
                    if l != 1 {
                        return Err(shape_err(i, "dense layers need flattened input".into()));
                    }
                    if units == 0 {
                        return Err(shape_err(i, "dense layers need at least one unit".into()));
                    }
                    c = units;
                }
            }
            out.push((c, l));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamKind {
    Weight,
    Bias,
    Gamma,
    Beta,
    /// PEUAF frequencies; kept inside `[0, 1]`.
    Frequency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub kind: ParamKind,
    pub value: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Slots {
    weight: Option<usize>,
    bias: Option<usize>,
    freq: Option<usize>,
    /// Running mean and variance for batch normalization.
    running: Option<(Vec<f64>, Vec<f64>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub params: Vec<Param>,
    slots: Vec<Slots>,
    shapes: Vec<(usize, usize)>,
}

enum Cache {
    Affine { input: Tensor, pre: Tensor },
    Norm { xhat: Tensor, inv_std: Vec<f64>, mean: Vec<f64>, var: Vec<f64> },
    Pool { argmax: Vec<usize>, in_len: usize },
    Avg { in_len: usize },
    Reshape,
}

/// Forward state kept for the backward pass.
pub struct ForwardCache {
    caches: Vec<Cache>,
    pub logits: Tensor,
}

impl Model {
    /// Glorot-uniform weights, zero biases, unit BN scales, frequencies at [`W_INIT`].
    pub fn new(config: ModelConfig, seed: u64) -> Result<Model> {
        let shapes = config.shapes()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        let mut slots = Vec::with_capacity(config.layers.len());
        let push = |params: &mut Vec<Param>, name: String, kind: ParamKind, value: Vec<f64>| {
            params.push(Param { name, kind, value });
            Some(params.len() - 1)
        };
        let mut c_in = 1;
        for (i, spec) in config.layers.iter().enumerate() {
            let (c_out, _) = shapes[i];
            let mut s = Slots { weight: None, bias: None, freq: None, running: None };
            match *spec {
                LayerSpec::Conv1d { kernel, filters, act, .. } => {
                    let lim = (6.0 / ((c_in * kernel + filters * kernel) as f64)).sqrt();
                    let w = (0..filters * c_in * kernel).map(|_| rng.gen_range(-lim..lim)).collect();
                    s.weight = push(&mut params, format!("l{i}.weight"), ParamKind::Weight, w);
                    s.bias = push(&mut params, format!("l{i}.bias"), ParamKind::Bias, vec![0.0; filters]);
                    if act == Act::Peuaf {
                        s.freq = push(&mut params, format!("l{i}.w"), ParamKind::Frequency, vec![W_INIT; filters]);
                    }
                }
                LayerSpec::Dense { units, act } => {
                    let lim = (6.0 / ((c_in + units) as f64)).sqrt();
                    let w = (0..units * c_in).map(|_| rng.gen_range(-lim..lim)).collect();
                    s.weight = push(&mut params, format!("l{i}.weight"), ParamKind::Weight, w);
                    s.bias = push(&mut params, format!("l{i}.bias"), ParamKind::Bias, vec![0.0; units]);
                    if act == Act::Peuaf {
                        s.freq = push(&mut params, format!("l{i}.w"), ParamKind::Frequency, vec![W_INIT; units]);
                    }
                }
                LayerSpec::Output { classes } => {
                    let lim = (6.0 / ((c_in + classes) as f64)).sqrt();
                    let w = (0..classes * c_in).map(|_| rng.gen_range(-lim..lim)).collect();
                    s.weight = push(&mut params, format!("l{i}.weight"), ParamKind::Weight, w);
                    s.bias = push(&mut params, format!("l{i}.bias"), ParamKind::Bias, vec![0.0; classes]);
                }
                LayerSpec::BatchNorm { .. } => {
                    s.weight = push(&mut params, format!("l{i}.gamma"), ParamKind::Gamma, vec![1.0; c_out]);
                    s.bias = push(&mut params, format!("l{i}.beta"), ParamKind::Beta, vec![0.0; c_out]);
                    s.running = Some((vec![0.0; c_out], vec![1.0; c_out]));
                }
                _ => {}
            }
            slots.push(s);
            c_in = c_out;
        }
        Ok(Model { config, params, slots, shapes })
    }

    pub fn classes(&self) -> usize {
        self.shapes.last().map_or(0, |s| s.0)
    }

    pub fn input_len(&self) -> usize {
        self.config.input_len
    }

    /// Every trainable frequency, in parameter order.
    pub fn frequencies(&self) -> Vec<f64> {
        self.params
            .iter()
            .filter(|p| p.kind == ParamKind::Frequency)
            .flat_map(|p| p.value.iter().copied())
            .collect()
    }

    /// Clamps every frequency into `[0, 1]`.
    pub fn project_w(&mut self) {
        for p in self.params.iter_mut().filter(|p| p.kind == ParamKind::Frequency) {
            p.value.iter_mut().for_each(|w| *w = w.clamp(0.0, 1.0));
        }
    }

    pub fn zero_grads(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|p| vec![0.0; p.value.len()]).collect()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.c != 1 || x.l != self.config.input_len {
            return Err(Error::DimensionMismatch { expected: self.config.input_len, got: x.l });
        }
        Ok(())
    }

    /// Training-mode forward: batch statistics in normalization layers.
    pub fn forward_train(&self, x: &Tensor) -> Result<ForwardCache> {
        self.check_input(x)?;
        self.run(x.clone(), true)
    }

    /// Evaluation-mode logits: running statistics in normalization layers.
    pub fn forward_eval(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        Ok(self.run(x.clone(), false)?.logits)
    }

    /// Class probabilities per sample in evaluation mode.
    pub fn predict_proba(&self, x: &Tensor) -> Result<Vec<Vec<f64>>> {
        let logits = self.forward_eval(x)?;
        Ok(logits.data.chunks(logits.c).map(softmax).collect())
    }

    fn run(&self, mut x: Tensor, train: bool) -> Result<ForwardCache> {
        let mut caches = Vec::with_capacity(self.config.layers.len());
        for (i, spec) in self.config.layers.iter().enumerate() {
            let slot = &self.slots[i];
            let (c_out, l_out) = self.shapes[i];
            match *spec {
                LayerSpec::Conv1d { kernel, stride, act, .. } => {
                    let w = &self.params[slot.weight.unwrap()].value;
                    let b = &self.params[slot.bias.unwrap()].value;
                    let freq = slot.freq.map(|f| &self.params[f].value);
                    let mut pre = Tensor::zeros(x.n, c_out, l_out);
                    let mut out = Tensor::zeros(x.n, c_out, l_out);
                    for n in 0..x.n {
                        for o in 0..c_out {
                            let wf = freq.map_or(1.0, |f| f[o]);
                            for t in 0..l_out {
                                let mut acc = b[o];
                                for ci in 0..x.c {
                                    let xs = &x.data[x.at(n, ci, t * stride)..][..kernel];
                                    let ws = &w[(o * x.c + ci) * kernel..][..kernel];
                                    for k in 0..kernel {
                                        acc += ws[k] * xs[k];
                                    }
                                }
                                let idx = pre.at(n, o, t);
                                pre.data[idx] = acc;
                                out.data[idx] = act.apply(acc, wf);
                            }
                        }
                    }
                    caches.push(Cache::Affine { input: x, pre });
                    x = out;
                }
                LayerSpec::Dense { act, .. } => {
                    let (pre, out) = self.dense(&x, slot, c_out, act);
                    caches.push(Cache::Affine { input: x, pre });
                    x = out;
                }
                LayerSpec::Output { .. } => {
                    let (pre, out) = self.dense(&x, slot, c_out, Act::Identity);
                    caches.push(Cache::Affine { input: x, pre });
                    x = out;
                }
                LayerSpec::BatchNorm { epsilon, .. } => {
                    let gamma = &self.params[slot.weight.unwrap()].value;
                    let beta = &self.params[slot.bias.unwrap()].value;
                    let (mean, var) = if train {
                        batch_moments(&x)
                    } else {
                        slot.running.clone().expect("normalization layer")
                    };
                    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + epsilon).sqrt()).collect();
                    let mut xhat = x.clone();
                    for n in 0..x.n {
                        for c in 0..x.c {
                            for t in 0..x.l {
                                let idx = x.at(n, c, t);
                                let h = (x.data[idx] - mean[c]) * inv_std[c];
                                xhat.data[idx] = h;
                                x.data[idx] = gamma[c] * h + beta[c];
                            }
                        }
                    }
                    caches.push(Cache::Norm { xhat, inv_std, mean, var });
                }
                LayerSpec::MaxPool { size, stride } => {
                    let mut out = Tensor::zeros(x.n, x.c, l_out);
                    let mut argmax = vec![0; out.data.len()];
                    for n in 0..x.n {
                        for c in 0..x.c {
                            for t in 0..l_out {
                                let start = x.at(n, c, t * stride);
                                let mut best = start;
                                for k in 1..size {
                                    if x.data[start + k] > x.data[best] {
                                        best = start + k;
                                    }
                                }
                                let o = out.at(n, c, t);
                                out.data[o] = x.data[best];
                                argmax[o] = best;
                            }
                        }
                    }
                    caches.push(Cache::Pool { argmax, in_len: x.data.len() });
                    x = out;
                }
                LayerSpec::GlobalAvgPool => {
                    let mut out = Tensor::zeros(x.n, x.c, 1);
                    for (o, chunk) in out.data.iter_mut().zip(x.data.chunks(x.l)) {
                        *o = chunk.iter().sum::<f64>() / x.l as f64;
                    }
                    caches.push(Cache::Avg { in_len: x.l });
                    x = out;
                }
                LayerSpec::Flatten => {
                    x = Tensor { n: x.n, c: x.c * x.l, l: 1, data: x.data };
                    caches.push(Cache::Reshape);
                }
            }
        }
        Ok(ForwardCache { caches, logits: x })
    }

    fn dense(&self, x: &Tensor, slot: &Slots, units: usize, act: Act) -> (Tensor, Tensor) {
        let w = &self.params[slot.weight.unwrap()].value;
        let b = &self.params[slot.bias.unwrap()].value;
        let freq = slot.freq.map(|f| &self.params[f].value);
        let mut pre = Tensor::zeros(x.n, units, 1);
        let mut out = Tensor::zeros(x.n, units, 1);
        for n in 0..x.n {
            let xs = &x.data[n * x.c..][..x.c];
            for o in 0..units {
                let ws = &w[o * x.c..][..x.c];
                let mut acc = b[o];
                for (wi, xi) in ws.iter().zip(xs) {
                    acc += wi * xi;
                }
                pre.data[n * units + o] = acc;
                out.data[n * units + o] = act.apply(acc, freq.map_or(1.0, |f| f[o]));
            }
        }
        (pre, out)
    }

    /// Folds the batch statistics of a training forward into the running averages.
    pub fn update_running(&mut self, cache: &ForwardCache) {
        for (i, spec) in self.config.layers.iter().enumerate() {
            if let (LayerSpec::BatchNorm { momentum, .. }, Cache::Norm { mean, var, .. }) = (spec, &cache.caches[i]) {
                let (rm, rv) = self.slots[i].running.as_mut().expect("normalization layer");
                for c in 0..rm.len() {
                    rm[c] = momentum * rm[c] + (1.0 - momentum) * mean[c];
                    rv[c] = momentum * rv[c] + (1.0 - momentum) * var[c];
                }
            }
        }
    }

    /// Gradients of the loss with respect to every parameter, given `dL/dlogits`.
    pub fn backward(&self, cache: &ForwardCache, dlogits: &Tensor) -> Vec<Vec<f64>> {
        let mut grads = self.zero_grads();
        let mut g = dlogits.clone();
        for (i, spec) in self.config.layers.iter().enumerate().rev() {
            let slot = &self.slots[i];
            match (spec, &cache.caches[i]) {
                (LayerSpec::Conv1d { kernel, stride, act, .. }, Cache::Affine { input, pre }) => {
                    let (kernel, stride) = (*kernel, *stride);
                    let w = &self.params[slot.weight.unwrap()].value;
                    let freq = slot.freq.map(|f| &self.params[f].value);
                    let mut dx = Tensor::zeros(input.n, input.c, input.l);
                    let (c_out, l_out) = (pre.c, pre.l);
                    let mut dw = vec![0.0; w.len()];
                    let mut db = vec![0.0; c_out];
                    let mut dfreq = vec![0.0; c_out];
                    for n in 0..input.n {
                        for o in 0..c_out {
                            let wf = freq.map_or(1.0, |f| f[o]);
                            for t in 0..l_out {
                                let idx = pre.at(n, o, t);
                                let (dz, dwf) = act.grads(pre.data[idx], wf);
                                dfreq[o] += g.data[idx] * dwf;
                                let gz = g.data[idx] * dz;
                                db[o] += gz;
                                for ci in 0..input.c {
                                    let base = input.at(n, ci, t * stride);
                                    let wb = (o * input.c + ci) * kernel;
                                    for k in 0..kernel {
                                        dw[wb + k] += gz * input.data[base + k];
                                        dx.data[base + k] += gz * w[wb + k];
                                    }
                                }
                            }
                        }
                    }
                    grads[slot.weight.unwrap()] = dw;
                    grads[slot.bias.unwrap()] = db;
                    if let Some(f) = slot.freq {
                        grads[f] = dfreq;
                    }
                    g = dx;
                }
                (LayerSpec::Dense { act, .. }, Cache::Affine { input, pre }) => {
                    g = self.dense_backward(input, pre, &g, slot, *act, &mut grads);
                }
                (LayerSpec::Output { .. }, Cache::Affine { input, pre }) => {
                    g = self.dense_backward(input, pre, &g, slot, Act::Identity, &mut grads);
                }
                (LayerSpec::BatchNorm { .. }, Cache::Norm { xhat, inv_std, .. }) => {
                    let gamma = &self.params[slot.weight.unwrap()].value;
                    let m = (g.n * g.l) as f64;
                    let mut dgamma = vec![0.0; g.c];
                    let mut dbeta = vec![0.0; g.c];
                    for n in 0..g.n {
                        for c in 0..g.c {
                            for t in 0..g.l {
                                let idx = g.at(n, c, t);
                                dgamma[c] += g.data[idx] * xhat.data[idx];
                                dbeta[c] += g.data[idx];
                            }
                        }
                    }
                    let mut dx = g.clone();
                    for n in 0..g.n {
                        for c in 0..g.c {
                            for t in 0..g.l {
                                let idx = g.at(n, c, t);
                                let dh = g.data[idx] * gamma[c];
                                dx.data[idx] = inv_std[c] / m
                                    * (m * dh - gamma[c] * dbeta[c] - xhat.data[idx] * gamma[c] * dgamma[c]);
                            }
                        }
                    }
                    grads[slot.weight.unwrap()] = dgamma;
                    grads[slot.bias.unwrap()] = dbeta;
                    g = dx;
                }
                (LayerSpec::MaxPool { .. }, Cache::Pool { argmax, in_len }) => {
                    let (c, l_in) = if i == 0 { (1, self.config.input_len) } else { self.shapes[i - 1] };
                    let mut dx = Tensor { n: g.n, c, l: l_in, data: vec![0.0; *in_len] };
                    for (o, &src) in argmax.iter().enumerate() {
                        dx.data[src] += g.data[o];
                    }
                    g = dx;
                }
                (LayerSpec::GlobalAvgPool, Cache::Avg { in_len }) => {
                    let mut dx = Tensor::zeros(g.n, g.c, *in_len);
                    for (chunk, &gv) in dx.data.chunks_mut(*in_len).zip(&g.data) {
                        chunk.iter_mut().for_each(|v| *v = gv / *in_len as f64);
                    }
                    g = dx;
                }
                (LayerSpec::Flatten, Cache::Reshape) => {
                    let (c, l) = if i == 0 { (1, self.config.input_len) } else { self.shapes[i - 1] };
                    g = Tensor { n: g.n, c, l, data: g.data };
                }
                _ => unreachable!("cache matches layer"),
            }
        }
        grads
    }

    fn dense_backward(
        &self,
        input: &Tensor,
        pre: &Tensor,
        g: &Tensor,
        slot: &Slots,
        act: Act,
        grads: &mut [Vec<f64>],
    ) -> Tensor {
        let w = &self.params[slot.weight.unwrap()].value;
        let freq = slot.freq.map(|f| &self.params[f].value);
        let (k, units) = (input.c, pre.c);
        let mut dx = Tensor::zeros(input.n, input.c, 1);
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; units];
        let mut dfreq = vec![0.0; units];
        for n in 0..input.n {
            for o in 0..units {
                let idx = n * units + o;
                let (dz, dwf) = act.grads(pre.data[idx], freq.map_or(1.0, |f| f[o]));
                dfreq[o] += g.data[idx] * dwf;
                let gz = g.data[idx] * dz;
                db[o] += gz;
                for j in 0..k {
                    dw[o * k + j] += gz * input.data[n * k + j];
                    dx.data[n * k + j] += gz * w[o * k + j];
                }
            }
        }
        grads[slot.weight.unwrap()] = dw;
        grads[slot.bias.unwrap()] = db;
        if let Some(f) = slot.freq {
            grads[f] = dfreq;
        }
        dx
    }

    /// Piecewise-linear segment of every activated neuron plus every pooling
    /// argmax. Two forward passes with equal signatures lie on one smooth piece.
    pub fn kink_signature(&self, cache: &ForwardCache) -> Vec<i64> {
        let mut out = Vec::new();
        for (i, spec) in self.config.layers.iter().enumerate() {
            match (&cache.caches[i], spec.act()) {
                (Cache::Affine { pre, .. }, Some(act)) => {
                    let freq = self.slots[i].freq.map(|f| &self.params[f].value);
                    for n in 0..pre.n {
                        for c in 0..pre.c {
                            for t in 0..pre.l {
                                let z = pre.data[pre.at(n, c, t)];
                                let w = freq.map_or(1.0, |f| f[c]);
                                out.push(segment(act, z, w));
                            }
                        }
                    }
                }
                (Cache::Pool { argmax, .. }, _) => out.extend(argmax.iter().map(|&a| a as i64)),
                _ => {}
            }
        }
        out
    }

    /// Running statistics of every normalization layer.
    pub fn running_stats(&self) -> Vec<(Vec<f64>, Vec<f64>)> {
        self.slots.iter().filter_map(|s| s.running.clone()).collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Model> {
        let model: Model = serde_json::from_str(text).map_err(|e| Error::parse("model", e.to_string()))?;
        let shapes = model.config.shapes()?;
        if shapes != model.shapes || model.slots.len() != model.config.layers.len() {
            return Err(Error::parse("model", "layer shapes do not match the configuration"));
        }
        let fresh = Model::new(model.config.clone(), 0)?;
        let same = fresh.params.len() == model.params.len()
            && fresh.params.iter().zip(&model.params).all(|(a, b)| a.value.len() == b.value.len() && a.kind == b.kind);
        if !same {
            return Err(Error::parse("model", "parameter shapes do not match the configuration"));
        }
        Ok(model)
    }
}

fn batch_moments(x: &Tensor) -> (Vec<f64>, Vec<f64>) {
    let m = (x.n * x.l) as f64;
    let mut mean = vec![0.0; x.c];
    let mut var = vec![0.0; x.c];
    for n in 0..x.n {
        for c in 0..x.c {
            mean[c] += x.data[x.at(n, c, 0)..][..x.l].iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|v| *v /= m);
    for n in 0..x.n {
        for c in 0..x.c {
            var[c] += x.data[x.at(n, c, 0)..][..x.l].iter().map(|v| (v - mean[c]) * (v - mean[c])).sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= m);
    (mean, var)
}

fn segment(act: Act, z: f64, w: f64) -> i64 {
    match act {
        Act::Identity => 0,
        Act::Relu => i64::from(z > 0.0),
        _ if z < 0.0 => -1,
        Act::Euaf => z.floor() as i64,
        Act::Peuaf => (w * z).floor() as i64,
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Mean cross-entropy of softmax(logits) and its gradient in the logits.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    if labels.len() != logits.n {
        return Err(Error::DimensionMismatch { expected: logits.n, got: labels.len() });
    }
    let k = logits.c;
    let mut grad = Tensor::zeros(logits.n, k, 1);
    let mut loss = 0.0;
    let inv = 1.0 / logits.n as f64;
    for (n, &y) in labels.iter().enumerate() {
        if y >= k {
            return Err(Error::Domain(format!("label {y} outside {k} classes")));
        }
        let z = &logits.data[n * k..][..k];
        let p = softmax(z);
        loss -= p[y].ln();
        for j in 0..k {
            grad.data[n * k + j] = (p[j] - if j == y { 1.0 } else { 0.0 }) * inv;
        }
    }
    Ok((loss * inv, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_follow_the_schedule() {
        let cfg = ModelConfig::baseline_b(64, 3, Act::Peuaf);
        let s = cfg.shapes().unwrap();
        assert_eq!(s[0], (16, 63));
        assert_eq!(s[2], (16, 62));
        assert_eq!(s[5], (16, 60));
        assert_eq!(s[6], (960, 1));
        assert_eq!(*s.last().unwrap(), (3, 1));
        let a = ModelConfig::baseline_a(64, 4, Act::Relu).shapes().unwrap();
        assert_eq!(*a.last().unwrap(), (4, 1));
        let mut bad = cfg.clone();
        bad.layers.pop();
        assert!(bad.shapes().is_err());
    }

    #[test]
    fn zero_weights_give_uniform_loss() {
        let cfg = ModelConfig { input_len: 8, layers: vec![LayerSpec::Flatten, LayerSpec::Output { classes: 4 }] };
        let mut m = Model::new(cfg, 1).unwrap();
        m.params.iter_mut().for_each(|p| p.value.iter_mut().for_each(|v| *v = 0.0));
        let x = Tensor { n: 2, c: 1, l: 8, data: (0..16).map(|i| i as f64).collect() };
        let cache = m.forward_train(&x).unwrap();
        let (loss, _) = cross_entropy(&cache.logits, &[0, 3]).unwrap();
        assert!((loss - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn mixing_last_block() {
        let mut cfg = ModelConfig::baseline_a(64, 3, Act::Relu);
        Mixing::LastBlock.apply(&mut cfg.layers, Act::Relu);
        let acts: Vec<Act> = cfg.layers.iter().filter_map(LayerSpec::act).collect();
        assert_eq!(acts, vec![Act::Relu, Act::Relu, Act::Relu, Act::Relu, Act::Peuaf, Act::Peuaf]);
        Mixing::None.apply(&mut cfg.layers, Act::Euaf);
        assert!(cfg.layers.iter().filter_map(LayerSpec::act).all(|a| a == Act::Euaf));
    }

    #[test]
    fn tokens_round_trip() {
        for spec in ModelConfig::baseline_a(64, 3, Act::Peuaf).layers {
            assert_eq!(LayerSpec::parse_token(&spec.to_token()).unwrap(), spec);
        }
        assert!(LayerSpec::parse_token("conv:3").is_err());
    }

    #[test]
    fn json_round_trip() {
        let m = Model::new(ModelConfig::baseline_b(16, 2, Act::Peuaf), 3).unwrap();
        assert_eq!(Model::from_json(&m.to_json()).unwrap(), m);
    }
}
