//! Strictly layered feedforward networks with per-neuron activation tags.
//!
//! Every layer is an affine map followed by a tag per output neuron. The final
//! layer is the output map and carries only `Identity` tags, so a network of
//! depth `L` has `L + 1` layers.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::activations::{Activation, ActivationKind};
use crate::error::{Error, Result};
use crate::hexfloat;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Tag {
    Identity,
    Act(Activation),
}

impl Tag {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Tag::Identity => x,
            Tag::Act(a) => a.apply(x),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
    tags: Vec<Tag>,
}

impl Layer {
    pub fn new(weights: Vec<Vec<f64>>, bias: Vec<f64>, tags: Vec<Tag>) -> Result<Self> {
        let rows = weights.len();
        if rows == 0 {
            return Err(Error::config("layer must have at least one neuron"));
        }
        if bias.len() != rows {
            return Err(Error::DimensionMismatch { expected: rows, got: bias.len() });
        }
        if tags.len() != rows {
            return Err(Error::DimensionMismatch { expected: rows, got: tags.len() });
        }
        let cols = weights[0].len();
        if let Some(bad) = weights.iter().find(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch { expected: cols, got: bad.len() });
        }
        Ok(Layer { weights, bias, tags })
    }

    /// Affine layer with identity tags.
    pub fn affine(weights: Vec<Vec<f64>>, bias: Vec<f64>) -> Result<Self> {
        let n = weights.len();
        Layer::new(weights, bias, vec![Tag::Identity; n])
    }

    pub fn identity(n: usize) -> Self {
        Layer {
            weights: identity_matrix(n),
            bias: vec![0.0; n],
            tags: vec![Tag::Identity; n],
        }
    }

    pub fn rows(&self) -> usize {
        self.weights.len()
    }

    pub fn cols(&self) -> usize {
        self.weights[0].len()
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn tags(&self) -> &[Tag] {
        &self.tags
    }

    fn is_affine(&self) -> bool {
        self.tags.iter().all(|t| *t == Tag::Identity)
    }

    #[inline]
    fn apply(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for ((row, &b), &tag) in self.weights.iter().zip(&self.bias).zip(&self.tags) {
            let mut acc = 0.0;
            for (w, x) in row.iter().zip(input) {
                acc += w * x;
            }
            out.push(tag.apply(acc + b));
        }
    }
}

fn identity_matrix(n: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let cols = b[0].len();
    a.iter()
        .map(|row| {
            (0..cols)
                .map(|c| {
                    let mut acc = 0.0;
                    for (k, &x) in row.iter().enumerate() {
                        acc += x * b[k][c];
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

fn matvec(a: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    a.iter()
        .map(|row| {
            let mut acc = 0.0;
            for (x, y) in row.iter().zip(v) {
                acc += x * y;
            }
            acc
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_dim: usize,
    layers: Vec<Layer>,
}

impl Network {
    pub fn new(input_dim: usize, layers: Vec<Layer>) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::config("input dimension must be positive"));
        }
        let Some(last) = layers.last() else {
            return Err(Error::config("network needs an output layer"));
        };
        if !last.is_affine() {
            return Err(Error::config("output layer must carry identity tags"));
        }
        let mut width = input_dim;
        for layer in &layers {
            if layer.cols() != width {
                return Err(Error::DimensionMismatch { expected: width, got: layer.cols() });
            }
            width = layer.rows();
        }
        Ok(Network { input_dim, layers })
    }

    pub fn identity(dim: usize) -> Self {
        Network { input_dim: dim, layers: vec![Layer::identity(dim)] }
    }

    /// Pure affine map `x -> W x + b`.
    pub fn affine(weights: Vec<Vec<f64>>, bias: Vec<f64>) -> Result<Self> {
        let input_dim = weights.first().map_or(0, |r| r.len());
        Network::new(input_dim, vec![Layer::affine(weights, bias)?])
    }

    /// Scalar network: each hidden stage is one neuron `tag(w * h + b)`, then `w_out * h + b_out`.
    pub fn scalar_chain(hidden: &[(f64, f64, Tag)], output: (f64, f64)) -> Self {
        let mut layers: Vec<Layer> = hidden
            .iter()
            .map(|&(w, b, t)| Layer { weights: vec![vec![w]], bias: vec![b], tags: vec![t] })
            .collect();
        layers.push(Layer {
            weights: vec![vec![output.0]],
            bias: vec![output.1],
            tags: vec![Tag::Identity],
        });
        Network { input_dim: 1, layers }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::rows)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Number of hidden layers.
    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    /// Largest hidden layer; the output size for a purely affine network.
    pub fn width(&self) -> usize {
        self.layers[..self.depth()]
            .iter()
            .map(Layer::rows)
            .max()
            .unwrap_or_else(|| self.output_dim())
    }

    pub fn neuron_count(&self) -> usize {
        self.layers[..self.depth()].iter().map(Layer::rows).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch { expected: self.input_dim, got: x.len() });
        }
        Ok(self.forward_unchecked(x))
    }

    fn forward_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            layer.apply(&cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// First output for a scalar input. Panics if the network is not 1-input.
    pub fn eval_scalar(&self, x: f64) -> f64 {
        assert_eq!(self.input_dim, 1, "eval_scalar on a {}-input network", self.input_dim);
        self.forward_unchecked(&[x])[0]
    }

    /// `outer(inner(x))`. The output map of `inner` is folded into the first layer
    /// of `outer`, so the depth of the result is the sum of the depths.
    pub fn compose(outer: &Network, inner: &Network) -> Result<Network> {
        if inner.output_dim() != outer.input_dim {
            return Err(Error::DimensionMismatch {
                expected: outer.input_dim,
                got: inner.output_dim(),
            });
        }
        let (inner_out, inner_hidden) = inner.layers.split_last().expect("non-empty");
        let first = &outer.layers[0];
        let weights = matmul(&first.weights, &inner_out.weights);
        let bias = matvec(&first.weights, &inner_out.bias)
            .into_iter()
            .zip(&first.bias)
            .map(|(x, b)| x + b)
            .collect();
        let mut layers = inner_hidden.to_vec();
        layers.push(Layer { weights, bias, tags: first.tags.clone() });
        layers.extend(outer.layers[1..].iter().cloned());
        Network::new(inner.input_dim, layers)
    }

    /// Runs the networks side by side on the same input and concatenates their outputs.
    /// Shallower networks are padded with identity layers.
    pub fn parallel(nets: &[Network]) -> Result<Network> {
        let Some(first) = nets.first() else {
            return Err(Error::config("parallel needs at least one network"));
        };
        let d = first.input_dim;
        if let Some(bad) = nets.iter().find(|n| n.input_dim != d) {
            return Err(Error::DimensionMismatch { expected: d, got: bad.input_dim });
        }
        let depth = nets.iter().map(Network::depth).max().unwrap_or(0);
        let padded: Vec<Network> = nets.iter().map(|n| n.padded(depth)).collect();
        let mut layers = Vec::with_capacity(depth + 1);
        for l in 0..=depth {
            let rows: usize = padded.iter().map(|n| n.layers[l].rows()).sum();
            let cols: usize = if l == 0 {
                d
            } else {
                padded.iter().map(|n| n.layers[l].cols()).sum()
            };
            let mut weights = Vec::with_capacity(rows);
            let mut bias = Vec::with_capacity(rows);
            let mut tags = Vec::with_capacity(rows);
            let mut offset = 0;
            for n in &padded {
                let layer = &n.layers[l];
                for (r, row) in layer.weights.iter().enumerate() {
                    if l == 0 {
                        weights.push(row.clone());
                    } else {
                        let mut full = vec![0.0; cols];
                        full[offset..offset + row.len()].copy_from_slice(row);
                        weights.push(full);
                    }
                    bias.push(layer.bias[r]);
                    tags.push(layer.tags[r]);
                }
                if l > 0 {
                    offset += layer.cols();
                }
            }
            layers.push(Layer { weights, bias, tags });
        }
        Network::new(d, layers)
    }

    fn padded(&self, depth: usize) -> Network {
        if self.depth() >= depth {
            return self.clone();
        }
        let n = self.output_dim();
        let mut layers = self.layers.clone();
        while layers.len() < depth + 1 {
            layers.push(Layer::identity(n));
        }
        Network { input_dim: self.input_dim, layers }
    }

    /// Same architecture, output identically zero.
    pub fn silenced(&self) -> Network {
        let mut out = self.clone();
        let last = out.layers.last_mut().expect("non-empty");
        for row in &mut last.weights {
            row.iter_mut().for_each(|w| *w = 0.0);
        }
        last.bias.iter_mut().for_each(|b| *b = 0.0);
        out
    }

    /// `x -> net(A x + c)`; `A` is `input_dim x d'`.
    pub fn affine_pre(&self, a: &[Vec<f64>], c: &[f64]) -> Result<Network> {
        if a.len() != self.input_dim || c.len() != self.input_dim {
            return Err(Error::DimensionMismatch { expected: self.input_dim, got: a.len() });
        }
        let inner = Network::affine(a.to_vec(), c.to_vec())?;
        Network::compose(self, &inner)
    }

    /// `x -> A net(x) + c`; `A` is `p x output_dim`.
    pub fn affine_post(&self, a: &[Vec<f64>], c: &[f64]) -> Result<Network> {
        let outer = Network::affine(a.to_vec(), c.to_vec())?;
        Network::compose(&outer, self)
    }

    /// Convenience for scalar nets: `x -> net(scale * x + shift)`.
    pub fn scalar_pre(&self, scale: f64, shift: f64) -> Result<Network> {
        self.affine_pre(&[vec![scale]], &[shift])
    }

    /// Convenience for scalar nets: `x -> scale * net(x) + shift`.
    pub fn scalar_post(&self, scale: f64, shift: f64) -> Result<Network> {
        self.affine_post(&[vec![scale]], &[shift])
    }

    pub fn save(&self, path: impl AsRef<Path>, encoding: FloatEncoding) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json(encoding)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Network> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Network::from_json(&text)
    }

    pub fn to_json(&self, encoding: FloatEncoding) -> String {
        let num = |x: f64| encode_float(x, encoding);
        let file = NetworkFile {
            format: FORMAT_NAME.into(),
            version: FORMAT_VERSION,
            float_encoding: encoding,
            input_dim: self.input_dim,
            layers: self
                .layers
                .iter()
                .map(|l| LayerFile {
                    rows: l.rows(),
                    cols: l.cols(),
                    weights: l.weights.iter().flatten().map(|&x| num(x)).collect(),
                    bias: l.bias.iter().map(|&x| num(x)).collect(),
                    tags: l.tags.iter().map(|&t| encode_tag(t, encoding)).collect(),
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("network serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Network> {
        let file: NetworkFile = serde_json::from_str(text).map_err(|e| {
            Error::parse(format!("line {} column {}", e.line(), e.column()), e.to_string())
        })?;
        if file.format != FORMAT_NAME {
            return Err(Error::parse("field `format`", format!("unexpected format {:?}", file.format)));
        }
        if file.version != FORMAT_VERSION {
            return Err(Error::parse("field `version`", format!("unsupported version {}", file.version)));
        }
        let mut layers = Vec::with_capacity(file.layers.len());
        let mut width = file.input_dim;
        for (i, lf) in file.layers.iter().enumerate() {
            let ctx = |field: &str| format!("layers[{i}].{field}");
            if lf.cols != width {
                return Err(Error::parse(
                    ctx("cols"),
                    format!("expected {width} columns to match the previous layer, found {}", lf.cols),
                ));
            }
            if lf.weights.len() != lf.rows * lf.cols {
                return Err(Error::parse(
                    ctx("weights"),
                    format!("expected {} entries, found {}", lf.rows * lf.cols, lf.weights.len()),
                ));
            }
            if lf.bias.len() != lf.rows {
                return Err(Error::parse(ctx("bias"), format!("expected {} entries", lf.rows)));
            }
            if lf.tags.len() != lf.rows {
                return Err(Error::parse(ctx("tags"), format!("expected {} entries", lf.rows)));
            }
            let flat = lf
                .weights
                .iter()
                .enumerate()
                .map(|(k, v)| decode_float(v).ok_or_else(|| Error::parse(format!("{}[{k}]", ctx("weights")), "not a number")))
                .collect::<Result<Vec<f64>>>()?;
            let weights = flat.chunks(lf.cols.max(1)).map(<[f64]>::to_vec).collect();
            let bias = lf
                .bias
                .iter()
                .enumerate()
                .map(|(k, v)| decode_float(v).ok_or_else(|| Error::parse(format!("{}[{k}]", ctx("bias")), "not a number")))
                .collect::<Result<Vec<f64>>>()?;
            let tags = lf
                .tags
                .iter()
                .enumerate()
                .map(|(k, v)| decode_tag(v).ok_or_else(|| Error::parse(format!("{}[{k}]", ctx("tags")), format!("unknown tag {v}"))))
                .collect::<Result<Vec<Tag>>>()?;
            layers.push(Layer::new(weights, bias, tags).map_err(|e| Error::parse(format!("layers[{i}]"), e.to_string()))?);
            width = lf.rows;
        }
        Network::new(file.input_dim, layers).map_err(|e| Error::parse("network", e.to_string()))
    }

    /// Architecture summary used in reports.
    pub fn architecture(&self) -> Architecture {
        Architecture {
            width: self.width(),
            depth: self.depth(),
            neurons: self.neuron_count(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub width: usize,
    pub depth: usize,
    pub neurons: usize,
}

const FORMAT_NAME: &str = "superexpressive-network";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FloatEncoding {
    /// Shortest decimal that round-trips.
    #[default]
    Decimal,
    /// Hexadecimal float literals.
    Hex,
}

#[derive(Serialize, Deserialize)]
struct NetworkFile {
    format: String,
    version: u32,
    float_encoding: FloatEncoding,
    input_dim: usize,
    layers: Vec<LayerFile>,
}

#[derive(Serialize, Deserialize)]
struct LayerFile {
    rows: usize,
    cols: usize,
    weights: Vec<Value>,
    bias: Vec<Value>,
    tags: Vec<Value>,
}

fn encode_float(x: f64, encoding: FloatEncoding) -> Value {
    match encoding {
        FloatEncoding::Decimal if x.is_finite() => Value::from(x),
        _ => Value::String(hexfloat::format(x)),
    }
}

fn decode_float(v: &Value) -> Option<f64> {
    match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => hexfloat::parse(s),
        _ => None,
    }
}

fn encode_tag(tag: Tag, encoding: FloatEncoding) -> Value {
    match tag {
        Tag::Identity => Value::from("identity"),
        Tag::Act(Activation::Peuaf { w }) => {
            let mut m = serde_json::Map::new();
            m.insert("peuaf".into(), encode_float(w, encoding));
            Value::Object(m)
        }
        Tag::Act(a) => Value::from(a.kind().name()),
    }
}

fn decode_tag(v: &Value) -> Option<Tag> {
    match v {
        Value::String(s) if s == "identity" => Some(Tag::Identity),
        Value::String(s) => match ActivationKind::parse(s)? {
            ActivationKind::Euaf => Some(Tag::Act(Activation::Euaf)),
            ActivationKind::Peuaf => Some(Tag::Act(Activation::Peuaf { w: 1.0 })),
            ActivationKind::Rho1 => Some(Tag::Act(Activation::Rho1)),
            ActivationKind::Rho2 => Some(Tag::Act(Activation::Rho2)),
            ActivationKind::Rho3 => Some(Tag::Act(Activation::Rho3)),
        },
        Value::Object(m) => {
            let w = decode_float(m.get("peuaf")?)?;
            Some(Tag::Act(Activation::Peuaf { w }))
        }
        _ => None,
    }
}

/// Outcome summary of a constructive build.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildReport {
    pub activation: ActivationKind,
    pub input_dim: usize,
    pub width: usize,
    pub depth: usize,
    pub neuron_count: usize,
    /// Number of assembled sub-networks (1 for univariate half builds).
    pub subnetworks: usize,
    /// Grid-based estimate of the sup error; never a certified bound.
    pub sup_error_estimate: f64,
    pub grid_size: usize,
    pub k: usize,
    pub delta: f64,
    pub search: SearchStats,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchStats {
    pub w_grid_evaluations: u64,
    pub lattice_trials: u64,
    pub restarts: u64,
    /// Wall-clock seconds; kept out of the CSV so reruns are byte-identical.
    pub elapsed_secs: f64,
}

impl SearchStats {
    pub fn absorb(&mut self, other: &SearchStats) {
        self.w_grid_evaluations += other.w_grid_evaluations;
        self.lattice_trials += other.lattice_trials;
        self.restarts += other.restarts;
    }
}

impl BuildReport {
    pub fn new(activation: ActivationKind, net: &Network) -> Self {
        BuildReport {
            activation,
            input_dim: net.input_dim(),
            width: net.width(),
            depth: net.depth(),
            neuron_count: net.neuron_count(),
            subnetworks: 1,
            sup_error_estimate: 0.0,
            grid_size: 0,
            k: 0,
            delta: 0.0,
            search: SearchStats::default(),
        }
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            width: self.width,
            depth: self.depth,
            neurons: self.neuron_count,
        }
    }

    pub const CSV_HEADER: &'static str = "activation,input_dim,width,depth,neuron_count,subnetworks,sup_error_estimate,grid_size,k,delta,w_grid_evaluations,lattice_trials,restarts";

    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        s.push_str(Self::CSV_HEADER);
        s.push('\n');
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{:e},{},{},{:e},{},{},{}",
            self.activation,
            self.input_dim,
            self.width,
            self.depth,
            self.neuron_count,
            self.subnetworks,
            self.sup_error_estimate,
            self.grid_size,
            self.k,
            self.delta,
            self.search.w_grid_evaluations,
            self.search.lattice_trials,
            self.search.restarts
        );
        s
    }
}
