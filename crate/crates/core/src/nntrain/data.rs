//! Signal datasets: seeded synthetic generators and CSV ingestion.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub signals: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
    pub sample_rate: f64,
}

impl Dataset {
    pub fn new(signals: Vec<Vec<f64>>, labels: Vec<usize>, class_names: Vec<String>) -> Result<Self> {
        let ds = Dataset { signals, labels, class_names, sample_rate: 1.0 };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.signals.is_empty() {
            return Err(Error::config("dataset is empty"));
        }
        if self.signals.len() != self.labels.len() {
            return Err(Error::DimensionMismatch { expected: self.signals.len(), got: self.labels.len() });
        }
        let len = self.signal_len();
        if let Some(i) = self.signals.iter().position(|s| s.len() != len) {
            return Err(Error::Domain(format!("signal {i} has length {}, expected {len}", self.signals[i].len())));
        }
        if let Some(i) = self.labels.iter().position(|&y| y >= self.class_names.len()) {
            return Err(Error::Domain(format!(
                "label {} of sample {i} outside {} classes",
                self.labels[i],
                self.class_names.len()
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.signals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signals.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn signal_len(&self) -> usize {
        self.signals.first().map_or(0, Vec::len)
    }

    /// Samples per class.
    pub fn histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.classes()];
        for &y in &self.labels {
            h[y] += 1;
        }
        h
    }

    fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            signals: idx.iter().map(|&i| self.signals[i].clone()).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            class_names: self.class_names.clone(),
            sample_rate: self.sample_rate,
        }
    }

    /// Stratified seeded split into `(train, test)`; every class keeps at least one
    /// training sample.
    pub fn split(&self, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::config(format!("test fraction must lie in [0, 1), got {test_fraction}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut train = Vec::new();
        let mut test = Vec::new();
        for c in 0..self.classes() {
            let mut members: Vec<usize> = (0..self.len()).filter(|&i| self.labels[i] == c).collect();
            if members.is_empty() {
                return Err(Error::Domain(format!("class '{}' has no samples", self.class_names[c])));
            }
            members.shuffle(&mut rng);
            let n_test = ((members.len() as f64 * test_fraction).round() as usize).min(members.len() - 1);
            test.extend_from_slice(&members[..n_test]);
            train.extend_from_slice(&members[n_test..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        Ok((self.subset(&train), self.subset(&test)))
    }

    /// One row per signal: the samples, then the integer label.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for (sig, y) in self.signals.iter().zip(&self.labels) {
            for v in sig {
                let _ = write!(s, "{v},");
            }
            let _ = writeln!(s, "{y}");
        }
        s
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Constraints checked by [`ingest_csv`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CsvSchema {
    /// Required signal length.
    pub length: Option<usize>,
    /// Number of classes; labels must lie below it. Inferred when absent.
    pub classes: Option<usize>,
}

pub fn ingest_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv(&text, schema).map_err(|e| match e {
        Error::Parse { context, message } => Error::Parse { context: format!("{}: {context}", path.display()), message },
        other => other,
    })
}

pub fn parse_csv(text: &str, schema: &CsvSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut signals = Vec::new();
    let mut labels = Vec::new();
    let mut len = schema.length;
    for (row, rec) in reader.records().enumerate() {
        let ctx = || format!("row {}", row + 1);
        let rec = rec.map_err(|e| Error::parse(ctx(), e.to_string()))?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if rec.len() < 2 {
            return Err(Error::parse(ctx(), "need at least one sample and a label"));
        }
        let n = rec.len() - 1;
        match len {
            Some(l) if l != n => {
                return Err(Error::parse(ctx(), format!("ragged row: {n} samples, expected {l}")));
            }
            _ => len = Some(n),
        }
        let mut sig = Vec::with_capacity(n);
        for (col, field) in rec.iter().take(n).enumerate() {
            let v: f64 = field
                .parse()
                .map_err(|_| Error::parse(ctx(), format!("column {}: '{field}' is not a number", col + 1)))?;
            if !v.is_finite() {
                return Err(Error::parse(ctx(), format!("column {}: non-finite value", col + 1)));
            }
            sig.push(v);
        }
        let label: usize = rec[n]
            .parse()
            .map_err(|_| Error::parse(ctx(), format!("label '{}' is not a class index", &rec[n])))?;
        if let Some(k) = schema.classes {
            if label >= k {
                return Err(Error::parse(ctx(), format!("unknown label {label} (expected < {k})")));
            }
        }
        signals.push(sig);
        labels.push(label);
    }
    if signals.is_empty() {
        return Err(Error::parse("dataset", "no rows"));
    }
    let k = schema.classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    let names = (0..k).map(|c| format!("class{c}")).collect();
    Dataset::new(signals, labels, names)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Waveform {
    Sine,
    Triangle,
    Square,
}

impl Waveform {
    pub fn parse(s: &str) -> Option<Waveform> {
        match s {
            "sine" => Some(Waveform::Sine),
            "triangle" => Some(Waveform::Triangle),
            "square" => Some(Waveform::Square),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Waveform::Sine => "sine",
            Waveform::Triangle => "triangle",
            Waveform::Square => "square",
        }
    }

    /// Unit-amplitude wave at `phase` (in cycles).
    pub fn at(self, phase: f64) -> f64 {
        let s = (2.0 * std::f64::consts::PI * phase).sin();
        match self {
            Waveform::Sine => s,
            Waveform::Triangle => {
                let r = phase - phase.floor();
                1.0 - 4.0 * (r - 0.25 - (r - 0.25).round()).abs()
            }
            Waveform::Square => {
                if s >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
        }
    }
}

/// One synthetic class: frequency in cycles per sample, waveform and noise level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignalClass {
    pub frequency: f64,
    pub waveform: Waveform,
    pub noise: f64,
}

impl SignalClass {
    /// `frequency:waveform:noise`, e.g. `0.05:sine:0.3`.
    pub fn parse(s: &str) -> Result<SignalClass> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let bad = |m: &str| Error::parse(format!("class '{s}'"), m);
        if parts.len() != 3 {
            return Err(bad("expected frequency:waveform:noise"));
        }
        let frequency = parts[0].parse().map_err(|_| bad("bad frequency"))?;
        let waveform = Waveform::parse(parts[1]).ok_or_else(|| bad("waveform must be sine, triangle or square"))?;
        let noise = parts[2].parse().map_err(|_| bad("bad noise level"))?;
        Ok(SignalClass { frequency, waveform, noise })
    }

    pub fn to_token(&self) -> String {
        format!("{}:{}:{}", self.frequency, self.waveform.name(), self.noise)
    }
}

fn check_classes(classes: &[SignalClass], n: usize, length: usize) -> Result<()> {
    if classes.is_empty() || n == 0 {
        return Err(Error::config("synthetic dataset would be empty"));
    }
    if length < 64 {
        return Err(Error::config(format!("signal length must be at least 64, got {length}")));
    }
    for c in classes {
        if !(c.frequency > 0.0 && c.frequency < 0.5) {
            return Err(Error::config(format!("frequency {} is not below Nyquist (0.5)", c.frequency)));
        }
        if !(c.noise >= 0.0 && c.noise.is_finite()) {
            return Err(Error::config(format!("noise level must be >= 0, got {}", c.noise)));
        }
    }
    Ok(())
}

fn class_names(classes: &[SignalClass]) -> Vec<String> {
    classes.iter().map(|c| format!("{}@{}", c.waveform.name(), c.frequency)).collect()
}

/// `n` noisy full-length waves per class with random phase, classes interleaved.
pub fn synth_signals(classes: &[SignalClass], n: usize, length: usize, seed: u64) -> Result<Dataset> {
    check_classes(classes, n, length)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut signals = Vec::with_capacity(n * classes.len());
    let mut labels = Vec::with_capacity(n * classes.len());
    for _ in 0..n {
        for (label, c) in classes.iter().enumerate() {
            let phase0: f64 = rng.gen();
            let normal = Normal::new(0.0, c.noise.max(f64::MIN_POSITIVE)).expect("valid sigma");
            let sig = (0..length)
                .map(|t| {
                    let noise = if c.noise > 0.0 { normal.sample(&mut rng) } else { 0.0 };
                    c.waveform.at(phase0 + c.frequency * t as f64) + noise
                })
                .collect();
            signals.push(sig);
            labels.push(label);
        }
    }
    Dataset::new(signals, labels, class_names(classes))
}

/// Signals of background noise holding one burst of the class waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct BurstSet {
    pub data: Dataset,
    /// Half-open sample range `[start, end)` of each burst.
    pub supports: Vec<(usize, usize)>,
}

pub fn synth_bursts(
    classes: &[SignalClass],
    n: usize,
    length: usize,
    burst_len: usize,
    seed: u64,
) -> Result<BurstSet> {
    check_classes(classes, n, length)?;
    if burst_len == 0 || burst_len > length {
        return Err(Error::config(format!("burst length {burst_len} must lie in 1..={length}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut signals = Vec::new();
    let mut labels = Vec::new();
    let mut supports = Vec::new();
    for _ in 0..n {
        for (label, c) in classes.iter().enumerate() {
            let start = rng.gen_range(0..=length - burst_len);
            let phase0: f64 = rng.gen();
            let normal = Normal::new(0.0, c.noise.max(f64::MIN_POSITIVE)).expect("valid sigma");
            let sig = (0..length)
                .map(|t| {
                    let noise = if c.noise > 0.0 { normal.sample(&mut rng) } else { 0.0 };
                    let wave = if (start..start + burst_len).contains(&t) {
                        c.waveform.at(phase0 + c.frequency * t as f64)
                    } else {
                        0.0
                    };
                    wave + noise
                })
                .collect();
            signals.push(sig);
            labels.push(label);
            supports.push((start, start + burst_len));
        }
    }
    Ok(BurstSet { data: Dataset::new(signals, labels, class_names(classes))?, supports })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn classes() -> Vec<SignalClass> {
        vec![
            SignalClass { frequency: 0.05, waveform: Waveform::Sine, noise: 0.0 },
            SignalClass { frequency: 0.2, waveform: Waveform::Square, noise: 0.1 },
        ]
    }

    #[test]
    fn generator_is_seeded() {
        let a = synth_signals(&classes(), 4, 64, 9).unwrap();
        assert_eq!(a, synth_signals(&classes(), 4, 64, 9).unwrap());
        assert_ne!(a, synth_signals(&classes(), 4, 64, 10).unwrap());
        assert_eq!(a.histogram(), vec![4, 4]);
        assert!(synth_signals(&classes(), 0, 64, 9).is_err());
        assert!(synth_signals(&classes(), 2, 32, 9).is_err());
    }

    #[test]
    fn triangle_wave_shape() {
        let w = Waveform::Triangle;
        assert!((w.at(0.0)).abs() < 1e-12);
        assert!((w.at(0.25) - 1.0).abs() < 1e-12);
        assert!((w.at(0.75) + 1.0).abs() < 1e-12);
    }

    #[test]
    fn split_keeps_every_class() {
        let ds = synth_signals(&classes(), 5, 64, 1).unwrap();
        let (tr, te) = ds.split(0.4, 3).unwrap();
        assert_eq!(tr.len() + te.len(), 10);
        assert_eq!(te.histogram(), vec![2, 2]);
        assert!(tr.histogram().iter().all(|&c| c > 0));
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let ds = synth_signals(&classes(), 2, 64, 5).unwrap();
        let back = parse_csv(&ds.to_csv(), &CsvSchema::default()).unwrap();
        assert_eq!(back.signals, ds.signals);
        assert_eq!(back.labels, ds.labels);
        let two = parse_csv("1,2,0\n3,4,1\n", &CsvSchema::default()).unwrap();
        assert_eq!(two.len(), 2);
        let err = parse_csv("1,2,0\n3,1\n", &CsvSchema::default()).unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
        assert!(parse_csv("1,x,0\n", &CsvSchema::default()).is_err());
        assert!(parse_csv("1,2,5\n", &CsvSchema { length: None, classes: Some(2) }).is_err());
    }

    #[test]
    fn bursts_sit_inside_their_support() {
        let set = synth_bursts(&[SignalClass { frequency: 0.1, waveform: Waveform::Sine, noise: 0.0 }], 3, 128, 20, 4)
            .unwrap();
        for (sig, &(a, b)) in set.data.signals.iter().zip(&set.supports) {
            assert!(sig[..a].iter().chain(&sig[b..]).all(|&v| v == 0.0));
            assert!(sig[a..b].iter().any(|&v| v != 0.0));
        }
    }
}
