//! Window-occlusion sensitivity for trained signal classifiers.

use super::model::{Model, Tensor};
use crate::error::{Error, Result};

/// Start offsets of every window of `window` samples taken every `stride`
/// samples inside a signal of `length` samples.
pub fn window_starts(length: usize, window: usize, stride: usize) -> Result<Vec<usize>> {
    if window == 0 || stride == 0 {
        return Err(Error::config("occlusion window and stride must be positive"));
    }
    if window > length {
        return Err(Error::config(format!("occlusion window {window} exceeds signal length {length}")));
    }
    Ok((0..=length - window).step_by(stride).collect())
}

/// Drop in the true-class probability when each window is replaced by zeros.
/// Entry `k` belongs to the window starting at `window_starts(..)[k]`.
pub fn occlusion_map(model: &Model, signal: &[f64], label: usize, window: usize, stride: usize) -> Result<Vec<f64>> {
    if signal.len() != model.input_len() {
        return Err(Error::DimensionMismatch { expected: model.input_len(), got: signal.len() });
    }
    if label >= model.classes() {
        return Err(Error::Domain(format!("label {label} outside 0..{}", model.classes())));
    }
    let starts = window_starts(signal.len(), window, stride)?;
    let mut rows: Vec<Vec<f64>> = vec![signal.to_vec()];
    for &s in &starts {
        let mut occluded = signal.to_vec();
        occluded[s..s + window].iter_mut().for_each(|v| *v = 0.0);
        rows.push(occluded);
    }
    let refs: Vec<&[f64]> = rows.iter().map(Vec::as_slice).collect();
    let probs = model.predict_proba(&Tensor::from_signals(&refs)?)?;
    let base = probs[0][label];
    Ok(probs[1..].iter().map(|p| base - p[label]).collect())
}

/// Index of the window with the largest drop; the first one wins ties.
pub fn most_sensitive(drops: &[f64]) -> Option<usize> {
    (0..drops.len()).fold(None, |best, k| match best {
        Some(b) if drops[b] >= drops[k] => Some(b),
        _ => Some(k),
    })
}
