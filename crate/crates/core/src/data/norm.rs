use serde::{Deserialize, Serialize};

use super::record::{Attribute, PatchRecord, INPUT_CHANNELS, N_LABELS};
use crate::error::{CoreError, Result};

/// Per-channel mean and population standard deviation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormStats {
    pub input_mean: Vec<f64>,
    pub input_std: Vec<f64>,
    pub label_mean: [f64; N_LABELS],
    pub label_std: [f64; N_LABELS],
}

/// Mean and population std, rejecting empty or constant input.
pub fn mean_std<I>(values: I, name: &str) -> Result<(f64, f64)>
where
    I: Iterator<Item = f64> + Clone,
{
    let (mut n, mut s) = (0usize, 0.0);
    for v in values.clone() {
        n += 1;
        s += v;
    }
    if n == 0 {
        return Err(CoreError::Data(format!("no values for channel {name}")));
    }
    let m = s / n as f64;
    let var = values.map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
    let sd = var.sqrt();
    if !(sd > 1e-12 * m.abs().max(1.0)) || !sd.is_finite() {
        return Err(CoreError::Data(format!("zero-variance channel {name}")));
    }
    Ok((m, sd))
}

/// Fits statistics on training records. Labels use valid pixels only.
pub fn compute_norm_stats(train: &[&PatchRecord]) -> Result<NormStats> {
    let mut input_mean = Vec::with_capacity(INPUT_CHANNELS);
    let mut input_std = Vec::with_capacity(INPUT_CHANNELS);
    for c in 0..INPUT_CHANNELS {
        let it = train
            .iter()
            .flat_map(move |r| r.input_channel(c).iter().map(|&v| v as f64));
        let (m, s) = mean_std(it, &format!("input {c}"))?;
        input_mean.push(m);
        input_std.push(s);
    }
    let mut label_mean = [0.0; N_LABELS];
    let mut label_std = [0.0; N_LABELS];
    for a in Attribute::ALL {
        let it = train.iter().flat_map(move |r| {
            r.label(a)
                .iter()
                .zip(r.mask(a))
                .filter(|(_, &m)| m)
                .map(|(&v, _)| v as f64)
        });
        let (m, s) = mean_std(it, a.name())?;
        label_mean[a.index()] = m;
        label_std[a.index()] = s;
    }
    Ok(NormStats {
        input_mean,
        input_std,
        label_mean,
        label_std,
    })
}

/// A record mapped to standardized `f64` values.
///
/// Labels outside their mask are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedRecord {
    pub rows: usize,
    pub cols: usize,
    /// `INPUT_CHANNELS * rows * cols`
    pub inputs: Vec<f64>,
    pub labels: [Vec<f64>; N_LABELS],
    pub masks: [Vec<bool>; N_LABELS],
    pub lon: f64,
    pub lat: f64,
}

impl NormStats {
    pub fn validate(&self) -> Result<()> {
        let ok = self.input_mean.len() == INPUT_CHANNELS
            && self.input_std.len() == INPUT_CHANNELS
            && self
                .input_std
                .iter()
                .chain(&self.label_std)
                .all(|&s| s > 0.0 && s.is_finite());
        if ok {
            Ok(())
        } else {
            Err(CoreError::Data("normalization statistics are invalid".into()))
        }
    }

    pub fn normalize_label(&self, a: Attribute, v: f64) -> f64 {
        (v - self.label_mean[a.index()]) / self.label_std[a.index()]
    }

    pub fn denormalize_label(&self, a: Attribute, z: f64) -> f64 {
        z * self.label_std[a.index()] + self.label_mean[a.index()]
    }

    pub fn normalize_input(&self, c: usize, v: f64) -> f64 {
        (v - self.input_mean[c]) / self.input_std[c]
    }

    pub fn denormalize_input(&self, c: usize, z: f64) -> f64 {
        z * self.input_std[c] + self.input_mean[c]
    }

    pub fn apply(&self, r: &PatchRecord) -> NormalizedRecord {
        let n = r.pixels();
        let mut inputs = Vec::with_capacity(INPUT_CHANNELS * n);
        for c in 0..INPUT_CHANNELS {
            inputs.extend(r.input_channel(c).iter().map(|&v| self.normalize_input(c, v as f64)));
        }
        let labels = std::array::from_fn(|i| {
            let a = Attribute::ALL[i];
            r.label(a)
                .iter()
                .zip(r.mask(a))
                .map(|(&v, &m)| if m { self.normalize_label(a, v as f64) } else { 0.0 })
                .collect()
        });
        NormalizedRecord {
            rows: r.rows,
            cols: r.cols,
            inputs,
            labels,
            masks: r.masks.clone(),
            lon: r.lon as f64,
            lat: r.lat as f64,
        }
    }
}

/// Standardizes `record` with `stats`.
pub fn apply_normalization(record: &PatchRecord, stats: &NormStats) -> NormalizedRecord {
    stats.apply(record)
}
