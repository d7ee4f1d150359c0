use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// The four CEOS error metrics over record-level values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    pub rmsd: f64,
    pub mean_bias: f64,
    pub mean_abs_bias: f64,
    /// Percent of the observed mean.
    pub relative_mean_bias: f64,
}

pub fn compute_metrics(pred: &[f64], obs: &[f64]) -> Result<Metrics> {
    if pred.len() != obs.len() {
        return Err(CoreError::Data(format!(
            "{} predictions for {} observations",
            pred.len(),
            obs.len()
        )));
    }
    if pred.is_empty() {
        return Err(CoreError::Data("no records to score".into()));
    }
    let n = pred.len() as f64;
    let (mut se, mut b, mut ab, mut sy) = (0.0, 0.0, 0.0, 0.0);
    for (&p, &y) in pred.iter().zip(obs) {
        let d = p - y;
        se += d * d;
        b += d;
        ab += d.abs();
        sy += y;
    }
    let mean_y = sy / n;
    if mean_y == 0.0 {
        return Err(CoreError::Data("observed mean is zero; relative bias undefined".into()));
    }
    let mean_bias = b / n;
    Ok(Metrics {
        n: pred.len(),
        rmsd: (se / n).sqrt(),
        mean_bias,
        mean_abs_bias: ab / n,
        relative_mean_bias: 100.0 * mean_bias / mean_y,
    })
}
