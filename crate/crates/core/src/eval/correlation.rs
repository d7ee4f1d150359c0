use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Series order of the concept correlation matrix.
pub const CORRELATION_SERIES: [&str; 5] = ["cover", "height", "stems", "agbd_pred", "agbd_obs"];

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 3 {
        return Err(CoreError::Data("correlation needs two equal series of at least 3 values".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(CoreError::Data("correlation of a zero-variance series".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix {
    pub series: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl CorrelationMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.series.iter().position(|s| s == a)?;
        let j = self.series.iter().position(|s| s == b)?;
        Some(self.values[i][j])
    }
}

/// Pearson matrix of named record-level series; symmetric with an exact unit
/// diagonal.
pub fn correlation_matrix(names: &[&str], series: &[&[f64]]) -> Result<CorrelationMatrix> {
    if names.len() != series.len() {
        return Err(CoreError::Data("one name per series".into()));
    }
    let k = series.len();
    let mut values = vec![vec![1.0; k]; k];
    for i in 0..k {
        pearson(series[i], series[i])?;
        for j in i + 1..k {
            let r = pearson(series[i], series[j])?;
            values[i][j] = r;
            values[j][i] = r;
        }
    }
    Ok(CorrelationMatrix {
        series: names.iter().map(|s| s.to_string()).collect(),
        values,
    })
}

/// The five-series matrix over concept medians, predicted and observed
/// biomass.
pub fn concept_correlation_matrix(
    cover: &[f64],
    height: &[f64],
    stems: &[f64],
    pred: &[f64],
    obs: &[f64],
) -> Result<CorrelationMatrix> {
    correlation_matrix(&CORRELATION_SERIES, &[cover, height, stems, pred, obs])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_and_antisymmetry() {
        let x = [1.0, 2.0, 4.0, 7.0];
        let nx: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&x, &nx).unwrap() + 1.0).abs() < 1e-15);
        assert!(pearson(&x, &[1.0; 4]).is_err());
        let m = correlation_matrix(&["a", "b"], &[&x, &nx]).unwrap();
        assert_eq!(m.values[0][0], 1.0);
        assert_eq!(m.values[0][1], m.values[1][0]);
        assert_eq!(m.get("b", "a"), Some(m.values[1][0]));
    }
}
