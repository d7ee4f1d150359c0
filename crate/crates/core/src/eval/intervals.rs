use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Empirical coverage and relative width of `[lower, upper]` intervals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalStats {
    pub n: usize,
    pub coverage: f64,
    /// Mean of `(upper − lower) / median` over records with positive median.
    pub width_mean: f64,
    pub width_std: f64,
    /// Records left out of the width statistics for a non-positive median.
    pub excluded: usize,
}

pub fn interval_stats(lower: &[f64], median: &[f64], upper: &[f64], obs: &[f64]) -> Result<IntervalStats> {
    let n = obs.len();
    if n == 0 {
        return Err(CoreError::Data("no records for interval statistics".into()));
    }
    if lower.len() != n || median.len() != n || upper.len() != n {
        return Err(CoreError::Data("interval series lengths differ".into()));
    }
    let covered = (0..n).filter(|&i| lower[i] <= obs[i] && obs[i] <= upper[i]).count();
    let widths: Vec<f64> = (0..n)
        .filter(|&i| median[i] > 0.0)
        .map(|i| (upper[i] - lower[i]) / median[i])
        .collect();
    let (width_mean, width_std) = if widths.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        let m = widths.iter().sum::<f64>() / widths.len() as f64;
        let v = widths.iter().map(|w| (w - m) * (w - m)).sum::<f64>() / widths.len() as f64;
        (m, v.sqrt())
    };
    Ok(IntervalStats {
        n,
        coverage: covered as f64 / n as f64,
        width_mean,
        width_std,
        excluded: n - widths.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_exact_intervals() {
        let y = [1.0, 2.0, 3.0];
        let s = interval_stats(&y, &y, &y, &y).unwrap();
        assert_eq!((s.coverage, s.width_mean, s.excluded), (1.0, 0.0, 0));
    }

    #[test]
    fn truth_above_upper() {
        let s = interval_stats(&[0.0, 1.0], &[1.0, 2.0], &[2.0, 3.0], &[5.0, 9.0]).unwrap();
        assert_eq!(s.coverage, 0.0);
        assert!((s.width_mean - 1.5).abs() < 1e-12);
    }

    #[test]
    fn zero_median_excluded() {
        let s = interval_stats(&[-1.0, 1.0], &[0.0, 2.0], &[1.0, 3.0], &[0.0, 2.0]).unwrap();
        assert_eq!(s.excluded, 1);
        assert_eq!(s.width_mean, 1.0);
    }
}
