use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureBin {
    /// Mean stems density of the bin's records.
    pub center: f64,
    pub lo: f64,
    pub hi: f64,
    pub mean_abs_error: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureCurve {
    pub bins: Vec<StructureBin>,
    /// `(max bin mean − min bin mean) / overall mean`; 0 when every error is 0.
    pub flatness: f64,
}

/// Equal-count bins of absolute error along the stems gradient.
pub fn structure_bias_curve(abs_errors: &[f64], stems: &[f64], n_bins: usize) -> Result<StructureCurve> {
    let n = abs_errors.len();
    if stems.len() != n {
        return Err(CoreError::Data("error and stems series lengths differ".into()));
    }
    if n_bins < 3 {
        return Err(CoreError::Config("structure curve needs at least 3 bins".into()));
    }
    if n < n_bins {
        return Err(CoreError::Data(format!("{n} records for {n_bins} bins")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| stems[a].total_cmp(&stems[b]).then(a.cmp(&b)));
    let bins: Vec<StructureBin> = (0..n_bins)
        .map(|i| {
            let idx = &order[i * n / n_bins..(i + 1) * n / n_bins];
            let c = idx.len() as f64;
            StructureBin {
                center: idx.iter().map(|&j| stems[j]).sum::<f64>() / c,
                lo: stems[idx[0]],
                hi: stems[idx[idx.len() - 1]],
                mean_abs_error: idx.iter().map(|&j| abs_errors[j]).sum::<f64>() / c,
                count: idx.len(),
            }
        })
        .collect();
    let overall = abs_errors.iter().sum::<f64>() / n as f64;
    let (lo, hi) = bins.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), b| {
        (l.min(b.mean_abs_error), h.max(b.mean_abs_error))
    });
    let flatness = if overall == 0.0 { 0.0 } else { (hi - lo) / overall };
    Ok(StructureCurve { bins, flatness })
}
