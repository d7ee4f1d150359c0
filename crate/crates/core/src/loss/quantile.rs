use serde::Serialize;
use tensorcore::{Array, Graph, NodeId};

use crate::error::Result;

pub const DEFAULT_QUANTILES: [f64; 5] = [0.1, 0.25, 0.5, 0.75, 0.9];

/// `max(q·u, (q−1)·u)`.
pub fn pinball(u: f64, q: f64) -> f64 {
    (q * u).max((q - 1.0) * u)
}

/// `(|r| + eps)^gamma · (1 + z²)`.
pub fn focal_weight(residual: f64, z: f64, gamma: f64, eps: f64) -> f64 {
    (residual.abs() + eps).powf(gamma) * (1.0 + z * z)
}

/// Masked target statistics of one head in one batch.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TargetStats {
    pub mu_y: f64,
    pub sigma_y: f64,
    pub count: usize,
}

/// Mean and population std over pixels where `mask > 0.5`.
pub fn masked_stats(target: &[f64], mask: &[f64]) -> TargetStats {
    let vals: Vec<f64> = target
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m > 0.5)
        .map(|(&v, _)| v)
        .collect();
    let n = vals.len();
    if n == 0 {
        return TargetStats::default();
    }
    let mu = vals.iter().sum::<f64>() / n as f64;
    let var = vals.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
    TargetStats {
        mu_y: mu,
        sigma_y: var.sqrt(),
        count: n,
    }
}

/// Result of building the focal quantile term.
pub struct FocalTerm {
    pub loss: NodeId,
    pub stats: TargetStats,
    /// Set when the mask was empty and the term is a constant zero.
    pub empty: bool,
}

/// Focal-weighted pinball loss over masked pixels.
///
/// `pred` is `[B, K, H, W]`; `target` and `mask` are `[B, H, W]` arrays with
/// mask values in {0, 1}. The residual of every quantile is `y − ŷ_k`.
pub fn focal_quantile_loss(
    g: &mut Graph,
    pred: NodeId,
    target: &Array,
    mask: &Array,
    quantiles: &[f64],
    gamma: f64,
    eps: f64,
) -> Result<FocalTerm> {
    let shape = g.shape(pred).to_vec();
    let (b, k, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    let stats = masked_stats(target.data(), mask.data());
    if stats.count == 0 {
        return Ok(FocalTerm {
            loss: g.scalar(0.0)?,
            stats,
            empty: true,
        });
    }
    let plane = [b, 1, h, w];
    let zfac: Vec<f64> = target
        .data()
        .iter()
        .map(|&y| {
            let z = (y - stats.mu_y).abs() / (stats.sigma_y + eps);
            1.0 + z * z
        })
        .collect();
    let y = g.constant(target.clone().reshape(&plane)?)?;
    let m = g.constant(mask.clone().reshape(&plane)?)?;
    let zf = g.constant(Array::new(plane.to_vec(), zfac)?)?;
    let q = g.constant(Array::new(vec![1, k, 1, 1], quantiles.to_vec())?)?;
    let qm1 = g.constant(Array::new(
        vec![1, k, 1, 1],
        quantiles.iter().map(|q| q - 1.0).collect(),
    )?)?;
    let u = g.sub(y, pred)?;
    let a = g.mul(u, q)?;
    let c = g.mul(u, qm1)?;
    let rho = g.maximum(a, c)?;
    let au = g.abs(u)?;
    let au = g.offset(au, eps)?;
    let wt = g.powf(au, gamma)?;
    let wt = g.mul(wt, zf)?;
    let l = g.mul(wt, rho)?;
    let l = g.mul(l, m)?;
    let s = g.sum(l)?;
    let loss = g.scale(s, 1.0 / (k * stats.count) as f64)?;
    Ok(FocalTerm {
        loss,
        stats,
        empty: false,
    })
}
