use serde::Serialize;
use tensorcore::{Array, Graph, NodeId};

use super::quantile::focal_quantile_loss;
use super::regularizers::{adversarial_js_loss, consistency_loss, monotonicity_loss, spatial_loss};
use super::weights::LossWeights;
use crate::error::{CoreError, Result};

/// One prediction head entering the total loss.
pub struct HeadInput<'a> {
    pub name: &'a str,
    /// `[B, K, H, W]` raw quantile outputs.
    pub pred: NodeId,
    /// `[B, H, W]` normalized targets.
    pub target: &'a Array,
    /// `[B, H, W]` with values in {0, 1}.
    pub mask: &'a Array,
    /// Supervised weight (alpha for concepts, beta for the task).
    pub weight: f64,
}

/// Per-head statistics derived while forming the loss.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct BatchStats {
    pub head: String,
    pub mu_y: f64,
    pub sigma_y: f64,
    pub valid_pixels: usize,
    pub focal: f64,
    pub empty_mask: bool,
    /// Prediction range per sample.
    pub r_pred: Vec<f64>,
    pub p_high: Vec<f64>,
    pub p_low: Vec<f64>,
    pub m_mix: Vec<f64>,
    pub adversarial_degenerate: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct LossBreakdown {
    /// Weighted sum of the supervised focal terms.
    pub quantile: f64,
    pub mono: f64,
    pub spatial: f64,
    pub consistency: f64,
    pub adversarial: f64,
    pub total: f64,
    /// Effective (mono, spatial, consistency, adversarial) weights.
    pub lambdas: [f64; 4],
    pub heads: Vec<BatchStats>,
}

impl LossBreakdown {
    pub fn recompute_total(&self) -> f64 {
        let [a, b, c, d] = self.lambdas;
        self.quantile + a * self.mono + b * self.spatial + c * self.consistency + d * self.adversarial
    }
}

fn pred_ranges(p: &Array, eps: f64) -> Vec<f64> {
    let s = p.shape();
    let (b, k, hw) = (s[0], s[1], s[2] * s[3]);
    (0..b)
        .map(|i| {
            let base = i * k * hw;
            let top = &p.data()[base + (k - 1) * hw..base + k * hw];
            let bot = &p.data()[base..base + hw];
            let hi = top.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lo = bot.iter().cloned().fold(f64::INFINITY, f64::min);
            hi - lo + eps
        })
        .collect()
}

/// Builds the weighted total loss over all heads.
///
/// Supervised terms use masked pixels; the dense regularizers are averaged
/// over heads, the distribution-matching term over heads where it is
/// defined.
pub fn total_loss(
    g: &mut Graph,
    heads: &[HeadInput<'_>],
    weights: &LossWeights,
    quantiles: &[f64],
) -> Result<(NodeId, LossBreakdown)> {
    if heads.is_empty() || heads.iter().all(|h| h.mask.data().iter().all(|&m| m <= 0.5)) {
        return Err(CoreError::Data("every supervision mask in the batch is empty".into()));
    }
    let eps = weights.epsilon;
    let mut sup: Option<NodeId> = None;
    let mut mono = Vec::new();
    let mut spatial = Vec::new();
    let mut cons = Vec::new();
    let mut adv = Vec::new();
    let mut stats = Vec::new();
    let mut quantile = 0.0;
    for h in heads {
        let f = focal_quantile_loss(g, h.pred, h.target, h.mask, quantiles, weights.gamma, eps)?;
        let fv = g.value(f.loss).item()?;
        if h.weight > 0.0 && !f.empty {
            let t = g.scale(f.loss, h.weight)?;
            sup = Some(match sup {
                Some(s) => g.add(s, t)?,
                None => t,
            });
            quantile += h.weight * fv;
        }
        let k = g.shape(h.pred)[1];
        mono.push(monotonicity_loss(g, h.pred)?);
        let med = g.slice(h.pred, 1, k / 2, k / 2 + 1)?;
        spatial.push(spatial_loss(g, med, eps)?);
        cons.push(consistency_loss(g, h.pred, quantiles, eps)?);
        let a = adversarial_js_loss(g, med, h.target, h.mask, weights.bins, eps)?;
        if !a.degenerate {
            adv.push(a.loss);
        }
        stats.push(BatchStats {
            head: h.name.to_string(),
            mu_y: f.stats.mu_y,
            sigma_y: f.stats.sigma_y,
            valid_pixels: f.stats.count,
            focal: fv,
            empty_mask: f.empty,
            r_pred: pred_ranges(g.value(h.pred), eps),
            p_high: a.p_high,
            p_low: a.p_low,
            m_mix: a.m_mix,
            adversarial_degenerate: a.degenerate,
        });
    }
    let mean_of = |g: &mut Graph, xs: &[NodeId]| -> Result<NodeId> {
        if xs.is_empty() {
            return Ok(g.scalar(0.0)?);
        }
        let mut s = xs[0];
        for &x in &xs[1..] {
            s = g.add(s, x)?;
        }
        Ok(g.scale(s, 1.0 / xs.len() as f64)?)
    };
    let terms = [
        mean_of(g, &mono)?,
        mean_of(g, &spatial)?,
        mean_of(g, &cons)?,
        mean_of(g, &adv)?,
    ];
    let lambdas = weights.lambdas();
    let mut total = match sup {
        Some(s) => s,
        None => g.scalar(0.0)?,
    };
    for (t, &l) in terms.iter().zip(&lambdas) {
        if l > 0.0 {
            let w = g.scale(*t, l)?;
            total = g.add(total, w)?;
        }
    }
    let v = |g: &Graph, n: NodeId| g.value(n).item();
    let b = LossBreakdown {
        quantile,
        mono: v(g, terms[0])?,
        spatial: v(g, terms[1])?,
        consistency: v(g, terms[2])?,
        adversarial: v(g, terms[3])?,
        total: v(g, total)?,
        lambdas,
        heads: stats,
    };
    Ok((total, b))
}
