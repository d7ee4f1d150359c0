use tensorcore::{Array, Graph, NodeId};

use crate::error::Result;

/// Mean over adjacent quantile pairs and pixels of `ReLU(ŷ_k − ŷ_{k+1})`.
///
/// `pred` is `[B, K, H, W]` with `K >= 2`.
pub fn monotonicity_loss(g: &mut Graph, pred: NodeId) -> Result<NodeId> {
    let k = g.shape(pred)[1];
    let lower = g.slice(pred, 1, 0, k - 1)?;
    let upper = g.slice(pred, 1, 1, k)?;
    let d = g.sub(lower, upper)?;
    let r = g.relu(d)?;
    Ok(g.mean(r)?)
}

fn charbonnier_mean(g: &mut Graph, x: NodeId, axis: usize, eps: f64) -> Result<NodeId> {
    let n = g.shape(x)[axis];
    let a = g.slice(x, axis, 1, n)?;
    let b = g.slice(x, axis, 0, n - 1)?;
    let d = g.sub(a, b)?;
    let d2 = g.mul(d, d)?;
    let d2 = g.offset(d2, eps)?;
    let s = g.sqrt(d2)?;
    Ok(g.mean(s)?)
}

/// Charbonnier penalty on neighbour differences of a `[B, 1, H, W]` plane:
/// `½[mean_v √(ε+Δ²) + mean_h √(ε+Δ²)]`. A constant plane scores `√ε`.
pub fn spatial_loss(g: &mut Graph, median: NodeId, eps: f64) -> Result<NodeId> {
    let v = charbonnier_mean(g, median, 2, eps)?;
    let h = charbonnier_mean(g, median, 3, eps)?;
    let s = g.add(v, h)?;
    Ok(g.scale(s, 0.5)?)
}

/// Smooth-L1 between range-normalized quantile gaps and level gaps.
///
/// Per sample `R = max(ŷ_K) − min(ŷ_1) + ε` over the grid. The minimum is
/// strictly positive because normalized gaps sum to about one while the
/// level gaps sum to `q_K − q_1`.
pub fn consistency_loss(
    g: &mut Graph,
    pred: NodeId,
    quantiles: &[f64],
    eps: f64,
) -> Result<NodeId> {
    let k = g.shape(pred)[1];
    let top = g.slice(pred, 1, k - 1, k)?;
    let bottom = g.slice(pred, 1, 0, 1)?;
    let hi = g.max_axes(top, &[1, 2, 3])?;
    let lo = g.min_axes(bottom, &[1, 2, 3])?;
    let range = g.sub(hi, lo)?;
    let range = g.offset(range, eps)?;
    let lower = g.slice(pred, 1, 0, k - 1)?;
    let upper = g.slice(pred, 1, 1, k)?;
    let gap = g.sub(upper, lower)?;
    let gap = g.abs(gap)?;
    let ratio = g.div(gap, range)?;
    let dq: Vec<f64> = quantiles.windows(2).map(|w| w[1] - w[0]).collect();
    let dq = g.constant(Array::new(vec![1, k - 1, 1, 1], dq)?)?;
    let s = g.smooth_l1(ratio, dq)?;
    Ok(g.mean(s)?)
}

/// `Σ p ln(p/q)` in nats; terms with `p = 0` contribute nothing.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a / b).ln())
        .sum()
}

/// Jensen-Shannon divergence in nats.
pub fn js_divergence(p: &[f64], q: &[f64]) -> f64 {
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    0.5 * (kl_divergence(p, &m) + kl_divergence(q, &m))
}

/// Adds `eps` to every bin and renormalizes.
pub fn smooth_histogram(h: &[f64], eps: f64) -> Vec<f64> {
    let s: f64 = h.iter().map(|v| v + eps).sum();
    h.iter().map(|v| (v + eps) / s).collect()
}

/// Median with the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub struct AdversarialTerm {
    pub loss: NodeId,
    /// Set when the term could not be formed and is a constant zero.
    pub degenerate: bool,
    pub p_high: Vec<f64>,
    pub p_low: Vec<f64>,
    pub m_mix: Vec<f64>,
}

fn normalized_hist(
    g: &mut Graph,
    values: NodeId,
    lo: NodeId,
    hi: NodeId,
    bins: usize,
    count: usize,
    eps: f64,
) -> Result<NodeId> {
    let h = g.histogram(values, lo, hi, bins)?;
    let h = g.scale(h, 1.0 / count as f64)?;
    let h = g.offset(h, eps)?;
    let s = g.sum(h)?;
    Ok(g.div(h, s)?)
}

fn kl_node(g: &mut Graph, p: NodeId, m: NodeId) -> Result<NodeId> {
    let r = g.div(p, m)?;
    let l = g.ln(r)?;
    let t = g.mul(p, l)?;
    Ok(g.sum(t)?)
}

/// Jensen-Shannon divergence between histograms of median predictions on
/// high-target and low-target pixels.
///
/// Masked pixels are split by the median of their targets (high: `y >
/// median`). Both histograms span `[min, max]` of all masked predictions.
pub fn adversarial_js_loss(
    g: &mut Graph,
    median_pred: NodeId,
    target: &Array,
    mask: &Array,
    bins: usize,
    eps: f64,
) -> Result<AdversarialTerm> {
    let idx: Vec<usize> = (0..mask.len()).filter(|&i| mask.data()[i] > 0.5).collect();
    let ys: Vec<f64> = idx.iter().map(|&i| target.data()[i]).collect();
    let degenerate = |g: &mut Graph| -> Result<AdversarialTerm> {
        Ok(AdversarialTerm {
            loss: g.scalar(0.0)?,
            degenerate: true,
            p_high: Vec::new(),
            p_low: Vec::new(),
            m_mix: Vec::new(),
        })
    };
    if idx.len() < 2 {
        return degenerate(g);
    }
    let med = median(&ys);
    let high: Vec<usize> = (0..idx.len()).filter(|&j| ys[j] > med).collect();
    let low: Vec<usize> = (0..idx.len()).filter(|&j| ys[j] <= med).collect();
    if high.is_empty() || low.is_empty() {
        return degenerate(g);
    }
    let n = g.value(median_pred).len();
    let flat = g.reshape(median_pred, &[n])?;
    let v = g.gather(flat, idx.clone())?;
    let lo = g.min_axes(v, &[0])?;
    let hi = g.max_axes(v, &[0])?;
    let vh = g.gather(v, high.clone())?;
    let vl = g.gather(v, low.clone())?;
    let ph = normalized_hist(g, vh, lo, hi, bins, high.len(), eps)?;
    let pl = normalized_hist(g, vl, lo, hi, bins, low.len(), eps)?;
    let m = g.add(ph, pl)?;
    let m = g.scale(m, 0.5)?;
    let k1 = kl_node(g, ph, m)?;
    let k2 = kl_node(g, pl, m)?;
    let js = g.add(k1, k2)?;
    let loss = g.scale(js, 0.5)?;
    Ok(AdversarialTerm {
        loss,
        degenerate: false,
        p_high: g.value(ph).data().to_vec(),
        p_low: g.value(pl).data().to_vec(),
        m_mix: g.value(m).data().to_vec(),
    })
}
