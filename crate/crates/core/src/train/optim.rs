use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use tensorcore::Array;

use crate::error::{CoreError, Result};
use crate::model::ModelParams;

/// Gradients keyed by parameter name.
pub type Grads = BTreeMap<String, Array>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment slots per parameter.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub m: Grads,
    pub v: Grads,
}

/// One bias-corrected Adam update of every parameter named in `grads`.
pub fn adam_step(
    params: &mut ModelParams,
    grads: &Grads,
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (name, g) in grads {
        let p = params.get_mut(name)?;
        if p.shape() != g.shape() {
            return Err(CoreError::Data(format!(
                "gradient for {name} has shape {:?}, parameter {:?}",
                g.shape(),
                p.shape()
            )));
        }
        let m = state
            .m
            .entry(name.clone())
            .or_insert_with(|| Array::zeros(g.shape()));
        let v = state
            .v
            .entry(name.clone())
            .or_insert_with(|| Array::zeros(g.shape()));
        if m.shape() != g.shape() || v.shape() != g.shape() {
            return Err(CoreError::Data(format!("optimizer slots for {name} have the wrong shape")));
        }
        let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
        for (i, &gi) in g.data().iter().enumerate() {
            md[i] = cfg.beta1 * md[i] + (1.0 - cfg.beta1) * gi;
            vd[i] = cfg.beta2 * vd[i] + (1.0 - cfg.beta2) * gi * gi;
            let mh = md[i] / c1;
            let vh = vd[i] / c2;
            pd[i] -= lr * mh / (vh.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Global L2 norm across all gradients.
pub fn global_norm(grads: &Grads) -> f64 {
    grads.values().map(|g| g.sq_norm()).sum::<f64>().sqrt()
}

/// Rescales every gradient by `max_norm / norm` when the global norm
/// exceeds `max_norm`; returns the norm before clipping.
pub fn clip_gradients(grads: &mut Grads, max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(CoreError::Config("clip norm must be > 0".into()));
    }
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            g.scale_inplace(s);
        }
    }
    Ok(norm)
}
