use serde::{Deserialize, Serialize};

use super::optim::AdamConfig;
use crate::error::{CoreError, Result};

/// Optimization settings of one training stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Peak learning rate of each warm-restart cycle.
    pub base_lr: f64,
    /// Floor reached at the end of each cycle.
    pub min_lr: f64,
    pub adam: AdamConfig,
    /// Global gradient-norm ceiling.
    pub clip_norm: f64,
    /// First restart period, in epochs.
    pub t0_epochs: usize,
    pub t_mult: usize,
    /// Validation interval, in epochs; the last epoch is always evaluated.
    pub eval_every: usize,
    /// Concept-only records drawn per task record in stage-2 batches, for
    /// variants that train on them.
    pub concept_ratio: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 32,
            base_lr: 1e-6,
            min_lr: 0.0,
            adam: AdamConfig::default(),
            clip_norm: 1.0,
            t0_epochs: 10,
            t_mult: 2,
            eval_every: 5,
            concept_ratio: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CoreError::Config(m.into()));
        if self.epochs == 0 {
            return bad("epochs must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be > 0");
        }
        if !(self.base_lr > 0.0) || !self.base_lr.is_finite() {
            return bad("base_lr must be > 0");
        }
        if !(self.min_lr >= 0.0) || self.min_lr > self.base_lr {
            return bad("min_lr must lie in [0, base_lr]");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be > 0");
        }
        if self.t0_epochs == 0 || self.t_mult == 0 {
            return bad("t0_epochs and t_mult must be >= 1");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be >= 1");
        }
        if !(self.concept_ratio >= 0.0) || !self.concept_ratio.is_finite() {
            return bad("concept_ratio must be >= 0");
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return bad("adam betas must lie in [0, 1) and eps > 0");
        }
        Ok(())
    }
}
