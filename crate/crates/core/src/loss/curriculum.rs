use serde::{Deserialize, Serialize};

use super::weights::{LossWeights, INITIAL_LAMBDAS, MAX_LAMBDAS};
use crate::error::{CoreError, Result};

/// Three-phase regularizer schedule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurriculumSpec {
    pub initial: [f64; 4],
    pub maxima: [f64; 4],
    /// Warm-up covers epochs below this fraction of the run.
    pub warmup_fraction: f64,
    /// The linear ramp ends, and stabilization begins, at this fraction.
    pub ramp_end_fraction: f64,
    /// Multiplier applied when validation error rises during stabilization.
    pub penalty_factor: f64,
}

impl Default for CurriculumSpec {
    fn default() -> Self {
        Self {
            initial: INITIAL_LAMBDAS,
            maxima: MAX_LAMBDAS,
            warmup_fraction: 0.1,
            ramp_end_fraction: 0.8,
            penalty_factor: 0.5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Warmup,
    Curriculum,
    Stabilization,
}

impl CurriculumSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = self
            .initial
            .iter()
            .zip(&self.maxima)
            .all(|(&i, &m)| i >= 0.0 && m >= i && m.is_finite())
            && 0.0 <= self.warmup_fraction
            && self.warmup_fraction <= self.ramp_end_fraction
            && self.ramp_end_fraction <= 1.0
            && self.penalty_factor > 0.0
            && self.penalty_factor <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(CoreError::Config("invalid curriculum".into()))
        }
    }

    pub fn phase(&self, epoch: usize, total: usize) -> Phase {
        let e = epoch as f64;
        let t = total as f64;
        if e < self.warmup_fraction * t {
            Phase::Warmup
        } else if e < self.ramp_end_fraction * t {
            Phase::Curriculum
        } else {
            Phase::Stabilization
        }
    }
}

/// Regularizer weights for `epoch`.
///
/// `history` holds `(epoch, validation rmse)` pairs in order. During
/// stabilization the weights start at the maxima; afterwards they carry over
/// from `current` and are multiplied by the penalty factor (never below the
/// initial values) when the evaluation made at `epoch − 1` is worse than the
/// one before it.
pub fn curriculum_update(
    epoch: usize,
    total_epochs: usize,
    history: &[(usize, f64)],
    current: &LossWeights,
    spec: &CurriculumSpec,
) -> Result<LossWeights> {
    if epoch >= total_epochs {
        return Err(CoreError::Config(format!(
            "epoch {epoch} outside a {total_epochs}-epoch run"
        )));
    }
    let lambdas = match spec.phase(epoch, total_epochs) {
        Phase::Warmup => spec.initial,
        Phase::Curriculum => {
            let t = total_epochs as f64;
            let start = spec.warmup_fraction * t;
            let span = (spec.ramp_end_fraction - spec.warmup_fraction) * t;
            let f = ((epoch as f64 - start) / span).clamp(0.0, 1.0);
            std::array::from_fn(|i| spec.initial[i] + (spec.maxima[i] - spec.initial[i]) * f)
        }
        Phase::Stabilization => {
            let first = epoch == 0 || spec.phase(epoch - 1, total_epochs) != Phase::Stabilization;
            let mut l = if first { spec.maxima } else { current.lambdas() };
            let n = history.len();
            let rising = n >= 2
                && history[n - 1].0 + 1 == epoch
                && history[n - 1].1 > history[n - 2].1;
            if rising {
                for (i, v) in l.iter_mut().enumerate() {
                    *v = (*v * spec.penalty_factor).max(spec.initial[i]);
                }
            }
            l
        }
    };
    Ok(current.with_lambdas(lambdas))
}
