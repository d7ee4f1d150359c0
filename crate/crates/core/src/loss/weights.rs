use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

pub const INITIAL_LAMBDAS: [f64; 4] = [0.01, 0.001, 0.001, 0.0];
pub const MAX_LAMBDAS: [f64; 4] = [0.1, 0.1, 0.05, 0.01];

/// Loss term weights. Regularizer lambdas are ordered
/// (monotonicity, spatial, consistency, adversarial).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_mono: f64,
    pub lambda_spatial: f64,
    pub lambda_consistency: f64,
    pub lambda_adv: f64,
    /// Focal exponent.
    pub gamma: f64,
    pub epsilon: f64,
    /// Concept weights (cover, height, stems).
    pub alpha: [f64; 3],
    /// Task weight.
    pub beta: f64,
    /// Histogram bins of the distribution-matching term.
    pub bins: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        let [m, s, c, a] = INITIAL_LAMBDAS;
        Self {
            lambda_mono: m,
            lambda_spatial: s,
            lambda_consistency: c,
            lambda_adv: a,
            gamma: 2.0,
            epsilon: 1e-6,
            alpha: [0.1; 3],
            beta: 1.0,
            bins: 32,
        }
    }
}

impl LossWeights {
    pub fn lambdas(&self) -> [f64; 4] {
        [
            self.lambda_mono,
            self.lambda_spatial,
            self.lambda_consistency,
            self.lambda_adv,
        ]
    }

    pub fn with_lambdas(&self, l: [f64; 4]) -> Self {
        Self {
            lambda_mono: l[0],
            lambda_spatial: l[1],
            lambda_consistency: l[2],
            lambda_adv: l[3],
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = self
            .lambdas()
            .iter()
            .chain(&self.alpha)
            .chain([&self.beta, &self.gamma])
            .all(|&v| v >= 0.0 && v.is_finite());
        if !nonneg {
            return Err(CoreError::Config("loss weights must be finite and >= 0".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(CoreError::Config("epsilon must be > 0".into()));
        }
        if self.bins < 2 {
            return Err(CoreError::Config("bins must be >= 2".into()));
        }
        Ok(())
    }
}
