//! Focal quantile loss, regularizers, their weighted total and the
//! regularizer curriculum.

pub mod curriculum;
pub mod quantile;
pub mod regularizers;
pub mod total;
pub mod weights;

pub use curriculum::{curriculum_update, CurriculumSpec, Phase};
pub use quantile::{focal_quantile_loss, focal_weight, masked_stats, pinball, DEFAULT_QUANTILES};
pub use regularizers::{
    adversarial_js_loss, consistency_loss, js_divergence, monotonicity_loss, smooth_histogram,
    spatial_loss,
};
pub use total::{total_loss, BatchStats, HeadInput, LossBreakdown};
pub use weights::{LossWeights, INITIAL_LAMBDAS, MAX_LAMBDAS};
