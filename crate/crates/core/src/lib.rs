//! Process-guided concept bottleneck models for forest biomass mapping.

pub mod config;
pub mod data;
pub mod error;
pub mod eval;
pub mod loss;
pub mod model;
pub mod parallel;
pub mod pipeline;
pub mod seed;
pub mod train;
pub mod variants;

pub use error::{CoreError, Result};
