use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::loss::DEFAULT_QUANTILES;

/// Architecture hyperparameters of one sub-model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SubModelConfig {
    /// Channels of each per-modality encoder branch.
    pub encoder_channels: usize,
    /// Frequencies per coordinate of the position encoding.
    pub position_frequencies: usize,
    /// Width of the position branch.
    pub position_channels: usize,
    /// Fused feature width.
    pub width: usize,
    /// Average-pooling factors of the pyramid branches.
    pub pyramid_scales: Vec<usize>,
    pub attention_blocks: usize,
    pub heads: usize,
    /// Pooling factor applied before attention.
    pub attention_pool: usize,
    pub mlp_ratio: usize,
    pub decoder_channels: usize,
    pub quantiles: Vec<f64>,
    pub dropout: f64,
    pub norm_groups: usize,
}

impl Default for SubModelConfig {
    fn default() -> Self {
        Self {
            encoder_channels: 16,
            position_frequencies: 4,
            position_channels: 8,
            width: 32,
            pyramid_scales: vec![1, 2, 4],
            attention_blocks: 1,
            heads: 2,
            attention_pool: 2,
            mlp_ratio: 2,
            decoder_channels: 16,
            quantiles: DEFAULT_QUANTILES.to_vec(),
            dropout: 0.1,
            norm_groups: 4,
        }
    }
}

impl SubModelConfig {
    /// Default aggregation sub-model.
    pub fn aggregator() -> Self {
        Self {
            encoder_channels: 8,
            width: 16,
            pyramid_scales: vec![1, 2],
            decoder_channels: 8,
            ..Self::default()
        }
    }

    pub fn k(&self) -> usize {
        self.quantiles.len()
    }

    /// Index of the median quantile.
    pub fn median_index(&self) -> usize {
        self.quantiles
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 0.5).abs().total_cmp(&(b.1 - 0.5).abs()))
            .map_or(0, |(i, _)| i)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(format!("sub-model: {m}")));
        let q = &self.quantiles;
        if q.len() < 2 {
            return bad("need at least two quantiles".into());
        }
        if q.iter().any(|&v| !(v > 0.0 && v < 1.0)) || q.windows(2).any(|w| w[1] <= w[0]) {
            return bad(format!("quantiles {q:?} must be strictly increasing in (0, 1)"));
        }
        for (name, c) in [
            ("encoder_channels", self.encoder_channels),
            ("width", self.width),
            ("decoder_channels", self.decoder_channels),
        ] {
            if c == 0 || c % self.norm_groups.max(1) != 0 || self.norm_groups == 0 {
                return bad(format!("{name} {c} must be a positive multiple of norm_groups"));
            }
        }
        if self.heads == 0 || self.width % self.heads != 0 {
            return bad(format!("heads {} must divide width {}", self.heads, self.width));
        }
        if self.position_frequencies == 0 || self.position_channels == 0 {
            return bad("position branch sizes must be > 0".into());
        }
        if self.pyramid_scales.is_empty() || self.pyramid_scales.contains(&0) {
            return bad("pyramid scales must be non-empty and > 0".into());
        }
        if self.attention_pool == 0 || self.mlp_ratio == 0 {
            return bad("attention_pool and mlp_ratio must be > 0".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)".into());
        }
        Ok(())
    }

    /// Checks that every pooling factor divides the patch size.
    pub fn check_patch(&self, size: usize) -> Result<()> {
        for &s in self.pyramid_scales.iter().chain([&self.attention_pool]) {
            if size % s != 0 {
                return Err(CoreError::Config(format!(
                    "pooling factor {s} does not divide patch size {size}"
                )));
            }
        }
        Ok(())
    }

    /// Copy with every channel count multiplied by `f`, rounded to valid
    /// multiples.
    pub fn scaled(&self, f: f64) -> Self {
        let g = self.norm_groups;
        let step = lcm(g, self.heads);
        let round = |c: usize, m: usize| (((c as f64 * f) / m as f64).round() as usize).max(1) * m;
        Self {
            encoder_channels: round(self.encoder_channels, g),
            position_channels: ((self.position_channels as f64 * f).round() as usize).max(1),
            width: round(self.width, step),
            decoder_channels: round(self.decoder_channels, g),
            ..self.clone()
        }
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

fn lcm(a: usize, b: usize) -> usize {
    a / gcd(a, b) * b
}


/// Architecture settings shared by every variant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSettings {
    /// Each concept sub-model.
    pub concept: SubModelConfig,
    /// The aggregation sub-model.
    pub aggregator: SubModelConfig,
    /// Black-box network; sized to match the concept model's parameter
    /// count when absent.
    pub blackbox: Option<SubModelConfig>,
    /// Feeds concept decoder features to the aggregator alongside the
    /// concept quantiles.
    pub bypass_latent: bool,
    /// Allowed relative parameter-count gap of the auto-sized black box.
    pub parity_tolerance: f64,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            concept: SubModelConfig::default(),
            aggregator: SubModelConfig::aggregator(),
            blackbox: None,
            bypass_latent: false,
            parity_tolerance: 0.1,
        }
    }
}

impl ModelSettings {
    pub fn validate(&self) -> Result<()> {
        self.concept.validate()?;
        self.aggregator.validate()?;
        if let Some(b) = &self.blackbox {
            b.validate()?;
        }
        if self.concept.quantiles != self.aggregator.quantiles {
            return Err(CoreError::Config(
                "concept and aggregator quantile sets must match".into(),
            ));
        }
        if !(self.parity_tolerance > 0.0) {
            return Err(CoreError::Config("parity_tolerance must be > 0".into()));
        }
        Ok(())
    }
}
