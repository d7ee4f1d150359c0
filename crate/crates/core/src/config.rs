//! The single JSON document configuring a run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{ProcessSpec, SynthConfig};
use crate::error::{io_err, CoreError, Result};
use crate::eval::EvalOptions;
use crate::loss::{CurriculumSpec, LossWeights};
use crate::model::ModelSettings;
use crate::train::TrainConfig;

/// Every setting of a pipeline run. Missing keys take their defaults;
/// unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Master seed; copied into `data.seed` on resolution and used to derive
    /// every training stream.
    pub seed: u64,
    /// Directory holding the dataset, checkpoints, logs and reports.
    pub out_dir: PathBuf,
    pub data: SynthConfig,
    pub process: ProcessSpec,
    pub model: ModelSettings,
    pub loss: LossWeights,
    pub curriculum: CurriculumSpec,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub eval: EvalOptions,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            data: SynthConfig::default(),
            process: ProcessSpec::default(),
            model: ModelSettings::default(),
            loss: LossWeights::default(),
            curriculum: CurriculumSpec::default(),
            pretrain: TrainConfig::default(),
            finetune: TrainConfig::default(),
            eval: EvalOptions::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| CoreError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Self::from_json(&text).map_err(|e| match e {
            CoreError::Config(m) => CoreError::Config(format!("{}: {m}", path.display())),
            e => e,
        })
    }

    /// Applies command-line overrides, fills derived fields and validates.
    pub fn resolve(mut self, seed: Option<u64>, out_dir: Option<PathBuf>) -> Result<Self> {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(d) = out_dir {
            self.out_dir = d;
        }
        self.data.seed = self.seed;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        self.data.validate()?;
        self.process.validate()?;
        self.model.validate()?;
        self.model.concept.check_patch(self.data.patch_size)?;
        self.model.aggregator.check_patch(self.data.patch_size)?;
        if let Some(b) = &self.model.blackbox {
            b.check_patch(self.data.patch_size)?;
        }
        self.loss.validate()?;
        self.curriculum.validate()?;
        self.pretrain.validate()?;
        self.finetune.validate()?;
        self.eval.validate()?;
        let q = &self.model.concept.quantiles;
        for level in self.eval.interval {
            if !q.iter().any(|&v| (v - level).abs() < 1e-12) {
                return Err(CoreError::Config(format!(
                    "eval interval level {level} is not among the predicted quantiles"
                )));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}
