//! File-backed pipeline stages: synthesis, pre-training, fine-tuning,
//! evaluation and comparison.
//!
//! Layout under `out_dir`:
//!
//! ```text
//! dataset.pgcb  norm_stats.json  split.json  resolved_config.json
//! checkpoints/concept_{cover,height,stems}.pgck  checkpoints/{variant}.pgck
//! logs/pretrain_{attribute}.ndjson  logs/finetune_{variant}.ndjson
//! eval/  compare/    report.json and CSV tables
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::data::{
    generate_synthetic, read_dataset, write_dataset, Attribute, NormStats, NormalizedRecord, PatchRecord,
    SplitSpec,
};
use crate::error::{io_err, CoreError, Result};
use crate::eval::{build_report, predict_records, EvalReport, RecordPrediction, OOD_ORDER};
use crate::model::{Checkpoint, ConceptNet, ModelParams, Network};
use crate::seed;
use crate::train::{train_network, StageData, StageSpec, TrainOutcome};
use crate::variants::{Registry, Variant, VariantModel};

pub const DATASET_FILE: &str = "dataset.pgcb";
pub const NORM_FILE: &str = "norm_stats.json";
pub const SPLIT_FILE: &str = "split.json";
pub const RESOLVED_CONFIG_FILE: &str = "resolved_config.json";

pub fn concept_checkpoint_path(cfg: &RunConfig, attr: Attribute) -> PathBuf {
    cfg.out_dir.join("checkpoints").join(format!("concept_{}.pgck", attr.name()))
}

pub fn variant_checkpoint_path(cfg: &RunConfig, variant: &str) -> PathBuf {
    cfg.out_dir.join("checkpoints").join(format!("{variant}.pgck"))
}

fn write_file(path: &Path, body: impl AsRef<[u8]>) -> Result<()> {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d).map_err(io_err(d))?;
    }
    std::fs::write(path, body).map_err(io_err(path))
}

/// Writes the fully resolved configuration beside a command's outputs.
pub fn write_resolved_config(cfg: &RunConfig, dir: &Path) -> Result<()> {
    write_file(&dir.join(RESOLVED_CONFIG_FILE), cfg.to_json()?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSummary {
    pub records: usize,
    pub train: usize,
    pub val_id: usize,
    pub val_ood: usize,
    pub ood_fraction: f64,
    pub dataset_checksum: u64,
}

/// Generates the dataset and writes it with its statistics and split.
pub fn synth(cfg: &RunConfig) -> Result<SynthSummary> {
    let ds = generate_synthetic(&cfg.data, &cfg.process)?;
    let dir = &cfg.out_dir;
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let path = dir.join(DATASET_FILE);
    write_dataset(&ds.records, &path)?;
    write_file(&dir.join(NORM_FILE), serde_json::to_string_pretty(&ds.norm)? + "\n")?;
    write_file(&dir.join(SPLIT_FILE), serde_json::to_string_pretty(&ds.split)? + "\n")?;
    write_resolved_config(cfg, dir)?;
    let bytes = std::fs::read(&path).map_err(io_err(&path))?;
    Ok(SynthSummary {
        records: ds.records.len(),
        train: ds.split.train.len(),
        val_id: ds.split.val_id.len(),
        val_ood: ds.split.val_ood.len(),
        ood_fraction: ds.split.ood_fraction(),
        dataset_checksum: u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap()),
    })
}

/// A dataset loaded from disk with its normalized view.
pub struct Prepared {
    pub records: Vec<PatchRecord>,
    pub normalized: Vec<NormalizedRecord>,
    pub norm: NormStats,
    pub split: SplitSpec,
}

impl Prepared {
    pub fn new(records: Vec<PatchRecord>, norm: NormStats, split: SplitSpec) -> Result<Self> {
        split.validate(records.len())?;
        let normalized = records.iter().map(|r| norm.apply(r)).collect();
        Ok(Self {
            records,
            normalized,
            norm,
            split,
        })
    }

    pub fn load(cfg: &RunConfig) -> Result<Self> {
        let dir = &cfg.out_dir;
        let path = dir.join(DATASET_FILE);
        if !path.exists() {
            return Err(CoreError::MissingPrerequisite(format!(
                "dataset {} (run `pgcbm synth` first)",
                path.display()
            )));
        }
        let records = read_dataset(&path)?;
        let read_json = |name: &str| -> Result<String> {
            let p = dir.join(name);
            std::fs::read_to_string(&p).map_err(io_err(&p))
        };
        let norm: NormStats = serde_json::from_str(&read_json(NORM_FILE)?)?;
        let split: SplitSpec = serde_json::from_str(&read_json(SPLIT_FILE)?)?;
        Self::new(records, norm, split)
    }

    fn with_labels(&self, ids: &[usize], a: Attribute) -> Vec<usize> {
        ids.iter().copied().filter(|&i| self.records[i].has_labels(a)).collect()
    }

    /// Stage data for pre-training the sub-model of `attr`.
    pub fn pretrain_data(&self, attr: Attribute) -> StageData<'_> {
        StageData {
            records: &self.normalized,
            train: self.with_labels(&self.split.train, attr),
            extra: Vec::new(),
            val: self.with_labels(&self.split.val_id, attr),
        }
    }

    /// Stage data for fine-tuning; concept-only records are included when
    /// the variant trains on them.
    pub fn finetune_data(&self, mix_concepts: bool) -> StageData<'_> {
        let extra = if mix_concepts {
            self.split
                .train
                .iter()
                .copied()
                .filter(|&i| {
                    let r = &self.records[i];
                    !r.has_labels(Attribute::Agbd) && Attribute::CONCEPTS.iter().any(|&a| r.has_labels(a))
                })
                .collect()
        } else {
            Vec::new()
        };
        StageData {
            records: &self.normalized,
            train: self.with_labels(&self.split.train, Attribute::Agbd),
            extra,
            val: self.with_labels(&self.split.val_id, Attribute::Agbd),
        }
    }
}

pub fn pretrain_spec(cfg: &RunConfig, attr: Attribute) -> StageSpec {
    let mut head_weights = [0.0; 4];
    head_weights[attr.index()] = 1.0;
    StageSpec {
        stage: "pretrain".into(),
        target: attr,
        head_weights,
        train: cfg.pretrain.clone(),
        loss: cfg.loss.clone(),
        curriculum: cfg.curriculum.clone(),
        seed: seed::derive_str(cfg.seed, &format!("pretrain:{}", attr.name())),
    }
}

pub fn finetune_spec(cfg: &RunConfig, variant: &str) -> StageSpec {
    let a = cfg.loss.alpha;
    StageSpec {
        stage: "finetune".into(),
        target: Attribute::Agbd,
        head_weights: [a[0], a[1], a[2], cfg.loss.beta],
        train: cfg.finetune.clone(),
        loss: cfg.loss.clone(),
        curriculum: cfg.curriculum.clone(),
        seed: seed::derive_str(cfg.seed, &format!("finetune:{variant}")),
    }
}

fn echo(cfg: &RunConfig, stage: &str, network: &str) -> serde_json::Value {
    serde_json::json!({
        "stage": stage,
        "network": network,
        "seed": cfg.seed,
        "model": cfg.model,
    })
}

/// Pre-trains one concept sub-model in memory.
pub fn pretrain_in_memory(cfg: &RunConfig, data: &Prepared, attr: Attribute) -> Result<(ConceptNet, TrainOutcome)> {
    if attr == Attribute::Agbd {
        return Err(CoreError::Config("agbd has no concept sub-model; use finetune".into()));
    }
    let mut net = ConceptNet::new(
        attr,
        &cfg.model.concept,
        seed::derive_str(cfg.seed, &format!("init:{}", attr.name())),
    )?;
    let stage = data.pretrain_data(attr);
    if stage.train.is_empty() {
        return Err(CoreError::Data(format!("no training records with {} labels", attr.name())));
    }
    let out = train_network(&mut net, &stage, &pretrain_spec(cfg, attr))?;
    net.params = out.best_params.clone();
    Ok((net, out))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub network: String,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub steps: usize,
    pub checkpoint: PathBuf,
    pub checkpoint_checksum: u64,
}

fn save_stage(
    cfg: &RunConfig,
    stage: &str,
    network: &str,
    out: &TrainOutcome,
    ckpt_path: PathBuf,
    log_name: &str,
) -> Result<StageSummary> {
    let ckpt = Checkpoint {
        params: out.best_params.clone(),
        config: echo(cfg, stage, network),
        epoch: out.best_epoch as u64,
        val_loss: out.best_val_loss,
    };
    let bytes = ckpt.encode()?;
    write_file(&ckpt_path, &bytes)?;
    write_file(&cfg.out_dir.join("logs").join(log_name), out.ndjson()?)?;
    write_resolved_config(cfg, &cfg.out_dir)?;
    Ok(StageSummary {
        network: network.to_string(),
        best_epoch: out.best_epoch,
        best_val_loss: out.best_val_loss,
        steps: out.steps,
        checkpoint_checksum: u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap()),
        checkpoint: ckpt_path,
    })
}

/// Pre-trains the sub-model of `attr` and writes its checkpoint and log.
pub fn pretrain(cfg: &RunConfig, attr: Attribute) -> Result<StageSummary> {
    let data = Prepared::load(cfg)?;
    let (_, out) = pretrain_in_memory(cfg, &data, attr)?;
    save_stage(
        cfg,
        "pretrain",
        attr.name(),
        &out,
        concept_checkpoint_path(cfg, attr),
        &format!("pretrain_{}.ndjson", attr.name()),
    )
}

/// Loads the pretrained concept checkpoints a variant needs.
pub fn load_pretrained(cfg: &RunConfig, variant: &dyn Variant) -> Result<ModelParams> {
    let mut params = ModelParams::new();
    for &a in variant.required_concepts() {
        let p = concept_checkpoint_path(cfg, a);
        if !p.exists() {
            return Err(CoreError::MissingPrerequisite(format!(
                "pretrained {} checkpoint {} (run `pgcbm pretrain --attribute {}`)",
                a.name(),
                p.display(),
                a.name()
            )));
        }
        params.merge(Checkpoint::read(&p)?.params)?;
    }
    Ok(params)
}

/// Builds and fine-tunes a variant in memory.
pub fn finetune_in_memory(
    cfg: &RunConfig,
    data: &Prepared,
    variant: &dyn Variant,
    pretrained: &ModelParams,
) -> Result<(Box<dyn VariantModel>, TrainOutcome)> {
    let name = variant.name();
    let mut model = variant.build(&cfg.model, pretrained, seed::derive_str(cfg.seed, &format!("init:{name}")))?;
    let stage = data.finetune_data(variant.mixes_concept_records());
    let out = train_network(model.as_mut(), &stage, &finetune_spec(cfg, name))?;
    let model = variant.restore(&cfg.model, out.best_params.clone())?;
    Ok((model, out))
}

/// Fine-tunes a variant and writes its checkpoint and log.
pub fn finetune(cfg: &RunConfig, registry: &Registry, variant: &str) -> Result<StageSummary> {
    let v = registry.get(variant)?;
    let pretrained = load_pretrained(cfg, v)?;
    let data = Prepared::load(cfg)?;
    let (_, out) = finetune_in_memory(cfg, &data, v, &pretrained)?;
    save_stage(
        cfg,
        "finetune",
        variant,
        &out,
        variant_checkpoint_path(cfg, variant),
        &format!("finetune_{variant}.ndjson"),
    )
}

/// Record-level predictions of a network over all validation records.
pub fn predict_validation(cfg: &RunConfig, data: &Prepared, net: &dyn Network) -> Result<Vec<RecordPrediction>> {
    let ids: Vec<usize> = data.split.validation().collect();
    predict_records(
        net,
        &data.records,
        &data.normalized,
        &data.norm,
        &ids,
        &data.split.val_ood,
        cfg.eval.batch_size,
    )
}

/// Restores a fine-tuned variant from its checkpoint.
pub fn load_variant(cfg: &RunConfig, registry: &Registry, variant: &str) -> Result<Box<dyn VariantModel>> {
    let v = registry.get(variant)?;
    let p = variant_checkpoint_path(cfg, variant);
    if !p.exists() {
        return Err(CoreError::MissingPrerequisite(format!(
            "{variant} checkpoint {} (run `pgcbm finetune --variant {variant}`)",
            p.display()
        )));
    }
    v.restore(&cfg.model, Checkpoint::read(&p)?.params)
}

/// Evaluates `variants` and writes the report into `out_dir/{subdir}`.
pub fn evaluate(cfg: &RunConfig, registry: &Registry, variants: &[String], subdir: &str) -> Result<EvalReport> {
    let missing: Vec<&str> = variants
        .iter()
        .filter(|v| !variant_checkpoint_path(cfg, v).exists())
        .map(|v| v.as_str())
        .collect();
    for v in variants {
        registry.get(v)?;
    }
    if !missing.is_empty() {
        return Err(CoreError::MissingPrerequisite(format!(
            "checkpoints for: {}",
            missing.join(", ")
        )));
    }
    let data = Prepared::load(cfg)?;
    let mut reports = Vec::new();
    let mut preds = Vec::new();
    for v in variants {
        let model = load_variant(cfg, registry, v)?;
        let p = predict_validation(cfg, &data, model.as_ref())?;
        reports.push(build_report(v, &p, model.quantiles(), &cfg.eval)?);
        preds.push((v.clone(), p));
    }
    let report = EvalReport::new(reports)?;
    let dir = cfg.out_dir.join(subdir);
    report.write(&dir, &preds)?;
    write_resolved_config(cfg, &dir)?;
    Ok(report)
}

/// Evaluates all three variants on the shared split.
pub fn compare(cfg: &RunConfig, registry: &Registry) -> Result<EvalReport> {
    let all: Vec<String> = OOD_ORDER.iter().map(|s| s.to_string()).collect();
    evaluate(cfg, registry, &all, "compare")
}
