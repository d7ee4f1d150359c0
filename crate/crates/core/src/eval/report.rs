use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::correlation::{concept_correlation_matrix, CorrelationMatrix};
use super::intervals::{interval_stats, IntervalStats};
use super::metrics::{compute_metrics, Metrics};
use super::ood::{ood_comparison, OodTable};
use super::structure::{structure_bias_curve, StructureCurve};
use crate::data::{Attribute, NormStats, NormalizedRecord, PatchRecord};
use crate::error::{io_err, CoreError, Result};
use crate::model::{Batch, Network};

/// Evaluation settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub structure_bins: usize,
    /// Quantile levels bounding the reported interval.
    pub interval: [f64; 2],
    pub batch_size: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            structure_bins: 5,
            interval: [0.1, 0.9],
            batch_size: 32,
        }
    }
}

impl EvalOptions {
    pub fn validate(&self) -> Result<()> {
        if self.structure_bins < 3 {
            return Err(CoreError::Config("structure_bins must be >= 3".into()));
        }
        if !(self.interval[0] < self.interval[1]) {
            return Err(CoreError::Config("interval bounds must be increasing".into()));
        }
        if self.batch_size == 0 {
            return Err(CoreError::Config("eval batch_size must be > 0".into()));
        }
        Ok(())
    }
}

/// Record-level prediction: per-pixel values averaged over the record's
/// valid biomass pixels, in label units.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordPrediction {
    pub index: usize,
    pub ood: bool,
    pub observed: f64,
    pub quantiles: Vec<f64>,
    /// Concept medians (cover, height, stems) when the network exposes them.
    pub concepts: Option<[f64; 3]>,
    /// Stems density of the record; latent truth when stored.
    pub stems: f64,
}

/// Inference over every record in `ids` that carries biomass labels.
pub fn predict_records(
    net: &dyn Network,
    records: &[PatchRecord],
    normalized: &[NormalizedRecord],
    norm: &NormStats,
    ids: &[usize],
    ood: &[usize],
    batch_size: usize,
) -> Result<Vec<RecordPrediction>> {
    let t = Attribute::Agbd;
    let ids: Vec<usize> = ids
        .iter()
        .copied()
        .filter(|&i| records[i].has_labels(t))
        .collect();
    let k = net.quantiles().len();
    let mid = k / 2;
    let mut out = Vec::with_capacity(ids.len());
    for chunk in ids.chunks(batch_size.max(1)) {
        let recs: Vec<&NormalizedRecord> = chunk.iter().map(|&i| &normalized[i]).collect();
        let batch = Batch::new(chunk, &recs)?;
        let heads = net.predict(&batch)?;
        let plane = batch.rows() * batch.cols();
        let find = |a: Attribute| heads.iter().find(|(h, _)| *h == a).map(|(_, v)| v);
        let task = find(t).ok_or_else(|| CoreError::Config(format!("{} has no biomass head", net.name())))?;
        for (b, &i) in chunk.iter().enumerate() {
            let mask = records[i].mask(t);
            let avg = |arr: &tensorcore::Array, ch: usize, kk: usize| {
                let base = (b * kk + ch) * plane;
                let (mut s, mut c) = (0.0, 0usize);
                for (p, &m) in mask.iter().enumerate() {
                    if m {
                        s += arr.data()[base + p];
                        c += 1;
                    }
                }
                s / c as f64
            };
            let quantiles = (0..k).map(|q| norm.denormalize_label(t, avg(task, q, k))).collect();
            let concepts = match (find(Attribute::Cover), find(Attribute::Height), find(Attribute::Stems)) {
                (Some(c), Some(h), Some(s)) => Some([
                    norm.denormalize_label(Attribute::Cover, avg(c, mid, k)),
                    norm.denormalize_label(Attribute::Height, avg(h, mid, k)),
                    norm.denormalize_label(Attribute::Stems, avg(s, mid, k)),
                ]),
                _ => None,
            };
            let r = &records[i];
            out.push(RecordPrediction {
                index: i,
                ood: ood.contains(&i),
                observed: r.observed_mean(t).expect("filtered to labelled records"),
                quantiles,
                concepts,
                stems: r
                    .concept_mean(Attribute::Stems)
                    .or_else(|| r.observed_mean(Attribute::Stems))
                    .unwrap_or(f64::NAN),
            });
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VariantReport {
    pub variant: String,
    pub all: Metrics,
    pub id: Option<Metrics>,
    pub ood: Option<Metrics>,
    pub intervals: IntervalStats,
    pub structure: StructureCurve,
    pub correlations: Option<CorrelationMatrix>,
}

impl VariantReport {
    /// OOD over ID mean absolute error.
    pub fn inflation(&self) -> Option<f64> {
        Some(self.ood.as_ref()?.mean_abs_bias / self.id.as_ref()?.mean_abs_bias)
    }
}

fn level_index(quantiles: &[f64], q: f64) -> Result<usize> {
    quantiles
        .iter()
        .position(|&v| (v - q).abs() < 1e-12)
        .ok_or_else(|| CoreError::Config(format!("quantile {q} is not predicted")))
}

pub fn build_report(
    variant: &str,
    preds: &[RecordPrediction],
    quantiles: &[f64],
    opts: &EvalOptions,
) -> Result<VariantReport> {
    let mid = quantiles.len() / 2;
    let lo = level_index(quantiles, opts.interval[0])?;
    let hi = level_index(quantiles, opts.interval[1])?;
    let med: Vec<f64> = preds.iter().map(|p| p.quantiles[mid]).collect();
    let obs: Vec<f64> = preds.iter().map(|p| p.observed).collect();
    let subset = |ood: bool| -> Result<Option<Metrics>> {
        let (p, o): (Vec<f64>, Vec<f64>) = preds
            .iter()
            .filter(|r| r.ood == ood)
            .map(|r| (r.quantiles[mid], r.observed))
            .unzip();
        if p.is_empty() {
            Ok(None)
        } else {
            compute_metrics(&p, &o).map(Some)
        }
    };
    let lower: Vec<f64> = preds.iter().map(|p| p.quantiles[lo]).collect();
    let upper: Vec<f64> = preds.iter().map(|p| p.quantiles[hi]).collect();
    let abs_err: Vec<f64> = med.iter().zip(&obs).map(|(p, y)| (p - y).abs()).collect();
    let stems: Vec<f64> = preds.iter().map(|p| p.stems).collect();
    let correlations = if preds.iter().all(|p| p.concepts.is_some()) {
        let c = |j: usize| -> Vec<f64> { preds.iter().map(|p| p.concepts.unwrap()[j]).collect() };
        Some(concept_correlation_matrix(&c(0), &c(1), &c(2), &med, &obs)?)
    } else {
        None
    };
    Ok(VariantReport {
        variant: variant.to_string(),
        all: compute_metrics(&med, &obs)?,
        id: subset(false)?,
        ood: subset(true)?,
        intervals: interval_stats(&lower, &med, &upper, &obs)?,
        structure: structure_bias_curve(&abs_err, &stems, opts.structure_bins)?,
        correlations,
    })
}

/// Reports for every evaluated variant plus the OOD comparison when all
/// three are present.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variants: Vec<VariantReport>,
    pub ood: Option<OodTable>,
}

impl EvalReport {
    pub fn new(variants: Vec<VariantReport>) -> Result<Self> {
        let entries: Vec<(String, f64, f64)> = variants
            .iter()
            .filter_map(|v| Some((v.variant.clone(), v.id.as_ref()?.mean_abs_bias, v.ood.as_ref()?.mean_abs_bias)))
            .collect();
        let ood = ood_comparison(&entries).ok();
        Ok(Self { variants, ood })
    }

    pub fn variant(&self, name: &str) -> Option<&VariantReport> {
        self.variants.iter().find(|v| v.variant == name)
    }

    /// Writes `report.json`, the four analysis CSVs and `predictions.csv`.
    pub fn write(&self, dir: &Path, predictions: &[(String, Vec<RecordPrediction>)]) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        let put = |name: &str, body: String| -> Result<()> {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(io_err(&p))
        };
        put("report.json", serde_json::to_string_pretty(self)? + "\n")?;
        put("structure_bias.csv", self.structure_csv())?;
        put("intervals.csv", self.intervals_csv())?;
        put("correlations.csv", self.correlations_csv())?;
        put("ood.csv", self.ood_csv())?;
        put("predictions.csv", predictions_csv(predictions))?;
        Ok(())
    }

    pub fn structure_csv(&self) -> String {
        let mut s = String::from("variant,bin,center,lo,hi,mean_abs_error,count,flatness\n");
        for v in &self.variants {
            for (i, b) in v.structure.bins.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{},{i},{},{},{},{},{},{}",
                    v.variant, b.center, b.lo, b.hi, b.mean_abs_error, b.count, v.structure.flatness
                );
            }
        }
        s
    }

    pub fn intervals_csv(&self) -> String {
        let mut s = String::from("variant,n,coverage,width_mean,width_std,excluded\n");
        for v in &self.variants {
            let i = &v.intervals;
            let _ = writeln!(s, "{},{},{},{},{},{}", v.variant, i.n, i.coverage, i.width_mean, i.width_std, i.excluded);
        }
        s
    }

    pub fn correlations_csv(&self) -> String {
        let mut s = String::from("variant,row,col,pearson\n");
        for v in &self.variants {
            if let Some(m) = &v.correlations {
                for (i, a) in m.series.iter().enumerate() {
                    for (j, b) in m.series.iter().enumerate() {
                        let _ = writeln!(s, "{},{a},{b},{}", v.variant, m.values[i][j]);
                    }
                }
            }
        }
        s
    }

    pub fn ood_csv(&self) -> String {
        let mut s = String::from("variant,id_abs_error,ood_abs_error,inflation,ordering_holds\n");
        let flag = self.ood.as_ref().map(|t| t.ordering_holds.to_string()).unwrap_or_default();
        for v in &self.variants {
            if let (Some(id), Some(ood)) = (&v.id, &v.ood) {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{flag}",
                    v.variant,
                    id.mean_abs_bias,
                    ood.mean_abs_bias,
                    ood.mean_abs_bias / id.mean_abs_bias
                );
            }
        }
        s
    }
}

pub fn predictions_csv(predictions: &[(String, Vec<RecordPrediction>)]) -> String {
    let mut s = String::from("variant,record,ood,observed,stems,quantiles,cover,height,stems_pred\n");
    for (v, preds) in predictions {
        for p in preds {
            let q: Vec<String> = p.quantiles.iter().map(|x| x.to_string()).collect();
            let c = p
                .concepts
                .map(|c| format!("{},{},{}", c[0], c[1], c[2]))
                .unwrap_or_else(|| ",,".into());
            let _ = writeln!(s, "{v},{},{},{},{},{},{c}", p.index, p.ood, p.observed, p.stems, q.join(";"));
        }
    }
    s
}
