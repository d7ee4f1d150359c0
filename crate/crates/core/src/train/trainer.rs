use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use tensorcore::{Array, Graph};

use super::config::TrainConfig;
use super::optim::{adam_step, clip_gradients, AdamState, Grads};
use super::schedule::cosine_warm_restart_lr;
use crate::data::record::N_LABELS;
use crate::data::{Attribute, NormalizedRecord};
use crate::error::{CoreError, Result};
use crate::loss::{curriculum_update, total_loss, CurriculumSpec, HeadInput, LossBreakdown, LossWeights};
use crate::model::{Batch, Ctx, ModelParams, Mode, Network};
use crate::seed;

/// Records available to one training stage, as indices into `records`.
pub struct StageData<'a> {
    pub records: &'a [NormalizedRecord],
    /// Records carrying the stage's target labels.
    pub train: Vec<usize>,
    /// Concept-only records mixed into batches at `concept_ratio`.
    pub extra: Vec<usize>,
    /// Validation records carrying the target labels.
    pub val: Vec<usize>,
}

/// What a stage optimizes.
#[derive(Clone, Debug)]
pub struct StageSpec {
    /// `"pretrain"` or `"finetune"`.
    pub stage: String,
    /// Attribute whose validation error drives the curriculum.
    pub target: Attribute,
    /// Supervision weight per attribute, indexed by `Attribute::index`.
    pub head_weights: [f64; N_LABELS],
    pub train: TrainConfig,
    pub loss: LossWeights,
    pub curriculum: CurriculumSpec,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LossSummary {
    pub quantile: f64,
    pub mono: f64,
    pub spatial: f64,
    pub consistency: f64,
    pub adversarial: f64,
    pub total: f64,
}

impl From<&LossBreakdown> for LossSummary {
    fn from(b: &LossBreakdown) -> Self {
        Self {
            quantile: b.quantile,
            mono: b.mono,
            spatial: b.spatial,
            consistency: b.consistency,
            adversarial: b.adversarial,
            total: b.total,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Lambdas {
    pub mono: f64,
    pub spatial: f64,
    pub consistency: f64,
    pub adv: f64,
}

impl From<[f64; 4]> for Lambdas {
    fn from(l: [f64; 4]) -> Self {
        Self {
            mono: l[0],
            spatial: l[1],
            consistency: l[2],
            adv: l[3],
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LogEntry {
    Step {
        stage: String,
        network: String,
        epoch: usize,
        step: usize,
        lr: f64,
        loss: LossSummary,
        grad_norm: f64,
        lambdas: Lambdas,
    },
    Eval {
        stage: String,
        network: String,
        epoch: usize,
        step: usize,
        val_loss: f64,
        val_rmse: f64,
        lambdas: Lambdas,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EvalPoint {
    pub epoch: usize,
    pub val_loss: f64,
    pub val_rmse: f64,
}

/// Result of a stage: the best parameters and the full history.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best_params: ModelParams,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub evals: Vec<EvalPoint>,
    pub log: Vec<LogEntry>,
    pub steps: usize,
}

impl TrainOutcome {
    /// Newline-delimited JSON of the log.
    pub fn ndjson(&self) -> Result<String> {
        let mut s = String::new();
        for e in &self.log {
            s.push_str(&serde_json::to_string(e)?);
            s.push('\n');
        }
        Ok(s)
    }
}

fn head_inputs<'a>(
    heads: &[(Attribute, tensorcore::NodeId)],
    batch: &'a Batch,
    w: &[f64; N_LABELS],
) -> Vec<HeadInput<'a>> {
    heads
        .iter()
        .map(|&(a, pred)| HeadInput {
            name: a.name(),
            pred,
            target: &batch.targets[a.index()],
            mask: &batch.masks[a.index()],
            weight: w[a.index()],
        })
        .collect()
}

fn batch_of(data: &StageData<'_>, ids: &[usize]) -> Result<Batch> {
    let recs: Vec<&NormalizedRecord> = ids.iter().map(|&i| &data.records[i]).collect();
    Batch::new(ids, &recs)
}

/// Record order for one epoch: shuffled target records plus a fresh draw of
/// concept-only records, shuffled together.
pub fn epoch_order(data: &StageData<'_>, ratio: f64, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive_str(seed::derive(seed, epoch as u64), "order"));
    let mut order = data.train.clone();
    if !data.extra.is_empty() && ratio > 0.0 {
        let mut extra = data.extra.clone();
        extra.shuffle(&mut rng);
        let k = ((ratio * data.train.len() as f64).round() as usize).min(extra.len());
        order.extend_from_slice(&extra[..k]);
    }
    order.shuffle(&mut rng);
    order
}

fn trainable_names(net: &dyn Network) -> Vec<String> {
    let frozen = net.frozen_prefixes();
    net.params()
        .names()
        .filter(|n| !frozen.iter().any(|f| n.starts_with(f.as_str())))
        .cloned()
        .collect()
}

/// Validation loss (weighted supervised part) and record-level RMSE of the
/// target median, both in normalized units.
pub fn validate(net: &dyn Network, data: &StageData<'_>, spec: &StageSpec) -> Result<(f64, f64)> {
    let zero = spec.loss.with_lambdas([0.0; 4]);
    let quantiles = net.quantiles().to_vec();
    let mid = quantiles.len() / 2;
    let t = spec.target.index();
    let (mut loss_sum, mut n_loss) = (0.0, 0usize);
    let (mut se, mut n_rec) = (0.0, 0usize);
    for ids in data.val.chunks(spec.train.batch_size) {
        let batch = batch_of(data, ids)?;
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, net.params(), Mode::Infer, 0).freeze("");
        let heads = net.heads(&mut ctx, &batch)?;
        drop(ctx);
        let inputs = head_inputs(&heads, &batch, &spec.head_weights);
        let (_, br) = total_loss(&mut g, &inputs, &zero, &quantiles)?;
        loss_sum += br.quantile * ids.len() as f64;
        n_loss += ids.len();
        let Some(&(_, node)) = heads.iter().find(|(a, _)| *a == spec.target) else {
            return Err(CoreError::Config(format!(
                "{} has no {} head",
                net.name(),
                spec.target.name()
            )));
        };
        let pred = g.value(node);
        let (h, w) = (batch.rows(), batch.cols());
        let k = quantiles.len();
        for (b, &id) in ids.iter().enumerate() {
            let r = &data.records[id];
            let (mut ps, mut os, mut c) = (0.0, 0.0, 0usize);
            for p in 0..h * w {
                if r.masks[t][p] {
                    ps += pred.data()[(b * k + mid) * h * w + p];
                    os += r.labels[t][p];
                    c += 1;
                }
            }
            if c > 0 {
                let d = (ps - os) / c as f64;
                se += d * d;
                n_rec += 1;
            }
        }
    }
    if n_loss == 0 || n_rec == 0 {
        return Err(CoreError::Data(format!(
            "no validation records with {} labels",
            spec.target.name()
        )));
    }
    Ok((loss_sum / n_loss as f64, (se / n_rec as f64).sqrt()))
}

/// Trains `net` in place and returns the parameters with the lowest
/// validation loss. `net` ends holding the final-epoch parameters.
pub fn train_network(net: &mut dyn Network, data: &StageData<'_>, spec: &StageSpec) -> Result<TrainOutcome> {
    spec.train.validate()?;
    spec.loss.validate()?;
    spec.curriculum.validate()?;
    if data.train.is_empty() {
        return Err(CoreError::Data(format!(
            "no training records with {} labels",
            spec.target.name()
        )));
    }
    if data.val.is_empty() {
        return Err(CoreError::Data(format!(
            "no validation records with {} labels",
            spec.target.name()
        )));
    }
    let tc = &spec.train;
    let quantiles = net.quantiles().to_vec();
    let frozen = net.frozen_prefixes();
    let trainable = trainable_names(net);
    let per_epoch = epoch_order(data, tc.concept_ratio, spec.seed, 0).len().div_ceil(tc.batch_size);
    let t0 = tc.t0_epochs * per_epoch;

    let mut state = AdamState::default();
    let mut weights = spec.loss.clone();
    let mut history: Vec<(usize, f64)> = Vec::new();
    let mut evals = Vec::new();
    let mut log = Vec::new();
    let mut best: Option<(usize, f64, ModelParams)> = None;
    let mut step = 0usize;
    let name = net.name().to_string();

    for epoch in 0..tc.epochs {
        weights = curriculum_update(epoch, tc.epochs, &history, &weights, &spec.curriculum)?;
        let order = epoch_order(data, tc.concept_ratio, spec.seed, epoch);
        for ids in order.chunks(tc.batch_size) {
            let lr = cosine_warm_restart_lr(step, t0, tc.t_mult, tc.base_lr, tc.min_lr);
            let batch = batch_of(data, ids)?;
            let mut g = Graph::new();
            let mut ctx = Ctx::new(&mut g, net.params(), Mode::Train, seed::derive(spec.seed, step as u64));
            for f in &frozen {
                ctx = ctx.freeze(f);
            }
            let heads = net.heads(&mut ctx, &batch)?;
            let leaves = ctx.trainable_leaves().to_vec();
            drop(ctx);
            let inputs = head_inputs(&heads, &batch, &spec.head_weights);
            let (loss, br) = total_loss(&mut g, &inputs, &weights, &quantiles)?;
            if !br.total.is_finite() {
                return Err(CoreError::NumericFailure(format!(
                    "{name}: non-finite loss at epoch {epoch}, step {step}"
                )));
            }
            let mut gm = g.backward(loss)?;
            let mut grads = Grads::new();
            for (n, id) in leaves {
                if let Some(a) = gm.remove(id) {
                    grads.insert(n, a);
                }
            }
            for n in &trainable {
                if !grads.contains_key(n) {
                    grads.insert(n.clone(), Array::zeros(net.params().get(n)?.shape()));
                }
            }
            let grad_norm = clip_gradients(&mut grads, tc.clip_norm)?;
            if !grad_norm.is_finite() {
                return Err(CoreError::NumericFailure(format!(
                    "{name}: non-finite gradient at epoch {epoch}, step {step}"
                )));
            }
            adam_step(net.params_mut(), &grads, &mut state, lr, &tc.adam)?;
            log.push(LogEntry::Step {
                stage: spec.stage.clone(),
                network: name.clone(),
                epoch,
                step,
                lr,
                loss: LossSummary::from(&br),
                grad_norm,
                lambdas: weights.lambdas().into(),
            });
            step += 1;
        }
        if (epoch + 1) % tc.eval_every == 0 || epoch + 1 == tc.epochs {
            let (val_loss, val_rmse) = validate(net, data, spec)?;
            if !val_loss.is_finite() || !val_rmse.is_finite() {
                return Err(CoreError::NumericFailure(format!(
                    "{name}: non-finite validation loss at epoch {epoch}"
                )));
            }
            history.push((epoch, val_rmse));
            evals.push(EvalPoint {
                epoch,
                val_loss,
                val_rmse,
            });
            log.push(LogEntry::Eval {
                stage: spec.stage.clone(),
                network: name.clone(),
                epoch,
                step,
                val_loss,
                val_rmse,
                lambdas: weights.lambdas().into(),
            });
            if best.as_ref().map_or(true, |(_, l, _)| val_loss < *l) {
                best = Some((epoch, val_loss, net.params().clone()));
            }
        }
    }
    let (best_epoch, best_val_loss, best_params) = best.expect("last epoch is always evaluated");
    Ok(TrainOutcome {
        best_params,
        best_epoch,
        best_val_loss,
        evals,
        log,
        steps: step,
    })
}
