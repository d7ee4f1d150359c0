use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tensorcore::{Array, Graph, NodeId};

use super::batch::Batch;
use super::config::SubModelConfig;
use super::layers::{Ctx, Mode};
use super::params::ModelParams;
use super::pgcbm::concept_submodel;
use super::submodel::SubModel;
use crate::data::Attribute;
use crate::error::Result;

/// A trainable network with named parameters and one quantile head per
/// supervised attribute.
pub trait Network: Send + Sync {
    fn name(&self) -> &str;
    fn params(&self) -> &ModelParams;
    fn params_mut(&mut self) -> &mut ModelParams;
    fn quantiles(&self) -> &[f64];

    /// Parameter prefixes that receive no updates.
    fn frozen_prefixes(&self) -> Vec<String> {
        Vec::new()
    }

    /// Requests that parameters under `prefix` be trained.
    fn unfreeze(&mut self, _prefix: &str) -> Result<()> {
        Ok(())
    }

    /// Builds every supervised head, `[B, K, H, W]` each.
    fn heads(&self, ctx: &mut Ctx<'_>, batch: &Batch) -> Result<Vec<(Attribute, NodeId)>>;

    /// Inference-mode head outputs.
    fn predict(&self, batch: &Batch) -> Result<Vec<(Attribute, Array)>> {
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, self.params(), Mode::Infer, 0).freeze("");
        let heads = self.heads(&mut ctx, batch)?;
        Ok(heads
            .into_iter()
            .map(|(a, n)| (a, g.value(n).clone()))
            .collect())
    }
}

/// A single concept sub-model trained on its own attribute.
#[derive(Clone, Debug)]
pub struct ConceptNet {
    pub attr: Attribute,
    pub net: SubModel,
    pub params: ModelParams,
}

impl ConceptNet {
    pub fn new(attr: Attribute, cfg: &SubModelConfig, seed: u64) -> Result<Self> {
        let net = concept_submodel(attr, cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = net.init(&mut rng)?;
        Ok(Self { attr, net, params })
    }
}

impl Network for ConceptNet {
    fn name(&self) -> &str {
        &self.net.name
    }

    fn params(&self) -> &ModelParams {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    fn quantiles(&self) -> &[f64] {
        &self.net.cfg.quantiles
    }

    fn heads(&self, ctx: &mut Ctx<'_>, batch: &Batch) -> Result<Vec<(Attribute, NodeId)>> {
        let inputs = batch.input_nodes(ctx.g)?;
        let out = self.net.forward(ctx, &inputs, Some(&batch.coords))?;
        Ok(vec![(self.attr, out.quantiles)])
    }
}
