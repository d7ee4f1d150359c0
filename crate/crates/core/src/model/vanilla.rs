use rand::Rng;
use tensorcore::{Array, Graph, NodeId};

use super::batch::Batch;
use super::config::ModelSettings;
use super::layers::{Ctx, Mode};
use super::params::ModelParams;
use super::pgcbm::{concept_submodel, AGGREGATOR};
use super::submodel::{InputLayout, SubModel};
use crate::data::Attribute;
use crate::error::Result;

/// Frozen concept predictors whose median maps feed a separately trained
/// aggregator.
#[derive(Clone, Debug)]
pub struct VanillaNet {
    pub concepts: Vec<SubModel>,
    pub g: SubModel,
}

impl VanillaNet {
    pub fn new(s: &ModelSettings) -> Result<Self> {
        s.validate()?;
        let concepts = Attribute::CONCEPTS
            .iter()
            .map(|&a| concept_submodel(a, &s.concept))
            .collect::<Result<Vec<_>>>()?;
        let g = SubModel::new(
            AGGREGATOR,
            s.aggregator.clone(),
            InputLayout::single("medians", 3),
        )?;
        Ok(Self { concepts, g })
    }

    /// Aggregator parameters only; concept parameters come from pretraining.
    pub fn init_aggregator<R: Rng>(&self, rng: &mut R) -> Result<ModelParams> {
        self.g.init(rng)
    }

    pub fn param_count(&self) -> usize {
        self.concepts.iter().map(|c| c.param_count()).sum::<usize>() + self.g.param_count()
    }

    /// Inference-mode concept medians `[B, 3, H, W]`, computed outside any
    /// training graph.
    pub fn concept_medians(&self, params: &ModelParams, batch: &Batch) -> Result<Array> {
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, params, Mode::Infer, 0);
        for c in &self.concepts {
            ctx = ctx.freeze(&super::pgcbm::prefix(&c.name));
        }
        let inputs = batch.input_nodes(ctx.g)?;
        let mut medians = Vec::new();
        for c in &self.concepts {
            let q = c.forward(&mut ctx, &inputs, Some(&batch.coords))?.quantiles;
            let m = c.cfg.median_index();
            medians.push(ctx.g.slice(q, 1, m, m + 1)?);
        }
        let out = g.concat(&medians, 1)?;
        Ok(g.value(out).clone())
    }

    /// Aggregator pass on precomputed medians.
    pub fn aggregate(&self, ctx: &mut Ctx<'_>, medians: Array) -> Result<NodeId> {
        let x = ctx.constant(medians)?;
        Ok(self.g.forward(ctx, &[x], None)?.quantiles)
    }
}
