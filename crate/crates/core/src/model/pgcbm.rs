use rand::Rng;
use tensorcore::{Array, Graph, NodeId};

use super::batch::Batch;
use super::config::{ModelSettings, SubModelConfig};
use super::layers::{Ctx, Mode};
use super::params::ModelParams;
use super::submodel::{InputLayout, SubModel};
use crate::data::Attribute;
use crate::error::{CoreError, Result};

/// Name prefix of the aggregation network.
pub const AGGREGATOR: &str = "g";

/// Concept sub-model predicting quantiles of one intermediate attribute
/// from imagery and position.
pub fn concept_submodel(attr: Attribute, cfg: &SubModelConfig) -> Result<SubModel> {
    if attr == Attribute::Agbd {
        return Err(CoreError::Config("agbd is not a concept".into()));
    }
    SubModel::new(attr.name(), cfg.clone(), InputLayout::imagery())
}

/// Parameter-name prefix of a sub-model (`"cover."`).
pub fn prefix(name: &str) -> String {
    format!("{name}.")
}

/// Concept networks feeding an aggregator through a 3K-channel bottleneck.
#[derive(Clone, Debug)]
pub struct PgcbmNet {
    pub concepts: Vec<SubModel>,
    pub g: SubModel,
    pub bypass_latent: bool,
}

pub struct PgcbmOutput {
    /// `[B, K, H, W]` per concept, in `Attribute::CONCEPTS` order.
    pub concepts: [NodeId; 3],
    pub features: [NodeId; 3],
    /// `[B, K, H, W]`
    pub task: NodeId,
}

impl PgcbmNet {
    pub fn new(s: &ModelSettings) -> Result<Self> {
        s.validate()?;
        let concepts = Attribute::CONCEPTS
            .iter()
            .map(|&a| concept_submodel(a, &s.concept))
            .collect::<Result<Vec<_>>>()?;
        let k = s.concept.k();
        let mut layout = InputLayout::single("concepts", 3 * k);
        if s.bypass_latent {
            layout
                .modalities
                .push(("latent".into(), 3 * s.concept.decoder_channels));
        }
        let g = SubModel::new(AGGREGATOR, s.aggregator.clone(), layout)?;
        Ok(Self {
            concepts,
            g,
            bypass_latent: s.bypass_latent,
        })
    }

    pub fn init<R: Rng>(&self, rng: &mut R) -> Result<ModelParams> {
        let mut p = ModelParams::new();
        for c in &self.concepts {
            p.merge(c.init(rng)?)?;
        }
        p.merge(self.g.init(rng)?)?;
        Ok(p)
    }

    pub fn param_count(&self) -> usize {
        self.concepts.iter().map(|c| c.param_count()).sum::<usize>() + self.g.param_count()
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, batch: &Batch) -> Result<PgcbmOutput> {
        let inputs = batch.input_nodes(ctx.g)?;
        let mut q = Vec::with_capacity(3);
        let mut f = Vec::with_capacity(3);
        for c in &self.concepts {
            let o = c.forward(ctx, &inputs, Some(&batch.coords))?;
            q.push(o.quantiles);
            f.push(o.features);
        }
        let concepts = [q[0], q[1], q[2]];
        let features = [f[0], f[1], f[2]];
        let task = self.aggregate(ctx, &concepts, Some(&features))?;
        Ok(PgcbmOutput {
            concepts,
            features,
            task,
        })
    }

    /// Aggregator pass on concept quantile maps; decoder features are used
    /// only when the bypass is enabled.
    pub fn aggregate(
        &self,
        ctx: &mut Ctx<'_>,
        concepts: &[NodeId; 3],
        features: Option<&[NodeId; 3]>,
    ) -> Result<NodeId> {
        let x = ctx.g.concat(concepts, 1)?;
        let mut inputs = vec![x];
        if self.bypass_latent {
            let f = features.ok_or_else(|| {
                CoreError::Data("bypass_latent needs concept decoder features".into())
            })?;
            inputs.push(ctx.g.concat(f, 1)?);
        }
        Ok(self.g.forward(ctx, &inputs, None)?.quantiles)
    }

    /// Inference-mode concept and task quantiles.
    pub fn predict(&self, params: &ModelParams, batch: &Batch) -> Result<(Vec<Array>, Array)> {
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, params, Mode::Infer, 0);
        let out = self.forward(&mut ctx, batch)?;
        let concepts = out
            .concepts
            .iter()
            .map(|&n| g.value(n).clone())
            .collect();
        Ok((concepts, g.value(out.task).clone()))
    }

    /// Inference-mode task quantiles from externally supplied concept maps
    /// `[B, K, H, W]`. With the bypass enabled the concept decoder features
    /// still come from the imagery in `batch`.
    pub fn predict_from_concepts(
        &self,
        params: &ModelParams,
        batch: &Batch,
        concepts: &[Array; 3],
    ) -> Result<Array> {
        let mut g = Graph::new();
        let mut ctx = Ctx::new(&mut g, params, Mode::Infer, 0);
        let features = if self.bypass_latent {
            let inputs = batch.input_nodes(ctx.g)?;
            let mut f = Vec::new();
            for c in &self.concepts {
                f.push(c.forward(&mut ctx, &inputs, Some(&batch.coords))?.features);
            }
            Some([f[0], f[1], f[2]])
        } else {
            None
        };
        let mut nodes = Vec::new();
        for c in concepts {
            nodes.push(ctx.constant(c.clone())?);
        }
        let task = self.aggregate(&mut ctx, &[nodes[0], nodes[1], nodes[2]], features.as_ref())?;
        Ok(g.value(task).clone())
    }
}
