//! The three model variants behind a name-keyed registry.

use std::any::Any;
use std::collections::HashMap;
use std::sync::Mutex;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tensorcore::{Array, NodeId};

use crate::data::Attribute;
use crate::error::{CoreError, Result};
use crate::model::{
    blackbox_submodel, prefix, Batch, Ctx, ModelParams, ModelSettings, Network, PgcbmNet,
    SubModel, VanillaNet,
};

/// A model variant: how its network is assembled, initialized and restored.
pub trait Variant: Send + Sync {
    fn name(&self) -> &'static str;

    /// Pretrained concept sub-models the variant starts from.
    fn required_concepts(&self) -> &'static [Attribute];

    /// Whether concept-only records join stage-2 batches.
    fn mixes_concept_records(&self) -> bool;

    /// Fresh network; concept parameters are copied from `pretrained`.
    fn build(
        &self,
        settings: &ModelSettings,
        pretrained: &ModelParams,
        seed: u64,
    ) -> Result<Box<dyn VariantModel>>;

    /// Network holding exactly `params`.
    fn restore(&self, settings: &ModelSettings, params: ModelParams) -> Result<Box<dyn VariantModel>> {
        let mut m = self.build_empty(settings)?;
        replace_params(m.params_mut(), params)?;
        Ok(m)
    }

    /// Network with freshly initialized parameters everywhere.
    fn build_empty(&self, settings: &ModelSettings) -> Result<Box<dyn VariantModel>>;
}

/// A built variant network.
pub trait VariantModel: Network {
    fn variant(&self) -> &'static str;
    fn as_any(&self) -> &dyn Any;
}

fn replace_params(dst: &mut ModelParams, src: ModelParams) -> Result<()> {
    let want: Vec<&String> = dst.names().collect();
    let got: Vec<&String> = src.names().collect();
    if want != got {
        let missing: Vec<_> = want.iter().filter(|n| !src.contains(n)).take(3).collect();
        let extra: Vec<_> = got.iter().filter(|n| !dst.contains(n)).take(3).collect();
        return Err(CoreError::Config(format!(
            "parameter table does not match the architecture (missing {missing:?}, unexpected {extra:?})"
        )));
    }
    for (n, a) in src.iter() {
        dst.set(n, a.clone())?;
    }
    Ok(())
}

fn copy_concepts(dst: &mut ModelParams, pretrained: &ModelParams) -> Result<()> {
    for a in Attribute::CONCEPTS {
        let p = prefix(a.name());
        if pretrained.count_prefix(&p) == 0 {
            return Err(CoreError::MissingPrerequisite(format!(
                "pretrained {} sub-model",
                a.name()
            )));
        }
        let expected = dst.names().filter(|n| n.starts_with(&p)).count();
        if dst.copy_prefix(pretrained, &p)? != expected {
            return Err(CoreError::Config(format!(
                "pretrained {} sub-model does not match the configured architecture",
                a.name()
            )));
        }
    }
    Ok(())
}

/// Concept bottleneck trained end to end.
pub struct PgcbmModel {
    pub net: PgcbmNet,
    pub params: ModelParams,
}

impl Network for PgcbmModel {
    fn name(&self) -> &str {
        "pgcbm"
    }

    fn params(&self) -> &ModelParams {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    fn quantiles(&self) -> &[f64] {
        &self.net.g.cfg.quantiles
    }

    fn heads(&self, ctx: &mut Ctx<'_>, batch: &Batch) -> Result<Vec<(Attribute, NodeId)>> {
        let out = self.net.forward(ctx, batch)?;
        let mut v: Vec<_> = Attribute::CONCEPTS.into_iter().zip(out.concepts).collect();
        v.push((Attribute::Agbd, out.task));
        Ok(v)
    }
}

impl VariantModel for PgcbmModel {
    fn variant(&self) -> &'static str {
        "pgcbm"
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

/// Frozen concept predictors with an aggregator over their medians.
///
/// Concept medians are cached per record id (`Batch::ids`), which is valid
/// because the concept parameters never change after construction.
pub struct VanillaModel {
    pub net: VanillaNet,
    pub params: ModelParams,
    cache: Mutex<HashMap<usize, Vec<f64>>>,
}

impl VanillaModel {
    fn new(net: VanillaNet, params: ModelParams) -> Self {
        Self {
            net,
            params,
            cache: Mutex::new(HashMap::new()),
        }
    }

    /// Concept medians `[B, 3, H, W]` for a batch, served from the cache
    /// when every record has been seen.
    pub fn medians(&self, batch: &Batch) -> Result<Array> {
        let (h, w) = (batch.rows(), batch.cols());
        let plane = 3 * h * w;
        let mut cache = self.cache.lock().expect("median cache poisoned");
        if !batch.ids.iter().all(|id| cache.contains_key(id)) {
            let m = self.net.concept_medians(&self.params, batch)?;
            for (i, &id) in batch.ids.iter().enumerate() {
                cache.insert(id, m.data()[i * plane..(i + 1) * plane].to_vec());
            }
            return Ok(m);
        }
        let mut data = Vec::with_capacity(batch.size * plane);
        for id in &batch.ids {
            data.extend_from_slice(&cache[id]);
        }
        Ok(Array::new(vec![batch.size, 3, h, w], data)?)
    }
}

impl Network for VanillaModel {
    fn name(&self) -> &str {
        "vanilla"
    }

    fn params(&self) -> &ModelParams {
        &self.params
    }

    fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    fn quantiles(&self) -> &[f64] {
        &self.net.g.cfg.quantiles
    }

    fn frozen_prefixes(&self) -> Vec<String> {
        self.net.concepts.iter().map(|c| prefix(&c.name)).collect()
    }

    fn unfreeze(&mut self, p: &str) -> Result<()> {
        if self
            .frozen_prefixes()
            .iter()
            .any(|f| f.starts_with(p) || p.starts_with(f.as_str()))
        {
            return Err(CoreError::FrozenConcepts);
        }
        Ok(())
    }

    fn heads(&self, ctx: &mut Ctx<'_>, batch: &Batch) -> Result<Vec<(Attribute, NodeId)>> {
        let m = self.medians(batch)?;
        Ok(vec![(Attribute::Agbd, self.net.aggregate(ctx, m)?)])
    }
}

impl VariantModel for VanillaModel {
    fn variant(&self) -> &'static str {
        "vanilla"
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

/// Imagery straight to biomass, sized to the concept model.
pub struct BlackboxModel {
    pub net: SubModel,
    pub params: ModelParams,
}

impl Network for BlackboxModel {
    fn name(&self) -> &str {
        "blackbox"
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
        Ok(vec![(Attribute::Agbd, out.quantiles)])
    }
}

impl VariantModel for BlackboxModel {
    fn variant(&self) -> &'static str {
        "blackbox"
    }

    fn as_any(&self) -> &dyn Any {
        self
    }
}

pub struct Pgcbm;
pub struct Vanilla;
pub struct Blackbox;

impl Variant for Pgcbm {
    fn name(&self) -> &'static str {
        "pgcbm"
    }

    fn required_concepts(&self) -> &'static [Attribute] {
        &Attribute::CONCEPTS
    }

    fn mixes_concept_records(&self) -> bool {
        true
    }

    fn build(&self, s: &ModelSettings, pretrained: &ModelParams, seed: u64) -> Result<Box<dyn VariantModel>> {
        let net = PgcbmNet::new(s)?;
        let mut params = net.init(&mut ChaCha8Rng::seed_from_u64(seed))?;
        copy_concepts(&mut params, pretrained)?;
        Ok(Box::new(PgcbmModel { net, params }))
    }

    fn build_empty(&self, s: &ModelSettings) -> Result<Box<dyn VariantModel>> {
        let net = PgcbmNet::new(s)?;
        let params = net.init(&mut ChaCha8Rng::seed_from_u64(0))?;
        Ok(Box::new(PgcbmModel { net, params }))
    }
}

impl Variant for Vanilla {
    fn name(&self) -> &'static str {
        "vanilla"
    }

    fn required_concepts(&self) -> &'static [Attribute] {
        &Attribute::CONCEPTS
    }

    fn mixes_concept_records(&self) -> bool {
        false
    }

    fn build(&self, s: &ModelSettings, pretrained: &ModelParams, seed: u64) -> Result<Box<dyn VariantModel>> {
        let net = VanillaNet::new(s)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = net.init_aggregator(&mut rng)?;
        for c in &net.concepts {
            params.merge(c.init(&mut rng)?)?;
        }
        copy_concepts(&mut params, pretrained)?;
        Ok(Box::new(VanillaModel::new(net, params)))
    }

    fn build_empty(&self, s: &ModelSettings) -> Result<Box<dyn VariantModel>> {
        let net = VanillaNet::new(s)?;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut params = net.init_aggregator(&mut rng)?;
        for c in &net.concepts {
            params.merge(c.init(&mut rng)?)?;
        }
        Ok(Box::new(VanillaModel::new(net, params)))
    }
}

impl Variant for Blackbox {
    fn name(&self) -> &'static str {
        "blackbox"
    }

    fn required_concepts(&self) -> &'static [Attribute] {
        &[]
    }

    fn mixes_concept_records(&self) -> bool {
        false
    }

    fn build(&self, s: &ModelSettings, _pretrained: &ModelParams, seed: u64) -> Result<Box<dyn VariantModel>> {
        let net = blackbox_submodel(s)?;
        let params = net.init(&mut ChaCha8Rng::seed_from_u64(seed))?;
        Ok(Box::new(BlackboxModel { net, params }))
    }

    fn build_empty(&self, s: &ModelSettings) -> Result<Box<dyn VariantModel>> {
        self.build(s, &ModelParams::new(), 0)
    }
}

/// Variants addressable by name.
pub struct Registry {
    entries: Vec<Box<dyn Variant>>,
}

impl Default for Registry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(Pgcbm));
        r.register(Box::new(Vanilla));
        r.register(Box::new(Blackbox));
        r
    }
}

impl Registry {
    pub fn empty() -> Self {
        Self {
            entries: Vec::new(),
        }
    }

    /// Adds a variant, replacing any with the same name.
    pub fn register(&mut self, v: Box<dyn Variant>) {
        self.entries.retain(|e| e.name() != v.name());
        self.entries.push(v);
    }

    pub fn get(&self, name: &str) -> Result<&dyn Variant> {
        self.entries
            .iter()
            .find(|e| e.name() == name)
            .map(|e| e.as_ref())
            .ok_or_else(|| CoreError::UnknownVariant(name.to_string()))
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.entries.iter().map(|e| e.name()).collect()
    }
}
