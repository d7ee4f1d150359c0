use rand::Rng;
use tensorcore::{Array, NodeId};

use super::config::SubModelConfig;
use super::layers::{Ctx, Mode};
use super::params::{he_normal, ModelParams};
use super::posenc::sinusoidal_position_encoding;
use crate::error::{CoreError, Result};

/// Input channels of one sub-model.
#[derive(Clone, Debug, PartialEq)]
pub struct InputLayout {
    /// `(branch name, channels)` per modality.
    pub modalities: Vec<(String, usize)>,
    pub position: bool,
}

impl InputLayout {
    /// SAR and optical branches plus position.
    pub fn imagery() -> Self {
        Self {
            modalities: vec![
                ("sar".into(), crate::data::SAR_CHANNELS),
                ("optical".into(), crate::data::OPTICAL_CHANNELS),
            ],
            position: true,
        }
    }

    pub fn single(name: &str, channels: usize) -> Self {
        Self {
            modalities: vec![(name.into(), channels)],
            position: false,
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Init {
    He(usize),
    Zeros,
    Ones,
    Spread,
}

/// One encoder-pyramid-attention-decoder network with a quantile head.
#[derive(Clone, Debug, PartialEq)]
pub struct SubModel {
    pub name: String,
    pub cfg: SubModelConfig,
    pub layout: InputLayout,
}

pub struct SubModelOutput {
    /// `[B, K, H, W]`; sorted along K in infer mode.
    pub quantiles: NodeId,
    /// Final decoder features `[B, C, H, W]`.
    pub features: NodeId,
}

impl SubModel {
    pub fn new(name: &str, cfg: SubModelConfig, layout: InputLayout) -> Result<Self> {
        cfg.validate()?;
        if layout.modalities.is_empty() || layout.modalities.iter().any(|(_, c)| *c == 0) {
            return Err(CoreError::Config(format!("{name}: empty input layout")));
        }
        Ok(Self {
            name: name.to_string(),
            cfg,
            layout,
        })
    }

    fn n(&self, s: &str) -> String {
        format!("{}.{}", self.name, s)
    }

    fn specs(&self) -> Vec<(String, Vec<usize>, Init)> {
        let c = &self.cfg;
        let (e, d, dc, k) = (c.encoder_channels, c.width, c.decoder_channels, c.k());
        let mut v = Vec::new();
        let conv = |v: &mut Vec<_>, name: String, co: usize, ci: usize, ks: usize| {
            v.push((format!("{name}.w"), vec![co, ci, ks, ks], Init::He(ci * ks * ks)));
            v.push((format!("{name}.b"), vec![co], Init::Zeros));
        };
        let conv_nb = |v: &mut Vec<_>, name: String, co: usize, ci: usize, ks: usize| {
            v.push((format!("{name}.w"), vec![co, ci, ks, ks], Init::He(ci * ks * ks)));
        };
        let norm = |v: &mut Vec<_>, name: String, ch: usize| {
            v.push((format!("{name}.gamma"), vec![ch], Init::Ones));
            v.push((format!("{name}.beta"), vec![ch], Init::Zeros));
        };
        let dense = |v: &mut Vec<_>, name: String, i: usize, o: usize| {
            v.push((format!("{name}.w"), vec![i, o], Init::He(i)));
            v.push((format!("{name}.b"), vec![o], Init::Zeros));
        };
        for (m, ch) in &self.layout.modalities {
            conv_nb(&mut v, self.n(&format!("enc.{m}.c1")), e, *ch, 3);
            norm(&mut v, self.n(&format!("enc.{m}.n1")), e);
            conv(&mut v, self.n(&format!("enc.{m}.c2")), e, e, 3);
        }
        let mut fused_in = e * self.layout.modalities.len();
        if self.layout.position {
            dense(&mut v, self.n("pos.d1"), 4 * c.position_frequencies, c.position_channels);
            fused_in += c.position_channels;
        }
        conv(&mut v, self.n("fuse"), d, fused_in, 1);
        for (i, _) in c.pyramid_scales.iter().enumerate() {
            conv(&mut v, self.n(&format!("pyr.{i}")), d, d, 3);
        }
        conv(&mut v, self.n("pyr.fuse"), d, d * c.pyramid_scales.len(), 1);
        norm(&mut v, self.n("pyr.n"), d);
        for j in 0..c.attention_blocks {
            norm(&mut v, self.n(&format!("att{j}.ln1")), d);
            dense(&mut v, self.n(&format!("att{j}.q")), d, d);
            v.push((self.n(&format!("att{j}.k.w")), vec![d, d], Init::He(d)));
            dense(&mut v, self.n(&format!("att{j}.v")), d, d);
            dense(&mut v, self.n(&format!("att{j}.out")), d, d);
            norm(&mut v, self.n(&format!("att{j}.ln2")), d);
            dense(&mut v, self.n(&format!("att{j}.mlp1")), d, c.mlp_ratio * d);
            dense(&mut v, self.n(&format!("att{j}.mlp2")), c.mlp_ratio * d, d);
        }
        conv_nb(&mut v, self.n("dec.c1"), dc, d, 3);
        norm(&mut v, self.n("dec.n1"), dc);
        conv_nb(&mut v, self.n("dec.c2"), dc, dc, 3);
        norm(&mut v, self.n("dec.n2"), dc);
        conv(&mut v, self.n("dec.skip"), dc, d, 1);
        conv(&mut v, self.n("dec.c3"), dc, dc, 3);
        norm(&mut v, self.n("dec.n3"), dc);
        v.push((self.n("head.w"), vec![k, dc, 1, 1], Init::He(dc)));
        v.push((self.n("head.b"), vec![k], Init::Spread));
        v
    }

    /// Fresh parameters: He-normal weights, zero biases, unit norm scales
    /// and head biases spread evenly over [−1, 1].
    pub fn init<R: Rng>(&self, rng: &mut R) -> Result<ModelParams> {
        let mut p = ModelParams::new();
        for (name, shape, init) in self.specs() {
            let a = match init {
                Init::He(fan) => he_normal(rng, &shape, fan),
                Init::Zeros => Array::zeros(&shape),
                Init::Ones => Array::full(&shape, 1.0),
                Init::Spread => {
                    let k = shape[0];
                    Array::from_vec(
                        (0..k)
                            .map(|i| -1.0 + 2.0 * i as f64 / (k - 1).max(1) as f64)
                            .collect(),
                    )
                }
            };
            p.insert(name, a)?;
        }
        Ok(p)
    }

    pub fn param_count(&self) -> usize {
        self.specs()
            .iter()
            .map(|(_, s, _)| s.iter().product::<usize>())
            .sum()
    }

    /// Position-encoding rows `[B, 4P]` for `(lon, lat)` pairs.
    pub fn position_array(&self, coords: &[(f64, f64)]) -> Result<Array> {
        let p = self.cfg.position_frequencies;
        let data: Vec<f64> = coords
            .iter()
            .flat_map(|&(lon, lat)| sinusoidal_position_encoding(lon, lat, p))
            .collect();
        Ok(Array::new(vec![coords.len(), 4 * p], data)?)
    }

    /// Builds the forward pass. `inputs` holds one `[B, C, H, W]` node per
    /// modality; `coords` is required when the layout has a position branch.
    pub fn forward(
        &self,
        ctx: &mut Ctx<'_>,
        inputs: &[NodeId],
        coords: Option<&[(f64, f64)]>,
    ) -> Result<SubModelOutput> {
        let c = &self.cfg;
        if inputs.len() != self.layout.modalities.len() {
            return Err(CoreError::Config(format!(
                "{}: expected {} inputs, got {}",
                self.name,
                self.layout.modalities.len(),
                inputs.len()
            )));
        }
        let shape = ctx.g.shape(inputs[0]).to_vec();
        if shape.len() != 4 {
            return Err(CoreError::Data(format!("{}: input shape {:?}", self.name, shape)));
        }
        let (b, h, w) = (shape[0], shape[2], shape[3]);
        if h != w {
            return Err(CoreError::Data(format!("{}: non-square patch {h}x{w}", self.name)));
        }
        c.check_patch(h)?;
        let groups = c.norm_groups;
        let mut branches = Vec::new();
        for ((m, ch), &x) in self.layout.modalities.iter().zip(inputs) {
            let s = ctx.g.shape(x).to_vec();
            if s != [b, *ch, h, w] {
                return Err(CoreError::Data(format!(
                    "{}: modality {m} has shape {s:?}, expected {:?}",
                    self.name,
                    [b, *ch, h, w]
                )));
            }
            let y = ctx.conv_no_bias(x, &self.n(&format!("enc.{m}.c1")))?;
            let y = ctx.group_norm(y, groups, &self.n(&format!("enc.{m}.n1")))?;
            let y = ctx.g.gelu(y)?;
            let y = ctx.dropout(y, c.dropout, &self.n(&format!("enc.{m}.drop")))?;
            let y = ctx.conv(y, &self.n(&format!("enc.{m}.c2")))?;
            branches.push(ctx.g.gelu(y)?);
        }
        if self.layout.position {
            let coords = coords.ok_or_else(|| {
                CoreError::Data(format!("{}: position branch needs coordinates", self.name))
            })?;
            if coords.len() != b {
                return Err(CoreError::Data(format!("{}: {} coordinates for batch {b}", self.name, coords.len())));
            }
            let pe = ctx.constant(self.position_array(coords)?)?;
            let y = ctx.dense(pe, &self.n("pos.d1"))?;
            let y = ctx.g.gelu(y)?;
            let pc = c.position_channels;
            let y = ctx.g.reshape(y, &[b, pc, 1, 1])?;
            branches.push(ctx.g.broadcast_to(y, &[b, pc, h, w])?);
        }
        let x = ctx.g.concat(&branches, 1)?;
        let f = ctx.conv(x, &self.n("fuse"))?;

        let mut pyr = Vec::new();
        for (i, &s) in c.pyramid_scales.iter().enumerate() {
            let y = ctx.g.avg_pool(f, s)?;
            let y = ctx.conv(y, &self.n(&format!("pyr.{i}")))?;
            let y = ctx.g.gelu(y)?;
            pyr.push(ctx.g.upsample(y, s)?);
        }
        let y = ctx.g.concat(&pyr, 1)?;
        let y = ctx.conv(y, &self.n("pyr.fuse"))?;
        let y = ctx.group_norm(y, groups, &self.n("pyr.n"))?;
        let mut f = ctx.g.gelu(y)?;

        if c.attention_blocks > 0 {
            let ap = c.attention_pool;
            let (hp, wp) = (h / ap, w / ap);
            let d = c.width;
            let t = ctx.g.avg_pool(f, ap)?;
            let t = ctx.g.reshape(t, &[b, d, hp * wp])?;
            let t0 = ctx.g.permute(t, &[0, 2, 1])?;
            let mut t = t0;
            for j in 0..c.attention_blocks {
                t = self.attention_block(ctx, t, j)?;
            }
            let delta = ctx.g.sub(t, t0)?;
            let delta = ctx.g.permute(delta, &[0, 2, 1])?;
            let delta = ctx.g.reshape(delta, &[b, d, hp, wp])?;
            let delta = ctx.g.upsample(delta, ap)?;
            f = ctx.g.add(f, delta)?;
        }

        let y = ctx.conv_no_bias(f, &self.n("dec.c1"))?;
        let y = ctx.group_norm(y, groups, &self.n("dec.n1"))?;
        let y = ctx.g.gelu(y)?;
        let y = ctx.dropout(y, c.dropout, &self.n("dec.drop"))?;
        let y = ctx.conv_no_bias(y, &self.n("dec.c2"))?;
        let y = ctx.group_norm(y, groups, &self.n("dec.n2"))?;
        let skip = ctx.conv(f, &self.n("dec.skip"))?;
        let y = ctx.g.add(y, skip)?;
        let y = ctx.g.gelu(y)?;
        let y = ctx.conv(y, &self.n("dec.c3"))?;
        let y = ctx.g.gelu(y)?;
        let features = ctx.group_norm(y, groups, &self.n("dec.n3"))?;
        let raw = ctx.conv(features, &self.n("head"))?;
        let quantiles = match ctx.mode {
            Mode::Train => raw,
            Mode::Infer => ctx.g.sort(raw, 1)?,
        };
        Ok(SubModelOutput {
            quantiles,
            features,
        })
    }

    fn attention_block(&self, ctx: &mut Ctx<'_>, x: NodeId, j: usize) -> Result<NodeId> {
        let c = &self.cfg;
        let s = ctx.g.shape(x).to_vec();
        let (b, n, d) = (s[0], s[1], s[2]);
        let (heads, dh) = (c.heads, c.width / c.heads);
        let a = ctx.layer_norm(x, &self.n(&format!("att{j}.ln1")))?;
        let heads_of = |ctx: &mut Ctx<'_>, t: NodeId, perm: &[usize]| -> Result<NodeId> {
            let t = ctx.g.reshape(t, &[b, n, heads, dh])?;
            Ok(ctx.g.permute(t, perm)?)
        };
        // Keys carry no bias: a shift shared by all keys cancels in the softmax.
        let q = ctx.dense(a, &self.n(&format!("att{j}.q")))?;
        let kw = ctx.param(&self.n(&format!("att{j}.k.w")))?;
        let k = ctx.g.matmul(a, kw)?;
        let v = ctx.dense(a, &self.n(&format!("att{j}.v")))?;
        let q = heads_of(ctx, q, &[0, 2, 1, 3])?;
        let kt = heads_of(ctx, k, &[0, 2, 3, 1])?;
        let v = heads_of(ctx, v, &[0, 2, 1, 3])?;
        let sc = ctx.g.matmul(q, kt)?;
        let sc = ctx.g.scale(sc, 1.0 / (dh as f64).sqrt())?;
        let att = ctx.g.softmax(sc, 3)?;
        let o = ctx.g.matmul(att, v)?;
        let o = ctx.g.permute(o, &[0, 2, 1, 3])?;
        let o = ctx.g.reshape(o, &[b, n, d])?;
        let o = ctx.dense(o, &self.n(&format!("att{j}.out")))?;
        let x = ctx.g.add(x, o)?;
        let m = ctx.layer_norm(x, &self.n(&format!("att{j}.ln2")))?;
        let m = ctx.dense(m, &self.n(&format!("att{j}.mlp1")))?;
        let m = ctx.g.gelu(m)?;
        let m = ctx.dense(m, &self.n(&format!("att{j}.mlp2")))?;
        Ok(ctx.g.add(x, m)?)
    }
}
