use std::collections::HashMap;

use tensorcore::{Array, Graph, NodeId};

use super::params::ModelParams;
use crate::error::Result;
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, raw quantile outputs.
    Train,
    /// No dropout, quantiles sorted per pixel.
    Infer,
}

const NORM_EPS: f64 = 1e-5;

/// Binds named parameters into a graph and builds layers on top of them.
///
/// Parameters under a frozen prefix become constants; the rest are leaves
/// whose gradients can be collected with [`Ctx::trainable_leaves`].
pub struct Ctx<'a> {
    pub g: &'a mut Graph,
    params: &'a ModelParams,
    frozen: Vec<String>,
    bound: HashMap<String, NodeId>,
    leaves: Vec<(String, NodeId)>,
    pub mode: Mode,
    seed: u64,
}

impl<'a> Ctx<'a> {
    pub fn new(g: &'a mut Graph, params: &'a ModelParams, mode: Mode, seed: u64) -> Self {
        Self {
            g,
            params,
            frozen: Vec::new(),
            bound: HashMap::new(),
            leaves: Vec::new(),
            mode,
            seed,
        }
    }

    /// Treats every parameter whose name starts with `prefix` as constant.
    pub fn freeze(mut self, prefix: &str) -> Self {
        self.frozen.push(prefix.to_string());
        self
    }

    pub fn params(&self) -> &'a ModelParams {
        self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen.iter().any(|p| name.starts_with(p.as_str()))
    }

    pub fn param(&mut self, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.bound.get(name) {
            return Ok(id);
        }
        let v = self.params.get(name)?.clone();
        let id = if self.is_frozen(name) {
            self.g.constant(v)?
        } else {
            let id = self.g.leaf(v)?;
            self.leaves.push((name.to_string(), id));
            id
        };
        self.bound.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn trainable_leaves(&self) -> &[(String, NodeId)] {
        &self.leaves
    }

    /// Dropout keyed by a layer tag; identity outside training.
    pub fn dropout(&mut self, x: NodeId, rate: f64, tag: &str) -> Result<NodeId> {
        if self.mode != Mode::Train || rate == 0.0 {
            return Ok(x);
        }
        let s = seed::derive_str(self.seed, tag);
        Ok(self.g.dropout(x, rate, s)?)
    }

    /// Same-padded convolution with bias; parameters `{name}.w`, `{name}.b`.
    pub fn conv(&mut self, x: NodeId, name: &str) -> Result<NodeId> {
        let w = self.param(&format!("{name}.w"))?;
        let b = self.param(&format!("{name}.b"))?;
        let y = self.g.conv2d(x, w, 1)?;
        let c = self.g.shape(b)[0];
        let b = self.g.reshape(b, &[1, c, 1, 1])?;
        Ok(self.g.add(y, b)?)
    }

    /// Same-padded convolution without bias, for layers feeding a
    /// normalization that would cancel it.
    pub fn conv_no_bias(&mut self, x: NodeId, name: &str) -> Result<NodeId> {
        let w = self.param(&format!("{name}.w"))?;
        Ok(self.g.conv2d(x, w, 1)?)
    }

    /// `x · W + b` over the last axis.
    pub fn dense(&mut self, x: NodeId, name: &str) -> Result<NodeId> {
        let w = self.param(&format!("{name}.w"))?;
        let b = self.param(&format!("{name}.b"))?;
        let y = self.g.matmul(x, w)?;
        Ok(self.g.add(y, b)?)
    }

    /// Group normalization with per-channel affine terms.
    pub fn group_norm(&mut self, x: NodeId, groups: usize, name: &str) -> Result<NodeId> {
        let y = self.g.group_norm(x, groups, NORM_EPS)?;
        let c = self.g.shape(x)[1];
        let gam = self.param(&format!("{name}.gamma"))?;
        let bet = self.param(&format!("{name}.beta"))?;
        let gam = self.g.reshape(gam, &[1, c, 1, 1])?;
        let bet = self.g.reshape(bet, &[1, c, 1, 1])?;
        let y = self.g.mul(y, gam)?;
        Ok(self.g.add(y, bet)?)
    }

    /// Layer normalization over the last axis with affine terms.
    pub fn layer_norm(&mut self, x: NodeId, name: &str) -> Result<NodeId> {
        let y = self.g.layer_norm(x, NORM_EPS)?;
        let gam = self.param(&format!("{name}.gamma"))?;
        let bet = self.param(&format!("{name}.beta"))?;
        let y = self.g.mul(y, gam)?;
        Ok(self.g.add(y, bet)?)
    }

    pub fn constant(&mut self, a: Array) -> Result<NodeId> {
        Ok(self.g.constant(a)?)
    }
}
