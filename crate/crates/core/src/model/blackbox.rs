use super::config::{ModelSettings, SubModelConfig};
use super::pgcbm::PgcbmNet;
use super::submodel::{InputLayout, SubModel};
use crate::error::{CoreError, Result};

/// Name prefix of the black-box network.
pub const BLACKBOX: &str = "blackbox";

/// Imagery-to-biomass network with no concept bottleneck. Without an
/// explicit configuration its channel widths are searched so the parameter
/// count lands closest to the concept model's.
pub fn blackbox_submodel(s: &ModelSettings) -> Result<SubModel> {
    let target = PgcbmNet::new(s)?.param_count();
    let cfg = match &s.blackbox {
        Some(c) => c.clone(),
        None => match_param_count(&s.concept, target)?,
    };
    let net = SubModel::new(BLACKBOX, cfg, InputLayout::imagery())?;
    let gap = relative_gap(net.param_count(), target);
    if gap > s.parity_tolerance {
        return Err(CoreError::Config(format!(
            "black-box has {} parameters against {target} ({:.1}% apart, limit {:.1}%)",
            net.param_count(),
            100.0 * gap,
            100.0 * s.parity_tolerance
        )));
    }
    Ok(net)
}

pub fn relative_gap(count: usize, target: usize) -> f64 {
    (count as f64 - target as f64).abs() / target as f64
}

fn match_param_count(base: &SubModelConfig, target: usize) -> Result<SubModelConfig> {
    let mut best: Option<(usize, SubModelConfig)> = None;
    for i in 0..=70 {
        let fw = 0.5 + 0.05 * i as f64;
        for j in 0..=70 {
            let fc = 0.5 + 0.05 * j as f64;
            let mut c = base.scaled(fc);
            c.width = base.scaled(fw).width;
            if c.validate().is_err() {
                continue;
            }
            let n = SubModel::new(BLACKBOX, c.clone(), InputLayout::imagery())?.param_count();
            let d = n.abs_diff(target);
            if best.as_ref().map_or(true, |(b, _)| d < *b) {
                best = Some((d, c));
            }
        }
    }
    best.map(|(_, c)| c)
        .ok_or_else(|| CoreError::Config("no valid black-box configuration".into()))
}
