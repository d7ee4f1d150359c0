use serde::{Deserialize, Serialize};

use super::process::{GeoBox, SynthConfig};
use super::record::{Attribute, PatchRecord, RecordKind};
use crate::error::{CoreError, Result};
use crate::seed;

/// Rules separating in-distribution from out-of-distribution validation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitCriteria {
    /// Plot-like records inside the box are withheld from training; any
    /// validation record inside it is out-of-distribution.
    pub ood_box: Option<GeoBox>,
    /// Validation records whose mean stems fall outside these quantiles of
    /// the training stems are out-of-distribution.
    pub stems_quantiles: Option<[f64; 2]>,
    pub val_fraction: f64,
    pub seed: u64,
}

impl SplitCriteria {
    pub fn from_config(cfg: &SynthConfig) -> Self {
        Self {
            ood_box: Some(cfg.ood_region),
            stems_quantiles: Some(cfg.stems_quantiles),
            val_fraction: cfg.val_fraction,
            seed: cfg.seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub val_id: Vec<usize>,
    pub val_ood: Vec<usize>,
    pub criteria: SplitCriteria,
    /// Training stems range derived from the quantiles.
    pub stems_bounds: Option<[f64; 2]>,
}

impl SplitSpec {
    pub fn validation(&self) -> impl Iterator<Item = usize> + '_ {
        self.val_id.iter().chain(&self.val_ood).copied()
    }

    pub fn ood_fraction(&self) -> f64 {
        let n = self.val_id.len() + self.val_ood.len();
        if n == 0 {
            0.0
        } else {
            self.val_ood.len() as f64 / n as f64
        }
    }

    /// Checks disjointness and bounds against a dataset of `n` records.
    pub fn validate(&self, n: usize) -> Result<()> {
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.val_id).chain(&self.val_ood) {
            if i >= n {
                return Err(CoreError::Data(format!("split index {i} out of range")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(CoreError::Data(format!("record {i} in more than one split")));
            }
        }
        Ok(())
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn in_box(b: &Option<GeoBox>, r: &PatchRecord) -> bool {
    b.is_some_and(|b| b.contains(r.lon as f64, r.lat as f64))
}

pub fn split_id_ood(records: &[PatchRecord], criteria: &SplitCriteria) -> Result<SplitSpec> {
    if !(criteria.val_fraction >= 0.0 && criteria.val_fraction < 1.0) {
        return Err(CoreError::Config("val_fraction must be in [0, 1)".into()));
    }
    let mut train = Vec::new();
    let mut val = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let held_out = r.kind() == RecordKind::PlotLike && in_box(&criteria.ood_box, r);
        let u = seed::unit(seed::derive(seed::derive_str(criteria.seed, "split"), i as u64));
        if held_out || u < criteria.val_fraction {
            val.push(i);
        } else {
            train.push(i);
        }
    }
    if val.is_empty() {
        return Err(CoreError::Data("validation set is empty".into()));
    }
    let stems_bounds = match criteria.stems_quantiles {
        None => None,
        Some([lo, hi]) => {
            let mut s: Vec<f64> = train
                .iter()
                .filter_map(|&i| records[i].concept_mean(Attribute::Stems))
                .collect();
            if s.is_empty() {
                None
            } else {
                s.sort_by(f64::total_cmp);
                Some([quantile_sorted(&s, lo), quantile_sorted(&s, hi)])
            }
        }
    };
    let mut val_id = Vec::new();
    let mut val_ood = Vec::new();
    for i in val {
        let r = &records[i];
        let outside = match (stems_bounds, r.concept_mean(Attribute::Stems)) {
            (Some([lo, hi]), Some(m)) => m < lo || m > hi,
            _ => false,
        };
        if in_box(&criteria.ood_box, r) || outside {
            val_ood.push(i);
        } else {
            val_id.push(i);
        }
    }
    Ok(SplitSpec {
        train,
        val_id,
        val_ood,
        criteria: criteria.clone(),
        stems_bounds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(lon: f32, lat: f32, stems: f32, plot: bool) -> PatchRecord {
        let mut r = PatchRecord::blank(2, 2);
        r.lon = lon;
        r.lat = lat;
        let a = if plot { Attribute::Stems } else { Attribute::Cover };
        r.labels[a.index()] = vec![stems.min(100.0); 4];
        r.masks[a.index()] = vec![true; 4];
        r.latents = Some([vec![50.0; 4], vec![10.0; 4], vec![stems; 4]]);
        r
    }

    #[test]
    fn quantiles_interpolate() {
        let s = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&s, 0.5), 3.0);
        assert_eq!(quantile_sorted(&s, 0.125), 1.5);
        assert_eq!(quantile_sorted(&s, 1.0), 5.0);
    }

    #[test]
    fn no_ood_when_everything_is_interior() {
        let recs: Vec<_> = (0..60).map(|i| rec(20.0, -10.0, 300.0, i % 2 == 0)).collect();
        let c = SplitCriteria {
            ood_box: Some(GeoBox {
                lon_min: 30.0,
                lon_max: 35.0,
                lat_min: -20.0,
                lat_max: -15.0,
            }),
            stems_quantiles: Some([0.05, 0.95]),
            val_fraction: 0.3,
            seed: 1,
        };
        let s = split_id_ood(&recs, &c).unwrap();
        assert!(s.val_ood.is_empty());
        assert!(!s.val_id.is_empty());
        s.validate(recs.len()).unwrap();
    }

    #[test]
    fn plot_in_box_is_ood_and_not_trained() {
        let mut recs: Vec<_> = (0..40).map(|_| rec(20.0, -10.0, 300.0, true)).collect();
        recs.push(rec(32.0, -17.0, 300.0, true));
        let c = SplitCriteria {
            ood_box: Some(GeoBox {
                lon_min: 30.0,
                lon_max: 35.0,
                lat_min: -20.0,
                lat_max: -15.0,
            }),
            stems_quantiles: None,
            val_fraction: 0.2,
            seed: 0,
        };
        let s = split_id_ood(&recs, &c).unwrap();
        assert!(s.val_ood.contains(&40));
        assert!(!s.train.contains(&40));
    }

    #[test]
    fn stems_outliers_are_ood() {
        let mut recs: Vec<_> = (0..200).map(|i| rec(20.0, -10.0, 200.0 + i as f32, false)).collect();
        recs.push(rec(20.0, -10.0, 5000.0, false));
        let c = SplitCriteria {
            ood_box: None,
            stems_quantiles: Some([0.05, 0.95]),
            val_fraction: 0.5,
            seed: 3,
        };
        let s = split_id_ood(&recs, &c).unwrap();
        if !s.train.contains(&200) {
            assert!(s.val_ood.contains(&200));
        }
    }

    #[test]
    fn empty_validation_is_an_error() {
        let recs = vec![rec(20.0, -10.0, 300.0, false)];
        let c = SplitCriteria {
            ood_box: None,
            stems_quantiles: None,
            val_fraction: 0.0,
            seed: 0,
        };
        assert!(split_id_ood(&recs, &c).is_err());
    }
}
