use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};

/// Variant order the degradation check expects, least to most inflated.
pub const OOD_ORDER: [&str; 3] = ["pgcbm", "vanilla", "blackbox"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OodRow {
    pub variant: String,
    pub id_abs_error: f64,
    pub ood_abs_error: f64,
    /// `ood_abs_error / id_abs_error`.
    pub inflation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OodTable {
    pub rows: Vec<OodRow>,
    /// Whether inflation is non-decreasing along pgcbm, vanilla, blackbox.
    pub ordering_holds: bool,
}

impl OodTable {
    pub fn inflation(&self, variant: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.variant == variant).map(|r| r.inflation)
    }
}

/// Degradation table from `(variant, ID mean abs error, OOD mean abs error)`.
pub fn ood_comparison(entries: &[(String, f64, f64)]) -> Result<OodTable> {
    let missing: Vec<&str> = OOD_ORDER
        .iter()
        .copied()
        .filter(|v| !entries.iter().any(|(n, _, _)| n == v))
        .collect();
    if !missing.is_empty() {
        return Err(CoreError::MissingPrerequisite(format!(
            "variants missing from comparison: {}",
            missing.join(", ")
        )));
    }
    let rows: Vec<OodRow> = OOD_ORDER
        .iter()
        .map(|v| {
            let (_, id, ood) = entries.iter().find(|(n, _, _)| n == v).unwrap();
            OodRow {
                variant: v.to_string(),
                id_abs_error: *id,
                ood_abs_error: *ood,
                inflation: ood / id,
            }
        })
        .collect();
    let ordering_holds = rows.windows(2).all(|w| w[0].inflation <= w[1].inflation);
    Ok(OodTable {
        rows,
        ordering_holds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(v: &str, id: f64, ood: f64) -> (String, f64, f64) {
        (v.to_string(), id, ood)
    }

    #[test]
    fn injected_ratios_hold_order() {
        let t = ood_comparison(&[e("blackbox", 1.0, 2.0), e("pgcbm", 1.0, 1.2), e("vanilla", 2.0, 3.0)]).unwrap();
        assert!(t.ordering_holds);
        assert_eq!(t.inflation("vanilla"), Some(1.5));
        let t = ood_comparison(&[e("blackbox", 1.0, 1.0), e("pgcbm", 1.0, 1.2), e("vanilla", 2.0, 3.0)]).unwrap();
        assert!(!t.ordering_holds);
    }

    #[test]
    fn identical_errors_give_unit_ratio() {
        let t = ood_comparison(&[e("blackbox", 2.0, 2.0), e("pgcbm", 3.0, 3.0), e("vanilla", 1.0, 1.0)]).unwrap();
        assert!(t.rows.iter().all(|r| r.inflation == 1.0));
    }

    #[test]
    fn missing_variant_is_named() {
        let err = ood_comparison(&[e("pgcbm", 1.0, 1.0), e("blackbox", 1.0, 1.0)]).unwrap_err();
        assert!(err.to_string().contains("vanilla"));
    }
}
