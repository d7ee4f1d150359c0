use serde::{Deserialize, Serialize};

pub const SAR_CHANNELS: usize = 3;
pub const OPTICAL_CHANNELS: usize = 10;
pub const INPUT_CHANNELS: usize = SAR_CHANNELS + OPTICAL_CHANNELS;
pub const N_LABELS: usize = 4;
pub const N_LATENTS: usize = 3;

/// Supervised quantities, in label-plane order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Attribute {
    Cover,
    Height,
    Stems,
    Agbd,
}

impl Attribute {
    pub const ALL: [Attribute; 4] = [Self::Cover, Self::Height, Self::Stems, Self::Agbd];
    pub const CONCEPTS: [Attribute; 3] = [Self::Cover, Self::Height, Self::Stems];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Cover => "cover",
            Self::Height => "height",
            Self::Stems => "stems",
            Self::Agbd => "agbd",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }
}

impl std::fmt::Display for Attribute {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Source of supervision carried by a record.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecordKind {
    /// Cover and height inside footprints.
    GediLike,
    /// Stems and agbd inside a plot block.
    PlotLike,
    Unlabelled,
    Mixed,
}

/// One spatial patch with inputs, sparse labels and optional latent truth.
///
/// Planes are stored row-major as `f32`, channel-major for inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchRecord {
    pub rows: usize,
    pub cols: usize,
    /// `SAR_CHANNELS * rows * cols`
    pub sar: Vec<f32>,
    /// `OPTICAL_CHANNELS * rows * cols`
    pub optical: Vec<f32>,
    pub lon: f32,
    pub lat: f32,
    pub labels: [Vec<f32>; N_LABELS],
    pub masks: [Vec<bool>; N_LABELS],
    /// True (cover, height, stems) per pixel when known.
    pub latents: Option<[Vec<f32>; N_LATENTS]>,
    pub census_tag: i32,
}

impl PatchRecord {
    /// Record with zeroed planes and empty masks.
    pub fn blank(rows: usize, cols: usize) -> Self {
        let n = rows * cols;
        Self {
            rows,
            cols,
            sar: vec![0.0; SAR_CHANNELS * n],
            optical: vec![0.0; OPTICAL_CHANNELS * n],
            lon: 0.0,
            lat: 0.0,
            labels: std::array::from_fn(|_| vec![0.0; n]),
            masks: std::array::from_fn(|_| vec![false; n]),
            latents: None,
            census_tag: 0,
        }
    }

    pub fn pixels(&self) -> usize {
        self.rows * self.cols
    }

    pub fn label(&self, a: Attribute) -> &[f32] {
        &self.labels[a.index()]
    }

    pub fn mask(&self, a: Attribute) -> &[bool] {
        &self.masks[a.index()]
    }

    pub fn valid_count(&self, a: Attribute) -> usize {
        self.mask(a).iter().filter(|&&m| m).count()
    }

    pub fn has_labels(&self, a: Attribute) -> bool {
        self.mask(a).iter().any(|&m| m)
    }

    pub fn kind(&self) -> RecordKind {
        let gedi = self.has_labels(Attribute::Cover) || self.has_labels(Attribute::Height);
        let plot = self.has_labels(Attribute::Stems) || self.has_labels(Attribute::Agbd);
        match (gedi, plot) {
            (true, false) => RecordKind::GediLike,
            (false, true) => RecordKind::PlotLike,
            (false, false) => RecordKind::Unlabelled,
            (true, true) => RecordKind::Mixed,
        }
    }

    /// Mean of the observed label over its valid pixels.
    pub fn observed_mean(&self, a: Attribute) -> Option<f64> {
        masked_mean(self.label(a), self.mask(a))
    }

    /// Mean of a latent plane, falling back to the observed label.
    pub fn concept_mean(&self, a: Attribute) -> Option<f64> {
        match (&self.latents, a) {
            (Some(l), Attribute::Cover | Attribute::Height | Attribute::Stems) => {
                let plane = &l[a.index()];
                Some(plane.iter().map(|&v| v as f64).sum::<f64>() / plane.len().max(1) as f64)
            }
            _ => self.observed_mean(a),
        }
    }

    /// Input channel `c` (SAR first, then optical).
    pub fn input_channel(&self, c: usize) -> &[f32] {
        let n = self.pixels();
        if c < SAR_CHANNELS {
            &self.sar[c * n..(c + 1) * n]
        } else {
            let c = c - SAR_CHANNELS;
            &self.optical[c * n..(c + 1) * n]
        }
    }

    /// Checks plane sizes against `rows * cols`.
    pub fn validate_shape(&self) -> Result<(), String> {
        if self.rows > u16::MAX as usize || self.cols > u16::MAX as usize {
            return Err(format!("grid {}x{} too large", self.rows, self.cols));
        }
        let n = self.pixels();
        if self.sar.len() != SAR_CHANNELS * n || self.optical.len() != OPTICAL_CHANNELS * n {
            return Err("input plane size mismatch".into());
        }
        for (i, (l, m)) in self.labels.iter().zip(&self.masks).enumerate() {
            if l.len() != n || m.len() != n {
                return Err(format!("label plane {i} size mismatch"));
            }
        }
        if let Some(lat) = &self.latents {
            if lat.iter().any(|p| p.len() != n) {
                return Err("latent plane size mismatch".into());
            }
        }
        Ok(())
    }

    /// Checks plane sizes and label ranges on valid pixels.
    pub fn validate(&self) -> Result<(), String> {
        self.validate_shape()?;
        for a in Attribute::ALL {
            for (&v, &m) in self.label(a).iter().zip(self.mask(a)) {
                if !m {
                    continue;
                }
                let ok = v.is_finite() && v >= 0.0 && (a != Attribute::Cover || v <= 100.0);
                if !ok {
                    return Err(format!("{a} label {v} out of range"));
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn masked_mean(values: &[f32], mask: &[bool]) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    for (&v, &m) in values.iter().zip(mask) {
        if m {
            s += v as f64;
            n += 1;
        }
    }
    (n > 0).then(|| s / n as f64)
}
