use serde::{Deserialize, Serialize};

use super::record::{Attribute, OPTICAL_CHANNELS, SAR_CHANNELS};
use crate::error::{CoreError, Result};

/// Directed edges of the generating process, parent to child.
pub const PROCESS_EDGES: [(&str, &str); 6] = [
    ("environment", "cover"),
    ("cover", "height"),
    ("environment", "stems"),
    ("cover", "agbd"),
    ("height", "agbd"),
    ("stems", "agbd"),
];

/// Parents of `a` among the supervised quantities.
pub fn parents(a: Attribute) -> Vec<Attribute> {
    PROCESS_EDGES
        .iter()
        .filter(|(_, c)| *c == a.name())
        .filter_map(|(p, _)| Attribute::parse(p))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseScales {
    /// On the cover logit.
    pub cover: f64,
    /// Metres.
    pub height: f64,
    /// On log stems.
    pub stems: f64,
    /// Per-pixel agbd noise, Mg/ha.
    pub agbd: f64,
    /// Per-record agbd offset, Mg/ha.
    pub agbd_site: f64,
    /// Log-normal multiplicative speckle on SAR channels.
    pub speckle: f64,
    pub optical: f64,
}

impl Default for NoiseScales {
    fn default() -> Self {
        Self {
            cover: 0.3,
            height: 1.5,
            stems: 0.15,
            agbd: 6.0,
            agbd_site: 4.0,
            speckle: 0.1,
            optical: 0.02,
        }
    }
}

impl NoiseScales {
    pub fn zero() -> Self {
        Self {
            cover: 0.0,
            height: 0.0,
            stems: 0.0,
            agbd: 0.0,
            agbd_site: 0.0,
            speckle: 0.0,
            optical: 0.0,
        }
    }

    fn all(&self) -> [f64; 7] {
        [
            self.cover,
            self.height,
            self.stems,
            self.agbd,
            self.agbd_site,
            self.speckle,
            self.optical,
        ]
    }
}

/// Spatial structure of the environment fields.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FieldSpec {
    pub world_waves: usize,
    /// Degrees.
    pub world_min_wavelength: f64,
    pub world_max_wavelength: f64,
    pub local_waves: usize,
    /// Pixels.
    pub local_min_wavelength: f64,
    pub local_max_wavelength: f64,
    pub local_amplitude: f64,
}

impl Default for FieldSpec {
    fn default() -> Self {
        Self {
            world_waves: 6,
            world_min_wavelength: 8.0,
            world_max_wavelength: 24.0,
            local_waves: 4,
            local_min_wavelength: 8.0,
            local_max_wavelength: 32.0,
            local_amplitude: 0.5,
        }
    }
}

/// Mechanism constants of the synthetic forest process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProcessSpec {
    pub cover_bias: f64,
    pub cover_gain: f64,
    /// Allometry `height = a * (cover/100)^b * h_max`.
    pub height_a: f64,
    pub height_b: f64,
    pub h_max: f64,
    pub stems_log_mean: f64,
    pub stems_gain: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub noise: NoiseScales,
    pub sar_gain: [f64; SAR_CHANNELS],
    pub sar_rate: [f64; SAR_CHANNELS],
    pub optical_offset: [f64; OPTICAL_CHANNELS],
    pub optical_cover: [f64; OPTICAL_CHANNELS],
    pub optical_soil: [f64; OPTICAL_CHANNELS],
    pub field: FieldSpec,
}

impl Default for ProcessSpec {
    fn default() -> Self {
        Self {
            cover_bias: 0.2,
            cover_gain: 1.6,
            height_a: 1.0,
            height_b: 0.7,
            h_max: 30.0,
            stems_log_mean: 5.7,
            stems_gain: 0.6,
            kappa1: 3.0,
            kappa2: 0.25,
            noise: NoiseScales::default(),
            sar_gain: [0.30, 0.22, 0.15],
            sar_rate: [0.008, 0.016, 0.035],
            optical_offset: [0.05, 0.08, 0.06, 0.25, 0.20, 0.12, 0.10, 0.15, 0.18, 0.22],
            optical_cover: [-0.03, -0.02, -0.04, 0.30, 0.10, -0.08, 0.06, 0.22, -0.05, 0.12],
            optical_soil: [0.04, 0.05, 0.06, -0.02, 0.08, 0.09, -0.07, 0.03, 0.10, -0.06],
            field: FieldSpec::default(),
        }
    }
}

impl ProcessSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(CoreError::Config(format!("process: {m}")));
        let finite = [
            self.cover_bias,
            self.cover_gain,
            self.height_a,
            self.height_b,
            self.h_max,
            self.stems_log_mean,
            self.stems_gain,
            self.kappa1,
            self.kappa2,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("non-finite mechanism constant");
        }
        if self.h_max <= 0.0 {
            return bad("h_max must be > 0");
        }
        if self.height_a <= 0.0 || self.height_b <= 0.0 {
            return bad("height allometry constants must be > 0");
        }
        if self.noise.all().iter().any(|&s| !(s >= 0.0 && s.is_finite())) {
            return bad("noise scales must be >= 0");
        }
        if self.sar_rate.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return bad("saturation rates must be > 0");
        }
        if self.sar_gain.iter().any(|&g| !(g > 0.0 && g.is_finite())) {
            return bad("sar gains must be > 0");
        }
        let f = &self.field;
        if f.world_min_wavelength <= 0.0
            || f.world_max_wavelength < f.world_min_wavelength
            || f.local_min_wavelength <= 0.0
            || f.local_max_wavelength < f.local_min_wavelength
            || f.local_amplitude < 0.0
        {
            return bad("invalid field wavelengths");
        }
        Ok(())
    }

    /// Noise-free mean height for a cover percentage.
    pub fn allometric_height(&self, cover: f64) -> f64 {
        self.height_a * (cover / 100.0).max(0.0).powf(self.height_b) * self.h_max
    }

    /// Noise-free agbd for true cover, height and stems.
    pub fn agbd(&self, cover: f64, height: f64, stems: f64) -> f64 {
        self.kappa1 * (cover / 100.0) * height + self.kappa2 * stems.max(0.0).sqrt() * height
    }
}

/// Longitude/latitude rectangle in degrees.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeoBox {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
}

impl GeoBox {
    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        lon >= self.lon_min && lon <= self.lon_max && lat >= self.lat_min && lat <= self.lat_max
    }

    pub fn contains_box(&self, other: &GeoBox) -> bool {
        other.lon_min >= self.lon_min
            && other.lon_max <= self.lon_max
            && other.lat_min >= self.lat_min
            && other.lat_max <= self.lat_max
    }

    pub fn is_valid(&self) -> bool {
        self.lon_min < self.lon_max
            && self.lat_min < self.lat_max
            && GLOBE.contains_box(self)
    }
}

pub const GLOBE: GeoBox = GeoBox {
    lon_min: -180.0,
    lon_max: 180.0,
    lat_min: -90.0,
    lat_max: 90.0,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_gedi_like: usize,
    pub n_plot_like: usize,
    pub patch_size: usize,
    pub footprint_radius_px: usize,
    pub footprints_per_patch: usize,
    pub plot_block_size_px: usize,
    /// Region held out from training for plot-like records.
    pub ood_region: GeoBox,
    /// Region where records are placed.
    pub domain: GeoBox,
    /// Share of the remaining records assigned to validation.
    pub val_fraction: f64,
    /// Training stems quantiles bounding the in-distribution range.
    pub stems_quantiles: [f64; 2],
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_gedi_like: 400,
            n_plot_like: 400,
            patch_size: 16,
            footprint_radius_px: 2,
            footprints_per_patch: 3,
            plot_block_size_px: 8,
            ood_region: GeoBox {
                lon_min: 31.0,
                lon_max: 36.0,
                lat_min: -22.0,
                lat_max: -16.0,
            },
            domain: GeoBox {
                lon_min: 12.0,
                lon_max: 36.0,
                lat_min: -22.0,
                lat_max: -6.0,
            },
            val_fraction: 0.25,
            stems_quantiles: [0.1, 0.9],
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(format!("synth: {m}")));
        if self.n_gedi_like == 0 || self.n_plot_like == 0 {
            return bad("record counts must be > 0".into());
        }
        if self.patch_size == 0 || self.patch_size > u16::MAX as usize {
            return bad(format!("patch_size {} out of range", self.patch_size));
        }
        if self.footprint_radius_px < 1 {
            return bad("footprint_radius_px must be >= 1".into());
        }
        if 2 * self.footprint_radius_px + 1 > self.patch_size {
            return bad("footprint does not fit in the patch".into());
        }
        if self.footprints_per_patch == 0 {
            return bad("footprints_per_patch must be > 0".into());
        }
        if self.plot_block_size_px == 0 || self.plot_block_size_px > self.patch_size {
            return bad("plot_block_size_px must be in 1..=patch_size".into());
        }
        if !self.domain.is_valid() {
            return bad("domain outside global bounds".into());
        }
        if !self.ood_region.is_valid() || !self.domain.contains_box(&self.ood_region) {
            return bad("ood_region outside the domain".into());
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad("val_fraction must be in (0, 1)".into());
        }
        let [lo, hi] = self.stems_quantiles;
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
            return bad("stems_quantiles must satisfy 0 <= lo < hi <= 1".into());
        }
        Ok(())
    }
}
