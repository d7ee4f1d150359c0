use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::field::WaveField;
use super::norm::compute_norm_stats;
use super::process::{ProcessSpec, SynthConfig};
use super::record::{Attribute, PatchRecord, OPTICAL_CHANNELS, SAR_CHANNELS};
use super::split::{split_id_ood, SplitCriteria};
use super::Dataset;
use crate::error::{CoreError, Result};
use crate::seed;

/// Environment fields shared by all records of one world.
struct World {
    cover_env: WaveField,
    stems_env: WaveField,
}

impl World {
    fn new(seed: u64, p: &ProcessSpec) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive_str(seed, "world"));
        let f = &p.field;
        let mut field = || {
            WaveField::sample(
                &mut rng,
                f.world_waves,
                f.world_min_wavelength,
                f.world_max_wavelength,
            )
        };
        Self {
            cover_env: field(),
            stems_env: field(),
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Pixel indices of a disc of radius `r` centred on `(ci, cj)`.
pub fn disc(size: usize, ci: usize, cj: usize, r: usize) -> Vec<usize> {
    let r2 = (r * r) as i64;
    let mut out = Vec::new();
    for i in 0..size {
        for j in 0..size {
            let (di, dj) = (i as i64 - ci as i64, j as i64 - cj as i64);
            if di * di + dj * dj <= r2 {
                out.push(i * size + j);
            }
        }
    }
    out
}

/// Pixel count of a footprint of radius `r`.
pub fn footprint_area(r: usize) -> usize {
    let s = 2 * r + 1;
    disc(s, r, r, r).len()
}

fn place_footprints(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Result<Vec<(usize, usize)>> {
    let (size, r) = (cfg.patch_size, cfg.footprint_radius_px);
    let min_d2 = (4 * r * r) as i64;
    for _ in 0..100 {
        let mut centres: Vec<(usize, usize)> = Vec::new();
        let mut tries = 0;
        while centres.len() < cfg.footprints_per_patch && tries < 2000 {
            tries += 1;
            let c = (rng.random_range(r..size - r), rng.random_range(r..size - r));
            let clear = centres.iter().all(|&(a, b)| {
                let (di, dj) = (a as i64 - c.0 as i64, b as i64 - c.1 as i64);
                di * di + dj * dj > min_d2
            });
            if clear {
                centres.push(c);
            }
        }
        if centres.len() == cfg.footprints_per_patch {
            return Ok(centres);
        }
    }
    Err(CoreError::Config(format!(
        "cannot place {} disjoint footprints of radius {} in a {}-pixel patch",
        cfg.footprints_per_patch, r, size
    )))
}

fn census_tag(kind_plot: bool, h: u64) -> i32 {
    if kind_plot {
        2000 + (h % 20) as i32
    } else {
        2019 + (h % 5) as i32
    }
}

fn generate_record(
    index: usize,
    cfg: &SynthConfig,
    p: &ProcessSpec,
    world: &World,
) -> Result<PatchRecord> {
    let plot = index >= cfg.n_gedi_like;
    let rec_seed = seed::derive(cfg.seed, index as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(rec_seed);
    let size = cfg.patch_size;
    let n = size * size;
    let mut r = PatchRecord::blank(size, size);
    r.census_tag = census_tag(plot, rec_seed);
    let d = &cfg.domain;
    let lon = rng.random_range(d.lon_min..=d.lon_max) as f32;
    let lat = rng.random_range(d.lat_min..=d.lat_max) as f32;
    r.lon = lon;
    r.lat = lat;

    let f = &p.field;
    let local_cover = WaveField::sample(
        &mut rng,
        f.local_waves,
        f.local_min_wavelength,
        f.local_max_wavelength,
    );
    let local_stems = WaveField::sample(
        &mut rng,
        f.local_waves,
        f.local_min_wavelength,
        f.local_max_wavelength,
    );
    let site = p.noise.agbd_site * normal(&mut rng);
    let base_cover = world.cover_env.eval(lon as f64, lat as f64);
    let base_stems = world.stems_env.eval(lon as f64, lat as f64);

    let mut cover = vec![0f32; n];
    let mut height = vec![0f32; n];
    let mut stems = vec![0f32; n];
    let mut agbd = vec![0f32; n];
    let nz = &p.noise;
    for i in 0..size {
        for j in 0..size {
            let k = i * size + j;
            let (x, y) = (i as f64, j as f64);
            let e1 = base_cover + f.local_amplitude * local_cover.eval(x, y);
            let e2 = base_stems + f.local_amplitude * local_stems.eval(x, y);
            let c = (100.0 * sigmoid(p.cover_bias + p.cover_gain * e1 + nz.cover * normal(&mut rng)))
                as f32;
            let h = (p.allometric_height(c as f64) + nz.height * normal(&mut rng)).max(0.0) as f32;
            let s = (p.stems_log_mean + p.stems_gain * e2 + nz.stems * normal(&mut rng)).exp()
                as f32;
            let y = (p.agbd(c as f64, h as f64, s as f64) + site + nz.agbd * normal(&mut rng))
                .max(0.0);
            cover[k] = c;
            height[k] = h;
            stems[k] = s;
            agbd[k] = y as f32;

            for ch in 0..SAR_CHANNELS {
                let sat = p.sar_gain[ch] * (1.0 - (-p.sar_rate[ch] * y).exp());
                let speckle = (nz.speckle * normal(&mut rng) - 0.5 * nz.speckle * nz.speckle).exp();
                r.sar[ch * n + k] = (sat * speckle) as f32;
            }
            let soil = e2;
            for ch in 0..OPTICAL_CHANNELS {
                let v = p.optical_offset[ch]
                    + p.optical_cover[ch] * (c as f64 / 100.0)
                    + p.optical_soil[ch] * soil
                    + nz.optical * normal(&mut rng);
                r.optical[ch * n + k] = v as f32;
            }
        }
    }

    if plot {
        let b = cfg.plot_block_size_px;
        let (i0, j0) = (rng.random_range(0..=size - b), rng.random_range(0..=size - b));
        for i in i0..i0 + b {
            for j in j0..j0 + b {
                let k = i * size + j;
                for a in [Attribute::Stems, Attribute::Agbd] {
                    r.masks[a.index()][k] = true;
                }
                r.labels[Attribute::Stems.index()][k] = stems[k];
                r.labels[Attribute::Agbd.index()][k] = agbd[k];
            }
        }
    } else {
        for (ci, cj) in place_footprints(&mut rng, cfg)? {
            for k in disc(size, ci, cj, cfg.footprint_radius_px) {
                for a in [Attribute::Cover, Attribute::Height] {
                    r.masks[a.index()][k] = true;
                }
                r.labels[Attribute::Cover.index()][k] = cover[k];
                r.labels[Attribute::Height.index()][k] = height[k];
            }
        }
    }
    r.latents = Some([cover, height, stems]);
    Ok(r)
}

/// Generates only the records, in index order (GEDI-like first).
pub fn generate_records(cfg: &SynthConfig, process: &ProcessSpec) -> Result<Vec<PatchRecord>> {
    cfg.validate()?;
    process.validate()?;
    let world = World::new(cfg.seed, process);
    let total = cfg.n_gedi_like + cfg.n_plot_like;
    crate::parallel::install(|| {
        (0..total)
            .into_par_iter()
            .map(|i| generate_record(i, cfg, process, &world))
            .collect()
    })
}

/// Generates records, splits them and fits normalization on the training split.
pub fn generate_synthetic(cfg: &SynthConfig, process: &ProcessSpec) -> Result<Dataset> {
    let records = generate_records(cfg, process)?;
    let split = split_id_ood(&records, &SplitCriteria::from_config(cfg))?;
    let train: Vec<&PatchRecord> = split.train.iter().map(|&i| &records[i]).collect();
    let norm = compute_norm_stats(&train)?;
    Ok(Dataset {
        records,
        norm,
        split,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::process::NoiseScales;
    use crate::data::RecordKind;

    fn small() -> SynthConfig {
        SynthConfig {
            n_gedi_like: 12,
            n_plot_like: 6,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn footprint_area_of_radius_two_is_thirteen() {
        assert_eq!(footprint_area(1), 5);
        assert_eq!(footprint_area(2), 13);
    }

    #[test]
    fn noise_free_labels_follow_mechanism_exactly() {
        let p = ProcessSpec {
            noise: NoiseScales::zero(),
            ..ProcessSpec::default()
        };
        let recs = generate_records(&small(), &p).unwrap();
        let mut checked = 0;
        for r in &recs {
            let [c, h, s] = r.latents.as_ref().unwrap();
            for k in 0..r.pixels() {
                if r.masks[3][k] {
                    let want = p.agbd(c[k] as f64, h[k] as f64, s[k] as f64) as f32;
                    assert_eq!(r.labels[3][k], want);
                    checked += 1;
                }
                if r.masks[1][k] {
                    assert_eq!(r.labels[1][k], p.allometric_height(c[k] as f64) as f32);
                }
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn record_kinds_match_counts() {
        let recs = generate_records(&small(), &ProcessSpec::default()).unwrap();
        let g = recs.iter().filter(|r| r.kind() == RecordKind::GediLike).count();
        let pl = recs.iter().filter(|r| r.kind() == RecordKind::PlotLike).count();
        assert_eq!((g, pl), (12, 6));
        for r in &recs {
            r.validate().unwrap();
        }
    }

    #[test]
    fn rejects_zero_h_max() {
        let p = ProcessSpec {
            h_max: 0.0,
            ..ProcessSpec::default()
        };
        assert!(generate_records(&small(), &p).is_err());
    }

    #[test]
    fn unmasked_labels_are_zero() {
        let recs = generate_records(&small(), &ProcessSpec::default()).unwrap();
        for r in &recs {
            for a in 0..4 {
                for k in 0..r.pixels() {
                    if !r.masks[a][k] {
                        assert_eq!(r.labels[a][k], 0.0);
                    }
                }
            }
        }
    }
}
