use ::pgcbm::data::*;
use proptest::prelude::*;

fn record_strategy() -> impl Strategy<Value = PatchRecord> {
    (1usize..6, 1usize..6, any::<bool>(), any::<i32>(), any::<u64>()).prop_map(
        |(rows, cols, latent, tag, s)| {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(s);
            let n = rows * cols;
            let mut plane = |len: usize| -> Vec<f32> {
                (0..len).map(|_| f32::from_bits(rng.random::<u32>() & 0xBFFF_FFFF)).collect()
            };
            let mut r = PatchRecord::blank(rows, cols);
            r.sar = plane(SAR_CHANNELS * n);
            r.optical = plane(OPTICAL_CHANNELS * n);
            r.lon = plane(1)[0];
            r.lat = plane(1)[0];
            r.labels = std::array::from_fn(|_| plane(n));
            r.latents = latent.then(|| std::array::from_fn(|_| plane(n)));
            r.masks = std::array::from_fn(|_| (0..n).map(|_| rng.random_bool(0.5)).collect());
            r.census_tag = tag;
            r
        },
    )
}

fn bits(records: &[PatchRecord]) -> Vec<u32> {
    let mut v = Vec::new();
    for r in records {
        v.extend(r.sar.iter().chain(&r.optical).map(|x| x.to_bits()));
        v.extend([r.lon.to_bits(), r.lat.to_bits()]);
        for l in &r.labels {
            v.extend(l.iter().map(|x| x.to_bits()));
        }
        if let Some(lat) = &r.latents {
            for l in lat {
                v.extend(l.iter().map(|x| x.to_bits()));
            }
        }
    }
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn randomized_datasets_round_trip_bitwise(records in prop::collection::vec(record_strategy(), 0..4)) {
        let bytes = encode_dataset(&records).unwrap();
        let back = decode_dataset(&bytes).unwrap();
        prop_assert_eq!(back.len(), records.len());
        for (a, b) in back.iter().zip(&records) {
            prop_assert_eq!((a.rows, a.cols, a.census_tag), (b.rows, b.cols, b.census_tag));
            prop_assert_eq!(&a.masks, &b.masks);
            prop_assert_eq!(a.latents.is_some(), b.latents.is_some());
        }
        prop_assert_eq!(bits(&back), bits(&records));
        prop_assert_eq!(encode_dataset(&back).unwrap(), bytes);
    }
}

fn small() -> SynthConfig {
    SynthConfig {
        n_gedi_like: 100,
        n_plot_like: 10,
        ..SynthConfig::default()
    }
}

#[test]
fn file_round_trip_preserves_generated_dataset() {
    let ds = generate_synthetic(&small(), &ProcessSpec::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.pgcb");
    write_dataset(&ds.records, &path).unwrap();
    assert_eq!(read_dataset(&path).unwrap(), ds.records);
}

#[test]
fn corrupted_files_give_distinct_errors() {
    let ds = generate_synthetic(&small(), &ProcessSpec::default()).unwrap();
    let bytes = encode_dataset(&ds.records[..3]).unwrap();

    let mut b = bytes.clone();
    b[0] = b'X';
    assert!(matches!(decode_dataset(&b), Err(DatasetError::BadMagic(_))));

    let mut b = bytes.clone();
    b[4] = 2;
    assert!(matches!(decode_dataset(&b), Err(DatasetError::VersionMismatch { found: 2 })));

    let mut b = bytes.clone();
    let mid = b.len() / 2;
    b[mid] ^= 0x10;
    assert!(matches!(decode_dataset(&b), Err(DatasetError::ChecksumMismatch { .. })));

    let b = &bytes[..bytes.len() - 20];
    assert!(matches!(decode_dataset(b), Err(DatasetError::Truncated { .. })));
}

#[test]
fn generation_is_deterministic() {
    let a = generate_synthetic(&small(), &ProcessSpec::default()).unwrap();
    let b = generate_synthetic(&small(), &ProcessSpec::default()).unwrap();
    assert_eq!(encode_dataset(&a.records).unwrap(), encode_dataset(&b.records).unwrap());
    assert_eq!(a, b);
    let other = SynthConfig { seed: 1, ..small() };
    let c = generate_synthetic(&other, &ProcessSpec::default()).unwrap();
    assert_ne!(encode_dataset(&a.records).unwrap(), encode_dataset(&c.records).unwrap());
}

#[test]
fn record_counts_follow_config() {
    let ds = generate_synthetic(&small(), &ProcessSpec::default()).unwrap();
    let has = |r: &PatchRecord, a: Attribute| r.masks[a.index()].iter().any(|&m| m);
    let gedi = ds
        .records
        .iter()
        .filter(|r| has(r, Attribute::Cover) && has(r, Attribute::Height))
        .count();
    let plot = ds
        .records
        .iter()
        .filter(|r| has(r, Attribute::Stems) && has(r, Attribute::Agbd))
        .count();
    assert_eq!((gedi, plot), (100, 10));
    for r in &ds.records {
        let concept = has(r, Attribute::Cover) || has(r, Attribute::Height);
        let field = has(r, Attribute::Stems) || has(r, Attribute::Agbd);
        assert!(concept != field, "supervision sources overlap");
    }
}

#[test]
fn footprint_masks_have_expected_sparsity() {
    let cfg = small();
    let ds = generate_synthetic(&cfg, &ProcessSpec::default()).unwrap();
    let expected = footprint_area(cfg.footprint_radius_px) * cfg.footprints_per_patch;
    for r in ds.records.iter().filter(|r| r.kind() == RecordKind::GediLike) {
        for a in [Attribute::Cover, Attribute::Height] {
            let n = r.valid_count(a);
            assert!(n.abs_diff(expected) <= 1, "{n} valid pixels, expected {expected}");
        }
    }
}

#[test]
fn noise_free_generator_matches_mechanism_on_every_record() {
    let p = ProcessSpec {
        noise: NoiseScales::zero(),
        ..ProcessSpec::default()
    };
    let ds = generate_synthetic(&small(), &p).unwrap();
    for r in &ds.records {
        let [c, h, s] = r.latents.as_ref().unwrap();
        for k in 0..r.pixels() {
            if r.masks[3][k] {
                assert_eq!(r.labels[3][k], p.agbd(c[k] as f64, h[k] as f64, s[k] as f64) as f32);
            }
            if r.masks[0][k] {
                assert_eq!(r.labels[0][k], c[k]);
            }
            if r.masks[2][k] {
                assert_eq!(r.labels[2][k], s[k]);
            }
        }
    }
}

#[test]
fn default_ood_fraction_at_seed_zero() {
    let ds = generate_synthetic(&SynthConfig::default(), &ProcessSpec::default()).unwrap();
    let f = ds.split.ood_fraction();
    assert!((0.2..=0.45).contains(&f), "OOD fraction {f}");
    ds.split.validate(ds.records.len()).unwrap();
    let b = ds.split.criteria.ood_box.unwrap();
    for &i in &ds.split.train {
        let r = &ds.records[i];
        assert!(
            !(r.kind() == RecordKind::PlotLike && b.contains(r.lon as f64, r.lat as f64)),
            "plot-like record {i} from the OOD box used for training"
        );
    }
}

#[test]
fn normalized_training_channels_are_standardized() {
    let ds = generate_synthetic(&small(), &ProcessSpec::default()).unwrap();
    let train: Vec<_> = ds.split.train.iter().map(|&i| apply_normalization(&ds.records[i], &ds.norm)).collect();
    let hw = train[0].rows * train[0].cols;
    for c in 0..INPUT_CHANNELS {
        let vals: Vec<f64> = train.iter().flat_map(|r| r.inputs[c * hw..(c + 1) * hw].to_vec()).collect();
        let n = vals.len() as f64;
        let m = vals.iter().sum::<f64>() / n;
        let sd = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
        assert!(m.abs() < 1e-6 && (sd - 1.0).abs() < 1e-6, "channel {c}: mean {m}, std {sd}");
    }
    for a in 0..4 {
        let vals: Vec<f64> = train
            .iter()
            .flat_map(|r| r.labels[a].iter().zip(&r.masks[a]).filter(|(_, &m)| m).map(|(v, _)| *v))
            .collect();
        let n = vals.len() as f64;
        let m = vals.iter().sum::<f64>() / n;
        let sd = (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
        assert!(m.abs() < 1e-6 && (sd - 1.0).abs() < 1e-6, "label {a}: mean {m}, std {sd}");
    }
}
