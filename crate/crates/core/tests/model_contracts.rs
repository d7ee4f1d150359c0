use ::pgcbm::data::{generate_synthetic, Attribute, Dataset, ProcessSpec, SynthConfig};
use ::pgcbm::loss::{focal_quantile_loss, DEFAULT_QUANTILES};
use ::pgcbm::model::{
    blackbox_submodel, relative_gap, Batch, Ctx, InputLayout, Mode, ModelParams, ModelSettings, Network,
    PgcbmNet, SubModel, SubModelConfig, VanillaNet,
};
use ::pgcbm::variants::{BlackboxModel, PgcbmModel, Registry, VanillaModel, VariantModel};
use ::pgcbm::CoreError;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tensorcore::{Array, Graph};

fn small_cfg() -> SubModelConfig {
    SubModelConfig {
        encoder_channels: 4,
        position_channels: 4,
        width: 8,
        decoder_channels: 4,
        pyramid_scales: vec![1, 2],
        ..SubModelConfig::default()
    }
}

fn small_settings() -> ModelSettings {
    ModelSettings {
        concept: small_cfg(),
        aggregator: SubModelConfig {
            pyramid_scales: vec![1, 2],
            ..small_cfg()
        },
        ..ModelSettings::default()
    }
}

fn dataset() -> Dataset {
    let cfg = SynthConfig {
        n_gedi_like: 8,
        n_plot_like: 8,
        ..SynthConfig::default()
    };
    generate_synthetic(&cfg, &ProcessSpec::default()).unwrap()
}

fn batch(ds: &Dataset, ids: &[usize]) -> Batch {
    let recs: Vec<_> = ids.iter().map(|&i| ds.norm.apply(&ds.records[i])).collect();
    let refs: Vec<_> = recs.iter().collect();
    Batch::new(ids, &refs).unwrap()
}

fn run(net: &SubModel, p: &ModelParams, b: &Batch, mode: Mode, seed: u64) -> Array {
    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, p, mode, seed);
    let inputs = b.input_nodes(ctx.g).unwrap();
    let q = net.forward(&mut ctx, &inputs, Some(&b.coords)).unwrap().quantiles;
    g.value(q).clone()
}

fn concept_net() -> (SubModel, ModelParams) {
    let net = SubModel::new("cover", small_cfg(), InputLayout::imagery()).unwrap();
    let p = net.init(&mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    (net, p)
}

fn with_head(mut p: ModelParams, biases: &[f64]) -> ModelParams {
    let w = p.get("cover.head.w").unwrap().shape().to_vec();
    p.set("cover.head.w", Array::zeros(&w)).unwrap();
    p.set("cover.head.b", Array::from_vec(biases.to_vec())).unwrap();
    p
}

#[test]
fn head_biases_spread_at_init() {
    let (_, p) = concept_net();
    assert_eq!(p.get("cover.head.b").unwrap().data(), &[-1.0, -0.5, 0.0, 0.5, 1.0]);
}

#[test]
fn zero_weight_head_gives_constant_planes() {
    let ds = dataset();
    let b = batch(&ds, &[0, 9]);
    let (net, p) = concept_net();
    let p = with_head(p, &[-2.0, -1.0, 0.0, 1.0, 2.0]);
    for mode in [Mode::Train, Mode::Infer] {
        let out = run(&net, &p, &b, mode, 5);
        assert_eq!(out.shape(), &[2, 5, 16, 16]);
        for (i, v) in out.data().iter().enumerate() {
            assert_eq!(*v, [-2.0, -1.0, 0.0, 1.0, 2.0][(i / 256) % 5]);
        }
    }
}

#[test]
fn infer_mode_sorts_quantiles() {
    let ds = dataset();
    let b = batch(&ds, &[3]);
    let (net, p) = concept_net();
    let p = with_head(p, &[3.0, 1.0, 2.0, 5.0, 4.0]);
    let raw = run(&net, &p, &b, Mode::Train, 0);
    let sorted = run(&net, &p, &b, Mode::Infer, 0);
    for px in 0..256 {
        let r: Vec<f64> = (0..5).map(|k| raw.data()[k * 256 + px]).collect();
        let s: Vec<f64> = (0..5).map(|k| sorted.data()[k * 256 + px]).collect();
        assert_eq!(r, vec![3.0, 1.0, 2.0, 5.0, 4.0]);
        assert_eq!(s, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    }
}

#[test]
fn infer_outputs_are_monotone_after_random_init() {
    let ds = dataset();
    let b = batch(&ds, &[0, 1, 8]);
    let (net, p) = concept_net();
    let out = run(&net, &p, &b, Mode::Infer, 0);
    for bi in 0..3 {
        for px in 0..256 {
            for k in 0..4 {
                let base = bi * 5 * 256;
                assert!(out.data()[base + k * 256 + px] <= out.data()[base + (k + 1) * 256 + px]);
            }
        }
    }
}

#[test]
fn dropout_depends_on_seed_only_in_training() {
    let ds = dataset();
    let b = batch(&ds, &[2, 10]);
    let (net, p) = concept_net();
    assert_ne!(run(&net, &p, &b, Mode::Train, 1), run(&net, &p, &b, Mode::Train, 2));
    assert_eq!(run(&net, &p, &b, Mode::Train, 1), run(&net, &p, &b, Mode::Train, 1));
    assert_eq!(run(&net, &p, &b, Mode::Infer, 1), run(&net, &p, &b, Mode::Infer, 2));
}

#[test]
fn geometry_is_preserved() {
    let cfg = SynthConfig {
        n_gedi_like: 4,
        n_plot_like: 4,
        patch_size: 8,
        plot_block_size_px: 4,
        footprints_per_patch: 1,
        ..SynthConfig::default()
    };
    let ds = generate_synthetic(&cfg, &ProcessSpec::default()).unwrap();
    let b = batch(&ds, &[0, 1]);
    let (net, p) = concept_net();
    assert_eq!(run(&net, &p, &b, Mode::Infer, 0).shape(), &[2, 5, 8, 8]);
}

#[test]
fn shape_mismatch_is_an_error() {
    let (net, p) = concept_net();
    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, &p, Mode::Infer, 0);
    let x = ctx.constant(Array::zeros(&[1, 2, 16, 16])).unwrap();
    let y = ctx.constant(Array::zeros(&[1, 10, 16, 16])).unwrap();
    assert!(net.forward(&mut ctx, &[x, y], Some(&[(0.0, 0.0)])).is_err());
}

fn pgcbm(bypass: bool) -> (PgcbmNet, ModelParams) {
    let s = ModelSettings {
        bypass_latent: bypass,
        ..small_settings()
    };
    let net = PgcbmNet::new(&s).unwrap();
    let p = net.init(&mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    (net, p)
}

#[test]
fn bottleneck_replay_is_bitwise() {
    let ds = dataset();
    let b = batch(&ds, &[0, 8, 9]);
    let (net, p) = pgcbm(false);
    let (concepts, task) = net.predict(&p, &b).unwrap();
    let c: [Array; 3] = [concepts[0].clone(), concepts[1].clone(), concepts[2].clone()];
    assert_eq!(net.predict_from_concepts(&p, &b, &c).unwrap(), task);
    // Other imagery, same concepts: the task output cannot change.
    let other = batch(&ds, &[1, 2, 3]);
    assert_eq!(net.predict_from_concepts(&p, &other, &c).unwrap(), task);
}

#[test]
fn bypass_lets_imagery_through() {
    let ds = dataset();
    let b = batch(&ds, &[0, 8, 9]);
    let (net, p) = pgcbm(true);
    let (concepts, task) = net.predict(&p, &b).unwrap();
    let c: [Array; 3] = [concepts[0].clone(), concepts[1].clone(), concepts[2].clone()];
    assert_eq!(net.predict_from_concepts(&p, &b, &c).unwrap(), task);
    let other = batch(&ds, &[1, 2, 3]);
    assert_ne!(net.predict_from_concepts(&p, &other, &c).unwrap(), task);
}

#[test]
fn intervening_on_a_concept_changes_the_task() {
    let ds = dataset();
    let b = batch(&ds, &[8, 9]);
    let (net, p) = pgcbm(false);
    let (concepts, task) = net.predict(&p, &b).unwrap();
    let cover = Array::full(concepts[0].shape(), 2.5);
    let c = [cover, concepts[1].clone(), concepts[2].clone()];
    let changed = net.predict_from_concepts(&p, &b, &c).unwrap();
    assert_eq!(changed.shape(), task.shape());
    assert_ne!(changed, task);
}

fn task_grads(net: &dyn Network, b: &Batch, frozen: &[String]) -> (Vec<(String, f64)>, Vec<String>) {
    let mut g = Graph::new();
    let mut ctx = Ctx::new(&mut g, net.params(), Mode::Train, 3);
    for f in frozen {
        ctx = ctx.freeze(f);
    }
    let heads = net.heads(&mut ctx, b).unwrap();
    let leaves = ctx.trainable_leaves().to_vec();
    drop(ctx);
    let task = heads.iter().find(|(a, _)| *a == Attribute::Agbd).unwrap().1;
    let t = Attribute::Agbd.index();
    let f = focal_quantile_loss(&mut g, task, &b.targets[t], &b.masks[t], &DEFAULT_QUANTILES, 2.0, 1e-6).unwrap();
    let gm = g.backward(f.loss).unwrap();
    let norms = leaves
        .iter()
        .map(|(n, id)| (n.clone(), gm.get(*id).map_or(0.0, |a| a.sq_norm().sqrt())))
        .collect();
    (norms, leaves.into_iter().map(|(n, _)| n).collect())
}

#[test]
fn task_gradient_reaches_concept_parameters() {
    let ds = dataset();
    let b = batch(&ds, &[8, 9, 10]);
    let (net, params) = pgcbm(false);
    let m = PgcbmModel { net, params };
    let (norms, _) = task_grads(&m, &b, &[]);
    let cover: f64 = norms.iter().filter(|(n, _)| n.starts_with("cover.")).map(|(_, v)| v * v).sum();
    assert!(cover.sqrt() > 0.0);
}

#[test]
fn every_active_parameter_receives_gradient() {
    let ds = dataset();
    let reg = Registry::default();
    let s = small_settings();
    let pretrained = {
        let net = PgcbmNet::new(&s).unwrap();
        net.init(&mut ChaCha8Rng::seed_from_u64(8)).unwrap()
    };
    for name in ["pgcbm", "vanilla", "blackbox"] {
        let m = reg.get(name).unwrap().build(&s, &pretrained, 11).unwrap();
        let mut reached = std::collections::BTreeSet::new();
        for ids in [[8usize, 9, 10], [11, 12, 13], [14, 15, 8]] {
            let b = batch(&ds, &ids);
            let (norms, _) = task_grads(m.as_ref(), &b, &m.frozen_prefixes());
            for (n, v) in norms {
                if v > 1e-12 {
                    reached.insert(n);
                }
            }
        }
        let frozen = m.frozen_prefixes();
        let dead: Vec<&String> = m
            .params()
            .names()
            .filter(|n| !frozen.iter().any(|f| n.starts_with(f.as_str())))
            .filter(|n| !reached.contains(*n))
            .collect();
        assert!(dead.is_empty(), "{name}: parameters without gradient: {dead:?}");
    }
}

fn vanilla_model() -> Box<dyn VariantModel> {
    let s = small_settings();
    let pretrained = PgcbmNet::new(&s).unwrap().init(&mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    Registry::default().get("vanilla").unwrap().build(&s, &pretrained, 2).unwrap()
}

#[test]
fn vanilla_concept_gradient_is_exactly_zero() {
    let ds = dataset();
    let b = batch(&ds, &[8, 9, 10]);
    let m = vanilla_model();
    for frozen in [m.frozen_prefixes(), Vec::new()] {
        let (norms, names) = task_grads(m.as_ref(), &b, &frozen);
        assert!(names.iter().all(|n| n.starts_with("g.")), "{names:?}");
        assert!(norms.iter().any(|(_, v)| *v > 0.0));
    }
}

#[test]
fn vanilla_refuses_to_unfreeze_concepts() {
    let mut m = vanilla_model();
    assert!(matches!(m.unfreeze("cover."), Err(CoreError::FrozenConcepts)));
    assert!(matches!(m.unfreeze(""), Err(CoreError::FrozenConcepts)));
    assert!(m.unfreeze("g.").is_ok());
}

#[test]
fn vanilla_aggregator_sees_concept_medians() {
    let ds = dataset();
    let b = batch(&ds, &[8, 9]);
    let m = vanilla_model();
    let v = m.as_any().downcast_ref::<VanillaModel>().unwrap();
    let med = v.medians(&b).unwrap();
    assert_eq!(med.shape(), &[2, 3, 16, 16]);
    for (c, sub) in v.net.concepts.iter().enumerate() {
        let q = run(sub, m.params(), &b, Mode::Infer, 0);
        for bi in 0..2 {
            let got = &med.data()[(bi * 3 + c) * 256..(bi * 3 + c + 1) * 256];
            let want = &q.data()[(bi * 5 + 2) * 256..(bi * 5 + 3) * 256];
            assert_eq!(got, want);
        }
    }
    // Served from the cache the second time, bit for bit.
    assert_eq!(v.medians(&b).unwrap(), med);
}

#[test]
fn vanilla_concepts_are_static_during_training() {
    use ::pgcbm::train::{train_network, StageData, StageSpec, TrainConfig};
    let ds = dataset();
    let normalized: Vec<_> = ds.records.iter().map(|r| ds.norm.apply(r)).collect();
    let plots: Vec<usize> = (8..16).collect();
    let mut m = vanilla_model();
    let before = m.params().clone();
    let b = batch(&ds, &[8, 9]);
    let fresh = |p: &ModelParams| VanillaNet::new(&small_settings()).unwrap().concept_medians(p, &b).unwrap();
    let med0 = fresh(&before);
    let spec = StageSpec {
        stage: "finetune".into(),
        target: Attribute::Agbd,
        head_weights: [0.0, 0.0, 0.0, 1.0],
        train: TrainConfig {
            epochs: 1,
            batch_size: 4,
            base_lr: 1e-2,
            eval_every: 1,
            ..TrainConfig::default()
        },
        loss: Default::default(),
        curriculum: Default::default(),
        seed: 5,
    };
    let data = StageData {
        records: &normalized,
        train: plots[..6].to_vec(),
        extra: Vec::new(),
        val: plots[6..].to_vec(),
    };
    let out = train_network(m.as_mut(), &data, &spec).unwrap();
    assert_eq!(out.steps, 2);
    for (n, a) in before.iter() {
        let same = m.params().get(n).unwrap() == a;
        assert_eq!(same, !n.starts_with("g."), "{n}");
    }
    assert_eq!(fresh(m.params()), med0);
}

#[test]
fn blackbox_matches_parameter_budget() {
    let s = ModelSettings::default();
    let target = PgcbmNet::new(&s).unwrap().param_count();
    let bb = blackbox_submodel(&s).unwrap();
    assert!(relative_gap(bb.param_count(), target) <= 0.1, "{} vs {target}", bb.param_count());
    let small = small_settings();
    let bb = blackbox_submodel(&small).unwrap();
    assert!(relative_gap(bb.param_count(), PgcbmNet::new(&small).unwrap().param_count()) <= 0.1);
}

#[test]
fn blackbox_exposes_only_the_task_head() {
    let ds = dataset();
    let b = batch(&ds, &[8]);
    let s = small_settings();
    let m = Registry::default().get("blackbox").unwrap().build(&s, &ModelParams::new(), 0).unwrap();
    let heads = m.predict(&b).unwrap();
    assert_eq!(heads.len(), 1);
    assert_eq!(heads[0].0, Attribute::Agbd);
    assert!(m.as_any().downcast_ref::<BlackboxModel>().is_some());
    assert!(m.params().names().all(|n| n.starts_with("blackbox.")));
}

#[test]
fn missing_pretrained_concept_is_named() {
    let s = small_settings();
    let err = Registry::default().get("pgcbm").unwrap().build(&s, &ModelParams::new(), 0).err().unwrap();
    assert!(matches!(err, CoreError::MissingPrerequisite(ref m) if m.contains("cover")), "{err}");
}
