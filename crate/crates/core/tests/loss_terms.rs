use pgcbm::loss::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tensorcore::{finite_difference_check, Array, Graph, NodeId};

const EPS: f64 = 1e-6;
const Q: [f64; 5] = DEFAULT_QUANTILES;

fn arr(shape: &[usize], data: Vec<f64>) -> Array {
    Array::new(shape.to_vec(), data).unwrap()
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Array {
    let n = shape.iter().product();
    arr(shape, (0..n).map(|_| rng.random_range(-scale..scale)).collect())
}

fn random_mask(rng: &mut ChaCha8Rng, shape: &[usize], p: f64) -> Array {
    let n = shape.iter().product();
    arr(shape, (0..n).map(|_| if rng.random_bool(p) { 1.0 } else { 0.0 }).collect())
}

/// Direct evaluation of the focal quantile loss from its definition.
fn focal_oracle(pred: &Array, y: &Array, m: &Array, q: &[f64], gamma: f64) -> f64 {
    let s = pred.shape();
    let (b, k, hw) = (s[0], s[1], s[2] * s[3]);
    let valid: Vec<f64> = (0..b * hw).filter(|&i| m.data()[i] > 0.5).map(|i| y.data()[i]).collect();
    let n = valid.len() as f64;
    let mu = valid.iter().sum::<f64>() / n;
    let sd = (valid.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n).sqrt();
    let mut total = 0.0;
    for (kk, &qk) in q.iter().enumerate().take(k) {
        let mut acc = 0.0;
        for bi in 0..b {
            for p in 0..hw {
                if m.data()[bi * hw + p] <= 0.5 {
                    continue;
                }
                let yv = y.data()[bi * hw + p];
                let u = yv - pred.data()[(bi * k + kk) * hw + p];
                let z = (yv - mu).abs() / (sd + EPS);
                acc += (u.abs() + EPS).powf(gamma) * (1.0 + z * z) * (qk * u).max((qk - 1.0) * u);
            }
        }
        total += acc / n;
    }
    total / k as f64
}

fn focal_value(pred: &Array, y: &Array, m: &Array) -> f64 {
    let mut g = Graph::new();
    let p = g.constant(pred.clone()).unwrap();
    let f = focal_quantile_loss(&mut g, p, y, m, &Q, 2.0, EPS).unwrap();
    g.value(f.loss).item().unwrap()
}

fn with_graph(pred: &Array, f: impl FnOnce(&mut Graph, NodeId) -> NodeId) -> f64 {
    let mut g = Graph::new();
    let p = g.constant(pred.clone()).unwrap();
    let out = f(&mut g, p);
    g.value(out).item().unwrap()
}

#[test]
fn focal_matches_direct_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let pred = random(&mut rng, &[2, 5, 3, 4], 2.0);
    let y = random(&mut rng, &[2, 3, 4], 2.0);
    let m = random_mask(&mut rng, &[2, 3, 4], 0.5);
    let got = focal_value(&pred, &y, &m);
    let want = focal_oracle(&pred, &y, &m, &Q, 2.0);
    assert!((got - want).abs() < 1e-12 * want.max(1.0), "{got} vs {want}");
}

#[test]
fn focal_single_pixel_offset_by_one() {
    let y = arr(&[1, 1, 1], vec![3.0]);
    let m = arr(&[1, 1, 1], vec![1.0]);
    let pred = arr(&[1, 5, 1, 1], vec![2.0; 5]);
    let want = (1.0 + EPS).powi(2) * 0.5;
    assert!((focal_value(&pred, &y, &m) - want).abs() < 1e-12);
}

#[test]
fn focal_perfect_prediction_is_zero() {
    let y = arr(&[1, 2, 2], vec![1.0, -2.0, 0.5, 3.0]);
    let m = arr(&[1, 2, 2], vec![1.0, 1.0, 0.0, 1.0]);
    let mut pd = Vec::new();
    for _ in 0..5 {
        pd.extend_from_slice(y.data());
    }
    assert_eq!(focal_value(&arr(&[1, 5, 2, 2], pd), &y, &m), 0.0);
}

#[test]
fn focal_empty_mask_is_flagged_zero() {
    let mut g = Graph::new();
    let p = g.constant(Array::zeros(&[1, 5, 2, 2])).unwrap();
    let f = focal_quantile_loss(
        &mut g,
        p,
        &Array::zeros(&[1, 2, 2]),
        &Array::zeros(&[1, 2, 2]),
        &Q,
        2.0,
        EPS,
    )
    .unwrap();
    assert!(f.empty);
    assert_eq!(g.value(f.loss).item().unwrap(), 0.0);
}

#[test]
fn monotonicity_examples() {
    let v = with_graph(&arr(&[1, 2, 1, 1], vec![2.0, 1.0]), |g, p| {
        monotonicity_loss(g, p).unwrap()
    });
    assert_eq!(v, 1.0);
    let sorted = arr(&[1, 3, 1, 2], vec![0.0, -1.0, 1.0, 0.5, 2.0, 0.5]);
    assert_eq!(with_graph(&sorted, |g, p| monotonicity_loss(g, p).unwrap()), 0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random(&mut rng, &[2, 5, 3, 3], 1.0);
    let a = with_graph(&x, |g, p| monotonicity_loss(g, p).unwrap());
    let b = with_graph(&x.map(|v| v + 7.25), |g, p| monotonicity_loss(g, p).unwrap());
    assert!((a - b).abs() < 1e-12);
}

fn spatial_value(plane: &Array) -> f64 {
    with_graph(plane, |g, p| spatial_loss(g, p, EPS).unwrap())
}

#[test]
fn spatial_constant_plane_floor() {
    let v = spatial_value(&Array::full(&[1, 1, 4, 5], 3.0));
    assert!((v - EPS.sqrt()).abs() < 1e-15);
    assert!((v - 1e-3).abs() < 1e-15);
}

#[test]
fn spatial_vertical_step_edge() {
    let mut prev = f64::NEG_INFINITY;
    for i in 0..20 {
        let d = i as f64 * 0.3;
        let plane = arr(&[1, 1, 2, 2], vec![0.0, 0.0, d, d]);
        let got = spatial_value(&plane);
        // vertical: two pairs with Δ = d; horizontal: two pairs with Δ = 0
        let want = 0.5 * ((EPS + d * d).sqrt() + EPS.sqrt());
        assert!((got - want).abs() < 1e-14);
        assert!(got > prev);
        prev = got;
    }
}

#[test]
fn spatial_transpose_symmetry() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&mut rng, &[1, 1, 3, 5], 2.0);
    let mut t = vec![0.0; 15];
    for i in 0..3 {
        for j in 0..5 {
            t[j * 3 + i] = x.data()[i * 5 + j];
        }
    }
    let a = spatial_value(&x);
    let b = spatial_value(&arr(&[1, 1, 5, 3], t));
    assert!((a - b).abs() < 1e-14);
}

fn consistency_value(pred: &Array, q: &[f64]) -> f64 {
    with_graph(pred, |g, p| consistency_loss(g, p, q, EPS).unwrap())
}

#[test]
fn consistency_two_quantile_example() {
    let v = consistency_value(&arr(&[1, 2, 1, 1], vec![0.0, 1.0]), &[0.1, 0.9]);
    let exact = 0.5 * (1.0 / (1.0 + EPS) - 0.8f64).powi(2);
    assert!((v - exact).abs() < 1e-12);
    assert!((v - 0.02).abs() < 1e-6);
}

#[test]
fn consistency_scale_invariance() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut d = Vec::new();
    for _ in 0..9 {
        let mut base = rng.random_range(-1.0..1.0);
        let mut col = Vec::new();
        for _ in 0..5 {
            base += rng.random_range(0.1..0.6);
            col.push(base);
        }
        d.push(col);
    }
    let data: Vec<f64> = (0..5).flat_map(|k| d.iter().map(move |c| c[k])).collect();
    let x = arr(&[1, 5, 3, 3], data);
    let a = consistency_value(&x, &Q);
    let b = consistency_value(&x.map(|v| v * 10.0), &Q);
    assert!((a - b).abs() < 1e-6, "{a} vs {b}");
}

#[test]
fn consistency_constant_prediction() {
    let v = consistency_value(&Array::full(&[1, 5, 2, 2], 4.0), &Q);
    let dq = [0.15f64, 0.25, 0.25, 0.15];
    let want = 0.5 * dq.iter().map(|d| d * d).sum::<f64>() / 4.0;
    assert!((v - want).abs() < 1e-15);
}

fn adv_value(med: &Array, y: &Array, m: &Array, eps: f64) -> (f64, bool) {
    let mut g = Graph::new();
    let p = g.constant(med.clone()).unwrap();
    let a = adversarial_js_loss(&mut g, p, y, m, 32, eps).unwrap();
    (g.value(a.loss).item().unwrap(), a.degenerate)
}

#[test]
fn adversarial_identical_groups_is_zero() {
    // high and low targets share the same prediction multiset
    let med = arr(&[1, 1, 1, 4], vec![0.0, 1.0, 0.0, 1.0]);
    let y = arr(&[1, 1, 4], vec![5.0, 6.0, 1.0, 2.0]);
    let m = Array::full(&[1, 1, 4], 1.0);
    let (v, deg) = adv_value(&med, &y, &m, EPS);
    assert!(!deg);
    assert!(v.abs() < 1e-15);
}

#[test]
fn adversarial_disjoint_support_is_ln2() {
    let med = arr(&[1, 1, 1, 4], vec![1.0, 1.0, 0.0, 0.0]);
    let y = arr(&[1, 1, 4], vec![9.0, 8.0, 1.0, 2.0]);
    let m = Array::full(&[1, 1, 4], 1.0);
    let mut g = Graph::new();
    let p = g.constant(med).unwrap();
    let a = adversarial_js_loss(&mut g, p, &y, &m, 2, 1e-12).unwrap();
    let v = g.value(a.loss).item().unwrap();
    assert!((v - std::f64::consts::LN_2).abs() < 1e-9, "{v}");
    assert!((v - 0.6931).abs() < 1e-4);
}

#[test]
fn adversarial_needs_two_pixels() {
    let m = arr(&[1, 1, 3], vec![0.0, 1.0, 0.0]);
    let (v, deg) = adv_value(&Array::zeros(&[1, 1, 1, 3]), &Array::zeros(&[1, 1, 3]), &m, EPS);
    assert!(deg);
    assert_eq!(v, 0.0);
}

#[test]
fn adversarial_permutation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let med = random(&mut rng, &[1, 1, 1, 12], 2.0);
    let y = random(&mut rng, &[1, 1, 12], 5.0);
    let m = Array::full(&[1, 1, 12], 1.0);
    let perm = [5, 2, 11, 0, 7, 1, 9, 3, 10, 4, 8, 6];
    let pm = arr(&[1, 1, 1, 12], perm.iter().map(|&i| med.data()[i]).collect());
    let py = arr(&[1, 1, 12], perm.iter().map(|&i| y.data()[i]).collect());
    let (a, _) = adv_value(&med, &y, &m, EPS);
    let (b, _) = adv_value(&pm, &py, &m, EPS);
    assert!((a - b).abs() < 1e-14);
}

struct Heads {
    preds: Vec<Array>,
    targets: Vec<Array>,
    masks: Vec<Array>,
    weights: Vec<f64>,
}

fn build_total(g: &mut Graph, h: &Heads, w: &LossWeights) -> (Vec<NodeId>, NodeId, LossBreakdown) {
    let leaves: Vec<NodeId> = h.preds.iter().map(|p| g.leaf(p.clone()).unwrap()).collect();
    let names = ["cover", "height", "stems", "agbd"];
    let inputs: Vec<HeadInput> = leaves
        .iter()
        .enumerate()
        .map(|(i, &pred)| HeadInput {
            name: names[i],
            pred,
            target: &h.targets[i],
            mask: &h.masks[i],
            weight: h.weights[i],
        })
        .collect();
    let (t, b) = total_loss(g, &inputs, w, &Q).unwrap();
    (leaves, t, b)
}

fn gedi_batch(rng: &mut ChaCha8Rng) -> Heads {
    let shape = [2, 4, 4];
    let mut masks = vec![random_mask(rng, &shape, 0.4), random_mask(rng, &shape, 0.4)];
    masks.push(Array::zeros(&shape));
    masks.push(Array::zeros(&shape));
    Heads {
        preds: (0..4).map(|_| random(rng, &[2, 5, 4, 4], 1.5)).collect(),
        targets: (0..4).map(|_| random(rng, &shape, 1.5)).collect(),
        masks,
        weights: vec![0.1, 0.1, 0.1, 1.0],
    }
}

#[test]
fn gedi_batch_has_no_task_term() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let h = gedi_batch(&mut rng);
    let mut g = Graph::new();
    let (_, _, b) = build_total(&mut g, &h, &LossWeights::default());
    assert_eq!(b.heads[3].focal, 0.0);
    assert!(b.heads[3].empty_mask);
    assert!(b.heads[0].focal > 0.0 && b.heads[1].focal > 0.0);
    assert!((b.total - b.recompute_total()).abs() < 1e-12);
}

#[test]
fn total_recomputes_from_breakdown() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..5 {
        let mut h = gedi_batch(&mut rng);
        h.masks[3] = random_mask(&mut rng, &[2, 4, 4], 0.3);
        let w = LossWeights::default().with_lambdas(MAX_LAMBDAS);
        let mut g = Graph::new();
        let (_, _, b) = build_total(&mut g, &h, &w);
        assert!((b.total - b.recompute_total()).abs() < 1e-12);
        assert!(b.adversarial > 0.0);
    }
}

#[test]
fn all_masks_empty_is_an_error() {
    let mut g = Graph::new();
    let p = g.leaf(Array::zeros(&[1, 5, 2, 2])).unwrap();
    let z = Array::zeros(&[1, 2, 2]);
    let heads = [HeadInput {
        name: "agbd",
        pred: p,
        target: &z,
        mask: &z,
        weight: 1.0,
    }];
    assert!(total_loss(&mut g, &heads, &LossWeights::default(), &Q).is_err());
}

#[test]
fn zero_weights_and_perfect_task_prediction() {
    let y = arr(&[1, 2, 2], vec![0.3, -1.0, 2.0, 0.7]);
    let m = Array::full(&[1, 2, 2], 1.0);
    let pd: Vec<f64> = (0..5).flat_map(|_| y.data().to_vec()).collect();
    let h = Heads {
        preds: vec![arr(&[1, 5, 2, 2], pd)],
        targets: vec![y],
        masks: vec![m],
        weights: vec![1.0],
    };
    let w = LossWeights::default().with_lambdas([0.0; 4]);
    let mut g = Graph::new();
    let (_, _, b) = build_total(&mut g, &h, &w);
    assert_eq!(b.total, 0.0);
}

/// Predictions with pairwise gaps of at least 0.01 and targets at least 0.05
/// from every prediction of their pixel, so no max/min, abs, relu or pinball
/// kink lies within a finite-difference step.
fn separated(rng: &mut ChaCha8Rng, b: usize, k: usize, hw: usize) -> (Array, Array) {
    let n = b * k * hw;
    let mut grid: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - n as f64 * 0.005).collect();
    for i in (1..n).rev() {
        grid.swap(i, rng.random_range(0..=i));
    }
    let pred: Vec<f64> = grid.iter().map(|v| v + rng.random_range(0.0..0.001)).collect();
    let mut y = Vec::with_capacity(b * hw);
    for bi in 0..b {
        for p in 0..hw {
            let own: Vec<f64> = (0..k).map(|kk| pred[(bi * k + kk) * hw + p]).collect();
            loop {
                let c = rng.random_range(-1.5..1.5);
                if own.iter().all(|v| (v - c).abs() >= 0.05) {
                    y.push(c);
                    break;
                }
            }
        }
    }
    let s = [b, k, hw];
    (arr(&[s[0], s[1], 1, s[2]], pred), arr(&[s[0], 1, s[2]], y))
}

/// True when no masked median prediction sits within `margin` (in bin
/// units) of a histogram kernel vertex.
fn clear_of_bin_vertices(pred: &Array, mask: &Array, bins: usize, margin: f64) -> bool {
    let s = pred.shape();
    let (b, k, hw) = (s[0], s[1], s[2] * s[3]);
    let med: Vec<f64> = (0..b * hw)
        .filter(|&i| mask.data()[i] > 0.5)
        .map(|i| pred.data()[((i / hw) * k + k / 2) * hw + i % hw])
        .collect();
    if med.len() < 2 {
        return true;
    }
    let lo = med.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = med.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    med.iter().all(|&x| {
        let t = (x - lo) * bins as f64 / (hi - lo) - 0.5;
        t <= -margin || t >= bins as f64 - 1.0 + margin || (t - t.round()).abs() > margin
    })
}

fn smooth_case(rng: &mut ChaCha8Rng, b: usize, hw: usize, bins: usize) -> (Array, Array, Array) {
    loop {
        let (pred, y) = separated(rng, b, 5, hw);
        let m = random_mask(rng, &[b, 1, hw], 0.6);
        if clear_of_bin_vertices(&pred, &m, bins, 1e-2) {
            return (pred, y, m);
        }
    }
}

#[test]
fn gradients_of_every_term_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for trial in 0..8 {
        let (pred, y, m) = smooth_case(&mut rng, 2, 12, 8);
        let pred = pred.reshape(&[2, 5, 3, 4]).unwrap();
        let y = y.reshape(&[2, 3, 4]).unwrap();
        let m = m.reshape(&[2, 3, 4]).unwrap();
        for term in 0..5 {
            let mut g = Graph::new();
            let p = g.leaf(pred.clone()).unwrap();
            let out = match term {
                0 => focal_quantile_loss(&mut g, p, &y, &m, &Q, 2.0, EPS).unwrap().loss,
                1 => monotonicity_loss(&mut g, p).unwrap(),
                2 => {
                    let med = g.slice(p, 1, 2, 3).unwrap();
                    spatial_loss(&mut g, med, EPS).unwrap()
                }
                3 => consistency_loss(&mut g, p, &Q, EPS).unwrap(),
                _ => {
                    let med = g.slice(p, 1, 2, 3).unwrap();
                    adversarial_js_loss(&mut g, med, &y, &m, 8, EPS).unwrap().loss
                }
            };
            g.mark_output(out);
            // the histogram term is only piecewise smooth; a shorter step
            // keeps the second-order error of its kernel weights small
            let step = if term == 4 { 1e-5 } else { 1e-4 };
            let err = finite_difference_check(&mut g, &[], p, step).unwrap();
            assert!(err < 1e-4, "trial {trial} term {term}: {err}");
        }
    }
}

#[test]
fn total_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let w = LossWeights {
        bins: 8,
        ..LossWeights::default().with_lambdas(MAX_LAMBDAS)
    };
    for _ in 0..3 {
        let mut h = Heads {
            preds: Vec::new(),
            targets: Vec::new(),
            masks: Vec::new(),
            weights: vec![0.1, 0.1, 0.1, 1.0],
        };
        for head in 0..4 {
            let (pred, y, m) = smooth_case(&mut rng, 2, 16, w.bins);
            h.preds.push(pred.reshape(&[2, 5, 4, 4]).unwrap());
            h.targets.push(y.reshape(&[2, 4, 4]).unwrap());
            let m = if head == 2 { Array::zeros(&[2, 4, 4]) } else { m.reshape(&[2, 4, 4]).unwrap() };
            h.masks.push(m);
        }
        let mut g = Graph::new();
        let (leaves, t, _) = build_total(&mut g, &h, &w);
        g.mark_output(t);
        for leaf in leaves {
            let err = finite_difference_check(&mut g, &[], leaf, 1e-4).unwrap();
            assert!(err < 1e-4, "{err}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn masked_targets_never_matter(seed in any::<u64>(), scale in 0.5f64..50.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pred = random(&mut rng, &[1, 5, 3, 3], 2.0);
        let y = random(&mut rng, &[1, 3, 3], 2.0);
        let mut m = random_mask(&mut rng, &[1, 3, 3], 0.5);
        m.data_mut()[0] = 1.0;
        let y2 = arr(&[1, 3, 3], y.data().iter().zip(m.data())
            .map(|(&v, &mm)| if mm > 0.5 { v } else { v * scale + 1.0 }).collect());
        prop_assert_eq!(focal_value(&pred, &y, &m), focal_value(&pred, &y2, &m));
        let med = arr(&[1, 1, 3, 3], pred.data()[18..27].to_vec());
        prop_assert_eq!(adv_value(&med, &y, &m, EPS).0, adv_value(&med, &y2, &m, EPS).0);
    }

    #[test]
    fn js_stays_within_bounds(seed in any::<u64>(), n in 2usize..40, bins in 2usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let med = random(&mut rng, &[1, 1, 1, n], 3.0);
        let y = random(&mut rng, &[1, 1, n], 3.0);
        let m = Array::full(&[1, 1, n], 1.0);
        let mut g = Graph::new();
        let p = g.constant(med).unwrap();
        let a = adversarial_js_loss(&mut g, p, &y, &m, bins, EPS).unwrap();
        let v = g.value(a.loss).item().unwrap();
        prop_assert!(v >= -1e-15 && v <= std::f64::consts::LN_2 + 1e-12);
        if !a.degenerate {
            prop_assert!((a.p_high.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!((a.p_low.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn monotonicity_zero_iff_sorted(vals in proptest::collection::vec(-5.0f64..5.0, 20)) {
        let x = arr(&[1, 5, 2, 2], vals.clone());
        let v = with_graph(&x, |g, p| monotonicity_loss(g, p).unwrap());
        let sorted = (0..4).all(|px| (0..4).all(|k| vals[k * 4 + px] <= vals[(k + 1) * 4 + px]));
        prop_assert_eq!(v == 0.0, sorted);
    }

    #[test]
    fn focal_weight_nondecreasing(z in 0.0f64..5.0, a in 0.0f64..10.0, b in 0.0f64..10.0, q in 0.01f64..0.99) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        for s in [1.0, -1.0] {
            let wl = focal_weight(lo, z, 2.0, EPS) * pinball(s * lo, q);
            let wh = focal_weight(hi, z, 2.0, EPS) * pinball(s * hi, q);
            prop_assert!(wh >= wl);
        }
    }

    #[test]
    fn curriculum_stays_in_range(total in 5usize..200, rmse in proptest::collection::vec(0.1f64..2.0, 200)) {
        let spec = CurriculumSpec::default();
        let mut w = LossWeights::default();
        let mut hist = Vec::new();
        for e in 0..total {
            let prev = w.lambdas();
            w = curriculum_update(e, total, &hist, &w, &spec).unwrap();
            let l = w.lambdas();
            for i in 0..4 {
                prop_assert!(l[i] >= 0.0 && l[i] <= MAX_LAMBDAS[i]);
                prop_assert!(l[i] >= INITIAL_LAMBDAS[i]);
            }
            match spec.phase(e, total) {
                Phase::Warmup => prop_assert_eq!(l, INITIAL_LAMBDAS),
                Phase::Curriculum => {
                    for i in 0..4 { prop_assert!(l[i] >= prev[i] - 1e-15); }
                }
                Phase::Stabilization => {
                    if spec.phase(e - 1, total) == Phase::Stabilization {
                        for i in 0..4 { prop_assert!(l[i] <= prev[i]); }
                    }
                }
            }
            hist.push((e, rmse[e]));
        }
    }
}
