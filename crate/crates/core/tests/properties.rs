//! Randomized invariants across the watershed chain, both classic
//! classifiers, the network and the metrics.

use std::collections::{BTreeSet, VecDeque};

use demgrade::cnn::{cnn_predict, default_architecture, forward_one, softmax, CnnModel, Tensor, INPUT_SHAPE};
use demgrade::dataset::{stratified_split_labels, SplitRatios};
use demgrade::eval::{confusion_matrix, score};
use demgrade::pipeline::{extract_features, make_split, FeatureSpec};
use demgrade::rf::{fit_forest, forest_predict, RfConfig};
use demgrade::svm::{poly_kernel, smo_solve, KernelParams, SmoSolution};
use demgrade::watershed::{segment, watershed_features, watershed_flood_traced, WatershedParams, BOUNDARY, UNKNOWN};
use demgrade::{ExperimentConfig, Image, ModelKind};
use nalgebra::DMatrix;
use proptest::prelude::*;

fn arb_image(max_side: usize) -> impl Strategy<Value = Image> {
    (4..=max_side, 4..=max_side).prop_flat_map(|(w, h)| {
        prop::collection::vec(any::<u8>(), w * h).prop_map(move |px| Image::new(w, h, px).unwrap())
    })
}

fn sized_image(w: usize, h: usize) -> impl Strategy<Value = Image> {
    prop::collection::vec(any::<u8>(), w * h).prop_map(move |px| Image::new(w, h, px).unwrap())
}

/// Bright blobs on a dark field, so the chain finds real markers.
fn arb_blob_image() -> impl Strategy<Value = Image> {
    (prop::collection::vec((4usize..28, 4usize..28, 3.0f64..7.0), 1..4), any::<u64>()).prop_map(|(blobs, noise)| {
        Image::from_fn(32, 32, |x, y| {
            let inside = blobs
                .iter()
                .any(|&(cx, cy, r)| (x as f64 - cx as f64).hypot(y as f64 - cy as f64) <= r);
            let jitter = ((x * 31 + y * 17) as u64 ^ noise) % 20;
            if inside { 180 + jitter as u8 } else { jitter as u8 }
        })
    })
}

fn four_connected_from(labels: &[i32], w: usize, start: usize) -> usize {
    let h = labels.len() / w;
    let target = labels[start];
    let mut seen = vec![false; labels.len()];
    let mut queue = VecDeque::from([start]);
    seen[start] = true;
    let mut n = 0;
    while let Some(p) = queue.pop_front() {
        n += 1;
        let (x, y) = (p % w, p / w);
        let candidates = [
            (x > 0).then(|| p - 1),
            (x + 1 < w).then(|| p + 1),
            (y > 0).then(|| p - w),
            (y + 1 < h).then(|| p + w),
        ];
        for q in candidates.into_iter().flatten() {
            if !seen[q] && labels[q] == target {
                seen[q] = true;
                queue.push_back(q);
            }
        }
    }
    n
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flood_partitions_and_contains_markers(img in arb_blob_image()) {
        let seg = segment(&img, &WatershedParams::default()).unwrap();
        let Some(labels) = seg.labels else { return Ok(()) };
        let marks = seg.markers.map.labels();
        let l = labels.labels();
        let marker_set: BTreeSet<i32> = marks.iter().copied().filter(|&m| m != UNKNOWN).collect();
        let basin_set: BTreeSet<i32> = l.iter().copied().filter(|&v| v != BOUNDARY).collect();
        prop_assert!(basin_set.is_subset(&marker_set));
        let basin_total: usize = basin_set.iter().map(|b| l.iter().filter(|&&v| v == *b).count()).sum();
        prop_assert_eq!(labels.boundary_count() + basin_total, l.len());
        for b in basin_set {
            // object basins come from one marker component and stay 4-connected
            if b >= 2 {
                let seed = marks.iter().position(|&m| m == b).unwrap();
                prop_assert_eq!(l[seed], b);
                let size = l.iter().filter(|&&v| v == b).count();
                prop_assert_eq!(four_connected_from(l, 32, seed), size, "basin {}", b);
            }
        }
    }

    #[test]
    fn flood_pops_respect_heap_order(img in arb_blob_image()) {
        let seg = segment(&img, &WatershedParams::default()).unwrap();
        prop_assume!(!seg.degenerate());
        let (_, pops) = watershed_flood_traced(&img, &seg.markers.map, WatershedParams::default().flood_connectivity).unwrap();
        for pair in pops.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            // b was already waiting when a was taken, so a's key is not larger
            if b.seq < a.seq_at_pop {
                prop_assert!((a.intensity, a.seq) <= (b.intensity, b.seq), "{:?} then {:?}", a, b);
            }
        }
    }

    #[test]
    fn watershed_features_are_deterministic(img in arb_image(24)) {
        let p = WatershedParams::default();
        let a = watershed_features(&img, &p).unwrap();
        let b = watershed_features(&img, &p).unwrap();
        prop_assert_eq!((a.image.width(), a.image.height()), (img.width(), img.height()));
        prop_assert_eq!(a, b);
    }
}

fn labelled_points() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<usize>)> {
    (12usize..40, 2usize..6).prop_flat_map(|(n, d)| {
        (
            prop::collection::vec(prop::collection::vec(-20i32..20, d), n),
            prop::collection::vec(0usize..4, n),
        )
            .prop_map(|(x, y)| (x.into_iter().map(|r| r.into_iter().map(f64::from).collect()).collect(), y))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn forest_ignores_tree_order((x, y) in labelled_points(), seed in 0u64..1000) {
        let cfg = RfConfig { n_trees: 9, seed, ..RfConfig::default() };
        let forest = fit_forest(&x, &y, &cfg).unwrap();
        let mut shuffled = forest.clone();
        shuffled.trees.reverse();
        shuffled.trees.rotate_left(seed as usize % 9);
        for row in &x {
            prop_assert_eq!(forest_predict(&forest, row).unwrap(), forest_predict(&shuffled, row).unwrap());
        }
    }

    #[test]
    fn forest_respects_depth_bound((x, y) in labelled_points(), depth in 0usize..6) {
        let cfg = RfConfig { n_trees: 5, max_depth: depth, ..RfConfig::default() };
        let forest = fit_forest(&x, &y, &cfg).unwrap();
        prop_assert!(forest.trees.iter().all(|t| t.depth() <= depth));
    }

    #[test]
    fn forest_is_invariant_to_uniform_scaling((x, y) in labelled_points(), seed in 0u64..1000) {
        let cfg = RfConfig { n_trees: 7, seed, ..RfConfig::default() };
        let scaled: Vec<Vec<f64>> = x.iter().map(|r| r.iter().map(|v| 3.0 * v).collect()).collect();
        let a = fit_forest(&x, &y, &cfg).unwrap();
        let b = fit_forest(&scaled, &y, &cfg).unwrap();
        for (row, srow) in x.iter().zip(&scaled) {
            prop_assert_eq!(forest_predict(&a, row).unwrap(), forest_predict(&b, srow).unwrap());
        }
    }
}

fn params(degree: u32, coef0: f64, c: f64, tol: f64) -> KernelParams {
    KernelParams { degree, gamma: 0.5, coef0, c, tol }
}

fn binary_problem() -> impl Strategy<Value = (Vec<Vec<f64>>, Vec<f64>)> {
    (4usize..16).prop_flat_map(|n| {
        (
            prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), n),
            prop::collection::vec(any::<bool>(), n),
        )
            .prop_map(|(x, flags)| {
                let mut y: Vec<f64> = flags.into_iter().map(|f| if f { 1.0 } else { -1.0 }).collect();
                y[0] = 1.0;
                y[1] = -1.0;
                (x, y)
            })
    })
}

fn decision(sol: &SmoSolution, x: &[Vec<f64>], y: &[f64], p: &KernelParams, probe: &[f64]) -> f64 {
    sol.alpha
        .iter()
        .zip(y)
        .zip(x)
        .map(|((a, yi), xi)| a * yi * poly_kernel(xi, probe, p).unwrap())
        .sum::<f64>()
        + sol.bias
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gram_matrix_is_symmetric_psd(
        x in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 4), 2..12),
        degree in 1u32..4,
        coef0 in 0.0f64..2.0,
    ) {
        let p = params(degree, coef0, 1.0, 1e-3);
        let n = x.len();
        let g = DMatrix::from_fn(n, n, |i, j| poly_kernel(&x[i], &x[j], &p).unwrap());
        prop_assert!((&g - g.transpose()).abs().max() == 0.0);
        let scale = g.abs().max().max(1.0);
        let smallest = g.symmetric_eigenvalues().min();
        prop_assert!(smallest >= -1e-8 * scale, "smallest eigenvalue {}", smallest);
    }

    #[test]
    fn trained_duals_are_feasible((x, y) in binary_problem(), degree in 1u32..4, c in 0.1f64..10.0) {
        let p = params(degree, 1.0, c, 1e-3);
        let sol = smo_solve(&x, &y, &p, 1000, 1 << 20).unwrap();
        prop_assert!(sol.alpha.iter().all(|&a| (0.0..=c).contains(&a)));
        let balance: f64 = sol.alpha.iter().zip(&y).map(|(a, y)| a * y).sum();
        prop_assert!(balance.abs() <= 10.0 * p.tol, "sum alpha y = {}", balance);
    }

    #[test]
    fn duplicating_samples_with_halved_cap_keeps_the_decision(
        (x, y) in binary_problem(),
        probes in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 5),
    ) {
        // two copies of each point under cap C solve the same problem as one
        // copy under cap 2C
        let tol = 1e-9;
        let single = params(2, 1.0, 2.0, tol);
        let doubled_rows = params(2, 1.0, 1.0, tol);
        let x2: Vec<Vec<f64>> = x.iter().chain(&x).cloned().collect();
        let y2: Vec<f64> = y.iter().chain(&y).copied().collect();
        let a = smo_solve(&x, &y, &single, 1000, 1 << 20).unwrap();
        let b = smo_solve(&x2, &y2, &doubled_rows, 1000, 1 << 20).unwrap();
        prop_assume!(a.converged && b.converged);
        for probe in &probes {
            let (fa, fb) = (decision(&a, &x, &y, &single, probe), decision(&b, &x2, &y2, &doubled_rows, probe));
            prop_assert!((fa - fb).abs() <= 1e-6, "{} vs {}", fa, fb);
        }
    }

    #[test]
    fn free_support_vectors_sit_on_the_margin(
        raw in prop::collection::vec((prop::collection::vec(-1.0f64..1.0, 2), 0.2f64..1.0), 6..20),
        angle in 0.0f64..std::f64::consts::TAU,
    ) {
        // linearly separable: every point lies at least 0.2 from the line
        let w = [angle.cos(), angle.sin()];
        let (mut x, mut y) = (Vec::new(), Vec::new());
        for (k, (base, gap)) in raw.iter().enumerate() {
            let side = if k % 2 == 0 { 1.0 } else { -1.0 };
            let along = base[0] * -w[1] + base[1] * w[0];
            x.push(vec![-w[1] * along + w[0] * side * gap, w[0] * along + w[1] * side * gap]);
            y.push(side);
        }
        let p = KernelParams { degree: 1, gamma: 1.0, coef0: 0.0, c: 100.0, tol: 1e-3 };
        let sol = smo_solve(&x, &y, &p, 1000, 1 << 20).unwrap();
        prop_assert!(sol.converged);
        for i in 0..x.len() {
            let a = sol.alpha[i];
            if a > 1e-9 && a < p.c - 1e-9 {
                let margin = y[i] * sol.decision_on(&x, &y, &p, i);
                prop_assert!((margin - 1.0).abs() <= 10.0 * p.tol, "point {}: margin {}", i, margin);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_is_a_distribution_preserving_order(logits in prop::collection::vec(-50.0f64..50.0, 1..10)) {
        let p = softmax(&logits);
        prop_assert!(p.iter().all(|&v| v >= 0.0));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for i in 0..logits.len() {
            for j in 0..logits.len() {
                if logits[i] > logits[j] {
                    prop_assert!(p[i] >= p[j]);
                }
            }
        }
    }

    #[test]
    fn perfect_predictions_score_one(y in prop::collection::vec(0usize..4, 1..80)) {
        let card = score(&confusion_matrix(&y, &y, 4).unwrap()).unwrap();
        prop_assert_eq!(card.accuracy, 1.0);
    }

    #[test]
    fn confusion_ignores_sample_order(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..80), rot in 0usize..80) {
        let (t, p): (Vec<usize>, Vec<usize>) = pairs.iter().copied().unzip();
        let mut shuffled = pairs.clone();
        shuffled.reverse();
        let k = rot % shuffled.len();
        shuffled.rotate_left(k);
        let (ts, ps): (Vec<usize>, Vec<usize>) = shuffled.into_iter().unzip();
        prop_assert_eq!(confusion_matrix(&t, &p, 4).unwrap(), confusion_matrix(&ts, &ps, 4).unwrap());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn random_models_give_distributions(seed in any::<u64>(), fill in 0.0f32..1.0) {
        let m = CnnModel::<f32>::init(&default_architecture(), INPUT_SHAPE, seed).unwrap();
        let x = Tensor::new(INPUT_SHAPE.to_vec(), (0..1024).map(|i| (i % 13) as f32 / 13.0 * fill).collect()).unwrap();
        let (class, probs) = cnn_predict(&m, &x).unwrap();
        prop_assert_eq!(probs.len(), 4);
        prop_assert!(probs.iter().all(|&v| v >= 0.0));
        prop_assert!((probs.iter().sum::<f32>() - 1.0).abs() < 1e-5);
        prop_assert!(probs.iter().all(|&v| v <= probs[class]));
    }

    #[test]
    fn one_pixel_shift_moves_logits_boundedly(seed in any::<u64>(), img in sized_image(32, 32)) {
        let m = CnnModel::<f64>::init(&default_architecture(), INPUT_SHAPE, seed).unwrap();
        let unit: Vec<f64> = img.to_unit();
        let shifted: Vec<f64> = (0..1024).map(|i| if i % 32 == 0 { 0.0 } else { unit[i - 1] }).collect();
        let la = forward_one(&m, &Tensor::new(INPUT_SHAPE.to_vec(), unit.clone()).unwrap()).unwrap().logits().to_vec();
        let lb = forward_one(&m, &Tensor::new(INPUT_SHAPE.to_vec(), shifted).unwrap()).unwrap().logits().to_vec();
        let change = la.iter().zip(&lb).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let input_norm = unit.iter().map(|v| v * v).sum::<f64>().sqrt();
        let logit_norm = la.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!(change.is_finite());
        prop_assert!(change <= logit_norm + input_norm, "change {} logits {} input {}", change, logit_norm, input_norm);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn features_have_resolution_length(images in prop::collection::vec(sized_image(16, 16), 1..6), watershed in any::<bool>()) {
        let cfg = ExperimentConfig { resolution: [16, 16], watershed, ..ExperimentConfig::default() };
        let spec = FeatureSpec::from_config(&cfg);
        let rows = extract_features(&images, &spec).unwrap().rows;
        prop_assert!(rows.iter().all(|r| r.len() == 256));
    }

    #[test]
    fn watershed_toggle_keeps_the_split(labels in prop::collection::vec(0usize..4, 40..120), seed in any::<u64>()) {
        prop_assume!(labels.iter().collect::<BTreeSet<_>>().len() >= 2);
        for model in ModelKind::ALL {
            let base = ExperimentConfig { model, ..ExperimentConfig::default() };
            let mut cfg_off = base.clone();
            cfg_off.split.seed = seed;
            let cfg_on = ExperimentConfig { watershed: true, ..cfg_off.clone() };
            let (off, on) = (make_split(&cfg_off, &labels), make_split(&cfg_on, &labels));
            match (off, on) {
                (Ok(a), Ok(b)) => prop_assert_eq!(a, b),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "split succeeded for only one watershed setting"),
            }
        }
        // the classic protocol matches a direct stratified split
        let direct = stratified_split_labels(&labels, &SplitRatios::TRAIN_TEST, seed);
        let mut cfg = ExperimentConfig::default();
        cfg.split.seed = seed;
        if let (Ok(a), Ok(b)) = (direct, make_split(&cfg, &labels)) {
            prop_assert_eq!(a, b);
        }
    }
}
