//! Acceptance suite. Runs criteria 1 to 8 in order and prints one line per
//! criterion. Criterion 8 needs the real archive (`DEMGRADE_ADNI_ROOT`) and
//! is reported, never asserted; every other failure fails the target.
//!
//! The oracles here are deliberately naive: brute-force nearest background,
//! exhaustive threshold search, active-set enumeration of the SVM dual.

use std::collections::VecDeque;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use demgrade::cnn::{
    cnn_predict_batch, default_architecture, loss_and_grads, param_count, train, CnnConfig, CnnModel, LayerSpec,
    Tensor, INPUT_SHAPE,
};
use demgrade::dataset::{stratified_split_labels, SplitRatios};
use demgrade::eval::{confusion_matrix, micro_averages, reference_rows, score};
use demgrade::rf::{fit_forest, forest_predict_batch, RfConfig};
use demgrade::rng::{Domain, SeededRng};
use demgrade::svm::{dual_objective, fit_svm, smo_solve, svm_predict_batch, KernelParams, SvmConfig};
use demgrade::watershed::{
    distance_transform, otsu_threshold, watershed_flood, BinaryMask, Connectivity, MarkerMap, BOUNDARY,
};
use demgrade::Image;
use nalgebra::{DMatrix, DVector};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($msg)+));
        }
    };
}

fn within(limit: Duration, started: Instant) -> Result<(), String> {
    let took = started.elapsed();
    if took > limit {
        return Err(format!("took {:.1} s, limit {} s", took.as_secs_f64(), limit.as_secs()));
    }
    Ok(())
}

fn rng(stream: u64) -> SeededRng {
    SeededRng::new(0xACCE, Domain::Synth, stream)
}

// ---------------------------------------------------------------- criterion 1

fn parameter_accounting() -> Outcome {
    let t = Instant::now();
    let counts = param_count(&default_architecture(), INPUT_SHAPE).map_err(|e| e.to_string())?;
    let trainable: Vec<usize> = counts.into_iter().filter(|&c| c > 0).collect();
    ensure!(trainable == [1664, 73856, 65664, 516], "per-layer counts {trainable:?}");
    let model = CnnModel::<f32>::init(&default_architecture(), INPUT_SHAPE, 0).map_err(|e| e.to_string())?;
    ensure!(model.param_count() == 141_700, "model holds {} parameters", model.param_count());
    within(Duration::from_secs(1), t)?;
    Ok(format!("{trainable:?}, total 141700"))
}

// ---------------------------------------------------------------- criterion 2

fn random_arch(r: &mut SeededRng) -> (Vec<LayerSpec>, [usize; 3]) {
    use LayerSpec::*;
    let channels = 1 + r.below(2);
    let (kh, kw) = (2 + r.below(2), 2 + r.below(2));
    // input sized so the first convolution leaves an even map for pooling
    let (h, w) = (2 * (3 + r.below(3)) + kh - 1, 2 * (3 + r.below(3)) + kw - 1);
    let mut arch = vec![Conv { out_channels: 1 + r.below(3), kernel_h: kh, kernel_w: kw }, Relu];
    if r.below(2) == 0 {
        arch.push(MaxPool2);
    }
    if r.below(2) == 0 {
        arch.extend([Conv { out_channels: 1 + r.below(3), kernel_h: 2, kernel_w: 2 }, Relu]);
    }
    arch.extend([GlobalAvgPool, Dense { out_features: 4 }, Softmax]);
    (arch, [channels, h, w])
}

fn gradient_oracle() -> Outcome {
    let t = Instant::now();
    let configs = 24;
    let mut checked = 0usize;
    let mut worst = 0.0f64;
    for cfg in 0..configs {
        let mut r = rng(200 + cfg);
        let (arch, shape) = random_arch(&mut r);
        let mut model = CnnModel::<f64>::init(&arch, shape, cfg).map_err(|e| format!("config {cfg}: {e}"))?;
        // positive biases keep pre-activations away from the ReLU kink
        for layer in &mut model.layers {
            layer.biases.iter_mut().for_each(|b| *b = 0.05 + 0.05 * r.uniform());
        }
        let n = shape.iter().product();
        let batch: Vec<Tensor<f64>> = (0..2)
            .map(|_| Tensor::new(shape.to_vec(), (0..n).map(|_| r.uniform()).collect()).unwrap())
            .collect();
        let labels = [r.below(4), r.below(4)];
        let (_, grads) = loss_and_grads(&model, &batch, &labels).map_err(|e| e.to_string())?;
        let analytic: Vec<f64> = grads.iter().flat_map(|g| g.weights.iter().chain(&g.biases).copied()).collect();
        let base = model.flat_params();
        ensure!(analytic.len() == base.len(), "config {cfg}: gradient length mismatch");
        let eps = 1e-5;
        let loss_at = |p: &[f64]| {
            let mut m = model.clone();
            m.set_flat_params(p).unwrap();
            loss_and_grads(&m, &batch, &labels).unwrap().0
        };
        let mut p = base.clone();
        for k in 0..base.len() {
            p[k] = base[k] + eps;
            let up = loss_at(&p);
            p[k] = base[k] - eps;
            let down = loss_at(&p);
            p[k] = base[k];
            let numeric = (up - down) / (2.0 * eps);
            let a = analytic[k];
            let scale = a.abs().max(numeric.abs());
            let rel = (a - numeric).abs() / scale.max(1e-300);
            // gradients indistinguishable from zero carry no relative signal
            if scale > 1e-8 {
                worst = worst.max(rel);
                ensure!(rel <= 1e-4, "config {cfg} {arch:?} param {k}: analytic {a:e} numeric {numeric:e}");
            }
            checked += 1;
        }
    }
    within(Duration::from_secs(30), t)?;
    Ok(format!("{configs} configurations, {checked} parameters, worst relative error {worst:.1e}"))
}

// ---------------------------------------------------------------- criterion 3

fn brute_distance(mask: &BinaryMask) -> Vec<f64> {
    let (w, h) = (mask.width() as i64, mask.height() as i64);
    let mut background = Vec::new();
    for y in -1..=h {
        for x in -1..=w {
            let inside = x >= 0 && y >= 0 && x < w && y < h;
            if !inside || !mask.get(x as usize, y as usize) {
                background.push((x, y));
            }
        }
    }
    let mut out = Vec::with_capacity((w * h) as usize);
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x as usize, y as usize) {
                out.push(0.0);
                continue;
            }
            let d2 = background
                .iter()
                .map(|&(bx, by)| (bx - x).pow(2) + (by - y).pow(2))
                .min()
                .unwrap();
            out.push((d2 as f64).sqrt());
        }
    }
    out
}

fn exhaustive_otsu(img: &Image) -> u8 {
    let px = img.pixels();
    let n = px.len() as f64;
    let mut sigmas = Vec::with_capacity(256);
    for t in 0..=255u8 {
        let (lo, hi): (Vec<f64>, Vec<f64>) = (
            px.iter().filter(|&&p| p <= t).map(|&p| p as f64).collect(),
            px.iter().filter(|&&p| p > t).map(|&p| p as f64).collect(),
        );
        if lo.is_empty() || hi.is_empty() {
            sigmas.push(None);
            continue;
        }
        let m0 = lo.iter().sum::<f64>() / lo.len() as f64;
        let m1 = hi.iter().sum::<f64>() / hi.len() as f64;
        sigmas.push(Some(lo.len() as f64 / n * hi.len() as f64 / n * (m0 - m1).powi(2)));
    }
    let best = sigmas.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    if best == f64::NEG_INFINITY {
        return px[0];
    }
    sigmas
        .iter()
        .position(|s| s.is_some_and(|v| v >= best * (1.0 - 1e-12)))
        .unwrap() as u8
}

fn random_image(r: &mut SeededRng, w: usize, h: usize) -> Image {
    // a few intensity modes plus spread, with the odd constant image
    let modes: Vec<u8> = (0..1 + r.below(4)).map(|_| r.below(256) as u8).collect();
    let spread = [0, 3, 20, 128][r.below(4)];
    let px = (0..w * h)
        .map(|_| {
            let m = modes[r.below(modes.len())] as i64;
            (m + r.below(2 * spread + 1) as i64 - spread as i64).clamp(0, 255) as u8
        })
        .collect();
    Image::new(w, h, px).unwrap()
}

fn basin_connected(labels: &[i32], w: usize, h: usize, seed: usize) -> bool {
    let target = labels[seed];
    let members = labels.iter().filter(|&&l| l == target).count();
    let mut seen = vec![false; w * h];
    let mut queue = VecDeque::from([seed]);
    seen[seed] = true;
    let mut reached = 0;
    while let Some(p) = queue.pop_front() {
        reached += 1;
        let (x, y) = (p % w, p / w);
        let mut next = Vec::with_capacity(4);
        if x > 0 {
            next.push(p - 1);
        }
        if x + 1 < w {
            next.push(p + 1);
        }
        if y > 0 {
            next.push(p - w);
        }
        if y + 1 < h {
            next.push(p + w);
        }
        for q in next {
            if !seen[q] && labels[q] == target {
                seen[q] = true;
                queue.push_back(q);
            }
        }
    }
    reached == members
}

fn watershed_oracles() -> Outcome {
    let t = Instant::now();
    for case in 0..200u64 {
        let mut r = rng(300 + case);
        let (w, h) = (1 + r.below(32), 1 + r.below(32));
        let density = r.uniform();
        let mask = BinaryMask::from_bits(w, h, (0..w * h).map(|_| r.uniform() < density).collect());
        let got = distance_transform(&mask);
        let want = brute_distance(&mask);
        for (i, (&g, &e)) in got.values().iter().zip(&want).enumerate() {
            ensure!((g - e).abs() < 1e-9, "distance case {case} ({w}x{h}) pixel {i}: {g} vs {e}");
        }
    }
    for case in 0..200u64 {
        let mut r = rng(600 + case);
        let (w, h) = (1 + r.below(32), 1 + r.below(32));
        let img = random_image(&mut r, w, h);
        let (level, _) = otsu_threshold(&img, false);
        let want = exhaustive_otsu(&img);
        ensure!(level == want, "otsu case {case}: level {level}, exhaustive search {want}");
    }
    for case in 0..500u64 {
        let mut r = rng(900 + case);
        let img = random_image(&mut r, 16, 16);
        let count = 1 + r.below(6);
        let seeds = r.sample_indices(256, count);
        let mut marks = vec![0i32; 256];
        for (k, &s) in seeds.iter().enumerate() {
            marks[s] = k as i32 + 1;
        }
        let labels = watershed_flood(&img, &MarkerMap::new(16, 16, marks.clone()), Connectivity::Four)
            .map_err(|e| format!("flood case {case}: {e}"))?;
        let l = labels.labels();
        ensure!(
            l.iter().all(|&v| v == BOUNDARY || (1..=seeds.len() as i32).contains(&v)),
            "flood case {case}: pixel left unlabeled or with unknown label"
        );
        for &s in &seeds {
            ensure!(l[s] == marks[s], "flood case {case}: marker at {s} relabeled to {}", l[s]);
            ensure!(basin_connected(l, 16, 16, s), "flood case {case}: basin {} not 4-connected", marks[s]);
        }
    }
    let ramp = Image::new(5, 1, vec![0, 1, 9, 1, 0]).unwrap();
    let labels = watershed_flood(&ramp, &MarkerMap::new(5, 1, vec![2, 0, 0, 0, 3]), Connectivity::Four)
        .map_err(|e| e.to_string())?;
    ensure!(labels.labels() == [2, 2, BOUNDARY, 3, 3], "ramp labels {:?}", labels.labels());
    within(Duration::from_secs(60), t)?;
    Ok("200 distance maps, 200 thresholds, 500 floods, ramp boundary at index 2".into())
}

// ---------------------------------------------------------------- criterion 4

fn kernel(x: &[f64], z: &[f64], p: &KernelParams) -> f64 {
    let dot: f64 = x.iter().zip(z).map(|(a, b)| a * b).sum();
    (p.gamma * dot + p.coef0).powi(p.degree as i32)
}

/// Maximum of the dual by enumerating every face of the box: each
/// coefficient is pinned at 0, pinned at C, or free, and the free block
/// solves the equality-constrained stationarity system.
fn dual_by_enumeration(x: &[Vec<f64>], y: &[f64], p: &KernelParams) -> f64 {
    let n = x.len();
    let q = DMatrix::from_fn(n, n, |i, j| y[i] * y[j] * kernel(&x[i], &x[j], p));
    let objective = |a: &DVector<f64>| a.sum() - 0.5 * (a.transpose() * &q * a)[(0, 0)];
    let mut best = 0.0f64;
    for code in 0..3usize.pow(n as u32) {
        let mut state = vec![0u8; n];
        let mut c = code;
        for s in &mut state {
            *s = (c % 3) as u8;
            c /= 3;
        }
        let free: Vec<usize> = (0..n).filter(|&i| state[i] == 2).collect();
        let mut alpha = DVector::from_fn(n, |i, _| if state[i] == 1 { p.c } else { 0.0 });
        if !free.is_empty() {
            let m = free.len();
            let mut lhs = DMatrix::zeros(m + 1, m + 1);
            let mut rhs = DVector::zeros(m + 1);
            for (a, &i) in free.iter().enumerate() {
                for (b, &j) in free.iter().enumerate() {
                    lhs[(a, b)] = q[(i, j)];
                }
                lhs[(a, m)] = y[i];
                lhs[(m, a)] = y[i];
                rhs[a] = 1.0 - (0..n).filter(|&j| state[j] == 1).map(|j| q[(i, j)] * p.c).sum::<f64>();
            }
            rhs[m] = -(0..n).filter(|&j| state[j] == 1).map(|j| y[j] * p.c).sum::<f64>();
            let Ok(sol) = lhs.clone().svd(true, true).solve(&rhs, 1e-12) else {
                continue;
            };
            if (&lhs * &sol - &rhs).norm() > 1e-8 {
                continue;
            }
            for (a, &i) in free.iter().enumerate() {
                alpha[i] = sol[a];
            }
        }
        let feasible = alpha.iter().all(|&a| (-1e-12..=p.c + 1e-12).contains(&a))
            && alpha.iter().zip(y).map(|(a, y)| a * y).sum::<f64>().abs() < 1e-9;
        if feasible {
            best = best.max(objective(&alpha));
        }
    }
    best
}

fn smo_oracle() -> Outcome {
    let t = Instant::now();
    let mut worst_gap = 0.0f64;
    let mut worst_kkt = 0.0f64;
    for case in 0..50u64 {
        let mut r = rng(1500 + case);
        let n = 2 + r.below(5);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..2).map(|_| 2.0 * r.uniform() - 1.0).collect()).collect();
        let mut y: Vec<f64> = (0..n).map(|_| if r.below(2) == 0 { 1.0 } else { -1.0 }).collect();
        y[0] = 1.0;
        y[1] = -1.0;
        let p = KernelParams {
            degree: 1 + r.below(3) as u32,
            gamma: 0.5 + 1.5 * r.uniform(),
            coef0: [0.0, 1.0][r.below(2)],
            c: 0.1 + 9.9 * r.uniform(),
            tol: 1e-3,
        };
        let sol = smo_solve(&x, &y, &p, 1000, 1 << 20).map_err(|e| format!("case {case}: {e}"))?;
        ensure!(sol.converged, "case {case}: solver hit its iteration cap");
        let got = dual_objective(&x, &y, &sol.alpha, &p);
        let want = dual_by_enumeration(&x, &y, &p);
        let gap = (got - want).abs();
        worst_gap = worst_gap.max(gap);
        ensure!(gap <= 1e-3, "case {case}: dual {got} vs enumeration {want} ({p:?})");
        let slack = 10.0 * p.tol;
        for i in 0..n {
            let margin = y[i] * sol.decision_on(&x, &y, &p, i);
            let a = sol.alpha[i];
            let violation = if a <= 1e-12 {
                (1.0 - margin).max(0.0)
            } else if a >= p.c - 1e-12 {
                (margin - 1.0).max(0.0)
            } else {
                (margin - 1.0).abs()
            };
            worst_kkt = worst_kkt.max(violation);
            ensure!(violation <= slack, "case {case} point {i}: alpha {a}, margin {margin}");
        }
    }
    within(Duration::from_secs(60), t)?;
    Ok(format!("50 problems, worst dual gap {worst_gap:.1e}, worst KKT violation {worst_kkt:.1e}"))
}

// ---------------------------------------------------------------- criterion 5

fn blobs() -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut r = rng(2000);
    let centers = [[0.0, 0.0], [5.0, 0.0], [0.0, 5.0], [5.0, 5.0]];
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (class, c) in centers.iter().enumerate() {
        for _ in 0..500 {
            x.push(vec![c[0] + r.normal(), c[1] + r.normal()]);
            y.push(class);
        }
    }
    (x, y)
}

fn toy_images() -> (Vec<Tensor<f32>>, Vec<usize>) {
    let mut r = rng(2100);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..32 {
        let class = i % 2;
        let data = (0..32 * 32)
            .map(|p| {
                let (x, y) = (p % 32, p / 32);
                let lit = if class == 0 { x < 16 } else { y < 16 };
                (if lit { 0.8 } else { 0.1 }) + 0.1 * r.uniform() as f32
            })
            .collect();
        xs.push(Tensor::new(INPUT_SHAPE.to_vec(), data).unwrap());
        ys.push(class);
    }
    (xs, ys)
}

fn classifier_sanity() -> Outcome {
    let t = Instant::now();
    let (x, y) = blobs();
    let split = stratified_split_labels(&y, &SplitRatios::TRAIN_TEST, 0).map_err(|e| e.to_string())?;
    let pick = |idx: &[usize]| -> (Vec<Vec<f64>>, Vec<usize>) {
        (idx.iter().map(|&i| x[i].clone()).collect(), idx.iter().map(|&i| y[i]).collect())
    };
    let (xtr, ytr) = pick(&split.train);
    let (xte, yte) = pick(&split.test);
    let accuracy = |pred: Vec<usize>| pred.iter().zip(&yte).filter(|(a, b)| a == b).count() as f64 / yte.len() as f64;

    let forest = fit_forest(&xtr, &ytr, &RfConfig { seed: 0, ..RfConfig::default() }).map_err(|e| e.to_string())?;
    let rf_acc = accuracy(forest_predict_batch(&forest, &xte).map_err(|e| e.to_string())?);
    let svm = fit_svm(&xtr, &ytr, &SvmConfig::default()).map_err(|e| e.to_string())?;
    let svm_acc = accuracy(svm_predict_batch(&svm, &xte).map_err(|e| e.to_string())?);
    ensure!(rf_acc >= 0.95, "forest accuracy {rf_acc:.4}");
    ensure!(svm_acc >= 0.95, "SVM accuracy {svm_acc:.4}");

    let (images, labels) = toy_images();
    let config = CnnConfig { epochs: 30, seed: 0, ..CnnConfig::default() };
    let model = CnnModel::<f32>::init(&default_architecture(), INPUT_SHAPE, 0).map_err(|e| e.to_string())?;
    let (model, history) = train(model, &images, &labels, None, &config).map_err(|e| e.to_string())?;
    let pred = cnn_predict_batch(&model, &images).map_err(|e| e.to_string())?;
    let cnn_acc = pred.iter().zip(&labels).filter(|(a, b)| a == b).count() as f64 / labels.len() as f64;
    let first_perfect = history.epochs.iter().find(|e| e.train_accuracy >= 1.0).map(|e| e.epoch);
    ensure!(cnn_acc == 1.0, "CNN training accuracy {cnn_acc:.4} after 30 epochs");
    within(Duration::from_secs(180), t)?;
    Ok(format!(
        "blobs RF {rf_acc:.4}, SVM {svm_acc:.4}; CNN train accuracy 1.0 (running accuracy first 1.0 at epoch {})",
        first_perfect.map_or("-".into(), |e| e.to_string())
    ))
}

// ---------------------------------------------------------------- criterion 6

fn metrics() -> Outcome {
    let cm = confusion_matrix(&[0, 0, 1, 2, 2, 2], &[0, 1, 1, 2, 2, 0], 3).map_err(|e| e.to_string())?;
    let card = score(&cm).map_err(|e| e.to_string())?;
    ensure!((card.macro_avg.f1 - 0.6556).abs() <= 1e-4, "fixture macro-F1 {}", card.macro_avg.f1);
    for case in 0..1000u64 {
        let mut r = rng(3000 + case);
        let k = 2 + r.below(3);
        let n = 1 + r.below(60);
        let yt: Vec<usize> = (0..n).map(|_| r.below(k)).collect();
        let yp: Vec<usize> = (0..n).map(|_| if r.below(3) == 0 { r.below(k) } else { yt[r.below(n)] }).collect();
        let cm = confusion_matrix(&yt, &yp, k).map_err(|e| e.to_string())?;
        let card = score(&cm).map_err(|e| e.to_string())?;
        let acc = yt.iter().zip(&yp).filter(|(a, b)| a == b).count() as f64 / n as f64;
        ensure!((card.accuracy - acc).abs() < 1e-12, "case {case}: accuracy {} vs {acc}", card.accuracy);
        ensure!(
            (card.weighted.recall - acc).abs() < 1e-12,
            "case {case}: weighted recall {} vs accuracy {acc}",
            card.weighted.recall
        );
        let (micro_p, micro_r) = micro_averages(&cm);
        ensure!((micro_p - acc).abs() < 1e-12 && (micro_r - acc).abs() < 1e-12, "case {case}: micro averages");
        ensure!(cm.total() == n as u64, "case {case}: matrix total");
    }
    Ok(format!("fixture macro-F1 {:.4}, identities on 1000 random vectors", card.macro_avg.f1))
}

// ---------------------------------------------------------------- criteria 7 and 8

fn demgrade(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_demgrade"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("demgrade {args:?} failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(())
}

fn accuracies(scorecards: &[u8]) -> Result<Vec<(String, f64)>, String> {
    let v: serde_json::Value = serde_json::from_slice(scorecards).map_err(|e| e.to_string())?;
    let runs = v.as_array().ok_or("scorecards.json is not an array")?;
    runs.iter()
        .map(|r| {
            let name = r["name"].as_str().ok_or("run without a name")?.to_string();
            let acc = r["scorecard"]["accuracy"].as_f64().ok_or("run without accuracy")?;
            Ok((name, acc))
        })
        .collect()
}

fn path_str(p: &Path) -> &str {
    p.to_str().expect("temporary paths are UTF-8")
}

fn end_to_end() -> Outcome {
    let t = Instant::now();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let data = tmp.path().join("synth");
    demgrade(&["synthesize-dataset", "-o", path_str(&data)])?;
    let mut cards = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        demgrade(&["compare", "--data", path_str(&data), "--output", path_str(&out)])?;
        cards.push(std::fs::read(out.join("scorecards.json")).map_err(|e| e.to_string())?);
    }
    ensure!(cards[0] == cards[1], "scorecards.json differs between the two runs");
    let acc = accuracies(&cards[0])?;
    ensure!(acc.len() == 6, "expected six configurations, got {}", acc.len());
    for (name, a) in &acc {
        ensure!(*a >= 0.9, "{name} accuracy {a:.4} below 0.9");
    }
    within(Duration::from_secs(600), t)?;
    let listed: Vec<String> = acc.iter().map(|(n, a)| format!("{n} {a:.4}")).collect();
    Ok(format!("byte-identical scorecards; {}", listed.join(", ")))
}

fn reference_numbers() -> Outcome {
    let Some(root) = std::env::var_os("DEMGRADE_ADNI_ROOT") else {
        return Ok("not run (set DEMGRADE_ADNI_ROOT to the archive root)".into());
    };
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = Path::new(&root);
    demgrade(&["compare", "--data", path_str(root), "--output", path_str(tmp.path())])?;
    let got = accuracies(&std::fs::read(tmp.path().join("scorecards.json")).map_err(|e| e.to_string())?)?;
    let mut cells = Vec::new();
    let mut all_close = true;
    for reference in reference_rows() {
        let Some((_, a)) = got.iter().find(|(n, _)| *n == reference.name) else {
            continue;
        };
        let delta = 100.0 * a - reference.accuracy;
        all_close &= delta.abs() <= 3.0;
        cells.push(format!("{} {:.2} ({:+.2})", reference.name, 100.0 * a, delta));
    }
    let best = got.iter().max_by(|a, b| a.1.total_cmp(&b.1)).map(|(n, _)| n.as_str());
    let ordinal = got
        .iter()
        .find(|(n, _)| n == "WS+SVM")
        .is_some_and(|(_, ws)| got.iter().all(|(n, a)| n == "WS+SVM" || ws > a));
    Ok(format!(
        "{}; within 3 points: {all_close}; WS+SVM strictly best: {ordinal} (best: {})",
        cells.join(", "),
        best.unwrap_or("-")
    ))
}

// ---------------------------------------------------------------- driver

fn main() -> ExitCode {
    let criteria: [(u8, &str, fn() -> Outcome, bool); 8] = [
        (1, "parameter accounting", parameter_accounting, true),
        (2, "gradient oracle", gradient_oracle, true),
        (3, "watershed oracles", watershed_oracles, true),
        (4, "SMO oracle", smo_oracle, true),
        (5, "classifier sanity", classifier_sanity, true),
        (6, "metrics", metrics, true),
        (7, "end-to-end determinism", end_to_end, true),
        (8, "reference comparison", reference_numbers, false),
    ];
    let mut failed = 0;
    for (id, name, run, gated) in criteria {
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        let (tag, detail) = match (&outcome, gated) {
            (Ok(d), true) => ("PASS", d.as_str()),
            (Err(d), true) => {
                failed += 1;
                ("FAIL", d.as_str())
            }
            (Ok(d), false) => ("REPORT", d.as_str()),
            (Err(d), false) => ("REPORT", d.as_str()),
        };
        println!("criterion {id} [{tag}] {name}: {detail} ({secs:.1} s)");
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
