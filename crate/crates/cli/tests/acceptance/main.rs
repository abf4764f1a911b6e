//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits nonzero when any criterion fails.

mod oracle;

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use earseg::dataset::{self, generate_synthetic, SynthConfig};
use earseg::evaluation::{self, aggregate, confusion, evaluate_masks, evaluate_rect_detections, gt_to_bounding_rects};
use earseg::network::{backward, forward, LayerSpec};
use earseg::ops::{self, Mode, RunningStats};
use earseg::postprocess::{connected_components, postprocess_mask, Connectivity};
use earseg::training::{self, median_frequency_weights, weighted_cross_entropy, ClassWeights, TrainConfig};
use earseg::{pipeline, LabelMask, NetworkParams, NetworkSpec, Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

macro_rules! check {
    ($cond:expr, $($fmt:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($fmt)+));
        }
    };
}

fn within(elapsed: Duration, limit: Duration) -> Result<(), String> {
    if elapsed <= limit {
        Ok(())
    } else {
        Err(format!("took {:.1}s, limit {:.0}s", elapsed.as_secs_f64(), limit.as_secs_f64()))
    }
}

fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize) -> LabelMask {
    let density = [0.0, 0.03, 0.15, 0.4, 0.6, 0.9, 1.0][rng.gen_range(0..7)];
    LabelMask::from_fn(w, h, |_, _| rng.gen_bool(density))
}

/// Masks made of a few random rectangles and speckle, so that region sizes
/// and tie cases vary.
fn random_blobby_mask(rng: &mut ChaCha8Rng) -> LabelMask {
    let (w, h) = (rng.gen_range(1..=24), rng.gen_range(1..=24));
    let mut m = LabelMask::new(w, h);
    for _ in 0..rng.gen_range(0..6) {
        let (x0, y0) = (rng.gen_range(0..w), rng.gen_range(0..h));
        let (x1, y1) = (rng.gen_range(x0..w), rng.gen_range(y0..h));
        m.fill_rect(&earseg::BoundingBox::from_corners(x0, y0, x1, y1));
    }
    let speckle = rng.gen_range(0.0..0.3);
    for y in 0..h {
        for x in 0..w {
            if rng.gen_bool(speckle) {
                m.set(x, y, true);
            }
        }
    }
    m
}

// ---------------------------------------------------------------------------

fn metric_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let pairs = 400;
    let mut worst: f64 = 0.0;
    for k in 0..pairs {
        let gt = random_mask(&mut rng, 16, 16);
        let pred = random_mask(&mut rng, 16, 16);
        let c = confusion(&gt, &pred).map_err(|e| e.to_string())?;
        let o = oracle::count_pixels(&gt, &pred);
        check!(
            (c.true_pos, c.false_pos, c.false_neg, c.true_neg) == (o.tp, o.fp, o.fn_, o.tn),
            "pair {k}: counts {c:?} vs oracle {o:?}"
        );
        let got = evaluate_masks(&gt, &pred).map_err(|e| e.to_string())?.values();
        let want = oracle::scores(&gt, &pred);
        for (i, (g, w)) in got.iter().zip(want).enumerate() {
            let err = (g - w).abs();
            worst = worst.max(err);
            check!(err <= 1e-12, "pair {k}: {} = {g}, oracle {w}", evaluation::Metrics::NAMES[i]);
        }
    }
    within(start.elapsed(), Duration::from_secs(5))?;
    Ok(format!("{pairs} mask pairs, counts exact, max ratio error {worst:.1e}"))
}

// ---------------------------------------------------------------------------

const FD_STEP: f64 = 1e-5;
const KERNEL_TOLERANCE: f64 = 1e-4;
const END_TO_END_TOLERANCE: f64 = 1e-3;
/// Denominator floor of the relative error for entries that are both ~0.
const REL_FLOOR: f64 = 1e-6;

fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(-1.0..1.0))
}

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn with_data(shape: Shape, data: &[f64]) -> Tensor<f64> {
    Tensor::from_vec(shape, data.to_vec()).unwrap()
}

struct KernelCheck {
    name: &'static str,
    worst: f64,
}

fn kernel_gradients(rng: &mut ChaCha8Rng) -> Vec<KernelCheck> {
    let mut out = Vec::new();
    let mut record = |name, analytic: &[f64], numeric: &[f64]| {
        out.push(KernelCheck {
            name,
            worst: oracle::max_relative_error(analytic, numeric, REL_FLOOR),
        })
    };

    // convolution: input, weights, bias
    let xs = Shape::new(2, 3, 5, 4);
    let ws = Shape::new(4, 3, 3, 3);
    let x = random_tensor(rng, xs);
    let w = random_tensor(rng, ws);
    let b: Vec<f64> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let r = random_tensor(rng, Shape::new(2, 4, 5, 4));
    let g = ops::conv2d_backward(&x, &w, &r).unwrap();
    let conv_loss = |x: &Tensor<f64>, w: &Tensor<f64>, b: &[f64]| dot(&r, &ops::conv2d_forward(x, w, b).unwrap());
    record(
        "conv input",
        g.input.data(),
        &oracle::central_differences(x.data(), FD_STEP, |d| conv_loss(&with_data(xs, d), &w, &b)),
    );
    record(
        "conv weights",
        g.weights.data(),
        &oracle::central_differences(w.data(), FD_STEP, |d| conv_loss(&x, &with_data(ws, d), &b)),
    );
    record(
        "conv bias",
        &g.bias,
        &oracle::central_differences(&b, FD_STEP, |d| conv_loss(&x, &w, d)),
    );

    // batch norm in both modes: input, gamma, beta
    let bs = Shape::new(3, 2, 3, 4);
    let x = Tensor::from_fn(bs, |_, c, _, _| rng.gen_range(-1.0..1.0) * (1.0 + c as f64) + c as f64);
    let gamma = vec![rng.gen_range(0.5..1.5), rng.gen_range(-1.5..-0.5)];
    let beta = vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
    let stats = RunningStats {
        mean: vec![0.3, -0.2],
        var: vec![1.7, 0.6],
    };
    let r = random_tensor(rng, bs);
    for (mode, names) in [
        (Mode::Train, ["batchnorm[train] input", "batchnorm[train] gamma", "batchnorm[train] beta"]),
        (Mode::Infer, ["batchnorm[infer] input", "batchnorm[infer] gamma", "batchnorm[infer] beta"]),
    ] {
        let bn_loss = |x: &Tensor<f64>, g: &[f64], b: &[f64]| {
            dot(&r, &ops::batchnorm_forward(x, g, b, &stats, mode, ops::BN_EPS).unwrap().0)
        };
        let (_, _, cache) = ops::batchnorm_forward(&x, &gamma, &beta, &stats, mode, ops::BN_EPS).unwrap();
        let g = ops::batchnorm_backward(&cache, &gamma, &r).unwrap();
        record(
            names[0],
            g.input.data(),
            &oracle::central_differences(x.data(), FD_STEP, |d| bn_loss(&with_data(bs, d), &gamma, &beta)),
        );
        record(
            names[1],
            &g.gamma,
            &oracle::central_differences(&gamma, FD_STEP, |d| bn_loss(&x, d, &beta)),
        );
        record(
            names[2],
            &g.beta,
            &oracle::central_differences(&beta, FD_STEP, |d| bn_loss(&x, &gamma, d)),
        );
    }

    // ReLU away from the kink
    let rs = Shape::new(1, 2, 4, 5);
    let x = Tensor::from_fn(rs, |_, _, _, _| {
        let v: f64 = rng.gen_range(0.05..1.0);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    });
    let r = random_tensor(rng, rs);
    record(
        "relu",
        ops::relu_backward(&x, &r).unwrap().data(),
        &oracle::central_differences(x.data(), FD_STEP, |d| dot(&r, &ops::relu(&with_data(rs, d)))),
    );

    // max pooling on an odd-sized input with well-separated values
    let ps = Shape::new(1, 2, 5, 7);
    let mut values: Vec<f64> = (0..ps.len()).map(|i| i as f64 * 0.01).collect();
    for i in (1..values.len()).rev() {
        values.swap(i, rng.gen_range(0..=i));
    }
    let x = with_data(ps, &values);
    let (y, idx) = ops::maxpool2x2(&x);
    let r = random_tensor(rng, y.shape());
    record(
        "maxpool",
        ops::maxpool2x2_backward(&r, &idx).unwrap().data(),
        &oracle::central_differences(x.data(), FD_STEP, |d| dot(&r, &ops::maxpool2x2(&with_data(ps, d)).0)),
    );

    // unpooling is linear in the pooled values
    let r = random_tensor(rng, ps);
    let ys = y.shape();
    record(
        "unpool",
        ops::unpool2x2_backward(&r, &idx).unwrap().data(),
        &oracle::central_differences(y.data(), FD_STEP, |d| {
            dot(&r, &ops::unpool2x2(&with_data(ys, d), &idx).unwrap())
        }),
    );

    // softmax
    let ss = Shape::new(2, 2, 3, 3);
    let x = Tensor::from_fn(ss, |_, _, _, _| rng.gen_range(-3.0..3.0));
    let r = random_tensor(rng, ss);
    let p = ops::softmax_channels(&x);
    record(
        "softmax",
        ops::softmax_backward(&p, &r).unwrap().data(),
        &oracle::central_differences(x.data(), FD_STEP, |d| dot(&r, &ops::softmax_channels(&with_data(ss, d)))),
    );

    // weighted cross-entropy through the softmax
    let targets: Vec<LabelMask> = (0..2).map(|_| random_mask(rng, 3, 3)).collect();
    let refs: Vec<&LabelMask> = targets.iter().collect();
    let weights = ClassWeights {
        non_ear: 0.6,
        ear: 7.5,
    };
    let (_, grad) = weighted_cross_entropy(&p, &refs, weights).unwrap();
    record(
        "weighted cross-entropy",
        grad.data(),
        &oracle::central_differences(x.data(), FD_STEP, |d| {
            weighted_cross_entropy(&ops::softmax_channels(&with_data(ss, d)), &refs, weights)
                .unwrap()
                .0
        }),
    );
    out
}

fn tiny_spec() -> NetworkSpec {
    NetworkSpec::new(
        3,
        2,
        1.0,
        vec![
            LayerSpec::Conv {
                filters: 4,
                bn_relu: true,
            },
            LayerSpec::MaxPool,
            LayerSpec::Unpool,
            LayerSpec::Conv {
                filters: 2,
                bn_relu: false,
            },
            LayerSpec::Softmax,
        ],
    )
    .unwrap()
}

fn flatten(params: &NetworkParams<f64>) -> Vec<f64> {
    let mut v = Vec::new();
    for l in &params.layers {
        v.extend_from_slice(l.weight.data());
        v.extend_from_slice(&l.bias);
        if let Some(bn) = &l.bn {
            v.extend_from_slice(&bn.gamma);
            v.extend_from_slice(&bn.beta);
        }
    }
    v
}

fn unflatten(template: &NetworkParams<f64>, flat: &[f64]) -> NetworkParams<f64> {
    let mut p = template.clone();
    let mut it = flat.iter().copied();
    for l in &mut p.layers {
        l.weight.data_mut().iter_mut().for_each(|v| *v = it.next().unwrap());
        l.bias.iter_mut().for_each(|v| *v = it.next().unwrap());
        if let Some(bn) = &mut l.bn {
            bn.gamma.iter_mut().for_each(|v| *v = it.next().unwrap());
            bn.beta.iter_mut().for_each(|v| *v = it.next().unwrap());
        }
    }
    assert!(it.next().is_none());
    p
}

fn flatten_grads(g: &earseg::network::Gradients<f64>) -> Vec<f64> {
    let mut v = Vec::new();
    for l in &g.layers {
        v.extend_from_slice(l.weight.data());
        v.extend_from_slice(&l.bias);
        v.extend(l.gamma.iter().flatten());
        v.extend(l.beta.iter().flatten());
    }
    v
}

fn end_to_end_gradient(rng: &mut ChaCha8Rng) -> f64 {
    let spec = tiny_spec();
    let params = NetworkParams::<f64>::init(&spec, 17);
    let input = Tensor::from_fn(Shape::new(2, 3, 5, 7), |_, _, _, _| rng.gen_range(-0.5..0.5));
    let targets: Vec<LabelMask> = (0..2).map(|_| random_mask(rng, 7, 5)).collect();
    let refs: Vec<&LabelMask> = targets.iter().collect();
    let weights = ClassWeights {
        non_ear: 0.55,
        ear: 4.0,
    };
    let loss_of = |p: &NetworkParams<f64>| {
        let (probs, _) = forward(&spec, p, &input, Mode::Train).unwrap();
        weighted_cross_entropy(&probs, &refs, weights).unwrap().0
    };
    let (probs, cache) = forward(&spec, &params, &input, Mode::Train).unwrap();
    let (_, grad) = weighted_cross_entropy(&probs, &refs, weights).unwrap();
    let analytic = flatten_grads(&backward(&spec, &params, &cache, &grad).unwrap());
    let numeric = oracle::central_differences(&flatten(&params), FD_STEP, |d| loss_of(&unflatten(&params, d)));
    oracle::max_relative_error(&analytic, &numeric, REL_FLOOR)
}

fn gradient_fidelity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let kernels = kernel_gradients(&mut rng);
    for k in &kernels {
        check!(
            k.worst <= KERNEL_TOLERANCE,
            "{}: relative error {:.2e} > {KERNEL_TOLERANCE:e}",
            k.name,
            k.worst
        );
    }
    let e2e = end_to_end_gradient(&mut rng);
    check!(e2e <= END_TO_END_TOLERANCE, "end-to-end relative error {e2e:.2e} > {END_TO_END_TOLERANCE:e}");
    within(start.elapsed(), Duration::from_secs(120))?;
    let kernel_worst = kernels.iter().map(|k| k.worst).fold(0.0, f64::max);
    Ok(format!(
        "{} kernel gradients max rel err {kernel_worst:.1e}, end-to-end {e2e:.1e}",
        kernels.len()
    ))
}

// ---------------------------------------------------------------------------

fn pool_invariants() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut sizes = vec![(45, 23), (23, 45), (1, 1), (1, 7), (5, 5)];
    while sizes.len() < 1000 {
        sizes.push((rng.gen_range(1..=31), rng.gen_range(1..=31)));
    }
    for (k, &(h, w)) in sizes.iter().enumerate() {
        let shape = Shape::new(rng.gen_range(1..=2), rng.gen_range(1..=3), h, w);
        // coarse values so that ties occur
        let x = Tensor::<f32>::from_fn(shape, |_, _, _, _| rng.gen_range(-4..=4) as f32 * 0.5);
        let (y, idx) = ops::maxpool2x2(&x);
        check!(
            (y.shape().h, y.shape().w) == (h.div_ceil(2), w.div_ceil(2)),
            "case {k}: {h}×{w} pooled to {}",
            y.shape()
        );
        let up = ops::unpool2x2(&y, &idx).map_err(|e| e.to_string())?;
        check!(up.shape() == shape, "case {k}: unpooled {} vs {shape}", up.shape());

        // every pooled value sits at its index, everything else is zero
        let mut expected = vec![0.0f32; shape.len()];
        let plane = h * w;
        for (cell, (&v, &i)) in y.data().iter().zip(idx.indices()).enumerate() {
            let base = (cell / y.shape().plane()) * plane;
            expected[base + i as usize] = v;
        }
        check!(up.data() == expected.as_slice(), "case {k}: unpool output differs off index");

        // pooling the unpooled tensor gives back the pooled values; pooled
        // activations follow a ReLU, so they are drawn non-negative here
        let y_pos = y.map(|v| v.abs());
        let back = ops::maxpool2x2(&ops::unpool2x2(&y_pos, &idx).map_err(|e| e.to_string())?).0;
        check!(back == y_pos, "case {k}: maxpool(unpool(y)) != y");
    }
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!("{} tensors including 45×23", sizes.len()))
}

// ---------------------------------------------------------------------------

fn class_balancing() -> Outcome {
    const ITERATIONS: usize = 5000;
    let start = Instant::now();
    let corpus = |count, seed| {
        generate_synthetic(&SynthConfig {
            count,
            width: 64,
            height: 48,
            seed,
            blob_fraction: (0.007, 0.01),
            two_blob_probability: 0.25,
        })
        .unwrap()
    };
    let train_set = corpus(300, 41);
    let held_out = corpus(50, 42);
    let ear: usize = train_set.iter().map(|s| s.mask.ear_count()).sum();
    let fraction = ear as f64 / (train_set.len() * 64 * 48) as f64;
    check!((0.008..=0.012).contains(&fraction), "ear pixel fraction {fraction:.4} is not about 1%");

    let spec = earseg::build_default_spec(0.125);
    let config = TrainConfig {
        learning_rate: 0.005,
        momentum: 0.9,
        weight_decay: 0.005,
        max_iterations: ITERATIONS,
        batch_size: 8,
        log_every: 100,
        seed: 43,
        class_balance: true,
    };
    let (params, log) = training::train::<f32>(&spec, &train_set, &config, &mut |_| {}).map_err(|e| e.to_string())?;
    let records = pipeline::evaluate_samples(&spec, &params, &held_out, Connectivity::Eight).map_err(|e| e.to_string())?;
    let report = aggregate(&records, None, 20).map_err(|e| e.to_string())?;
    let recall = report.metric("recall").unwrap().summary.mean;
    let iou = report.metric("iou").unwrap().summary.mean;
    let elapsed = start.elapsed();

    // the same seed replays the same run: a short rerun reproduces the log prefix
    let short = TrainConfig {
        max_iterations: 300,
        ..config.clone()
    };
    let (_, prefix) = training::train::<f32>(&spec, &train_set, &short, &mut |_| {}).map_err(|e| e.to_string())?;
    check!(prefix.entries[..] == log.entries[..3], "rerun with the same seed diverged");

    check!(recall > 0.5, "held-out ear recall {recall:.4} ≤ 0.5");
    check!(iou >= 0.8, "held-out mean IoU {iou:.4} < 0.8 (recall {recall:.4})");
    within(elapsed, Duration::from_secs(15 * 60))?;
    Ok(format!(
        "ear fraction {:.2}%, {ITERATIONS} iterations, held-out recall {recall:.4}, mean IoU {iou:.4}, {:.0}s",
        100.0 * fraction,
        elapsed.as_secs_f64()
    ))
}

// ---------------------------------------------------------------------------

fn postprocess_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let masks = 600;
    for k in 0..masks {
        let m = random_blobby_mask(&mut rng);
        for (conn, eight) in [(Connectivity::Eight, true), (Connectivity::Four, false)] {
            let got = postprocess_mask(&m, conn);
            check!(got == oracle::top_two(&m, eight), "mask {k} ({conn}-connected) differs from the oracle");
            let kept = oracle::flood_fill_regions(&got, eight).len();
            check!(kept <= 2, "mask {k}: {kept} components survive");
            check!(got.is_subset_of(&m), "mask {k}: output adds pixels");
            check!(
                connected_components(&m, conn).region_count() == oracle::flood_fill_regions(&m, eight).len(),
                "mask {k}: component count differs from the oracle"
            );
        }
    }
    within(start.elapsed(), Duration::from_secs(10))?;
    Ok(format!("{masks} masks, 4- and 8-connected"))
}

// ---------------------------------------------------------------------------

fn median_frequency() -> Outcome {
    // 100×100 masks with exactly 108 ear pixels: 98.92% / 1.08%
    let masks: Vec<LabelMask> = (0..25)
        .map(|k| LabelMask::from_fn(100, 100, |x, y| y == k || (y == k + 1 && x < 8)))
        .collect();
    for m in &masks {
        check!(m.ear_count() == 108, "construction error: {} ear pixels", m.ear_count());
    }
    let w = median_frequency_weights(masks.iter()).map_err(|e| e.to_string())?;
    let want = (0.5 / 0.9892, 0.5 / 0.0108);
    check!(
        (w.non_ear - want.0).abs() <= 1e-9 && (w.ear - want.1).abs() <= 1e-9,
        "weights ({}, {}) vs ({}, {})",
        w.non_ear,
        w.ear,
        want.0,
        want.1
    );
    let majority = LabelMask::new(100, 100);
    let records: Vec<evaluation::MetricsRecord> = masks
        .iter()
        .enumerate()
        .map(|(k, m)| evaluation::MetricsRecord {
            id: format!("m{k}"),
            metrics: evaluate_masks(m, &majority).unwrap(),
        })
        .collect();
    let accuracy = aggregate(&records, None, 20).unwrap().metric("accuracy").unwrap().summary.mean;
    check!((accuracy - 0.9892).abs() <= 1e-12, "all-majority accuracy {accuracy}");
    Ok(format!(
        "weights ({:.6}, {:.4}), all-majority accuracy {accuracy:.4}",
        w.non_ear, w.ear
    ))
}

// ---------------------------------------------------------------------------

fn protocol_parity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut done = 0;
    while done < 150 {
        let m = random_blobby_mask(&mut rng);
        // precision is undefined without any ground-truth ear pixel
        if m.ear_count() == 0 {
            continue;
        }
        for conn in [Connectivity::Eight, Connectivity::Four] {
            let rects = gt_to_bounding_rects(&m, conn);
            let s = evaluate_rect_detections(&rects, &rects, m.width(), m.height());
            check!(
                (s.iou, s.precision, s.recall) == (1.0, 1.0, 1.0),
                "mask {done}: iou {}, precision {}, recall {}",
                s.iou,
                s.precision,
                s.recall
            );
        }
        done += 1;
    }
    Ok(format!("{done} masks"))
}

// ---------------------------------------------------------------------------

fn earseg(args: &[&str]) -> Result<String, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_earseg"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("earseg {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8_lossy(&out.stdout).into_owned())
}

fn read(path: &Path) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

/// Expected table cell recomputed from the raw metrics CSV.
fn recomputed_cell(csv_text: &str, column: usize) -> String {
    let values: Vec<f64> = csv_text
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(column).unwrap().parse().unwrap())
        .collect();
    format!("{:.2}±{:.2}", 100.0 * oracle::mean(&values), 100.0 * oracle::sample_std(&values))
}

fn comparison_report() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let data = root.join("data");
    let d = data.to_str().unwrap();
    earseg(&["synth", "--out", d, "--count", "24", "--width", "64", "--height", "48", "--seed", "8"])?;

    // two methods: the ground truth itself and the truth shifted one pixel
    let records = dataset::load(&dataset::DatasetManifest::open(&data).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let (perfect, shifted) = (root.join("perfect"), root.join("shifted"));
    std::fs::create_dir_all(&perfect).unwrap();
    std::fs::create_dir_all(&shifted).unwrap();
    for r in &records {
        r.mask.write_png(perfect.join(format!("{}.png", r.id))).unwrap();
        let moved = LabelMask::from_fn(r.mask.width(), r.mask.height(), |x, y| x > 0 && r.mask.is_ear(x - 1, y));
        moved.write_png(shifted.join(format!("{}.png", r.id))).unwrap();
    }
    let mut runs = Vec::new();
    for pass in 0..2 {
        for (name, dir) in [("perfect", &perfect), ("shifted", &shifted)] {
            let out = root.join(format!("eval-{name}-{pass}"));
            earseg(&[
                "eval",
                "--dataset",
                d,
                "--pred",
                dir.to_str().unwrap(),
                "--out",
                out.to_str().unwrap(),
                "--name",
                name,
            ])?;
            check!(out.join("config.txt").is_file(), "eval wrote no config echo");
            for f in ["histogram.csv", "covariates.csv", "boxplot.csv", "report.txt"] {
                check!(out.join(f).is_file(), "eval wrote no {f}");
            }
        }
        let a = root.join(format!("eval-perfect-{pass}/metrics.csv"));
        let b = root.join(format!("eval-shifted-{pass}/metrics.csv"));
        let report_dir = root.join(format!("report-{pass}"));
        let table = earseg(&[
            "report",
            &format!("perfect={}", a.display()),
            &format!("shifted={}", b.display()),
            "--out",
            report_dir.to_str().unwrap(),
        ])?;
        runs.push((table, read(&a)?, read(&b)?, read(&report_dir.join("report.txt"))?));
    }
    check!(runs[0] == runs[1], "rerun produced different metrics or report");
    let (table, csv_a, csv_b, saved) = &runs[0];
    check!(table == saved, "printed and saved tables differ");

    let lines: Vec<&str> = table.lines().collect();
    check!(lines.len() == 6, "expected header, four metric rows and a count line:\n{table}");
    check!(
        lines[0].split_whitespace().collect::<Vec<_>>() == ["perfect", "shifted"],
        "header `{}`",
        lines[0]
    );
    // metrics CSV columns: id,accuracy,iou,precision,recall,overlap
    for (row, (label, column)) in [("Accuracy [%]", 1), ("IoU [%]", 2), ("Precision [%]", 3), ("Recall [%]", 4)]
        .into_iter()
        .enumerate()
    {
        let line = lines[row + 1];
        check!(line.starts_with(label), "row {row} is `{line}`");
        let cells: Vec<&str> = line[label.len()..].split_whitespace().collect();
        let want = [recomputed_cell(csv_a, column), recomputed_cell(csv_b, column)];
        check!(cells == want, "row `{label}`: {cells:?} vs recomputed {want:?}");
        check!(cells[0] == "100.00±0.00", "perfect column shows {}", cells[0]);
    }
    let n = records.iter().filter(|r| r.split == Some(dataset::Split::Test)).count();
    check!(lines[5] == format!("(n = {n})"), "count line `{}`", lines[5]);
    println!("{table}");
    Ok(format!("two-column table over {n} test images, reproducible"))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("1 metric oracle equivalence", metric_oracle_equivalence),
        ("2 gradient fidelity", gradient_fidelity),
        ("3 pool/unpool invariants", pool_invariants),
        ("4 class balancing", class_balancing),
        ("5 postprocess correctness", postprocess_correctness),
        ("6 median-frequency weights", median_frequency),
        ("7 protocol parity", protocol_parity),
        ("8 comparison report", comparison_report),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        match run() {
            Ok(detail) => println!("criterion {name}: PASS ({detail})"),
            Err(why) => {
                failed += 1;
                println!("criterion {name}: FAIL ({why})");
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
