//! Acceptance suite: the release gate for this crate.
//!
//! Each test covers one numbered acceptance criterion and prints a single
//! `acceptance criterion N: PASS/FAIL — …` line carrying the measured values
//! and the tolerances pinned in this file. Run with
//!
//! ```text
//! cargo test --test acceptance -- --test-threads=1 --nocapture
//! ```
//!
//! to watch the lines stream; under a plain `cargo test` the harness captures
//! them and replays the output only for failing criteria.
//!
//! Wall-clock budgets quoted in the lines are logged, not asserted: they are
//! statements about laptop-class hardware, and a slow machine must not flip a
//! correctness suite.

use std::cell::RefCell;
use std::path::{Path, PathBuf};
use std::rc::Rc;
use std::time::Instant;

use ndarray::{Array2, Array3, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use dynbg::cli::{
    cmd_baseline, cmd_benchmark, cmd_evaluate, cmd_infer, cmd_run_all, cmd_train,
    BenchmarkOptions, CliResult, OutputLayout,
};
use dynbg::config::RunConfig;
use dynbg::dataset::{load_cdnet_sequence, load_gt_image, FrameProvider};
use dynbg::eval::{
    compare_masks, f_measure, precision, recall, ConfusionCounts, GT_NEGATIVE, GT_OUT_OF_ROI,
    GT_POSITIVE, GT_SHADOW, GT_UNKNOWN,
};
use dynbg::labels::ChannelReduce;
use dynbg::nn::ae::{reconstruction_loss, train_autoencoder, Autoencoder, AE_HIDDEN_UNITS};
use dynbg::nn::checkpoint::unet_from_checkpoint;
use dynbg::nn::gradcheck::check_gradients;
use dynbg::nn::unet::{predict_dynamic, softmax_cross_entropy, train_unet, UNet, UNetSpec};
use dynbg::nn::{ArchSpec, Checkpoint, ModelKind, Parameterized, TrainConfig};
use dynbg::pipeline::{
    batch_entropy, compose_foreground, run_pipeline_with, update_entropy, EntropyMapState,
    PipelineMode, PipelineParams,
};
use dynbg::synth::{Rect, SynthSceneSpec};
use dynbg::types::{load_mask_png, BinaryMask, ImageTensor};
use dynbg::Result;

/// Prints the criterion's verdict line, then asserts it.
fn verdict(criterion: usize, pass: bool, detail: &str) {
    let word = if pass { "PASS" } else { "FAIL" };
    println!("acceptance criterion {criterion}: {word} — {detail}");
    assert!(pass, "acceptance criterion {criterion} FAILED — {detail}");
}

/// Unwraps a command-layer result with a readable stage-tagged message.
fn run<T>(what: &str, result: CliResult<T>) -> T {
    result.unwrap_or_else(|e| panic!("{what} failed: {e}"))
}

fn random_frame(rng: &mut ChaCha20Rng, h: usize, w: usize) -> ImageTensor {
    Array3::from_shape_fn((h, w, 3), |_| rng.gen::<f32>())
}

fn random_mask(rng: &mut ChaCha20Rng, h: usize, w: usize, p: f64) -> BinaryMask {
    Array2::from_shape_fn((h, w), |_| rng.gen_bool(p))
}

// ---------------------------------------------------------------------------
// Criterion 1 — foreground annihilation identities, exactly.
//   F = residual(I, B) * (1 - D):  D = 1 forces F = 0;  B = I forces F = 0.
// ---------------------------------------------------------------------------
#[test]
fn criterion_1_foreground_annihilation() {
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let mut pixels = 0usize;
    for case in 0..100 {
        let h = rng.gen_range(4..=12);
        let w = rng.gen_range(4..=12);
        let reduce = if case % 2 == 0 {
            ChannelReduce::Max
        } else {
            ChannelReduce::Mean
        };
        let i = random_frame(&mut rng, h, w);
        let b = random_frame(&mut rng, h, w);

        // D = all-ones annihilates any residual.
        let all_dynamic = Array2::from_elem((h, w), true);
        let f = compose_foreground(&i, &b, &all_dynamic, reduce).unwrap();
        for &v in f.iter() {
            assert_eq!(v, 0.0, "D=1 must force F=0 exactly");
            pixels += 1;
        }

        // B = I annihilates regardless of D.
        let d = random_mask(&mut rng, h, w, 0.5);
        let f = compose_foreground(&i, &i.clone(), &d, reduce).unwrap();
        for &v in f.iter() {
            assert_eq!(v, 0.0, "B=I must force F=0 exactly");
            pixels += 1;
        }
    }
    verdict(
        1,
        true,
        &format!(
            "both annihilation identities exact on 100 random inputs ({pixels} pixels, \
             max and mean channel reduction); runtime {:.2}s (budget 5s, logged)",
            start.elapsed().as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 2 — incremental entropy update equals the batch formula.
//   C after frames 1..t  ==  (1/(t-1)) * sum_{k=2..t} XOR(S_k, S_{k-1}),
//   within 1e-12 on random sequences; alternating/constant fixtures exact.
// ---------------------------------------------------------------------------
#[test]
fn criterion_2_entropy_incremental_matches_batch() {
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let mut max_diff = 0.0f64;
    for _ in 0..100 {
        let len = rng.gen_range(2..=20);
        let masks: Vec<BinaryMask> = (0..len).map(|_| random_mask(&mut rng, 8, 8, 0.5)).collect();
        let mut state = EntropyMapState::new((8, 8), 0.0);
        for (k, mask) in masks.iter().enumerate() {
            update_entropy(&mut state, mask).unwrap();
            // Compare against the literal batch form at every prefix length.
            let reference = batch_entropy(&masks[..=k]);
            for (&inc, &bat) in state.c.iter().zip(reference.iter()) {
                max_diff = max_diff.max((inc - bat).abs());
            }
        }
    }
    let tol = 1e-12;

    // Fixtures, exact: a pixel flipping every frame [0,1,0,1] has C = 1.0;
    // a constant pixel [1,1,1,1] has C = 0.
    let alternating: Vec<BinaryMask> = (0..4)
        .map(|t| Array2::from_elem((8, 8), t % 2 == 1))
        .collect();
    let mut state = EntropyMapState::new((8, 8), 0.0);
    for m in &alternating {
        update_entropy(&mut state, m).unwrap();
    }
    let alternating_exact = state.c.iter().all(|&c| c == 1.0);

    let constant: Vec<BinaryMask> = (0..4).map(|_| Array2::from_elem((8, 8), true)).collect();
    let mut state = EntropyMapState::new((8, 8), 0.0);
    for m in &constant {
        update_entropy(&mut state, m).unwrap();
    }
    let constant_exact = state.c.iter().all(|&c| c == 0.0);

    let pass = max_diff <= tol && alternating_exact && constant_exact;
    verdict(
        2,
        pass,
        &format!(
            "incremental vs batch max |Δ| = {max_diff:.3e} (tol 1e-12) over 100 random 8×8 \
             sequences of length 2–20 at every prefix; [0,1,0,1]→C=1.0 exact: {alternating_exact}; \
             [1,1,1,1]→C=0 exact: {constant_exact}; runtime {:.2}s (budget 10s, logged)",
            start.elapsed().as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 3 — confusion counting and metrics match a brute-force per-pixel
// reference exactly, degenerate 0/0 conventions included; FM fixture 2/3.
// ---------------------------------------------------------------------------

/// Independent per-pixel reference implementation of the count rules.
fn reference_counts(pred: &BinaryMask, gt: &Array2<u8>, roi: &BinaryMask) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    let (h, w) = pred.dim();
    for y in 0..h {
        for x in 0..w {
            if !roi[(y, x)] {
                continue;
            }
            let p = pred[(y, x)];
            match gt[(y, x)] {
                GT_POSITIVE => {
                    if p {
                        c.tp += 1;
                    } else {
                        c.fn_ += 1;
                    }
                }
                GT_NEGATIVE | GT_SHADOW => {
                    if p {
                        c.fp += 1;
                    } else {
                        c.tn += 1;
                    }
                }
                GT_OUT_OF_ROI | GT_UNKNOWN => {}
                other => panic!("reference saw illegal gt value {other}"),
            }
        }
    }
    c
}

fn reference_metrics(c: &ConfusionCounts) -> (f64, f64, f64) {
    let r = if c.tp + c.fn_ == 0 {
        0.0
    } else {
        c.tp as f64 / (c.tp + c.fn_) as f64
    };
    let p = if c.tp + c.fp == 0 {
        0.0
    } else {
        c.tp as f64 / (c.tp + c.fp) as f64
    };
    let fm = if r + p == 0.0 { 0.0 } else { 2.0 * r * p / (r + p) };
    (r, p, fm)
}

fn assert_matches_reference(pred: &BinaryMask, gt: &Array2<u8>, roi: &BinaryMask) {
    let got = compare_masks(pred, gt, roi).unwrap();
    let want = reference_counts(pred, gt, roi);
    assert_eq!(
        (got.tp, got.fp, got.fn_, got.tn),
        (want.tp, want.fp, want.fn_, want.tn),
        "counts diverge from brute force"
    );
    let (r, p, fm) = reference_metrics(&got);
    assert_eq!(recall(&got), r, "recall diverges from brute force");
    assert_eq!(precision(&got), p, "precision diverges from brute force");
    assert_eq!(f_measure(&got), fm, "f-measure diverges from brute force");
}

#[test]
fn criterion_3_metric_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let legal = [GT_NEGATIVE, GT_SHADOW, GT_OUT_OF_ROI, GT_UNKNOWN, GT_POSITIVE];
    for _ in 0..200 {
        let h = rng.gen_range(3..=10);
        let w = rng.gen_range(3..=10);
        let pred = random_mask(&mut rng, h, w, 0.5);
        let gt = Array2::from_shape_fn((h, w), |_| legal[rng.gen_range(0..legal.len())]);
        let roi = random_mask(&mut rng, h, w, 0.8);
        assert_matches_reference(&pred, &gt, &roi);
    }

    // Forced degenerate conventions.
    let all_true = Array2::from_elem((4, 4), true);
    let all_false = Array2::from_elem((4, 4), false);
    // Every pixel ignored -> zero counts -> all metrics 0.
    let ignored = Array2::from_elem((4, 4), GT_UNKNOWN);
    assert_matches_reference(&all_true, &ignored, &all_true);
    let zero = compare_masks(&all_true, &ignored, &all_true).unwrap();
    assert_eq!((recall(&zero), precision(&zero), f_measure(&zero)), (0.0, 0.0, 0.0));
    // Positives present, empty prediction -> precision 0/0 -> 0.
    let positives = Array2::from_elem((4, 4), GT_POSITIVE);
    assert_matches_reference(&all_false, &positives, &all_true);
    // No positives anywhere, empty prediction -> recall 0/0 -> 0.
    let negatives = Array2::from_elem((4, 4), GT_NEGATIVE);
    assert_matches_reference(&all_false, &negatives, &all_true);
    // Empty ROI -> zero counts.
    assert_matches_reference(&all_true, &positives, &all_false);

    // FM fixture: tp=2, fp=1, fn=1 -> recall = precision = 2/3 -> FM = 2/3.
    let fixture = ConfusionCounts { tp: 2, fp: 1, fn_: 1, tn: 0 };
    let fm = f_measure(&fixture);
    let fixture_ok = (fm - 2.0 / 3.0).abs() < 1e-12;

    verdict(
        3,
        fixture_ok,
        &format!(
            "compare_masks + recall/precision/f_measure equal the brute-force reference exactly \
             on 200 random triples and 4 forced degenerate 0/0 cases; tp=2,fp=1,fn=1 → FM \
             {fm:.12} (2/3 within 1e-12); runtime {:.2}s (budget 10s, logged)",
            start.elapsed().as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 4 — analytic gradients match central finite differences.
//   Autoencoder (input_dim 8):      relative error < 1e-4, every parameter.
//   U-Net (16×16, reduced widths):  relative error < 1e-3, strided sweep.
// Both run at f64: f32 finite differences drown in rounding error.
// ---------------------------------------------------------------------------
#[test]
fn criterion_4_gradient_checks() {
    let start = Instant::now();

    // Autoencoder on an 8-dimensional input, every parameter checked.
    let mut ae = Autoencoder::<f64>::new(8, 42).unwrap();
    let x = Array2::from_shape_fn((3, 8), |(i, j)| 0.1 + 0.08 * ((i * 8 + j) % 11) as f64);
    let target = x.mapv(|v| 1.0 - v);
    let y = ae.forward(&x, true);
    let mut dy = Array2::zeros(y.raw_dim());
    ndarray::Zip::from(&mut dy)
        .and(&y)
        .and(&target)
        .for_each(|d, &yv, &tv| *d = if yv > tv { 1.0 } else { -1.0 });
    ae.zero_grads();
    ae.backward(&dy);
    let ae_report = check_gradients(
        &mut ae,
        |m| {
            let y = m.forward(&x, false);
            reconstruction_loss(&target, &y).unwrap()
        },
        1e-6,
        1,
    );
    let ae_tol = 1e-4;
    let ae_ok = ae_report.max_rel_err < ae_tol && ae_report.checked > 6000;

    // Full-depth U-Net at reduced widths on a 16×16 frame. Parameters are
    // jittered off the zero-bias init first: exact zeros otherwise park some
    // pre-activations on the ReLU kink, where finite differences are
    // ill-posed (the analytic subgradient is one-sided there).
    let spec = UNetSpec::with_features(vec![2, 4, 8, 16, 32]);
    let mut unet = UNet::<f64>::new(spec, 5).unwrap();
    let x = Array4::from_shape_fn((1, 16, 16, 3), |(_, y, xx, c)| {
        0.2 + 0.6 * (((y * 16 + xx) * 3 + c) % 17) as f64 / 17.0
    });
    let labels = Array3::from_shape_fn((1, 16, 16), |(_, y, xx)| u8::from((y + xx) % 3 == 0));
    let mut jitter = ChaCha20Rng::seed_from_u64(42);
    unet.visit_params(&mut |_, mut t| {
        for v in t.w.iter_mut() {
            *v += 0.05 * (jitter.gen::<f64>() - 0.5);
        }
    });
    unet.zero_grads();
    let logits = unet.forward(&x, true);
    let (_, dlogits) = softmax_cross_entropy(&logits, &labels);
    unet.backward(&dlogits);
    // h balances truncation against f64 rounding: the summed loss is O(10^2),
    // so steps much below ~1e-5 leave the difference quotient dominated by
    // cancellation noise on the smallest gradients.
    let unet_report = check_gradients(
        &mut unet,
        |m| {
            let logits = m.forward(&x, false);
            softmax_cross_entropy(&logits, &labels).0
        },
        3e-5,
        17,
    );
    let unet_tol = 1e-3;
    let unet_ok = unet_report.max_rel_err < unet_tol && unet_report.checked > 1500;

    verdict(
        4,
        ae_ok && unet_ok,
        &format!(
            "autoencoder max rel err {:.3e} over {} params (tol 1e-4, input_dim 8); \
             U-Net max rel err {:.3e} over {} sampled params (tol 1e-3, depth 4 widths \
             [2,4,8,16,32] at 16×16, every 17th param, worst at {}); runtime {:.1}s \
             (budget 120s, logged)",
            ae_report.max_rel_err,
            ae_report.checked,
            unet_report.max_rel_err,
            unet_report.checked,
            unet_report.worst_param,
            start.elapsed().as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 5 — shape preservation and bit-exact determinism.
//   predict_dynamic keeps H×W on sizes that are not multiples of 16;
//   fixed-seed training twice gives byte-identical checkpoints;
//   checkpoint save/load round-trips exactly.
// ---------------------------------------------------------------------------
#[test]
fn criterion_5_shape_and_determinism() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();

    // Shape: 60×70 is not a multiple of 16, so the net pads to 64×80
    // internally and must crop back.
    let mut net = UNet::<f32>::new(UNetSpec::with_features(vec![8, 16, 32, 64, 128]), 3).unwrap();
    let frame = Array3::from_shape_fn((60, 70, 3), |(y, x, c)| {
        ((y * 70 + x) * 3 + c) as f32 % 29.0 / 29.0
    });
    let mask = predict_dynamic(&mut net, &frame);
    let shape_ok = mask.dim() == (60, 70);

    // Determinism: identical seeds and data must give byte-identical
    // checkpoint files for both networks.
    let ae_frames: Vec<ImageTensor> = (0..6)
        .map(|i| {
            Array3::from_shape_fn((12, 12, 3), |(y, x, c)| {
                ((y * 12 + x) * 3 + c + i * 17) as f32 % 23.0 / 23.0
            })
        })
        .collect();
    let ae_config = TrainConfig { learning_rate: 1e-3, epochs: 3, batch_size: 4, seed: 9 };
    let mut ae_paths = Vec::new();
    for run_idx in 0..2 {
        let mut trained = train_autoencoder(&ae_frames, &ae_config).unwrap();
        let ckpt = Checkpoint::from_model(
            &mut trained.model,
            ModelKind::Autoencoder,
            ArchSpec::Autoencoder { input_dim: 12 * 12 * 3, hidden_units: AE_HIDDEN_UNITS.to_vec() },
            (12, 12, 3),
            ae_config.seed,
            "determinism-check",
        );
        let path = dir.path().join(format!("ae_{run_idx}.ckpt"));
        ckpt.save(&path).unwrap();
        ae_paths.push(path);
    }
    let ae_identical =
        std::fs::read(&ae_paths[0]).unwrap() == std::fs::read(&ae_paths[1]).unwrap();

    let unet_frames: Vec<ImageTensor> = (0..4)
        .map(|i| {
            Array3::from_shape_fn((16, 16, 3), |(y, x, c)| {
                ((y * 16 + x) * 3 + c + i * 31) as f32 % 13.0 / 13.0
            })
        })
        .collect();
    let unet_labels: Vec<BinaryMask> = (0..4)
        .map(|i| Array2::from_shape_fn((16, 16), |(y, x)| (y + x + i) % 4 == 0))
        .collect();
    let unet_spec = UNetSpec::with_features(vec![2, 4]);
    let unet_config = TrainConfig { learning_rate: 5e-3, epochs: 2, batch_size: 4, seed: 12 };
    let mut unet_paths = Vec::new();
    for run_idx in 0..2 {
        let mut trained = train_unet(&unet_frames, &unet_labels, &unet_spec, &unet_config).unwrap();
        let ckpt = Checkpoint::from_model(
            &mut trained.model,
            ModelKind::Unet,
            ArchSpec::Unet { in_channels: 3, features: vec![2, 4] },
            (16, 16, 3),
            unet_config.seed,
            "determinism-check",
        );
        let path = dir.path().join(format!("unet_{run_idx}.ckpt"));
        ckpt.save(&path).unwrap();
        unet_paths.push(path);
    }
    let unet_identical =
        std::fs::read(&unet_paths[0]).unwrap() == std::fs::read(&unet_paths[1]).unwrap();

    // Round-trip: every header field and every tensor bit survives
    // save → load.
    let mut round_trip_exact = true;
    for path in ae_paths.iter().chain(unet_paths.iter()) {
        let loaded = Checkpoint::load(path).unwrap();
        let reloaded = {
            let copy = dir.path().join("round_trip.ckpt");
            loaded.save(&copy).unwrap();
            Checkpoint::load(&copy).unwrap()
        };
        round_trip_exact &= loaded.model_kind == reloaded.model_kind
            && loaded.arch == reloaded.arch
            && loaded.working_size == reloaded.working_size
            && loaded.seed == reloaded.seed
            && loaded.training_fingerprint == reloaded.training_fingerprint;
        let names: Vec<&str> = loaded.tensor_names().collect();
        round_trip_exact &= names == reloaded.tensor_names().collect::<Vec<&str>>();
        for name in names {
            let (shape_a, data_a) = loaded.tensor(name).unwrap();
            let (shape_b, data_b) = reloaded.tensor(name).unwrap();
            round_trip_exact &= shape_a == shape_b
                && data_a.len() == data_b.len()
                && data_a
                    .iter()
                    .zip(data_b.iter())
                    .all(|(a, b)| a.to_bits() == b.to_bits());
        }
    }

    verdict(
        5,
        shape_ok && ae_identical && unet_identical && round_trip_exact,
        &format!(
            "predict_dynamic 60×70 → {:?} (want (60, 70)); fixed-seed double training \
             byte-identical: autoencoder {ae_identical}, U-Net {unet_identical}; checkpoint \
             save/load bit-exact: {round_trip_exact}; runtime {:.1}s (budget 300s, logged)",
            mask.dim(),
            start.elapsed().as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 6 — synthetic end-to-end experiment on the default scene.
//   Full pipeline (50-epoch autoencoder, 50-epoch U-Net, online inference,
//   evaluation against generator ground truth) must reach FM ≥ 0.80, beat
//   the temporal-median baseline's FM by ≥ 0.15, and honor the overfitting
//   contract: < 5% of object pixels predicted dynamic on test frames, and
//   ≥ 80% dynamic-texture recall on the object-free training frames.
//   U-Net widths come down to [8,16,32,64,128] through the public config so
//   the run fits a single-core budget; every quality threshold stays at full
//   strength and all training hyperparameters stay at their defaults.
// ---------------------------------------------------------------------------
#[test]
fn criterion_6_synthetic_end_to_end() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut config = RunConfig::from_toml_str(
        r#"
        [dataset]
        layout = "synthetic"

        [training]
        unet_features = [8, 16, 32, 64, 128]
        "#,
    )
    .unwrap();
    config.output_dir = dir.path().join("run");

    run("train", cmd_train(&config));
    let train_time = start.elapsed().as_secs_f64();
    run("infer", cmd_infer(&config));
    let learned = run("evaluate", cmd_evaluate(&config, None));

    let baseline_dir = dir.path().join("baseline_masks");
    run("baseline", cmd_baseline(&config, &baseline_dir));
    let baseline = run("evaluate baseline", cmd_evaluate(&config, Some(&baseline_dir)));

    let fm_ok = learned.f_measure >= 0.80;
    let margin = learned.f_measure - baseline.f_measure;
    let margin_ok = margin >= 0.15;

    // Overfitting contract, measured with the trained U-Net on the exported
    // scene (the exact frames the pipeline saw).
    let scene_dir = config.output_dir.join("scene");
    let manifest = load_cdnet_sequence(&scene_dir).unwrap();
    let working = (manifest.native_size.0, manifest.native_size.1);
    let unet_path = OutputLayout::new(&config.output_dir).unet_checkpoint();
    let ckpt = Checkpoint::load(&unet_path).unwrap();
    let mut unet = unet_from_checkpoint(&ckpt, &unet_path).unwrap();
    let dynamic_gt = load_mask_png(&scene_dir.join("dynamicGT.png")).unwrap();
    let (first, last) = manifest.temporal_roi;

    // Dynamic-texture recall over the object-free training frames.
    let (mut dyn_tp, mut dyn_fn) = (0u64, 0u64);
    for t in 1..first {
        let frame = manifest.load_frame(t, working).unwrap();
        let pred = predict_dynamic(&mut unet, &frame);
        for (&p, &g) in pred.iter().zip(dynamic_gt.iter()) {
            if g {
                if p {
                    dyn_tp += 1;
                } else {
                    dyn_fn += 1;
                }
            }
        }
    }
    let dyn_recall = dyn_tp as f64 / (dyn_tp + dyn_fn) as f64;
    let recall_ok = dyn_recall >= 0.80;

    // False "dynamic background" predictions inside the unseen object.
    let (mut object_pixels, mut false_dynamic) = (0u64, 0u64);
    for t in first..=last {
        let frame = manifest.load_frame(t, working).unwrap();
        let pred = predict_dynamic(&mut unet, &frame);
        let gt = load_gt_image(manifest.gt_path(t).unwrap()).unwrap();
        for (&p, &g) in pred.iter().zip(gt.iter()) {
            if g == GT_POSITIVE {
                object_pixels += 1;
                if p {
                    false_dynamic += 1;
                }
            }
        }
    }
    let false_dynamic_rate = false_dynamic as f64 / object_pixels as f64;
    let object_ok = false_dynamic_rate < 0.05;

    verdict(
        6,
        fm_ok && margin_ok && recall_ok && object_ok,
        &format!(
            "FM {:.3} (≥ 0.80); median-baseline FM {:.3}, margin {margin:.3} (≥ 0.15); \
             overfitting contract: dynamic-texture recall on training frames {dyn_recall:.3} \
             (≥ 0.80), false dynamic inside object {false_dynamic_rate:.4} (< 0.05, over \
             {object_pixels} object pixels); training {train_time:.0}s, total {:.0}s \
             (budget 600s on laptop-class hardware, logged)",
            learned.f_measure,
            baseline.f_measure,
            start.elapsed().as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 7 — the online pipeline is strictly causal: the result for frame
// t is emitted before frame t+1 is read from the provider.
// ---------------------------------------------------------------------------
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Event {
    Read(usize),
    Emit(usize),
}

struct InstrumentedProvider {
    frames: Vec<ImageTensor>,
    next: usize,
    log: Rc<RefCell<Vec<Event>>>,
}

impl FrameProvider for InstrumentedProvider {
    fn num_frames(&self) -> usize {
        self.frames.len()
    }
    fn next_frame(&mut self) -> Option<Result<ImageTensor>> {
        if self.next >= self.frames.len() {
            return None;
        }
        self.next += 1;
        self.log.borrow_mut().push(Event::Read(self.next));
        Some(Ok(self.frames[self.next - 1].clone()))
    }
}

#[test]
fn criterion_7_online_contract() {
    let start = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let frames: Vec<ImageTensor> = (0..6).map(|_| random_frame(&mut rng, 10, 12)).collect();
    let n = frames.len();

    let run_mode = |mode: PipelineMode| -> Vec<Event> {
        let log = Rc::new(RefCell::new(Vec::new()));
        let mut provider =
            InstrumentedProvider { frames: frames.clone(), next: 0, log: Rc::clone(&log) };
        let params = PipelineParams { mode, ..PipelineParams::default() };
        let emit_log = Rc::clone(&log);
        run_pipeline_with(
            &mut provider,
            |f| Ok(Array3::zeros(f.raw_dim())),
            |f| Ok(Array2::default((f.dim().0, f.dim().1))),
            &params,
            0.0,
            1,
            move |result| {
                emit_log.borrow_mut().push(Event::Emit(result.frame_index));
                Ok(())
            },
        )
        .unwrap();
        let events = log.borrow().clone();
        events
    };

    // Online mode must interleave exactly: R1 E1 R2 E2 … Rn En.
    let online = run_mode(PipelineMode::Online);
    let expected: Vec<Event> = (1..=n).flat_map(|t| [Event::Read(t), Event::Emit(t)]).collect();
    let online_ok = online == expected;

    // Sanity check that the instrument can detect a violation: the two-pass
    // batch mode reads everything before emitting anything.
    let batch = run_mode(PipelineMode::BatchGlobal);
    let batch_buffers = batch[..n].iter().all(|e| matches!(e, Event::Read(_)));

    verdict(
        7,
        online_ok && batch_buffers,
        &format!(
            "online event trace over {n} frames is exactly read-1, emit-1, …, read-{n}, \
             emit-{n} (never reads t+1 before emitting t): {online_ok}; instrument detects \
             the buffering batch mode as non-causal: {batch_buffers}; runtime {:.2}s \
             (budget 60s, logged)",
            start.elapsed().as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 8 — the benchmark command emits a valid FPS record and the
// FPS-vs-area trend log. No numeric throughput bound is asserted: published
// frame rates are hardware statements.
// ---------------------------------------------------------------------------

/// A small synthetic run (24×24 scene, 2-epoch training) that gives the
/// benchmark real checkpoints to load without dominating the suite's runtime.
fn small_scene_config(dir: &Path) -> RunConfig {
    let mut config = RunConfig::from_toml_str(
        r#"
        seed = 11

        [dataset]
        layout = "synthetic"

        [training]
        max_frames = 10
        unet_features = [4, 8]

        [training.ae]
        epochs = 2

        [training.unet]
        epochs = 2
        "#,
    )
    .unwrap();
    config.output_dir = dir.join("run");
    let spec = SynthSceneSpec {
        size: (24, 24),
        n_train: 10,
        n_test: 4,
        dynamic_region: Rect { y: 2, x: 14, h: 8, w: 8 },
        object_side: 5,
        object_start: (12.0, 2.0),
        object_velocity: (0.0, 1.0),
        ..SynthSceneSpec::default()
    };
    let spec_path = dir.join("scene_spec.toml");
    std::fs::write(&spec_path, toml::to_string(&spec).unwrap()).unwrap();
    config.dataset.path = spec_path;
    config
}

#[test]
fn criterion_8_throughput_record() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let config = small_scene_config(dir.path());
    run("train", cmd_train(&config));

    let options = BenchmarkOptions { frames: 8, warmup: 1, repeats: 3, trend: true };
    let records = run("benchmark", cmd_benchmark(&config, &options));

    // Base record plus the half- and quarter-scale trend records.
    let count_ok = records.len() == 3;
    let sizes: Vec<(usize, usize, usize)> = records.iter().map(|r| r.working_size).collect();
    let sizes_ok = sizes == vec![(24, 24, 3), (12, 12, 3), (6, 6, 3)];
    let mut records_valid = true;
    for r in &records {
        let lo = r.runs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = r.runs.iter().copied().fold(0.0f64, f64::max);
        records_valid &= r.fps.is_finite()
            && r.fps > 0.0
            && r.frames == 4 // the scene has 4 evaluation frames
            && r.runs.len() == options.repeats
            && r.fps >= lo
            && r.fps <= hi
            && !r.hardware.is_empty();
    }

    // The structured log must carry one parseable JSON line per record.
    let log_path = OutputLayout::new(&config.output_dir).benchmark_log();
    let log_text = std::fs::read_to_string(&log_path).unwrap();
    let parsed: Vec<serde_json::Value> = log_text
        .lines()
        .map(|l| serde_json::from_str(l).expect("benchmark log line parses as JSON"))
        .collect();
    let log_ok = parsed.len() == 3
        && parsed
            .iter()
            .all(|v| v["fps"].as_f64().is_some_and(|f| f > 0.0) && v["hardware"].is_string());

    let trend: Vec<String> = records
        .iter()
        .map(|r| format!("{}×{} → {:.0} FPS", r.working_size.0, r.working_size.1, r.fps))
        .collect();
    verdict(
        8,
        count_ok && sizes_ok && records_valid && log_ok,
        &format!(
            "cmd_benchmark emitted {} records, sizes as expected: {sizes_ok}, all fields valid: \
             {records_valid}; trend logged to benchmark.jsonl ({} parseable lines): {log_ok}; \
             measured trend {} (no throughput bound asserted — hardware-dependent); \
             runtime {:.1}s (logged)",
            records.len(),
            parsed.len(),
            trend.join(", "),
            start.elapsed().as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------------------
// Criterion 9 — optional extended check on the real CDnet "fall" sequence:
// default configuration, FM within ±0.07 of 0.94. Skipped (not failed) when
// the dataset is absent; environment-dependent and not CI-gating.
// ---------------------------------------------------------------------------
#[test]
fn criterion_9_cdnet_fall_optional() {
    let root = std::env::var_os("DYNBG_CDNET_FALL")
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            Path::new(env!("CARGO_MANIFEST_DIR"))
                .join("../../data/cdnet2014/dynamicBackground/fall")
        });
    if !root.join("input").is_dir() {
        println!(
            "acceptance criterion 9: SKIP — optional extended check; no CDnet \"fall\" sequence \
             at {} (set DYNBG_CDNET_FALL to its directory to enable)",
            root.display()
        );
        return;
    }

    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut config = RunConfig::default();
    config.dataset.path = root;
    config.output_dir = dir.path().join("run");
    let report = run("run-all", cmd_run_all(&config));
    let diff = (report.f_measure - 0.94).abs();
    verdict(
        9,
        diff <= 0.07,
        &format!(
            "CDnet fall FM {:.3}, |Δ| = {diff:.3} from 0.94 (tol ±0.07, default config); \
             runtime {:.0}s (environment-dependent, logged)",
            report.f_measure,
            start.elapsed().as_secs_f64()
        ),
    );
}
