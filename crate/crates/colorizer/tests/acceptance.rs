//! End-to-end acceptance checks. Each test prints one PASS/FAIL line.

mod common;

use colorizer::colorspace::{lab_to_rgb, rgb_to_lab, Rgb8Image};
use colorizer::error::Error;
use colorizer::eval::{
    ab_error, colorize, gray_baseline_mae, max_lightness_delta, psnr, ColorizeOptions,
    eval_report,
};
use colorizer::model::{
    build_network, init_weights, load_checkpoint, save_checkpoint, NetConfig, Network,
};
use colorizer::nn::{check_all_kernels, euclidean_loss, OptimState, Tensor};
use colorizer::quantizer::{
    build_bin_grid, decode_distribution, quantize_ab, soft_encode, DecodeMethod,
    DEFAULT_NEIGHBORS, DEFAULT_SIGMA,
};
use colorizer::trainer::{
    batch_tensors, ingest_dataset, prepare_targets, train, train_step, TrainConfig,
};
use common::{chroma_image, save_png, write_dataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;
use tempfile::TempDir;

fn report(n: u32, name: &str, ok: bool, detail: &str) {
    println!(
        "criterion {n:2} {name}: {} ({detail})",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {n} {name} failed: {detail}");
}

#[test]
fn criterion_01_color_round_trip() {
    let started = Instant::now();
    let mut data = Vec::with_capacity(16 * 16 * 16 * 3);
    for r in (0..=255u16).step_by(17) {
        for g in (0..=255u16).step_by(17) {
            for b in (0..=255u16).step_by(17) {
                data.extend_from_slice(&[r as u8, g as u8, b as u8]);
            }
        }
    }
    let img = Rgb8Image::new(64, 64, data).unwrap();
    let back = lab_to_rgb(&rgb_to_lab(&img));
    let max_diff = img
        .data
        .iter()
        .zip(&back.data)
        .map(|(&a, &b)| (a as i32 - b as i32).abs())
        .max()
        .unwrap();
    let secs = started.elapsed().as_secs_f64();
    report(
        1,
        "color round trip",
        max_diff <= 1 && secs < 5.0,
        &format!("max channel diff {max_diff}, {secs:.2}s"),
    );
}

#[test]
fn criterion_02_neutral_axis() {
    let mut worst = 0.0f32;
    for v in 0..=255u8 {
        let img = Rgb8Image::new(1, 1, vec![v, v, v]).unwrap();
        let lab = rgb_to_lab(&img);
        worst = worst.max(lab.a[0].abs()).max(lab.b[0].abs());
    }
    report(
        2,
        "neutral axis",
        worst < 1e-9,
        &format!("max |a|,|b| = {worst:.3e}"),
    );
}

#[test]
fn criterion_03_gradient_suite() {
    let started = Instant::now();
    let reports = check_all_kernels();
    let secs = started.elapsed().as_secs_f64();
    let worst = reports
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .unwrap();
    // required coverage
    for needle in [
        "conv2d stride=2 pad=2 dilation=2",
        "relu",
        "batchnorm",
        "upsample nearest",
        "upsample bilinear",
        "euclidean_loss",
        "softmax_cross_entropy",
    ] {
        assert!(
            reports.iter().any(|r| r.name.contains(needle)),
            "missing kernel check: {needle}"
        );
    }
    report(
        3,
        "gradient suite",
        worst.max_rel_error < 1e-3 && secs < 60.0,
        &format!(
            "worst {} = {:.3e}, {secs:.1}s",
            worst.name, worst.max_rel_error
        ),
    );
}

#[test]
fn criterion_04_loss_spot_value() {
    let pred = Tensor::from_vec(1, 2, 1, 1, vec![1.0, 2.0]).unwrap();
    let target = Tensor::zeros(1, 2, 1, 1);
    let (loss, _) = euclidean_loss(&pred, &target).unwrap();
    report(4, "loss spot value", loss == 2.5, &format!("loss = {loss}"));
}

#[test]
fn criterion_05_overfit_convergence() {
    let started = Instant::now();
    let dir = TempDir::new().unwrap();
    let image = chroma_image(64, 0.25);
    save_png(&image, &dir.path().join("one.png"));
    let cfg = TrainConfig {
        data_dir: dir.path().to_path_buf(),
        image_size: 64,
        batch_size: 1,
        lr: 3e-4,
        ..Default::default()
    };
    let mut samples = ingest_dataset(&cfg).unwrap();
    prepare_targets(&mut samples, &cfg, None).unwrap();
    let mut net = build_network(&cfg.net_config(0)).unwrap();
    init_weights(&mut net, cfg.seed);
    let mut state = OptimState::new(
        &net.trainable_params_mut()
            .iter()
            .map(|p| &**p)
            .collect::<Vec<_>>(),
    );
    let optim = cfg.optim_config();
    let (input, target) = batch_tensors(&samples, &[0], &cfg, 0).unwrap();
    let mut first = f64::NAN;
    let mut last = f64::NAN;
    for step in 0..500 {
        last = train_step(&mut net, &input, &target, &mut state, &optim).unwrap();
        if step == 0 {
            first = last;
        }
    }
    let colored = colorize(&mut net, None, &image, &ColorizeOptions::default()).unwrap();
    let db = psnr(&colored, &image).unwrap();
    let secs = started.elapsed().as_secs_f64();
    report(
        5,
        "overfit convergence",
        last <= first / 100.0 && db >= 25.0 && secs < 300.0,
        &format!("loss {first:.3} -> {last:.5}, psnr {db:.2} dB, {secs:.0}s"),
    );
}

/// Shared 200-image training run used by criteria 6 and 9.
struct Fixture {
    holdout: Vec<Rgb8Image>,
    net: Mutex<Network>,
    train_secs: f64,
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let data = TempDir::new().unwrap();
        let out = TempDir::new().unwrap();
        write_dataset(data.path(), 200, 64, 0.0);
        let cfg = TrainConfig {
            data_dir: data.path().to_path_buf(),
            out_dir: out.path().to_path_buf(),
            seed: 11,
            ..Default::default()
        };
        let started = Instant::now();
        let outcome = train(&cfg).unwrap();
        let train_secs = started.elapsed().as_secs_f64();
        let (net, _) = load_checkpoint(&outcome.final_checkpoint).unwrap();
        // held-out phases deliberately interleave between the training ones
        let holdout = (0..20)
            .map(|i| chroma_image(64, 0.307 + i as f64 * 0.791))
            .collect();
        Fixture {
            holdout,
            net: Mutex::new(net),
            train_secs,
        }
    })
}

#[test]
fn criterion_06_desk_scale_learning_signal() {
    let fx = fixture();
    let mut net = fx.net.lock().unwrap();
    let mut model_mae = 0.0;
    let mut baseline_mae = 0.0;
    for truth in &fx.holdout {
        let pred = colorize(&mut net, None, truth, &ColorizeOptions::default()).unwrap();
        let (mae, _, _) = ab_error(&pred, truth).unwrap();
        model_mae += mae;
        baseline_mae += gray_baseline_mae(truth);
    }
    model_mae /= fx.holdout.len() as f64;
    baseline_mae /= fx.holdout.len() as f64;
    report(
        6,
        "desk-scale learning signal",
        model_mae < baseline_mae && fx.train_secs < 1800.0,
        &format!(
            "model ab mae {model_mae:.2} vs gray baseline {baseline_mae:.2}, train {:.0}s",
            fx.train_secs
        ),
    );
}

#[test]
fn criterion_07_quantizer_laws() {
    let grid = build_bin_grid(10.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    let mut centers_ok = true;
    for i in 0..grid.q() {
        centers_ok &= quantize_ab(grid.gamut_center(i), &grid) == i;
    }

    let mut sum_ok = true;
    let mut decode_ok = true;
    let tol = 10.0 * std::f32::consts::SQRT_2 / 2.0;
    for _ in 0..10_000 {
        let i = rng.gen_range(0..grid.q());
        let (ca, cb) = grid.gamut_center(i);
        let ab = (
            ca + rng.gen_range(-5.0..5.0f32),
            cb + rng.gen_range(-5.0..5.0f32),
        );
        let label = soft_encode(ab, &grid, DEFAULT_NEIGHBORS, DEFAULT_SIGMA);
        let sum: f32 = label.entries.iter().map(|e| e.1).sum();
        sum_ok &= (sum - 1.0).abs() <= 1e-6;
        let mut dense = vec![0.0f32; grid.q()];
        for &(bin, w) in &label.entries {
            dense[bin as usize] = w;
        }
        let (da, db) = decode_distribution(&dense, &grid, DecodeMethod::Mode, 1.0).unwrap();
        let dist = ((da - ab.0).powi(2) + (db - ab.1).powi(2)).sqrt();
        decode_ok &= dist <= tol;
    }
    report(
        7,
        "quantizer laws",
        centers_ok && sum_ok && decode_ok,
        &format!("centers {centers_ok}, sums {sum_ok}, mode decode {decode_ok}"),
    );
}

#[test]
fn criterion_08_determinism() {
    let data = TempDir::new().unwrap();
    write_dataset(data.path(), 6, 16, 0.1);
    let run = |out: &std::path::Path| {
        let cfg = TrainConfig {
            data_dir: data.path().to_path_buf(),
            out_dir: out.to_path_buf(),
            image_size: 16,
            batch_size: 4,
            epochs: 2,
            seed: 42,
            ..Default::default()
        };
        std::fs::read(train(&cfg).unwrap().final_checkpoint).unwrap()
    };
    let o1 = TempDir::new().unwrap();
    let o2 = TempDir::new().unwrap();
    let same = run(o1.path()) == run(o2.path());
    report(8, "determinism", same, "two seeded runs, final.aclr bytes");
}

#[test]
fn criterion_09_lightness_preservation() {
    let fx = fixture();
    let mut net = fx.net.lock().unwrap();
    let mut worst = 0.0f64;
    for truth in &fx.holdout {
        let pred = colorize(&mut net, None, truth, &ColorizeOptions::default()).unwrap();
        worst = worst.max(max_lightness_delta(&pred, truth).unwrap());
    }
    report(
        9,
        "lightness preservation",
        worst <= 2.0,
        &format!("max |dL| over 20 images = {worst:.3}"),
    );
}

#[test]
fn criterion_10_red_mask_detector() {
    let truth_dir = TempDir::new().unwrap();
    let pred_dir = TempDir::new().unwrap();
    for i in 0..8 {
        let truth = chroma_image(48, i as f64 * 0.41);
        let mut lab = rgb_to_lab(&truth);
        for a in lab.a.iter_mut() {
            *a += 10.0;
        }
        save_png(&truth, &truth_dir.path().join(format!("{i}.png")));
        save_png(&lab_to_rgb(&lab), &pred_dir.path().join(format!("{i}.png")));
    }
    let bias = eval_report(pred_dir.path(), truth_dir.path())
        .unwrap()
        .aggregate
        .bias_a;
    report(
        10,
        "red-mask detector",
        (bias - 10.0).abs() <= 0.2,
        &format!("bias_a = {bias:+.3}"),
    );
}

#[test]
fn criterion_11_checkpoint_robustness() {
    let dir = TempDir::new().unwrap();
    let cfg = NetConfig {
        input_size: 16,
        seed: 9,
        ..Default::default()
    };
    let mut net = build_network(&cfg).unwrap();
    init_weights(&mut net, cfg.seed);
    let grid = build_bin_grid(10.0).unwrap();
    let p1 = dir.path().join("a.aclr");
    let p2 = dir.path().join("b.aclr");
    save_checkpoint(&net, Some(&grid), &p1).unwrap();
    let (loaded, loaded_grid) = load_checkpoint(&p1).unwrap();
    save_checkpoint(&loaded, loaded_grid.as_ref(), &p2).unwrap();
    let round_trip = std::fs::read(&p1).unwrap() == std::fs::read(&p2).unwrap();

    let bytes = std::fs::read(&p1).unwrap();
    let write_variant = |name: &str, mutate: &dyn Fn(&mut Vec<u8>)| {
        let mut v = bytes.clone();
        mutate(&mut v);
        let path = dir.path().join(name);
        std::fs::write(&path, v).unwrap();
        path
    };
    let bad_magic = matches!(
        load_checkpoint(&write_variant("magic.aclr", &|v| v[0] = b'X')),
        Err(Error::BadMagic)
    );
    let bad_version = matches!(
        load_checkpoint(&write_variant("ver.aclr", &|v| {
            v[4..8].copy_from_slice(&99u32.to_le_bytes())
        })),
        Err(Error::UnsupportedVersion(99))
    );
    let truncated = matches!(
        load_checkpoint(&write_variant("short.aclr", &|v| {
            v.truncate(v.len() / 2);
        })),
        Err(Error::CorruptCheckpoint(_))
    );
    report(
        11,
        "checkpoint robustness",
        round_trip && bad_magic && bad_version && truncated,
        &format!("round trip {round_trip}, magic {bad_magic}, version {bad_version}, truncation {truncated}"),
    );
}
