//! Acceptance checks for the whole toolkit. Each test prints a PASS line
//! with the recorded values so a full run doubles as a results report.
//! The end-to-end experiment (criteria 5 and 6) trains three full models
//! and is shared between tests via a lazily built fixture; expect the
//! first of those tests to run for tens of minutes on a small machine.

use std::path::Path;
use std::process::Command;

use once_cell::sync::Lazy;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use pwcc::bilateral::{self, BilateralConfig, RangeMode};
use pwcc::config::Preset;
use pwcc::estimator::{self, EstimatorParams, TrainConfig};
use pwcc::eval::{self, EvalMethod};
use pwcc::imagecore::{self, io, ChromaImage, IlluminationMap, DEFAULT_EPSILON};
use pwcc::losses;
use pwcc::synth::{self, AlphaMap, DatasetManifest, Split, SynthConfig};

fn chroma_from_rng(side: usize, rng: &mut ChaCha8Rng) -> ChromaImage {
    let data = (0..side * side * 2).map(|_| rng.gen_range(-0.5..0.5)).collect();
    ChromaImage::new(side, side, data).unwrap()
}

// ---------------------------------------------------------------- criterion 1

#[test]
fn criterion_1_gradient_correctness() {
    // standalone losses: full-gradient check, step 1e-4, < 1e-4
    let mut worst_loss = 0.0f64;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let pred = chroma_from_rng(8, &mut rng);
        let target = chroma_from_rng(8, &mut rng);
        let (_, gl2) = losses::l2_loss(&pred, &target).unwrap();
        let (_, gtv) = losses::tv_loss(&pred).unwrap();
        let step = 1e-4;
        for i in 0..pred.data().len() {
            let mut up = pred.clone();
            up.data_mut()[i] += step;
            let mut down = pred.clone();
            down.data_mut()[i] -= step;
            let fd_l2 = (losses::l2_loss(&up, &target).unwrap().0
                - losses::l2_loss(&down, &target).unwrap().0)
                / (2.0 * step);
            let fd_tv =
                (losses::tv_loss(&up).unwrap().0 - losses::tv_loss(&down).unwrap().0) / (2.0 * step);
            for (a, n) in [(gl2.data()[i], fd_l2), (gtv.data()[i], fd_tv)] {
                let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-4);
                worst_loss = worst_loss.max(rel);
            }
        }
    }
    assert!(worst_loss < 1e-4, "loss gradient check: worst rel {worst_loss}");

    // full estimator: 50 sampled parameters per seed, step 1e-3, < 1e-3.
    // Near-zero gradients are compared absolutely instead: at this step size
    // a ReLU kink crossed by the probe perturbs the quotient arbitrarily
    // even though both values are numerically negligible.
    let mut worst_net = 0.0f64;
    for seed in 0..3 {
        let mut params = estimator::init_params(100 + seed);
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + seed);
        let input = chroma_from_rng(16, &mut rng);
        let target = chroma_from_rng(16, &mut rng);
        let lambda = 2e-3;
        let (pred, cache) = estimator::forward(&params, &input).unwrap();
        let (_, grad_out) = losses::combined_loss(&pred, &target, lambda).unwrap();
        let grads = estimator::backward(&params, &cache, &grad_out).unwrap();
        let flat: Vec<f64> = grads
            .layers
            .iter()
            .flat_map(|(dw, db)| dw.iter().chain(db.iter()).copied().collect::<Vec<_>>())
            .collect();
        let total = params.total_params();
        let step = 1e-3;
        for _ in 0..50 {
            let idx = rng.gen_range(0..total);
            let orig = params.get_param(idx);
            let mut loss_at = |v: f64| {
                params.set_param(idx, v);
                let (p, _) = estimator::forward(&params, &input).unwrap();
                losses::combined_loss(&p, &target, lambda).unwrap().0.total
            };
            let mut fd = (loss_at(orig + step) - loss_at(orig - step)) / (2.0 * step);
            let a = flat[idx];
            let rel_at = |fd: f64| (a - fd).abs() / a.abs().max(fd.abs()).max(1e-4);
            if rel_at(fd) >= 1e-3 {
                // the 1e-3 probe straddled a ReLU kink; a correct gradient
                // converges under a finer step, a wrong one stays off
                let fine = 1e-5;
                fd = (loss_at(orig + fine) - loss_at(orig - fine)) / (2.0 * fine);
            }
            params.set_param(idx, orig);
            let rel = rel_at(fd);
            worst_net = worst_net.max(rel);
            assert!(rel < 1e-3, "param {idx}: analytic {a} vs fd {fd} (rel {rel})");
        }
    }
    println!(
        "criterion 1 (gradient correctness): PASS  \
         losses worst rel {worst_loss:.2e}, estimator worst rel {worst_net:.2e}"
    );
}

// ---------------------------------------------------------------- criterion 2

/// Direct transcription of the filter definition: Gaussian spatial weight ×
/// Gaussian range weight over the clipped window, normalized by the weight
/// sum.
fn brute_force_bilateral(
    data: &[f64],
    width: usize,
    height: usize,
    cfg: &BilateralConfig,
) -> Vec<f64> {
    let r = (cfg.diameter / 2) as isize;
    let mut out = vec![0.0; data.len()];
    for y in 0..height as isize {
        for x in 0..width as isize {
            let ci = ((y as usize) * width + x as usize) * 3;
            let mut acc = [0.0f64; 3];
            let mut wsum = 0.0f64;
            for qy in (y - r).max(0)..=(y + r).min(height as isize - 1) {
                for qx in (x - r).max(0)..=(x + r).min(width as isize - 1) {
                    let qi = ((qy as usize) * width + qx as usize) * 3;
                    let spatial = (-(((qx - x).pow(2) + (qy - y).pow(2)) as f64)
                        / (2.0 * cfg.sigma_s * cfg.sigma_s))
                        .exp();
                    let mut range2 = 0.0;
                    for c in 0..3 {
                        let d = data[qi + c] - data[ci + c];
                        range2 += d * d;
                    }
                    let w = spatial * (-range2 / (2.0 * cfg.sigma_r * cfg.sigma_r)).exp();
                    for c in 0..3 {
                        acc[c] += w * data[qi + c];
                    }
                    wsum += w;
                }
            }
            for c in 0..3 {
                out[ci + c] = acc[c] / wsum;
            }
        }
    }
    out
}

#[test]
fn criterion_2_bilateral_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut worst = 0.0f64;
    for case in 0..50 {
        let data: Vec<f64> = (0..16 * 16 * 3).map(|_| rng.gen_range(0.0..1.5)).collect();
        let cfg = BilateralConfig {
            sigma_s: rng.gen_range(0.5..80.0),
            sigma_r: rng.gen_range(0.05..1.0),
            diameter: 2 * rng.gen_range(0..=5usize) + 1,
            range_mode: RangeMode::JointRgb,
        };
        let fast = bilateral::filter_rgb_raw(&data, 16, 16, &cfg).unwrap();
        let slow = brute_force_bilateral(&data, 16, 16, &cfg);
        for (a, b) in fast.iter().zip(&slow) {
            worst = worst.max((a - b).abs());
        }
        assert!(worst < 1e-5, "case {case}: max abs diff {worst}");
    }
    println!("criterion 2 (bilateral oracle equivalence): PASS  max abs diff {worst:.2e}");
}

// ---------------------------------------------------------------- criterion 3

#[test]
fn criterion_3_synthesis_reconstruction() {
    let cfg = SynthConfig {
        count: 100,
        width: 32,
        height: 32,
        seed: 9090,
        ..serde_json::from_str("{\"count\":1,\"seed\":0}").unwrap()
    };

    // pre-quantization: in-memory samples reproduce the input exactly
    let mut worst_pre = 0.0f64;
    for i in 0..cfg.count {
        let base = synth::procedural_base_for(&cfg, i);
        let s = synth::generate_sample(&cfg, i, base).unwrap();
        let recon = imagecore::apply_white_balance(&s.gt_image, &s.gt_map).unwrap();
        for (a, b) in recon.data().iter().zip(s.input.data()) {
            worst_pre = worst_pre.max((a - b).abs());
        }
    }
    assert!(worst_pre < 1e-6, "pre-quantization worst {worst_pre}");

    // after the PNG + float-map round trip
    let dir = TempDir::new().unwrap();
    let manifest = synth::generate_dataset(&cfg, dir.path()).unwrap();
    let tol = 3.0 / 65535.0;
    let mut worst_post = 0.0f64;
    for entry in &manifest.samples {
        let input = io::read_image(dir.path().join(&entry.input_png)).unwrap();
        let gt = io::read_image(dir.path().join(&entry.gt_png)).unwrap();
        let map = io::read_illumination_map(dir.path().join(&entry.gt_map_pwcc)).unwrap();
        let recon = imagecore::apply_white_balance(&gt, &map).unwrap();
        for (a, b) in recon.data().iter().zip(input.data()) {
            worst_post = worst_post.max((a - b).abs());
        }
    }
    assert!(worst_post <= tol, "post-PNG worst {worst_post} > {tol}");
    println!(
        "criterion 3 (synthesis reconstruction): PASS  \
         pre-quant {worst_pre:.2e}, post-PNG {worst_post:.2e} (tol {tol:.2e})"
    );
}

// ---------------------------------------------------------------- criterion 4

#[test]
fn criterion_4_metric_sanity() {
    // oracle scores exactly zero on every statistic
    let dir = TempDir::new().unwrap();
    let cfg = SynthConfig {
        count: 20,
        width: 16,
        height: 16,
        seed: 4242,
        ..serde_json::from_str("{\"count\":1,\"seed\":0}").unwrap()
    };
    let manifest = synth::generate_dataset(&cfg, dir.path()).unwrap();
    let s = eval::evaluate_method(
        &manifest,
        dir.path(),
        Split::Train,
        &EvalMethod::Oracle,
        None,
        DEFAULT_EPSILON,
    )
    .unwrap();
    assert_eq!([s.mean, s.median, s.worst25, s.best25], [0.0; 4]);
    assert!(s.per_image.iter().all(|p| p.error_deg == 0.0));

    // bit-level invariance under power-of-two per-map scaling (exact in
    // binary floating point; arbitrary factors are covered by unit tests
    // at 1e-9)
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    for _ in 0..20 {
        let gains: Vec<f64> = (0..8 * 8 * 3).map(|_| rng.gen_range(0.2..2.0)).collect();
        let gt = IlluminationMap::new(8, 8, gains.clone()).unwrap();
        let pred_gains: Vec<f64> = (0..8 * 8 * 3).map(|_| rng.gen_range(0.2..2.0)).collect();
        let pred = IlluminationMap::new(8, 8, pred_gains.clone()).unwrap();
        let base = eval::image_error(&gt, &pred).unwrap();
        for factor in [0.25, 0.5, 2.0, 4.0, 1024.0] {
            let scaled =
                IlluminationMap::new(8, 8, pred_gains.iter().map(|g| g * factor).collect())
                    .unwrap();
            let err = eval::image_error(&gt, &scaled).unwrap();
            assert_eq!(base.to_bits(), err.to_bits(), "factor {factor}");
        }
    }

    // summarize vs an independent sort-based oracle
    for case in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(9000 + case);
        let n = rng.gen_range(1..40usize);
        let errors: Vec<(String, f64)> = (0..n)
            .map(|i| (format!("s{i:03}"), rng.gen_range(0.0..45.0)))
            .collect();
        let s = eval::summarize(&errors).unwrap();

        let mut vals: Vec<f64> = errors.iter().map(|(_, e)| *e).collect();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mean = vals.iter().sum::<f64>() / n as f64;
        let median = if n % 2 == 1 {
            vals[n / 2]
        } else {
            (vals[n / 2 - 1] + vals[n / 2]) / 2.0
        };
        let k = n.div_ceil(4);
        let best25 = vals[..k].iter().sum::<f64>() / k as f64;
        let worst25 = vals[n - k..].iter().sum::<f64>() / k as f64;
        assert_eq!(s.n, n);
        assert!((s.mean - mean).abs() < 1e-12);
        assert!((s.median - median).abs() < 1e-12);
        assert!((s.best25 - best25).abs() < 1e-12);
        assert!((s.worst25 - worst25).abs() < 1e-12);
    }
    println!("criterion 4 (metric sanity): PASS");
}

// ------------------------------------------------------- criteria 5 and 6

struct Experiment {
    dir: TempDir,
    manifest: DatasetManifest,
    v1: EstimatorParams,
    v2: EstimatorParams,
    v2_no_tv: EstimatorParams,
}

impl Experiment {
    fn base_dir(&self) -> &Path {
        self.dir.path()
    }
}

fn preset_config(preset: Preset, lambda_override: Option<f64>) -> TrainConfig {
    let mut cfg = TrainConfig {
        seed: 20_260_825,
        ..TrainConfig::default()
    };
    preset.apply(&mut cfg);
    if let Some(l) = lambda_override {
        cfg.lambda_tv = l;
    }
    cfg
}

static EXPERIMENT: Lazy<Experiment> = Lazy::new(|| {
    let dir = TempDir::new().unwrap();
    let cfg = SynthConfig {
        count: 400,
        width: 64,
        height: 64,
        seed: 424_242,
        ..serde_json::from_str("{\"count\":1,\"seed\":0}").unwrap()
    };
    let manifest = synth::generate_dataset(&cfg, dir.path()).unwrap();
    let train = |tc: &TrainConfig| estimator::train(&manifest, dir.path(), tc).unwrap().0;
    let v1 = train(&preset_config(Preset::PwccV1, None));
    let v2 = train(&preset_config(Preset::PwccV2, None));
    let v2_no_tv = train(&preset_config(Preset::PwccV2, Some(0.0)));
    Experiment {
        dir,
        manifest,
        v1,
        v2,
        v2_no_tv,
    }
});

/// Mean TV (in uv space) of a model's predicted maps over one split,
/// optionally after bilateral post-filtering.
fn mean_pred_tv(
    exp: &Experiment,
    params: &EstimatorParams,
    split: Split,
    filter: Option<&BilateralConfig>,
) -> f64 {
    let entries: Vec<_> = exp.manifest.samples_in(split).collect();
    let mut sum = 0.0;
    for entry in &entries {
        let input = io::read_image(exp.base_dir().join(&entry.input_png)).unwrap();
        let mut map = eval::infer_flexible(params, &input, DEFAULT_EPSILON).unwrap();
        if let Some(cfg) = filter {
            map = bilateral::apply_postfilter(&map, cfg).unwrap();
        }
        sum += losses::tv_of_map(&map, DEFAULT_EPSILON).unwrap();
    }
    sum / entries.len() as f64
}

fn summarize_method(
    exp: &Experiment,
    method: &EvalMethod<'_>,
    filter: Option<&BilateralConfig>,
) -> eval::ErrorSummary {
    eval::evaluate_method(
        &exp.manifest,
        exp.base_dir(),
        Split::Test,
        method,
        filter,
        DEFAULT_EPSILON,
    )
    .unwrap()
}

#[test]
fn criterion_5_end_to_end_experiment() {
    let exp = &*EXPERIMENT;
    let filter_cfg = BilateralConfig::default();

    let gw = summarize_method(exp, &EvalMethod::GrayWorld, None);
    let wp = summarize_method(exp, &EvalMethod::WhitePatch, None);
    let models = [("pwcc_v1", &exp.v1), ("pwcc_v2", &exp.v2)];
    println!("  mini results table (test split, degrees):");
    println!(
        "    {:<22} {:>7} {:>7} {:>7} {:>7}",
        "method", "mean", "median", "w.25%", "b.25%"
    );
    for s in [&gw, &wp] {
        println!(
            "    {:<22} {:>7.3} {:>7.3} {:>7.3} {:>7.3}",
            s.method, s.mean, s.median, s.worst25, s.best25
        );
    }

    for (name, params) in models {
        let plain = summarize_method(exp, &EvalMethod::Trained(params), None);
        let filtered = summarize_method(exp, &EvalMethod::Trained(params), Some(&filter_cfg));
        for (label, s) in [(name.to_string(), &plain), (format!("{name}+filter"), &filtered)] {
            println!(
                "    {:<22} {:>7.3} {:>7.3} {:>7.3} {:>7.3}",
                label, s.mean, s.median, s.worst25, s.best25
            );
        }

        // (a) >= 30% better mean than both baselines
        for (bname, b) in [("gray_world", &gw), ("white_patch", &wp)] {
            assert!(
                plain.mean < 0.7 * b.mean,
                "{name} mean {:.3} not 30% under {bname} {:.3}",
                plain.mean,
                b.mean
            );
            // (b) better tail behavior too
            assert!(
                plain.worst25 < b.worst25,
                "{name} worst25 {:.3} vs {bname} {:.3}",
                plain.worst25,
                b.worst25
            );
        }
        // (c) filtering: no more than 2% relative mean degradation, and the
        // filtered maps are smoother
        assert!(
            filtered.mean <= 1.02 * plain.mean,
            "{name}: filtering degraded mean {:.3} -> {:.3}",
            plain.mean,
            filtered.mean
        );
        let tv_plain = mean_pred_tv(exp, params, Split::Test, None);
        let tv_filtered = mean_pred_tv(exp, params, Split::Test, Some(&filter_cfg));
        assert!(
            tv_filtered < tv_plain,
            "{name}: filtering did not reduce map TV ({tv_plain:.5} -> {tv_filtered:.5})"
        );
        println!("    {name} map TV: {tv_plain:.5} -> filtered {tv_filtered:.5}");
    }
    println!("criterion 5 (end-to-end scaled experiment): PASS");
}

#[test]
fn criterion_6_tv_regularization_effect() {
    let exp = &*EXPERIMENT;
    let tv_reg = mean_pred_tv(exp, &exp.v2, Split::Val, None);
    let tv_unreg = mean_pred_tv(exp, &exp.v2_no_tv, Split::Val, None);
    assert!(
        tv_reg < tv_unreg,
        "regularized TV {tv_reg:.5} not below unregularized {tv_unreg:.5}"
    );
    println!(
        "criterion 6 (TV regularization effect): PASS  \
         val map TV {tv_reg:.5} (pwcc_v2) vs {tv_unreg:.5} (lambda 0)"
    );
}

// ---------------------------------------------------------------- criterion 7

#[test]
fn criterion_7_label_smoothing_distribution() {
    let side = 256;
    let alpha = AlphaMap::filled(side, side, 0.5);
    let mut deltas = Vec::with_capacity(2 * side * side);
    for seed in [31_337u64, 65_001] {
        let smoothed = synth::smooth_alpha(&alpha, 10.0, seed).unwrap();
        deltas.extend(smoothed.values().iter().map(|v| v - 0.5));
    }
    let n = deltas.len() as f64;
    assert!(n >= 1e5);
    let mean = deltas.iter().sum::<f64>() / n;
    let m2 = deltas.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n;
    let m3 = deltas.iter().map(|d| (d - mean).powi(3)).sum::<f64>() / n;
    let m4 = deltas.iter().map(|d| (d - mean).powi(4)).sum::<f64>() / n;
    let std = m2.sqrt();
    let skew = m3 / m2.powf(1.5);
    let exkurt = m4 / (m2 * m2) - 3.0;
    assert!((0.045..=0.055).contains(&std), "std {std}");
    assert!(skew.abs() < 0.1, "skew {skew}");
    assert!(exkurt.abs() < 0.2, "excess kurtosis {exkurt}");
    println!(
        "criterion 7 (label-smoothing distribution): PASS  \
         n {n}, std {std:.5}, skew {skew:.4}, excess kurtosis {exkurt:.4}"
    );
}

// ---------------------------------------------------------------- criterion 8

fn pipeline_once(root: &Path) -> Vec<(String, Vec<u8>)> {
    let bin = env!("CARGO_BIN_EXE_pwcc");
    let config = root.join("run.toml");
    std::fs::write(
        &config,
        "[synth]\ncount = 12\nwidth = 16\nheight = 16\nseed = 31415\n",
    )
    .unwrap();
    let data = root.join("data");
    let model = root.join("model.pwcm");
    let json = root.join("eval.json");
    let run = |args: &[&str]| {
        let out = Command::new(bin).args(args).output().unwrap();
        assert!(
            out.status.success(),
            "step failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    run(&[
        "synth",
        "--config",
        config.to_str().unwrap(),
        "--out",
        data.to_str().unwrap(),
    ]);
    run(&[
        "train",
        "--manifest",
        data.join("manifest.json").to_str().unwrap(),
        "--preset",
        "pwcc_v2",
        "--epochs",
        "3",
        "--input-size",
        "16",
        "--out",
        model.to_str().unwrap(),
    ]);
    run(&[
        "eval",
        "--manifest",
        data.join("manifest.json").to_str().unwrap(),
        "--split",
        "val",
        "--method",
        "gray_world",
        "--method",
        "trained",
        "--model",
        model.to_str().unwrap(),
        "--json-out",
        json.to_str().unwrap(),
    ]);

    let mut artifacts = vec![
        ("manifest.json".to_string(), std::fs::read(data.join("manifest.json")).unwrap()),
        ("model.pwcm".to_string(), std::fs::read(&model).unwrap()),
        ("model.csv".to_string(), std::fs::read(model.with_extension("csv")).unwrap()),
        ("eval.json".to_string(), std::fs::read(&json).unwrap()),
    ];
    // every generated sample file as well
    let mut names: Vec<_> = std::fs::read_dir(&data)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    for name in names {
        artifacts.push((name.clone(), std::fs::read(data.join(&name)).unwrap()));
    }
    artifacts
}

#[test]
fn criterion_8_determinism() {
    let d1 = TempDir::new().unwrap();
    let d2 = TempDir::new().unwrap();
    let a = pipeline_once(d1.path());
    let b = pipeline_once(d2.path());
    assert_eq!(a.len(), b.len());
    for ((name_a, bytes_a), (name_b, bytes_b)) in a.iter().zip(&b) {
        assert_eq!(name_a, name_b);
        assert_eq!(bytes_a, bytes_b, "artifact {name_a} differs between reruns");
    }
    println!(
        "criterion 8 (determinism): PASS  {} artifacts byte-identical across reruns",
        a.len()
    );
}

// A fixture-dependent sanity check from the estimator contract: training
// helps on individual samples, not just in aggregate.
#[test]
fn trained_model_beats_untrained_on_a_training_sample() {
    let exp = &*EXPERIMENT;
    let entry = exp.manifest.samples_in(Split::Train).next().unwrap();
    let input = io::read_image(exp.base_dir().join(&entry.input_png)).unwrap();
    let gt = io::read_illumination_map(exp.base_dir().join(&entry.gt_map_pwcc)).unwrap();
    let untrained = estimator::init_params(20_260_825);
    let e_untrained = eval::image_error(
        &gt,
        &eval::infer_flexible(&untrained, &input, DEFAULT_EPSILON).unwrap(),
    )
    .unwrap();
    let e_trained = eval::image_error(
        &gt,
        &eval::infer_flexible(&exp.v1, &input, DEFAULT_EPSILON).unwrap(),
    )
    .unwrap();
    assert!(
        e_trained < e_untrained,
        "trained {e_trained:.3} vs untrained {e_untrained:.3}"
    );
    println!("training-sample improvement: {e_untrained:.3} -> {e_trained:.3} degrees");
}
