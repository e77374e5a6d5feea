use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gdp_core::image::{add_gaussian_noise, load_image, save_image};
use gdp_core::{quality, synth};
use serde_json::Value;

fn gdp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gdp")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = gdp(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_png(dir: &Path, name: &str, img: &gdp_core::Image) -> PathBuf {
    let path = dir.join(name);
    save_image(img, &path).unwrap();
    path
}

fn sidecar(out: &Path) -> Value {
    let mut s = out.as_os_str().to_owned();
    s.push(".run.json");
    serde_json::from_str(&std::fs::read_to_string(PathBuf::from(s)).unwrap()).unwrap()
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(gdp(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(gdp(&["analyze", "--bogus", "x.png"]).status.code(), Some(1));
    assert_eq!(gdp(&["denoise"]).status.code(), Some(1));
    assert_eq!(gdp(&["--help"]).status.code(), Some(0));
}

#[test]
fn processing_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.png");
    assert_eq!(gdp(&["analyze", "--nf", p(&missing)]).status.code(), Some(2));
    let junk = dir.path().join("junk.png");
    std::fs::write(&junk, b"not an image").unwrap();
    assert_eq!(gdp(&["analyze", "--nf", p(&junk)]).status.code(), Some(2));
}

#[test]
fn noise_injection_needs_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_png(dir.path(), "in.png", &synth::piecewise_smooth(32, 32, 0));
    let out = dir.path().join("out.png");
    let r = gdp(&["denoise", "--add-noise", "0.05", p(&input), p(&out)]);
    assert_eq!(r.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&r.stderr).contains("--seed"));
}

#[test]
fn analyze_prints_nf_and_writes_curves() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_png(dir.path(), "in.png", &synth::dead_leaves(64, 64, 3));
    let nf: f64 = ok(&["analyze", "--nf", p(&input)]).trim().parse().unwrap();
    assert!(nf.is_finite() && nf > 0.0);
    let curves = dir.path().join("curves");
    let summary: Value = serde_json::from_str(&ok(&["analyze", "--curves", p(&curves), p(&input)])).unwrap();
    assert_eq!(summary["n_f"].as_f64().unwrap(), nf);
    for f in ["sparsity.csv", "entropy.csv", "nw.csv", "autocorrelation.csv", "marginals.csv"] {
        let text = std::fs::read_to_string(curves.join(f)).unwrap();
        assert!(text.lines().count() > 2, "{f}");
    }
}

#[test]
fn denoise_auto_improves_psnr_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let clean = synth::piecewise_smooth(96, 96, 2);
    let noisy = add_gaussian_noise(&clean, 0.08, 5);
    let input = write_png(dir.path(), "noisy.png", &noisy);
    let (o1, o2) = (dir.path().join("a.png"), dir.path().join("b.png"));
    let csv = ok(&["denoise", "--lambda", "auto", p(&input), p(&o1)]);
    assert!(csv.starts_with("level,iter,energy,max_update"));
    ok(&["denoise", "--lambda", "auto", p(&input), p(&o2)]);
    let (a, b) = (load_image(&o1).unwrap(), load_image(&o2).unwrap());
    assert_eq!(a, b);
    let before = quality::psnr(&clean, &load_image(&input).unwrap()).unwrap();
    let after = quality::psnr(&clean, &a).unwrap();
    assert!(after > before + 1.0, "{before} -> {after}");
    let rec = sidecar(&o1);
    assert_eq!(rec["command"], "denoise");
    assert!(rec["config"]["sigma_estimate"].as_f64().unwrap() > 0.0);
    assert!(rec["versions"]["gdp_core"].is_string());
    assert!(rec["timings"]["total_s"].as_f64().unwrap() >= 0.0);
}

#[test]
fn config_precedence_flags_over_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = write_png(dir.path(), "in.png", &synth::piecewise_smooth(32, 32, 1));
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"denoise": {"lambda": 0.002, "max_iter": 7, "dt": 0.1}}"#).unwrap();
    let out = dir.path().join("out.png");
    ok(&["--config", p(&cfg), "denoise", "--dt", "0.2", p(&input), p(&out)]);
    let d = &sidecar(&out)["config"]["diffusion"];
    assert_eq!(d["lambda"].as_f64(), Some(0.002));
    assert_eq!(d["max_iter"].as_u64(), Some(7));
    assert_eq!(d["dt"].as_f64(), Some(0.2));
    std::fs::write(&cfg, r#"{"denoise": {"no_such_key": 1}}"#).unwrap();
    assert_eq!(gdp(&["--config", p(&cfg), "denoise", p(&input), p(&out)]).status.code(), Some(1));
}

#[test]
fn naturalize_reports_json() {
    let dir = tempfile::tempdir().unwrap();
    let img = synth::low_contrast(&synth::dead_leaves(64, 64, 4), 0.5);
    let input = write_png(dir.path(), "in.png", &img);
    let out = dir.path().join("out.png");
    let rep: Value = serde_json::from_str(&ok(&["naturalize", "--mode", "nonlinear", p(&input), p(&out)])).unwrap();
    for k in ["n_f_before", "n_f_after", "hellinger_before", "hellinger_after"] {
        assert!(rep[k].is_number(), "{k}");
    }
    assert!(out.exists());
}

#[test]
fn quality_scores() {
    let dir = tempfile::tempdir().unwrap();
    let img = synth::dead_leaves(48, 48, 5);
    let a = write_png(dir.path(), "a.png", &img);
    let b = write_png(dir.path(), "b.png", &add_gaussian_noise(&img, 0.05, 1));
    let same: Value = serde_json::from_str(&ok(&["quality", "--ref", p(&a), p(&a)])).unwrap();
    assert_eq!(same["score"].as_f64(), Some(0.0));
    let diff: Value = serde_json::from_str(&ok(&["quality", "--metric", "l1", "--ref", p(&a), p(&b)])).unwrap();
    assert!(diff["score"].as_f64().unwrap() > 0.0);
    let ps: Value = serde_json::from_str(&ok(&["quality", "--metric", "psnr", "--ref", p(&a), p(&b)])).unwrap();
    assert!(ps["score"].as_f64().unwrap() > 20.0);
    assert_eq!(gdp(&["quality", p(&a)]).status.code(), Some(1));
    assert_eq!(gdp(&["quality", "--metric", "bogus", "--ref", p(&a), p(&b)]).status.code(), Some(1));
}

#[test]
fn learn_fit_and_use_a_prior() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    std::fs::create_dir(&corpus).unwrap();
    for (i, img) in synth::natural_corpus(4, 64, 64, 20).iter().enumerate() {
        write_png(&corpus, &format!("{i}.png"), img);
    }
    std::fs::write(corpus.join("broken.png"), b"xx").unwrap();
    let prior = dir.path().join("prior.json");
    let s: Value = serde_json::from_str(&ok(&["learn-prior", "--out", p(&prior), p(&corpus)])).unwrap();
    assert_eq!(s["images_used"].as_u64(), Some(4));
    assert_eq!(s["skipped"].as_array().unwrap().len(), 1);
    let loaded = gdp_core::prior::PriorBundle::load(&prior).unwrap();
    assert!(!loaded.model_fits.is_empty());

    let fits: Value =
        serde_json::from_str(&ok(&["fit", "--prior", p(&prior), "--family", "model2", "--dims", "1"])).unwrap();
    assert_eq!(fits.as_array().unwrap().len(), 1);
    assert_eq!(fits[0]["family"], "model2");
    assert!(fits[0]["r2"].as_f64().unwrap() > 0.5, "{}", fits[0]);

    let img = write_png(dir.path(), "x.png", &synth::dead_leaves(64, 64, 99));
    let nf: f64 = ok(&["analyze", "--nf", "--prior", p(&prior), p(&img)]).trim().parse().unwrap();
    assert!(nf > 0.2 && nf < 5.0, "{nf}");
}

#[test]
fn deconvolve_zoom_dehaze_run() {
    let dir = tempfile::tempdir().unwrap();
    let sharp = synth::piecewise_smooth(64, 64, 3);
    let k = gdp_core::image::gaussian_kernel(1.0, 2);
    let blurred = gdp_core::image::convolve(&sharp, &k, gdp_core::image::ConvMode::Interior).unwrap();
    let input = write_png(dir.path(), "blur.png", &blurred);
    let (out, kout) = (dir.path().join("deblur.png"), dir.path().join("k.pgm"));
    let rep: Value = serde_json::from_str(&ok(&[
        "deconvolve", "--kernel-size", "5", "--levels", "1", "--max-outer", "5", p(&input), p(&out), "--kernel-out",
        p(&kout),
    ]))
    .unwrap();
    let w: f64 = rep["kernel"]["weights"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).sum();
    assert!((w - 1.0).abs() < 1e-9);
    assert_eq!(load_image(&kout).unwrap().width(), 5);

    let small = write_png(dir.path(), "small.png", &synth::dead_leaves(24, 24, 1));
    let zout = dir.path().join("zoom.png");
    ok(&["zoom", "--factor", "2", "--sigma", "0.8", p(&small), p(&zout)]);
    assert_eq!(load_image(&zout).unwrap().width(), 48);

    let sc = synth::haze_scene(48, 48, 1);
    let hazy = write_png(dir.path(), "hazy.png", &sc.hazy);
    let (dout, tout) = (dir.path().join("dehazed.png"), dir.path().join("t.png"));
    let rep: Value = serde_json::from_str(&ok(&[
        "dehaze", "--lambda", "1e-3", "--alpha", "1", p(&hazy), p(&dout), "--transmission-out", p(&tout),
    ]))
    .unwrap();
    assert!((rep["airlight"].as_f64().unwrap() - sc.airlight).abs() < 0.05);
    assert!(tout.exists());
}

#[test]
fn noise_est_and_calibration() {
    let dir = tempfile::tempdir().unwrap();
    let clean = synth::natural_corpus(3, 64, 64, 40);
    let files: Vec<PathBuf> =
        clean.iter().enumerate().map(|(i, im)| write_png(dir.path(), &format!("c{i}.png"), im)).collect();
    let cal = dir.path().join("cal.json");
    let mut args = vec!["noise-est", "--calibrate-out", p(&cal)];
    args.extend(files.iter().map(|f| p(f)));
    assert_eq!(gdp(&args).status.code(), Some(1));
    let mut seeded = vec!["--seed", "3"];
    seeded.extend(&args);
    ok(&seeded);
    assert!(cal.exists());

    let noisy = write_png(dir.path(), "n.png", &add_gaussian_noise(&clean[0], 0.1, 9));
    let rows: Value = serde_json::from_str(&ok(&["noise-est", "--calibration", p(&cal), p(&noisy)])).unwrap();
    let s = rows[0]["sigma"].as_f64().unwrap();
    assert!((s - 0.1).abs() < 0.05, "{s}");
}
