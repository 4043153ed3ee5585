//! Drives the `mvboost` binary on a tiny configuration.

use mvboost::artifacts::{entry_dir, DatasetManifest, MANIFEST};
use mvboost::formats::{load_base, read_png, read_scene, save_base, write_png};
use mvboost::Config;
use mvboost_core::pipeline::scene_stages_for;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

const TINY: &str = r#"
version = 1
seed = 7

[rig]
resolution = 32

[scenes]
count = 3

[model]
d_model = 16
layers = 1
heads = 2
patch = 8

[lora]
rank = 2
alpha = 2.0

[loss]
perceptual_resolution = 16

[pretrain]
steps = 3
scene_pool = 2

[boost]
steps = 3

[eval]
count = 2
orbit_views = 4
point_samples = 200
perceptual_resolution = 16

[ablation]
strengths = [0.0, 0.5, 0.95]

[view_opt]
azimuth_step = 45.0
elevations = [0.0]
iters = 5
perceptual_resolution = 16
"#;

fn mvboost(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mvboost"));
    for a in args {
        cmd.arg(a);
    }
    cmd.output().expect("binary runs")
}

#[track_caller]
fn ok(out: Output) -> String {
    assert!(out.status.success(), "exit {:?}\nstderr: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[track_caller]
fn fails_with(out: Output, code: i32) -> String {
    assert_eq!(out.status.code(), Some(code), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stderr).unwrap()
}

/// Config, base checkpoint, train and eval scene sets and a refined dataset,
/// built once per test binary.
struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: PathBuf,
    base: PathBuf,
    train: PathBuf,
    eval: PathBuf,
    dataset: PathBuf,
    lora: PathBuf,
}

fn fixture() -> &'static Fixture {
    static FIX: OnceLock<Fixture> = OnceLock::new();
    FIX.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let config = root.join("tiny.toml");
        fs::write(&config, TINY).unwrap();
        let (base, train, eval, dataset, lora) =
            (root.join("base.ckpt"), root.join("train"), root.join("eval"), root.join("dataset"), root.join("lora.ckpt"));
        ok(mvboost(&[&"pretrain-base", &"--config", &config, &"--out", &base]));
        ok(mvboost(&[&"gen-scenes", &"--config", &config, &"--out", &train]));
        ok(mvboost(&[&"gen-scenes", &"--config", &config, &"--set", &"eval", &"--out", &eval]));
        ok(mvboost(&[&"build-dataset", &"--config", &config, &"--scenes", &train, &"--base", &base, &"--out", &dataset]));
        ok(mvboost(&[&"train", &"--config", &config, &"--dataset", &dataset, &"--base", &base, &"--out", &lora]));
        Fixture { _dir: dir, root, config, base, train, eval, dataset, lora }
    })
}

fn scratch() -> tempfile::TempDir {
    tempfile::tempdir().unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn gen_scenes_is_complete_and_reproducible() {
    let f = fixture();
    let tmp = scratch();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        ok(mvboost(&[&"gen-scenes", &"--config", &f.config, &"--count", &"5", &"--out", out]));
    }
    let listing = files(&a);
    assert_eq!(listing.iter().filter(|(n, _)| n.ends_with(".mvbgs")).count(), 5);
    assert_eq!(listing.iter().filter(|(n, _)| n.ends_with(".png")).count(), 30);
    assert!(listing.iter().any(|(n, _)| n == MANIFEST));
    assert_eq!(listing, files(&b));
    let scene = read_scene(&a.join("scene_001000.mvbgs")).unwrap();
    assert!(!scene.is_empty());
}

#[test]
fn outputs_are_not_clobbered_without_force() {
    let f = fixture();
    let tmp = scratch();
    let out = tmp.path().join("s");
    ok(mvboost(&[&"gen-scenes", &"--config", &f.config, &"--count", &"1", &"--out", &out]));
    let err = fails_with(mvboost(&[&"gen-scenes", &"--config", &f.config, &"--count", &"1", &"--out", &out]), 3);
    assert!(err.contains("--force"), "{err}");
    ok(mvboost(&[&"gen-scenes", &"--config", &f.config, &"--count", &"2", &"--out", &out, &"--force"]));
    assert_eq!(files(&out).iter().filter(|(n, _)| n.ends_with(".mvbgs")).count(), 2);
}

#[test]
fn unknown_config_key_is_a_config_error_naming_it() {
    let tmp = scratch();
    let cfg = tmp.path().join("bad.toml");
    fs::write(&cfg, "[rig]\nresolutoin = 32\n").unwrap();
    let err = fails_with(mvboost(&[&"gen-scenes", &"--config", &cfg, &"--out", &tmp.path().join("o")]), 2);
    assert!(err.contains("resolutoin"), "{err}");
    fs::write(&cfg, "[diffusion]\nstrength = 1.5\n").unwrap();
    fails_with(mvboost(&[&"gen-scenes", &"--config", &cfg, &"--out", &tmp.path().join("o")]), 2);
}

#[test]
fn missing_inputs_are_data_errors() {
    let f = fixture();
    let tmp = scratch();
    let missing = tmp.path().join("nope.ckpt");
    let err = fails_with(mvboost(&[&"eval", &"--config", &f.config, &"--base", &missing, &"--scenes", &f.eval, &"--out", &tmp.path().join("r")]), 3);
    assert!(err.contains("nope.ckpt"), "{err}");
    let err = fails_with(mvboost(&[&"train", &"--config", &f.config, &"--dataset", &f.train, &"--base", &f.base, &"--out", &tmp.path().join("l")]), 3);
    assert!(err.contains("manifest") || err.contains("dataset"), "{err}");
}

#[test]
fn dataset_manifest_records_config_and_base() {
    let f = fixture();
    let text = fs::read_to_string(f.dataset.join(MANIFEST)).unwrap();
    let m: DatasetManifest = toml::from_str(&text).unwrap();
    let cfg = Config::load(&f.config).unwrap();
    assert_eq!(m.config_hash, cfg.hash());
    assert_eq!(m.scene_ids, vec![1000, 1001, 1002]);
    assert_eq!(m.strength, 0.95);
    let base = load_base(&f.base).unwrap();
    assert_eq!(m.base_fingerprint, format!("{:016x}", base.params.fingerprint()));
    let entry = fs::read_to_string(entry_dir(&f.dataset, 1001).join(MANIFEST)).unwrap();
    assert!(entry.contains("refine_seed") && entry.contains(&cfg.hash()), "{entry}");
}

#[test]
fn interrupted_build_resumes_only_missing_entries() {
    let f = fixture();
    let tmp = scratch();
    let out = tmp.path().join("ds");
    ok(mvboost(&[&"build-dataset", &"--config", &f.config, &"--scenes", &f.train, &"--base", &f.base, &"--out", &out]));
    let kept = fs::read(entry_dir(&out, 1000).join("target_front.png")).unwrap();
    // A build killed mid-entry leaves images but no entry manifest.
    fs::remove_file(entry_dir(&out, 1002).join(MANIFEST)).unwrap();
    fs::remove_file(entry_dir(&out, 1002).join("target_back.png")).unwrap();
    let log = ok(mvboost(&[&"build-dataset", &"--config", &f.config, &"--scenes", &f.train, &"--base", &f.base, &"--out", &out]));
    assert!(log.contains("1 built, 2 reused"), "{log}");
    assert_eq!(fs::read(entry_dir(&out, 1000).join("target_front.png")).unwrap(), kept);
    for id in [1000, 1001, 1002] {
        let a = files(&entry_dir(&out, id));
        assert_eq!(a, files(&entry_dir(&f.dataset, id)), "entry {id}");
    }
}

#[test]
fn zero_strength_targets_are_base_renders() {
    let f = fixture();
    let tmp = scratch();
    let out = tmp.path().join("ds0");
    ok(mvboost(&[&"build-dataset", &"--config", &f.config, &"--scenes", &f.train, &"--base", &f.base, &"--strength", &"0", &"--out", &out]));
    let cfg = Config::load(&f.config).unwrap();
    let params = load_base(&f.base).unwrap().params;
    let gt = read_scene(&f.train.join("scene_001001.mvbgs")).unwrap();
    let stages = scene_stages_for(gt, 1001, &cfg.dataset().unwrap(), &params).unwrap();
    for (pose, img) in stages.renders.views() {
        let quantised = tmp.path().join("r.png");
        write_png(&quantised, img).unwrap();
        let target = read_png(&entry_dir(&out, 1001).join(format!("target_{}.png", pose.label.as_str()))).unwrap();
        assert_eq!(target, read_png(&quantised).unwrap(), "{}", pose.label.as_str());
    }
}

#[test]
fn training_log_is_deterministic() {
    let f = fixture();
    let tmp = scratch();
    let out = tmp.path().join("again.ckpt");
    ok(mvboost(&[&"train", &"--config", &f.config, &"--dataset", &f.dataset, &"--base", &f.base, &"--out", &out]));
    let log = fs::read_to_string(out.with_extension("csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some("step,loss,mse,perceptual"));
    assert_eq!(lines.count(), 3);
    assert_eq!(log, fs::read_to_string(f.lora.with_extension("csv")).unwrap());
    assert_eq!(fs::read(&out).unwrap(), fs::read(&f.lora).unwrap());
    let meta = fs::read_to_string(tmp.path().join("again.csv.meta.toml")).unwrap();
    assert!(meta.contains("command = \"train\""), "{meta}");
}

#[test]
fn training_refuses_a_resolution_mismatch() {
    let f = fixture();
    let tmp = scratch();
    let cfg = tmp.path().join("small.toml");
    fs::write(&cfg, TINY.replace("resolution = 32", "resolution = 16")).unwrap();
    let err = fails_with(mvboost(&[&"train", &"--config", &cfg, &"--dataset", &f.dataset, &"--base", &f.base, &"--out", &tmp.path().join("l.ckpt")]), 2);
    assert!(err.contains("32 px") && err.contains("16 px"), "{err}");
}

#[test]
fn eval_reports_paired_rows_and_summary() {
    let f = fixture();
    let tmp = scratch();
    let out = tmp.path().join("report");
    let printed = ok(mvboost(&[&"eval", &"--config", &f.config, &"--base", &f.base, &"--lora", &f.lora, &"--scenes", &f.eval, &"--out", &out]));
    let read = |name: &str| -> Vec<Vec<String>> {
        let mut r = csv::Reader::from_path(out.join(name)).unwrap();
        assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), ["scene_id", "psnr", "ssim", "perc", "cd", "fscore"]);
        r.records().map(|rec| rec.unwrap().iter().map(String::from).collect()).collect()
    };
    let (base, boosted) = (read("metrics_base.csv"), read("metrics_boosted.csv"));
    assert_eq!(base.len(), 2);
    let ids = |rows: &[Vec<String>]| rows.iter().map(|r| r[0].clone()).collect::<Vec<_>>();
    assert_eq!(ids(&base), ["5000", "5001"]);
    assert_eq!(ids(&base), ids(&boosted));
    let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
    assert_eq!(summary, printed);
    assert!(summary.contains("±") && summary.contains("boosted") && summary.contains("chamfer"), "{summary}");
}

#[derive(serde::Deserialize)]
struct AblationRow {
    strength: f64,
    psnr: f64,
    best: bool,
}

#[test]
fn ablation_flags_the_best_strength() {
    let f = fixture();
    let tmp = scratch();
    let out = tmp.path().join("ablation.csv");
    ok(mvboost(&[&"ablate-strength", &"--config", &f.config, &"--base", &f.base, &"--scenes", &f.eval, &"--out", &out]));
    let mut r = csv::Reader::from_path(&out).unwrap();
    assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), ["strength", "psnr", "ssim", "perc", "best"]);
    let rows: Vec<AblationRow> = r.deserialize().map(|x| x.unwrap()).collect();
    assert_eq!(rows.iter().map(|r| r.strength).collect::<Vec<_>>(), [0.0, 0.5, 0.95]);
    let best: Vec<&AblationRow> = rows.iter().filter(|r| r.best).collect();
    assert_eq!(best.len(), 1);
    assert!(rows.iter().all(|r| r.psnr <= best[0].psnr));
    let custom = tmp.path().join("two.csv");
    ok(mvboost(&[&"ablate-strength", &"--config", &f.config, &"--base", &f.base, &"--scenes", &f.eval, &"--strength", &"0.9,1", &"--out", &custom]));
    assert_eq!(fs::read_to_string(&custom).unwrap().lines().count(), 3);
}

#[test]
fn optimize_view_writes_a_report() {
    let f = fixture();
    let tmp = scratch();
    let out = tmp.path().join("vo");
    let scene = f.eval.join("scene_005000.mvbgs");
    let input = f.eval.join("scene_005000_front.png");
    ok(mvboost(&[&"optimize-view", &"--config", &f.config, &"--base", &f.base, &"--scene", &scene, &"--input", &input, &"--out", &out]));
    for name in ["before.png", "after.png", "optimized.mvbgs", "report.csv", MANIFEST] {
        assert!(out.join(name).exists(), "{name}");
    }
    let mut r = csv::Reader::from_path(out.join("report.csv")).unwrap();
    assert_eq!(r.headers().unwrap().iter().collect::<Vec<_>>(), ["pose_az", "pose_el", "dist_before", "dist_after", "psnr_drift_per_view"]);
    let row = r.records().next().unwrap().unwrap();
    let (before, after): (f64, f64) = (row[2].parse().unwrap(), row[3].parse().unwrap());
    assert!(after <= before, "{before} -> {after}");
    assert_eq!(row[4].split(';').count(), 5, "{}", &row[4]);
    read_scene(&out.join("optimized.mvbgs")).unwrap();
}

#[test]
fn optimize_view_rejects_a_resolution_mismatch() {
    let f = fixture();
    let tmp = scratch();
    let small = tmp.path().join("small.png");
    write_png(&small, &mvboost_core::Image::filled(16, 16, [1.0; 3])).unwrap();
    let scene = f.eval.join("scene_005000.mvbgs");
    let err = fails_with(mvboost(&[&"optimize-view", &"--config", &f.config, &"--base", &f.base, &"--scene", &scene, &"--input", &small, &"--out", &tmp.path().join("vo")]), 3);
    assert!(err.contains("16x16"), "{err}");
}

#[test]
fn adapters_from_another_base_are_rejected() {
    let f = fixture();
    let tmp = scratch();
    let mut other = load_base(&f.base).unwrap();
    other.params.tensors_mut()[0].data_mut()[0] += 1.0;
    let path = tmp.path().join("other.ckpt");
    save_base(&path, &other).unwrap();
    let err = fails_with(mvboost(&[&"dump-splats", &"--config", &f.config, &"--base", &path, &"--lora", &f.lora, &"--scene", &f.eval.join("scene_005001.mvbgs"), &"--out", &tmp.path().join("s.mvbgs")]), 3);
    assert!(err.contains("different base"), "{err}");
}

#[test]
fn non_finite_weights_exit_with_numerical_code() {
    let f = fixture();
    let tmp = scratch();
    let mut broken = load_base(&f.base).unwrap();
    broken.params.tensors_mut()[0].data_mut().iter_mut().for_each(|v| *v = f64::NAN);
    let path = tmp.path().join("nan.ckpt");
    save_base(&path, &broken).unwrap();
    fails_with(mvboost(&[&"dump-splats", &"--config", &f.config, &"--base", &path, &"--scene", &f.eval.join("scene_005001.mvbgs"), &"--out", &tmp.path().join("s.mvbgs")]), 4);
}

#[test]
fn dump_splats_matches_the_reconstruction() {
    let f = fixture();
    let out = f.root.join("dump.mvbgs");
    let printed = ok(mvboost(&[&"dump-splats", &"--config", &f.config, &"--base", &f.base, &"--scene", &f.eval.join("scene_005001.mvbgs"), &"--out", &out]));
    let scene = read_scene(&out).unwrap();
    // 6 views of (32 / 8)² patches, one splat each.
    assert_eq!(scene.len(), 96);
    assert!(printed.contains("96 splats"), "{printed}");
}
