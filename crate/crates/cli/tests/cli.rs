//! Command-level behaviour of the `motf` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const SMALL_MODEL: &str = r#"{
  "forecaster": {"q": 10, "hidden": 8, "embed_dim": 4, "feature_dim": 8},
  "training": {"epochs": 2, "batch_size": 16}
}"#;

fn motf(args: &[&dyn AsRef<std::ffi::OsStr>]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_motf"))
        .args(args.iter().map(|a| a.as_ref()))
        .output()
        .expect("spawn motf")
}

fn ok(out: Output) -> Output {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn error_of(out: &Output, code: i32) -> Value {
    assert_eq!(out.status.code(), Some(code), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stderr).expect("stderr is one JSON object")
}

fn json(path: PathBuf) -> Value {
    serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap()
}

fn simulate(root: &Path, suite: &str, seed: Option<u64>) -> PathBuf {
    let dir = root.join(format!("{suite}-{}", seed.map_or("pinned".into(), |s| s.to_string())));
    let seed_s = seed.map(|s| s.to_string());
    let mut args: Vec<&dyn AsRef<std::ffi::OsStr>> = vec![&"simulate", &"--suite", &suite, &"--out", &dir];
    if let Some(s) = &seed_s {
        args.extend([&"--seed" as &dyn AsRef<std::ffi::OsStr>, s]);
    }
    ok(motf(&args));
    dir
}

fn small_config(root: &Path) -> PathBuf {
    let path = root.join("small.json");
    fs::write(&path, SMALL_MODEL).unwrap();
    path
}

#[test]
fn simulate_writes_four_deterministic_files() {
    let tmp = TempDir::new().unwrap();
    let a = simulate(tmp.path(), "linear-clean", None);
    let b = tmp.path().join("again");
    ok(motf(&[&"simulate", &"--suite", &"linear-clean", &"--out", &b]));
    for f in ["gt.txt", "det.txt", "emb.csv", "scene.json"] {
        let x = fs::read(a.join(f)).unwrap();
        assert!(!x.is_empty(), "{f}");
        assert_eq!(x, fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn unknown_suite_lists_valid_names() {
    let tmp = TempDir::new().unwrap();
    let err = error_of(&motf(&[&"simulate", &"--suite", &"bogus", &"--out", &tmp.path()]), 1);
    let msg = err["error"]["message"].as_str().unwrap();
    for name in ["linear-clean", "nonlinear-clean", "occlusion-20", "crowded-noisy"] {
        assert!(msg.contains(name), "{msg}");
    }
    assert_eq!(err["error"]["kind"], "validation");
}

#[test]
fn output_dir_can_come_from_environment() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("env-out");
    let status = Command::new(env!("CARGO_BIN_EXE_motf"))
        .args(["simulate", "--suite", "linear-clean"])
        .env("MOTF_OUT", &out)
        .status()
        .unwrap();
    assert!(status.success());
    assert!(out.join("gt.txt").exists());
}

#[test]
fn learned_without_params_fails_before_processing() {
    let tmp = TempDir::new().unwrap();
    let scene = simulate(tmp.path(), "linear-clean", None);
    let out = tmp.path().join("track");
    let err = error_of(
        &motf(&[&"track", &"--det", &scene.join("det.txt"), &"--predictor", &"learned", &"--out", &out]),
        1,
    );
    assert!(err["error"]["message"].as_str().unwrap().contains("--params"));
    assert!(!out.join("results.txt").exists());
}

#[test]
fn all_stages_off_is_rejected() {
    let tmp = TempDir::new().unwrap();
    let scene = simulate(tmp.path(), "linear-clean", None);
    let out = motf(&[
        &"track",
        &"--det",
        &scene.join("det.txt"),
        &"--no-fusion",
        &"--no-iou",
        &"--no-occlusion",
        &"--out",
        &tmp.path().join("t"),
    ]);
    error_of(&out, 1);
}

#[test]
fn missing_input_is_a_runtime_error() {
    let tmp = TempDir::new().unwrap();
    let out = motf(&[&"track", &"--det", &tmp.path().join("nope.txt"), &"--out", &tmp.path().join("t")]);
    assert_eq!(error_of(&out, 2)["error"]["kind"], "runtime");
}

#[test]
fn help_documents_defaults() {
    for args in [vec!["--help"], vec!["track", "--help"], vec!["train-forecaster", "--help"]] {
        let out = ok(Command::new(env!("CARGO_BIN_EXE_motf")).args(&args).output().unwrap());
        let text = String::from_utf8(out.stdout).unwrap();
        for key in ["\"lambda_fuse\": 0.75", "\"l_fuse\": 10", "\"max_lost\": 30", "\"p\": 10", "\"q\": 60"] {
            assert!(text.contains(key), "{args:?} missing {key}");
        }
    }
}

#[test]
fn cv_tracking_on_linear_clean_has_no_switches() {
    let tmp = TempDir::new().unwrap();
    let scene = simulate(tmp.path(), "linear-clean", None);
    let t = tmp.path().join("track");
    ok(motf(&[&"track", &"--det", &scene.join("det.txt"), &"--emb", &scene.join("emb.csv"), &"--out", &t]));
    let e = tmp.path().join("eval");
    ok(motf(&[&"evaluate", &"--gt", &scene.join("gt.txt"), &"--res", &t.join("results.txt"), &"--out", &e]));
    let r = json(e.join("tracking_report.json"));
    assert_eq!(r["id_switches"], 0);
    assert_eq!(r["fp"], 0);
    assert!(fs::read_to_string(e.join("tracking_report.csv")).unwrap().lines().count() == 2);
    assert!(t.join("config.json").exists());
}

#[test]
fn stage_match_counts_sum_to_total() {
    let tmp = TempDir::new().unwrap();
    let scene = simulate(tmp.path(), "occlusion-20", None);
    let t = tmp.path().join("track");
    ok(motf(&[
        &"track",
        &"--det",
        &scene.join("det.txt"),
        &"--emb",
        &scene.join("emb.csv"),
        &"--predictor",
        &"kalman",
        &"--out",
        &t,
    ]));
    let s = json(t.join("stats.json"));
    let stage1 = s["stage1_matches"].as_u64().unwrap();
    let stage2 = s["stage2_matches"].as_u64().unwrap();
    assert!(stage1 > 0 && stage2 > 0, "{s}");
    assert_eq!(stage1 + stage2, s["total_matches"].as_u64().unwrap());
    assert!(s["forecast_kept"].as_u64().unwrap() > 0);
}

#[test]
fn evaluate_gt_against_itself_is_perfect() {
    let tmp = TempDir::new().unwrap();
    let scene = simulate(tmp.path(), "crowded-noisy", None);
    let gt = scene.join("gt.txt");
    let e = tmp.path().join("eval");
    ok(motf(&[&"evaluate", &"--gt", &gt, &"--res", &gt, &"--out", &e]));
    let r = json(e.join("tracking_report.json"));
    assert_eq!((r["mota"].as_f64(), r["idf1"].as_f64(), r["id_switches"].as_u64()), (Some(1.0), Some(1.0), Some(0)));
}

#[test]
fn evaluate_rejects_results_past_the_last_gt_frame() {
    let tmp = TempDir::new().unwrap();
    let gt = tmp.path().join("gt.txt");
    let res = tmp.path().join("res.txt");
    fs::write(&gt, "1,1,10,10,5,5,1,-1,-1,-1\n").unwrap();
    fs::write(&res, "1,1,10,10,5,5,1,-1,-1,-1\n9,1,10,10,5,5,1,-1,-1,-1\n").unwrap();
    error_of(&motf(&[&"evaluate", &"--gt", &gt, &"--res", &res, &"--out", &tmp.path().join("e")]), 1);
}

#[test]
fn forecast_eval_baselines() {
    let tmp = TempDir::new().unwrap();
    let linear = simulate(tmp.path(), "linear-clean", None);
    let e = tmp.path().join("cv");
    ok(motf(&[&"forecast-eval", &"--gt", &linear.join("gt.txt"), &"--predictor", &"cv", &"--out", &e]));
    let r = json(e.join("forecast_report.json"));
    assert!(r["ade"].as_f64().unwrap() < 1e-6, "{r}");
    assert!(r["sample_count"].as_u64().unwrap() > 0);

    let nonlinear = simulate(tmp.path(), "nonlinear-clean", None);
    for p in ["cv", "kalman"] {
        let e = tmp.path().join(format!("nl-{p}"));
        ok(motf(&[&"forecast-eval", &"--gt", &nonlinear.join("gt.txt"), &"--predictor", &p, &"--out", &e]));
        let r = json(e.join("forecast_report.json"));
        for k in ["ade", "fde", "aiou", "fiou"] {
            assert!(r[k].as_f64().unwrap().is_finite(), "{p} {k}");
        }
    }
}

#[test]
fn training_is_deterministic_and_logs_every_epoch() {
    let tmp = TempDir::new().unwrap();
    let scene = simulate(tmp.path(), "nonlinear-clean", Some(7));
    let cfg = small_config(tmp.path());
    let mut digests = Vec::new();
    for run in ["a", "b"] {
        let out = tmp.path().join(run);
        ok(motf(&[&"train-forecaster", &"--config", &cfg, &"--gt", &scene.join("gt.txt"), &"--out", &out]));
        let loss = fs::read_to_string(out.join("loss.csv")).unwrap();
        assert_eq!(loss.lines().count(), 1 + 2, "{loss}");
        digests.push(json(out.join("summary.json"))["checkpoint_sha256"].clone());
        assert!(out.join("forecaster.json").exists());
    }
    assert_eq!(digests[0], digests[1]);
}

#[test]
fn training_needs_tracks_of_three_boxes() {
    let tmp = TempDir::new().unwrap();
    let gt = tmp.path().join("gt.txt");
    fs::write(&gt, "1,1,10,10,5,5,1,-1,-1,-1\n2,1,11,10,5,5,1,-1,-1,-1\n1,2,50,10,5,5,1,-1,-1,-1\n").unwrap();
    let err = error_of(&motf(&[&"train-forecaster", &"--gt", &gt, &"--out", &tmp.path().join("m")]), 1);
    assert!(err["error"]["message"].as_str().unwrap().contains("shorter than 3"));
}

#[test]
fn ablate_emits_both_tables() {
    let tmp = TempDir::new().unwrap();
    let scene = simulate(tmp.path(), "nonlinear-clean", Some(8));
    let model = tmp.path().join("model");
    let cfg = small_config(tmp.path());
    ok(motf(&[&"train-forecaster", &"--config", &cfg, &"--gt", &scene.join("gt.txt"), &"--out", &model]));
    let out = tmp.path().join("ablate");
    ok(motf(&[
        &"ablate",
        &"--params",
        &model.join("forecaster.json"),
        &"--predictor",
        &"cv",
        &"--out",
        &out,
    ]));
    let t2 = fs::read_to_string(out.join("association.csv")).unwrap();
    let suites = t2.lines().skip(1).map(|l| l.split(',').next().unwrap()).collect::<std::collections::BTreeSet<_>>();
    let per_suite = (t2.lines().count() - 1) / suites.len();
    assert_eq!(per_suite, 6);
    let rows: Vec<&str> = t2.lines().skip(1).take(6).map(|l| l.splitn(2, ',').nth(1).unwrap()).collect();
    let pattern: Vec<String> = rows
        .iter()
        .map(|r| r.split(',').take(3).collect::<Vec<_>>().join(","))
        .collect();
    assert_eq!(
        pattern,
        [
            "true,false,false",
            "true,true,false",
            "false,true,false",
            "false,true,true",
            "true,false,true",
            "true,true,true"
        ]
    );
    let t1 = fs::read_to_string(out.join("forecasting.csv")).unwrap();
    let methods: Vec<&str> = t1.lines().skip(1).take(3).map(|l| l.split(',').nth(1).unwrap()).collect();
    assert_eq!(methods, ["cv", "kalman", "learned"]);
    assert!(fs::read_to_string(out.join("ablation.md")).unwrap().contains("| App+Forecast |"));
}
