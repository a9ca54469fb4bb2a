use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;

fn nsm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nsm"))
        .current_dir(dir)
        .args(args)
        .args(["--log-level", "warn"])
        .output()
        .expect("nsm runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = nsm(dir, args);
    assert!(
        out.status.success(),
        "nsm {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn config(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

/// A scene, a map of it, and a small model with a calibrated threshold.
struct Fixture {
    _dir: tempfile::TempDir,
    path: PathBuf,
    threshold: String,
}

fn fixture() -> &'static Fixture {
    static CELL: OnceLock<Fixture> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path();
        ok(
            d,
            &[
                "gen-scene",
                "--seed",
                "11",
                "--out",
                "train.ply",
                "--source",
                "train_src.ply",
                "--gt",
                "train_gt.txt",
                "--yaw-deg",
                "40",
                "--translation",
                "3,-2,0",
            ],
        );
        ok(
            d,
            &[
                "gen-scene",
                "--seed",
                "12",
                "--out",
                "val.ply",
                "--source",
                "val_src.ply",
                "--gt",
                "val_gt.txt",
                "--yaw-deg",
                "-75",
                "--translation",
                "-4,1,0",
            ],
        );
        ok(
            d,
            &[
                "make-pairs",
                "--target",
                "train.ply",
                "--source",
                "train_src.ply",
                "--gt",
                "train_gt.txt",
                "--out",
                "pairs.csv",
            ],
        );
        ok(
            d,
            &[
                "make-pairs",
                "--target",
                "val.ply",
                "--source",
                "val_src.ply",
                "--gt",
                "val_gt.txt",
                "--out",
                "val.csv",
            ],
        );
        let out = ok(
            d,
            &[
                "train-rf",
                "--pairs",
                "pairs.csv",
                "--validation",
                "val.csv",
                "--trees",
                "40",
                "--out",
                "model.rf",
            ],
        );
        let summary: Value = serde_json::from_slice(&out.stdout).unwrap();
        let threshold = summary["threshold"].as_f64().unwrap().to_string();
        ok(
            d,
            &[
                "gen-scene",
                "--seed",
                "13",
                "--out",
                "scene.ply",
                "--labels",
                "scene.labels.json",
                "--source",
                "same.ply",
                "--gt",
                "same_gt.txt",
                "--clean",
            ],
        );
        ok(
            d,
            &[
                "gen-scene",
                "--seed",
                "13",
                "--out",
                "scene_copy.ply",
                "--source",
                "moved.ply",
                "--gt",
                "moved_gt.txt",
                "--yaw-deg",
                "120",
                "--translation",
                "6,4,0",
            ],
        );
        ok(d, &["build-map", "--in", "scene.ply", "--out", "scene.nsm"]);
        Fixture {
            path: d.to_path_buf(),
            _dir: dir,
            threshold,
        }
    })
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn identity_scenario_localizes() {
    let f = fixture();
    let d = &f.path;
    ok(
        d,
        &[
            "localize",
            "--map",
            "scene.nsm",
            "--source",
            "same.ply",
            "--model",
            "model.rf",
            "--threshold",
            &f.threshold,
            "--out",
            "results/same.json",
        ],
    );
    let r = read_json(&d.join("results/same.json"));
    assert_eq!(r["status"], "localized");
    assert_eq!(r["frame_id"], "same");
    let t: Vec<f64> = r["transform"]["translation"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    assert!(t.iter().all(|v| v.abs() < 1e-6), "{t:?}");

    ok(
        d,
        &[
            "eval",
            "--results",
            "results",
            "--gt",
            "same_gt.txt",
            "--out",
            "report.json",
        ],
    );
    let report = read_json(&d.join("report.json"));
    assert_eq!(report["localization"]["localizations"], 1);
    assert!(
        report["localization"]["translation"]["rmse"]
            .as_f64()
            .unwrap()
            < 1e-6
    );
}

#[test]
fn runs_agree_across_thread_counts() {
    let f = fixture();
    let d = &f.path;
    for threads in ["1", "4"] {
        let out = format!("det_{threads}.json");
        ok(
            d,
            &[
                "--threads",
                threads,
                "localize",
                "--map",
                "scene.nsm",
                "--source",
                "moved.ply",
                "--model",
                "model.rf",
                "--threshold",
                &f.threshold,
                "--out",
                &out,
            ],
        );
    }
    let a = std::fs::read(d.join("det_1.json")).unwrap();
    let b = std::fs::read(d.join("det_4.json")).unwrap();
    assert!(a == b, "result differs across thread counts");
    assert_eq!(read_json(&d.join("det_1.json"))["status"], "localized");
    ok(
        d,
        &[
            "eval",
            "--results",
            "det_1.json",
            "--gt",
            "moved_gt.txt",
            "--out",
            "moved_report.json",
        ],
    );
    let report = read_json(&d.join("moved_report.json"));
    assert!(
        report["localization"]["translation"]["rmse"]
            .as_f64()
            .unwrap()
            < 0.3
    );

    let dir = tempfile::tempdir().unwrap();
    let mut clouds = Vec::new();
    for threads in ["1", "4"] {
        let sub = dir.path().join(threads);
        std::fs::create_dir(&sub).unwrap();
        ok(
            &sub,
            &[
                "--threads",
                threads,
                "gen-scene",
                "--seed",
                "5",
                "--out",
                "s.ply",
            ],
        );
        clouds.push(std::fs::read(sub.join("s.ply")).unwrap());
    }
    assert!(clouds[0] == clouds[1], "scene differs across thread counts");
}

#[test]
fn staged_commands_chain() {
    let f = fixture();
    let d = &f.path;
    ok(
        d,
        &[
            "filter-ground",
            "--in",
            "val_src.ply",
            "--out",
            "ng.ply",
            "--ground",
            "g.ply",
        ],
    );
    ok(d, &["segment", "--in", "ng.ply", "--out", "segs"]);
    assert!(d.join("segs/index.json").exists());
    ok(d, &["describe", "--segments", "segs", "--out", "segs.nsm"]);
    ok(
        d,
        &[
            "match",
            "--map",
            "scene.nsm",
            "--source",
            "segs",
            "--model",
            "model.rf",
            "--k",
            "5",
            "--out",
            "matches.json",
        ],
    );
    let m = read_json(&d.join("matches.json"));
    assert!(!m.as_array().unwrap().is_empty());
    ok(
        d,
        &[
            "eval", "--pairs", "val.csv", "--model", "model.rf", "--roc", "roc.csv", "--out",
            "cls.json",
        ],
    );
    assert!(std::fs::read_to_string(d.join("roc.csv"))
        .unwrap()
        .starts_with("threshold,tpr,fpr"));
    assert!(
        read_json(&d.join("cls.json"))["classifier"]["auc"]
            .as_f64()
            .unwrap()
            > 0.5
    );
}

#[test]
fn missing_input_exits_2_naming_the_file() {
    let f = fixture();
    let out = nsm(
        &f.path,
        &[
            "localize",
            "--map",
            "scene.nsm",
            "--source",
            "absent.ply",
            "--model",
            "model.rf",
            "--out",
            "r.json",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent.ply"));
}

#[test]
fn map_from_other_profile_exits_3() {
    let f = fixture();
    let d = &f.path;
    ok(
        d,
        &[
            "--config",
            &config("cp.toml"),
            "build-map",
            "--in",
            "val.ply",
            "--out",
            "cp.nsm",
        ],
    );
    let out = nsm(
        d,
        &[
            "--config",
            &config("kitti.toml"),
            "localize",
            "--map",
            "cp.nsm",
            "--source",
            "same.ply",
            "--model",
            "model.rf",
            "--out",
            "r.json",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fingerprint"));
}

#[test]
fn bad_flags_and_values_exit_3() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(
        nsm(d.path(), &["localize", "--bogus"]).status.code(),
        Some(3)
    );
    let out = nsm(
        d.path(),
        &[
            "--set",
            "segmentation.min_points=9000",
            "gen-scene",
            "--out",
            "x.ply",
        ],
    );
    assert_eq!(out.status.code(), Some(3));
    let out = nsm(
        d.path(),
        &["--set", "nope.key=1", "gen-scene", "--out", "x.ply"],
    );
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn plane_without_objects_exits_4() {
    let f = fixture();
    let d = &f.path;
    let mut text = String::new();
    for i in 0..120 {
        for j in 0..120 {
            text.push_str(&format!("{} {} 0\n", i as f64 * 0.25, j as f64 * 0.25));
        }
    }
    std::fs::write(d.join("plane.xyz"), text).unwrap();
    let out = nsm(
        d,
        &[
            "localize",
            "--map",
            "scene.nsm",
            "--source",
            "plane.xyz",
            "--model",
            "model.rf",
            "--out",
            "plane.json",
        ],
    );
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(
        read_json(&d.join("plane.json"))["status"],
        "insufficient_matches"
    );
}
