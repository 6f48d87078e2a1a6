use std::path::Path;
use std::process::{Command, Output};

fn deskslam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deskslam")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = deskslam(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_run_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = dir.path().join("out");
    ok(&["synth", "-o", s(&data), "--frames", "8", "--match-strides", "1,2"]);
    for f in ["rgb.txt", "depth.txt", "groundtruth.txt", "scene.json", "matches/matches_0_1.txt", "matches/matches_0_2.txt"] {
        assert!(data.join(f).exists(), "{f}");
    }

    ok(&[
        "run", "--tum", s(&data), "--stride", "2", "--map-iters", "2", "--refine-iters", "5", "-o", s(&out),
    ]);
    for f in ["trajectory.txt", "keyframes.txt", "metrics.json", "timing.json", "map.ply", "config.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let metrics: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("metrics.json")).unwrap()).unwrap();
    assert_eq!(metrics["n_frames"], 4);
    // PNG depth is quantized to 0.2 mm, so tracking is near exact but not bit exact.
    assert!(metrics["ate_rmse"].as_f64().unwrap() < 1.0);
    let trajectory_lines = std::fs::read_to_string(out.join("trajectory.txt")).unwrap();
    assert_eq!(trajectory_lines.lines().filter(|l| !l.starts_with('#')).count(), 4);

    let report = dir.path().join("eval.json");
    ok(&[
        "eval", "--trajectory", s(&out.join("trajectory.txt")), "--ground-truth", s(&data), "--map", s(&out.join("map.ply")),
        "--json", s(&report),
    ]);
    let eval: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
    // The saved trajectory keeps six decimals (meters), i.e. 5e-5 cm.
    assert!((eval["ate_rmse_cm"].as_f64().unwrap() - metrics["ate_rmse"].as_f64().unwrap()).abs() < 1e-4);
    assert!(eval["psnr_db"].as_f64().unwrap() > 10.0);
}

#[test]
fn saved_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    ok(&["run", "--synthetic-frames", "6", "--noise-px", "0.5", "--map-iters", "2", "--refine-iters", "4", "--seed", "5", "-o", s(&a)]);
    ok(&["run", "--config", s(&a.join("config.json")), "-o", s(&b)]);
    for f in ["trajectory.txt", "metrics.json", "map.ply"] {
        assert_eq!(std::fs::read(a.join(f)).unwrap(), std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn ablate_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("ablate.csv");
    ok(&[
        "ablate", "--synthetic-frames", "9", "--map-iters", "1", "--refine-iters", "0", "--strides", "1,4", "--methods",
        "feature,cv", "--csv", s(&csv_path),
    ]);
    let mut reader = csv::Reader::from_path(&csv_path).unwrap();
    assert_eq!(
        reader.headers().unwrap().iter().collect::<Vec<_>>(),
        ["stride", "method", "ate_cm", "psnr_db", "ssim", "ms_per_frame"]
    );
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 4);
    let cells: Vec<(&str, &str)> = rows.iter().map(|r| (&r[0], &r[1])).collect();
    assert!(cells.contains(&("4", "constant_velocity")));
    assert!(cells.contains(&("1", "feature")));
}

#[test]
fn print_config_emits_valid_json() {
    let text = ok(&["run", "--synthetic-frames", "3", "--stride", "2", "--method", "cv", "--print-config"]);
    let cfg: deskslam::RunConfig = serde_json::from_str(&text).unwrap();
    assert_eq!(cfg.stride, 2);
    assert_eq!(cfg.method, deskslam::TrackingMethod::ConstantVelocity);
}

#[test]
fn invalid_inputs_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    assert!(!deskslam(&["run", "--tum", s(&dir.path().join("missing"))]).status.success());
    assert!(!deskslam(&["run", "--synthetic-frames", "4", "--stride", "0", "-o", s(dir.path())]).status.success());
    assert!(!deskslam(&["run", "--method", "teleport"]).status.success());
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"stride\": \"fast\"}").unwrap();
    let out = deskslam(&["run", "--config", s(&bad)]);
    assert!(!out.status.success());
    assert!(!out.stderr.is_empty());
}
