use std::os::unix::fs::PermissionsExt;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

use robofall_core::RasterImage;

const TS: &str = "2024-05-01T12:00:00Z";

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn robofall(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_robofall"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn run_keypoints(files: &[String], extra: &[&str]) -> Output {
    let mut args = vec!["pipeline", "run", "--timestamp", TS, "--keypoints"];
    args.extend(files.iter().map(String::as_str));
    args.extend(extra);
    robofall(&args)
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

#[test]
fn standing_reports_no_fall() {
    let out = run_keypoints(&[path_str(&fixture("standing.jsonl"))], &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 1);
    let r: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(r["alarm"], false);
    assert_eq!(r["timestamp"], TS);
    assert_eq!(r["persons"][0]["rules_fall"], false);
    assert_eq!(r["persons"][0]["mlp_p_fall"], Value::Null);
    assert_eq!(r["persons"][0]["method"], "rules");
}

#[test]
fn lying_reports_fall() {
    let out = run_keypoints(&[path_str(&fixture("lying.jsonl"))], &[]);
    assert_eq!(code(&out), 10);
    let r: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(r["alarm"], true);
    assert_eq!(r["persons"][0]["bbox"].as_array().unwrap().len(), 4);
}

#[test]
fn second_candidate_wins_when_first_is_empty() {
    let files = [
        format!("1.0:{}", path_str(&fixture("empty.jsonl"))),
        format!("2.5:{}", path_str(&fixture("standing.jsonl"))),
    ];
    let r: Value = serde_json::from_str(&stdout(&run_keypoints(&files, &[]))).unwrap();
    assert_eq!(r["candidate_h"], 2.5);
    assert_eq!(r["no_person"], false);
}

#[test]
fn all_empty_is_no_person() {
    let files = [path_str(&fixture("empty.jsonl")), path_str(&fixture("empty.jsonl"))];
    let out = run_keypoints(&files, &[]);
    assert_eq!(code(&out), 0);
    let r: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(r["no_person"], true);
    assert_eq!(r["alarm"], false);
    assert_eq!(r["persons"], Value::Array(vec![]));
}

#[test]
fn spool_names_and_reemit_are_stable() {
    let dir = tempfile::tempdir().unwrap();
    let spool = dir.path().join("spool");
    let files = [path_str(&fixture("lying.jsonl"))];
    let a = run_keypoints(&files, &["--spool", &path_str(&spool)]);
    assert_eq!(code(&a), 10);
    assert!(a.stdout.is_empty());
    let file = spool.join(format!("fall_{TS}.json"));
    let first = std::fs::read(&file).unwrap();
    run_keypoints(&files, &["--spool", &path_str(&spool)]);
    assert_eq!(std::fs::read(&file).unwrap(), first);
    assert_eq!(std::fs::read_dir(&spool).unwrap().count(), 1);

    let out = dir.path().join("report.json");
    run_keypoints(&files, &["--output", &path_str(&out)]);
    assert_eq!(std::fs::read(&out).unwrap(), first);
}

#[test]
fn error_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"bbox\":[0,0,1,1]}\n").unwrap();
    assert_eq!(code(&run_keypoints(&[path_str(&bad)], &[])), 12);
    let missing = dir.path().join("missing.jsonl");
    assert_eq!(code(&run_keypoints(&[path_str(&missing)], &[])), 15);

    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "[pipeline]\nh_min = -1.0\n").unwrap();
    let out = run_keypoints(&[path_str(&fixture("standing.jsonl"))], &["--config", &path_str(&cfg)]);
    assert_eq!(code(&out), 13);
    std::fs::write(&cfg, "[pipeline]\nnot_a_key = 1\n").unwrap();
    let out = run_keypoints(&[path_str(&fixture("standing.jsonl"))], &["--config", &path_str(&cfg)]);
    assert_eq!(code(&out), 13);

    let out = robofall(&["pipeline", "run", "--image", &path_str(&fixture("standing.jsonl"))]);
    assert_eq!(code(&out), 14);
    assert!(String::from_utf8_lossy(&out.stderr).contains("pipeline.adapter"));

    assert_eq!(code(&robofall(&["pipeline", "run"])), 16);
    assert_eq!(code(&robofall(&["no-such-command"])), 16);
    assert_eq!(code(&robofall(&["--help"])), 0);
    let out = run_keypoints(&[path_str(&fixture("standing.jsonl"))], &["--classifier", "mlp"]);
    assert_eq!(code(&out), 13);
}

/// Shell stand-in for the pose extractor: logs its argv and answers with a
/// fixed keypoint file, but only for the last candidate image.
fn fake_adapter(dir: &Path, answer: &Path, status: i32) -> PathBuf {
    let script = dir.join("adapter.sh");
    let log = dir.join("argv.log");
    std::fs::write(
        &script,
        format!(
            r#"#!/bin/sh
echo "$@" >> '{log}'
while [ $# -gt 0 ]; do
  case "$1" in
    --input) in="$2"; shift 2 ;;
    --output) out="$2"; shift 2 ;;
    *) shift ;;
  esac
done
[ -f "$in" ] || exit 3
case "$in" in
  *candidate_2.png) cat '{answer}' > "$out" ;;
  *) : > "$out" ;;
esac
exit {status}
"#,
            log = log.display(),
            answer = answer.display(),
        ),
    )
    .unwrap();
    std::fs::set_permissions(&script, std::fs::Permissions::from_mode(0o755)).unwrap();
    script
}

fn adapter_config(dir: &Path, script: &Path) -> PathBuf {
    let cfg = dir.join("adapter.toml");
    std::fs::write(
        &cfg,
        format!(
            "[pipeline]\ncandidates = 3\nmodel_size = \"n\"\nadapter = [\"{}\"]\n",
            script.display()
        ),
    )
    .unwrap();
    cfg
}

#[test]
fn image_input_drives_the_adapter() {
    let dir = tempfile::tempdir().unwrap();
    let image = dir.path().join("frame.png");
    RasterImage::from_fn(64, 48, 1, |x, y, _| ((x * 3 + y * 2) % 256) as u8)
        .unwrap()
        .save(&image)
        .unwrap();
    let script = fake_adapter(dir.path(), &fixture("lying.jsonl"), 0);
    let cfg = adapter_config(dir.path(), &script);
    let out = robofall(&[
        "--config",
        &path_str(&cfg),
        "pipeline",
        "run",
        "--image",
        &path_str(&image),
        "--timestamp",
        TS,
    ]);
    assert_eq!(code(&out), 10, "{}", String::from_utf8_lossy(&out.stderr));
    let r: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(r["candidate_h"], 4.0);
    assert_eq!(r["source"], path_str(&image));

    let calls = std::fs::read_to_string(dir.path().join("argv.log")).unwrap();
    assert_eq!(calls.lines().count(), 3);
    for line in calls.lines() {
        let argv: Vec<&str> = line.split(' ').collect();
        assert_eq!(argv[0], "extract");
        assert_eq!(argv[1], "--input");
        assert!(argv[2].ends_with(".png"));
        assert_eq!(argv[3], "--output");
        assert!(argv[4].ends_with(".jsonl"));
        assert_eq!(&argv[5..], ["--model-size", "n", "--conf", "0.25"]);
    }
}

#[test]
fn failing_adapter_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let image = dir.path().join("frame.pgm");
    RasterImage::zeros(16, 12, 1).unwrap().save(&image).unwrap();
    let script = fake_adapter(dir.path(), &fixture("lying.jsonl"), 2);
    let cfg = adapter_config(dir.path(), &script);
    let out = robofall(&[
        "--config",
        &path_str(&cfg),
        "pipeline",
        "run",
        "--image",
        &path_str(&image),
    ]);
    assert_eq!(code(&out), 14);
}

#[test]
fn homography_file_round_trips_through_warp() {
    let dir = tempfile::tempdir().unwrap();
    let hfile = dir.path().join("h.txt");
    let out = robofall(&["homography", "compute", "--h", "2.0", "--output", &path_str(&hfile)]);
    assert_eq!(code(&out), 0);
    let h: robofall_core::Homography = std::fs::read_to_string(&hfile).unwrap().parse().unwrap();
    assert_eq!(h.to_rows()[1][2], 500.0 * 1.35 / 2.0);

    let ident = dir.path().join("id.txt");
    std::fs::write(&ident, "1 0 0\n0 1 0\n0 0 1\n").unwrap();
    let img = dir.path().join("in.png");
    let src = RasterImage::from_fn(20, 10, 3, |x, y, c| (x * 7 + y * 11 + c as u32 * 50) as u8).unwrap();
    src.save(&img).unwrap();
    let warped = dir.path().join("out.png");
    let out = robofall(&[
        "homography",
        "warp",
        "--input",
        &path_str(&img),
        "--homography",
        &path_str(&ident),
        "--output",
        &path_str(&warped),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(RasterImage::load(&warped).unwrap(), src);

    std::fs::write(&ident, "1 0 0\n0 1 0\n").unwrap();
    let out = robofall(&[
        "homography",
        "warp",
        "--input",
        &path_str(&img),
        "--homography",
        &path_str(&ident),
        "--output",
        &path_str(&warped),
    ]);
    assert_eq!(code(&out), 12);
}

#[test]
fn homography_formats() {
    let out = robofall(&["homography", "sample", "--n", "4", "--format", "json"]);
    let v: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 4);
    assert_eq!(v[3]["h"], 4.0);
    let out = robofall(&["homography", "pitch", "--theta", "0", "--format", "csv"]);
    assert_eq!(stdout(&out).lines().nth(1).unwrap(), "1,0,0,0,1,0,0,0,1");
    assert_eq!(code(&robofall(&["homography", "pitch", "--theta", "95"])), 13);
}

#[test]
fn kinematics_round_trip() {
    let out = robofall(&["kinematics", "inverse", "--vx", "0.2", "--vy", "-0.1", "--wz", "0.7"]);
    let w: Value = serde_json::from_str(&stdout(&out)).unwrap();
    let args: Vec<String> = ["fl", "fr", "rl", "rr"]
        .iter()
        .flat_map(|k| [format!("--{k}"), w[k].as_f64().unwrap().to_string()])
        .collect();
    let mut argv = vec!["kinematics", "forward"];
    argv.extend(args.iter().map(String::as_str));
    let v: Value = serde_json::from_str(&stdout(&robofall(&argv))).unwrap();
    for (k, want) in [("vx", 0.2), ("vy", -0.1), ("wz", 0.7)] {
        assert!((v[k].as_f64().unwrap() - want).abs() < 1e-12, "{k}: {v}");
    }
}

#[test]
fn sysid_plant_fit_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("runs.csv");
    let out = robofall(&[
        "sysid",
        "simulate-plant",
        "--per-group",
        "30",
        "--output",
        &path_str(&csv),
    ]);
    assert_eq!(code(&out), 0);
    assert!(std::fs::read_to_string(&csv).unwrap().starts_with("wheel,pwm,omega\n"));
    let params = dir.path().join("params.toml");
    let out = robofall(&[
        "sysid",
        "fit",
        "--input",
        &path_str(&csv),
        "--output",
        &path_str(&params),
    ]);
    assert_eq!(code(&out), 0);
    let fitted = robofall_core::MotorParams::load(&params).unwrap();
    let reference = robofall_core::MotorParams::reference();
    for wheel in robofall_core::Wheel::ALL {
        for dir in robofall_core::sysid::Direction::ALL {
            let (a, b) = (fitted.get(wheel, dir).unwrap(), reference.get(wheel, dir).unwrap());
            assert!((a.b - b.b).abs() < 1e-6 && (a.c - b.c).abs() < 1e-6);
        }
    }
    let out = robofall(&[
        "sysid",
        "pwm",
        "--wheel",
        "FL",
        "--omega",
        "0.0304051",
        "--params",
        &path_str(&params),
    ]);
    let u: f64 = stdout(&out).trim().parse().unwrap();
    assert!((u - 200.0).abs() < 0.1);

    let a = robofall(&["--seed", "3", "sysid", "simulate-plant", "--noise", "1"]);
    let b = robofall(&["--seed", "3", "sysid", "simulate-plant", "--noise", "1"]);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn mlp_train_then_classify() {
    let dir = tempfile::tempdir().unwrap();
    let weights = dir.path().join("w.json");
    let out = robofall(&[
        "--seed",
        "7",
        "falldet",
        "mlp-train",
        "--synthetic",
        "200",
        "--output",
        &path_str(&weights),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let again = dir.path().join("w2.json");
    robofall(&[
        "--seed",
        "7",
        "falldet",
        "mlp-train",
        "--synthetic",
        "200",
        "--output",
        &path_str(&again),
    ]);
    assert_eq!(std::fs::read(&weights).unwrap(), std::fs::read(&again).unwrap());

    let out = robofall(&[
        "falldet",
        "mlp-infer",
        "--input",
        &path_str(&fixture("lying.jsonl")),
        "--weights",
        &path_str(&weights),
    ]);
    let p: Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    let (f, n) = (p["p_fall"].as_f64().unwrap(), p["p_not_fall"].as_f64().unwrap());
    assert!((f + n - 1.0).abs() < 1e-9);

    let out = run_keypoints(
        &[path_str(&fixture("standing.jsonl"))],
        &["--classifier", "both", "--weights", &path_str(&weights)],
    );
    let r: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert_eq!(r["persons"][0]["method"], "both");
    assert!(r["persons"][0]["mlp_p_fall"].is_f64());

    let unlabelled = robofall(&["falldet", "mlp-train", "--input", &path_str(&fixture("standing.jsonl"))]);
    assert_eq!(code(&unlabelled), 12);
}

#[test]
fn simulate_circle_outputs() {
    let out = robofall(&["simulate", "circle", "--format", "json"]);
    let s: Value = serde_json::from_str(&stdout(&out)).unwrap();
    assert!(s["ratio"].as_f64().unwrap() >= 3.0);
    assert!(s["with_sysid_rms"].as_f64().unwrap() < 0.08);

    let dir = tempfile::tempdir().unwrap();
    let out = robofall(&[
        "simulate",
        "circle",
        "--controller",
        "with_sysid",
        "--plot-dir",
        &path_str(dir.path()),
    ]);
    assert_eq!(code(&out), 0);
    let csv = stdout(&out);
    assert_eq!(csv.lines().next().unwrap(), "t,x,y,theta");
    assert!(csv.lines().count() > 100);
    let dat = std::fs::read_to_string(dir.path().join("with_sysid.dat")).unwrap();
    assert_eq!(dat.lines().count(), csv.lines().count());
    assert_eq!(code(&robofall(&["simulate", "circle", "--controller", "pid"])), 16);
}
