use std::path::Path;
use std::process::{Command, Output};

fn sosd(args: &[&str], env_root: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sosd"));
    cmd.args(args);
    match env_root {
        Some(r) => cmd.env("SOSD_OUT_ROOT", r),
        None => cmd.env_remove("SOSD_OUT_ROOT"),
    };
    cmd.output().expect("binary runs")
}

const SMALL: &str = r#"
[model]
n = 8
d = 6
classes = 3
init_sigma = 0.05
seed = 4

[data]
mean_norm = 3.0

[schedule]
kind = "step"
base_lr = 0.05
milestones = [0.5]
factor = 0.1

[train]
steps = 120
snapshot_dense_until = 20
snapshot_every = 25
onset_window = 10
"#;

#[test]
fn train_analyze_predict_report_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let run = dir.path().join("run");

    let out = sosd(&["train", "--config", cfg.to_str().unwrap(), "--out", run.to_str().unwrap()], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("run_id = run-"));
    assert!(stdout.contains("onset_w_v = "));
    // steps 0..=20 dense, then 25, 50, 75, 100 and the final 120
    let snaps = std::fs::read_dir(run.join("snapshots")).unwrap().count();
    assert_eq!(snaps, 3 * (21 + 5));
    let trace = std::fs::read_to_string(run.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 122);

    let manifest = run.join("manifest.toml");
    let an = dir.path().join("an");
    let out = sosd(&["analyze", "--manifest", manifest.to_str().unwrap(), "--out", an.to_str().unwrap()], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(an.join("analysis.csv")).unwrap();
    assert!(csv.starts_with("step,matrix,fro,nuc,cond,sd_var,cos_param_final,cos_spectrum_final"));
    assert_eq!(csv.lines().count(), 1 + snaps);

    let out = sosd(&["predict-thresholds", "--manifest", manifest.to_str().unwrap()], None);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for key in ["t_v = ", "t_qk = ", "t_star = ", "lambda = ", "epsilon = "] {
        assert!(text.contains(key), "missing {key}");
    }

    let svg = dir.path().join("r.svg");
    let out = sosd(&["report", "--trace", run.join("trace.csv").to_str().unwrap(), "--out", svg.to_str().unwrap()], None);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let body = std::fs::read_to_string(&svg).unwrap();
    assert!(body.starts_with("<svg") && body.contains("sd-panel"));
    assert!(dir.path().join("r.svg.data.csv").is_file());
}

#[test]
fn relative_output_goes_under_out_root() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, SMALL.replace("steps = 120", "steps = 5")).unwrap();
    let out = sosd(&["train", "--config", cfg.to_str().unwrap(), "--out", "nested/run"], Some(dir.path()));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.path().join("nested/run/manifest.toml").is_file());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(sosd(&["frobnicate"], None).status.code(), Some(2));
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[model]\nn = 0\n").unwrap();
    let out = sosd(&["train", "--config", bad.to_str().unwrap(), "--out", dir.path().to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(2));
    let out = sosd(&["analyze", "--manifest", "/nonexistent/m.toml", "--out", dir.path().to_str().unwrap()], None);
    assert_eq!(out.status.code(), Some(3));
    let trace = dir.path().join("t.csv");
    std::fs::write(&trace, "garbage\n").unwrap();
    let out = sosd(&["report", "--trace", trace.to_str().unwrap(), "--out", "x.svg", "--dim", "4"], None);
    assert_eq!(out.status.code(), Some(3));
    let out = sosd(&["verify", "--suite", "all", "--trials", "50", "--seed", "3"], None);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8(out.stdout).unwrap().contains("status = pass"));
}
