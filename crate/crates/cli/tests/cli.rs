use std::path::Path;
use std::process::{Command, Output};

fn metaspline(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metaspline")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn synth(dir: &Path, benchmark: &str) {
    let out = metaspline(&["synth", benchmark, "--out", dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

fn quick_run(config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["--config", config.to_str().unwrap(), "--levels", "2", "--iters", "2", "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    metaspline(&args)
}

#[test]
fn missing_keyframe_exits_with_usage_code_and_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere.png");
    let arg = format!("0:{}", missing.display());
    let out = metaspline(&["--keyframe", &arg, "--keyframe", &arg, "--out", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains(missing.to_str().unwrap()));
}

#[test]
fn malformed_keyframe_flag_is_a_usage_error() {
    let out = metaspline(&["--keyframe", "frame.png"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn run_writes_frames_diagnostics_and_csvs() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "circle-square");
    let out = dir.path().join("result");
    let status = quick_run(&dir.path().join("config.json"), &out, &["--dump-levels"]);
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    for k in 0..=8 {
        assert!(out.join(format!("frame_{k:03}.png")).is_file(), "frame {k}");
    }
    for sub in ["flow", "accel", "wdot", "slack", "levels/level_1", "levels/level_2"] {
        assert!(out.join(sub).is_dir(), "{sub}");
    }
    let energy = std::fs::read_to_string(out.join("energy.csv")).unwrap();
    assert!(energy.contains("# theta = 0.0005"));
    let iterations = csv_rows(&out.join("iterations.csv"));
    assert_eq!(iterations[0][..9], ["iter", "level", "E_total", "E_WD", "E_WA", "E_Ds", "E_Dg", "E_znorm", "min_det"]);
    assert_eq!(iterations.len(), 1 + 2 * 2);
}

#[test]
fn geodesic_mode_has_same_schema_without_spline_terms() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "circle-square");
    let config = dir.path().join("config.json");
    let (spline, geodesic) = (dir.path().join("spline"), dir.path().join("geodesic"));
    assert!(quick_run(&config, &spline, &[]).status.success());
    let out = quick_run(&config, &geodesic, &["--mode", "geodesic", "--sigma", "3"]);
    assert!(out.status.success());
    assert!(std::fs::read_to_string(geodesic.join("energy.csv")).unwrap().contains("# sigma = 1"));
    let (s, g) = (csv_rows(&spline.join("energy.csv")), csv_rows(&geodesic.join("energy.csv")));
    assert_eq!(s[0], g[0]);
    let columns: Vec<usize> = ["E_WA", "E_Ds"].iter().map(|c| g[0].iter().position(|h| h == c).unwrap()).collect();
    for row in &g[1..] {
        for &c in &columns {
            assert_eq!(row[c].parse::<f64>().unwrap(), 0.0, "{row:?}");
        }
    }
}

#[test]
fn repeated_runs_give_identical_csvs() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "gaussian");
    let config = dir.path().join("config.json");
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(quick_run(&config, &a, &[]).status.success());
    assert!(quick_run(&config, &b, &[]).status.success());
    for file in ["energy.csv", "iterations.csv"] {
        assert_eq!(std::fs::read(a.join(file)).unwrap(), std::fs::read(b.join(file)).unwrap(), "{file}");
    }
}

#[test]
fn flags_override_the_configuration_file() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "gaussian");
    let out = dir.path().join("result");
    let status = quick_run(&dir.path().join("config.json"), &out, &["--K", "4", "--delta", "0.01", "--bc", "hermite"]);
    assert!(!status.status.success(), "key frame at 8 exceeds K = 4");
    assert_eq!(status.status.code(), Some(2));
    let keyframes = ["--keyframe", "0:keyframe_000.png", "--keyframe", "4:keyframe_008.png"];
    let mut args = vec!["--config", "config.json", "--K", "4", "--delta", "0.01", "--levels", "1", "--iters", "1", "--out", "result"];
    args.extend_from_slice(&keyframes);
    let status = Command::new(env!("CARGO_BIN_EXE_metaspline")).args(&args).current_dir(dir.path()).output().unwrap();
    assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    let energy = std::fs::read_to_string(out.join("energy.csv")).unwrap();
    assert!(energy.contains("# K = 4") && energy.contains("# delta = 0.01"));
    assert!(out.join("frame_004.png").is_file() && !out.join("frame_005.png").exists());
}

#[test]
fn solver_abort_reports_diagnostic_directory() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), "circle-square");
    let out = dir.path().join("result");
    let status = quick_run(&dir.path().join("config.json"), &out, &["--theta", "1e-320"]);
    assert_eq!(status.status.code(), Some(3), "{}", String::from_utf8_lossy(&status.stderr));
    let diagnostic = out.join("diagnostic");
    assert!(String::from_utf8_lossy(&status.stderr).contains(diagnostic.to_str().unwrap()));
    assert!(diagnostic.join("error.txt").is_file());
}
