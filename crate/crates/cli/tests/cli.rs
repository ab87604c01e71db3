use std::path::Path;
use std::process::{Command, Output};

fn wavemfe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wavemfe")).args(args).output().unwrap()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const CUBIC: &str = r#"
dimension = 1
cutoff = 4
epsilons = [0.2, 0.1]
order = 2
speed_expr = "1 + 0.5*sin(tau)"
coupling_expr = "1"
grid_h = 0.02
"#;

const LINEAR: &str = r#"
dimension = 1
cutoff = 8
epsilons = [0.2, 0.1]
order = 2
speed_expr = "1.5"
coupling_expr = "0"
windows = 2
fit_floor = 1e-9
"#;

#[test]
fn validate_echoes_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", CUBIC);
    let out = wavemfe(&["validate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("\"c0\": 0.25"));
    assert!(text.contains("config_hash "));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write(
        dir.path(),
        "bad.toml",
        &CUBIC.replace("1 + 0.5*sin(tau)", "1 - 0.9*sin(3*tau)"),
    );
    let out = wavemfe(&["validate", "--config", &bad]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8(out.stderr).unwrap().contains("speed_expr"));
    assert_eq!(wavemfe(&["run"]).status.code(), Some(2));
    let missing = dir.path().join("nope.toml");
    assert_eq!(
        wavemfe(&["run", "--config", missing.to_str().unwrap()]).status.code(),
        Some(2)
    );
}

#[test]
fn runtime_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", &format!("{CUBIC}label_cap = 3\n"));
    let out_dir = dir.path().join("out");
    let out = wavemfe(&["run", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8(out.stderr).unwrap().contains("budget"));
}

#[test]
fn linear_sweep_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "lin.toml", LINEAR);
    let out_dir = dir.path().join("out");
    let out = wavemfe(&[
        "sweep",
        "--config",
        &cfg,
        "--out",
        out_dir.to_str().unwrap(),
        "--jobs",
        "2",
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    for name in [
        "summary.json",
        "run_eps0.2.csv",
        "run_eps0.1.csv",
        "trajectory_eps0.1.csv",
    ] {
        assert!(out_dir.join(name).exists(), "{name}");
    }
}

#[test]
fn run_and_snapshot_write_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", CUBIC);
    let out_dir = dir.path().join("out");
    let o = out_dir.to_str().unwrap();
    assert_eq!(
        wavemfe(&["run", "--config", &cfg, "--out", o, "--seed", "3"])
            .status
            .code(),
        Some(0)
    );
    assert!(out_dir.join("run_eps0.2.csv").exists());
    assert!(!out_dir.join("run_eps0.1.csv").exists());
    assert_eq!(
        wavemfe(&["snapshot", "--config", &cfg, "--out", o]).status.code(),
        Some(0)
    );
    let snap = std::fs::read_to_string(out_dir.join("snapshot_eps0.1.json")).unwrap();
    assert!(snap.contains("\"entries\""));
}

#[test]
fn sweep_rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", CUBIC);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let ra = wavemfe(&[
        "sweep",
        "--config",
        &cfg,
        "--out",
        a.to_str().unwrap(),
        "--seed",
        "11",
        "--jobs",
        "1",
    ]);
    let rb = wavemfe(&[
        "sweep",
        "--config",
        &cfg,
        "--out",
        b.to_str().unwrap(),
        "--seed",
        "11",
        "--jobs",
        "2",
    ]);
    assert!(matches!(ra.status.code(), Some(0 | 1)));
    assert_eq!(ra.status.code(), rb.status.code());
    assert!(!ra.stdout.is_empty());
    let mut names: Vec<_> = std::fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 5);
    for n in names {
        assert_eq!(
            std::fs::read(a.join(&n)).unwrap(),
            std::fs::read(b.join(&n)).unwrap(),
            "{n:?}"
        );
    }
}
