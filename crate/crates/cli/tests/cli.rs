use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn mfctl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mfctl")).args(args).env_remove("MFCTL_THREADS").output().unwrap()
}

fn files(dir: &Path) -> Vec<String> {
    let mut names: Vec<String> = match std::fs::read_dir(dir) {
        Ok(rd) => rd.map(|e| e.unwrap().file_name().into_string().unwrap()).collect(),
        Err(_) => Vec::new(),
    };
    names.sort();
    names
}

fn find(dir: &Path, suffix: &str) -> PathBuf {
    let name = files(dir).into_iter().find(|n| n.ends_with(suffix)).unwrap_or_else(|| panic!("no *{suffix} in {}", dir.display()));
    dir.join(name)
}

#[test]
fn solve_writes_control_history_and_manifest() {
    let out = tempfile::tempdir().unwrap();
    let cfg = configs().join("steering.toml");
    let run = mfctl(&["solve", "--config", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    assert_eq!(files(out.path()).len(), 3);
    let history = std::fs::read_to_string(find(out.path(), "-history.csv")).unwrap();
    assert!(history.starts_with("iter,cost,grad_norm,step\n"));
    let control = std::fs::read_to_string(find(out.path(), "-u_star.csv")).unwrap();
    assert!(control.starts_with("t,agent,axis,value\n"));
    assert_eq!(control.lines().count(), 1 + 101 * 2 * 2);
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(find(out.path(), "-manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "solve");
    assert_eq!(manifest["passed"], true);
    assert_eq!(manifest["summary"]["status"], "converged");
    let hash = manifest["config_sha256"].as_str().unwrap();
    assert_eq!(hash.len(), 64);
    assert!(files(out.path()).iter().all(|n| n.starts_with(&hash[..12])));
}

#[test]
fn missing_config_exits_with_two_and_names_the_path() {
    let out = tempfile::tempdir().unwrap();
    let run = mfctl(&["solve", "--config", "/nonexistent/run.toml", "--out", out.path().to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains("/nonexistent/run.toml"));
    assert!(files(out.path()).is_empty());
}

#[test]
fn unknown_keys_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let text = std::fs::read_to_string(configs().join("default.toml")).unwrap() + "\nbogus = 1\n";
    let path = dir.path().join("bad.toml");
    std::fs::write(&path, text).unwrap();
    let out = dir.path().join("out");
    let run = mfctl(&["solve", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(2));
    let err = String::from_utf8_lossy(&run.stderr);
    assert!(err.contains("bad.toml") && err.contains("bogus"), "{err}");
    assert!(!out.exists());
}

#[test]
fn check_passes_on_the_default_config_and_fails_under_mutation() {
    let out = tempfile::tempdir().unwrap();
    let cfg = configs().join("default.toml");
    let (cfg, dir) = (cfg.to_str().unwrap(), out.path().to_str().unwrap());
    let clean = mfctl(&["check", "--config", cfg, "--out", dir]);
    assert_eq!(clean.status.code(), Some(0), "{}", String::from_utf8_lossy(&clean.stderr));
    let broken = mfctl(&["check", "--config", cfg, "--out", dir, "--mutate", "interaction", "--coarsen", "2"]);
    assert_eq!(broken.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&broken.stderr).contains("linearization-remainder  FAIL"));
}

#[test]
fn sweeps_are_reproducible_and_seed_overrides_change_the_hash() {
    let cfg = configs().join("quick-sweep.toml");
    let cfg = cfg.to_str().unwrap();
    let (a, b, c) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        let run = mfctl(&["consistency", "--config", cfg, "--out", dir.path().to_str().unwrap()]);
        assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    }
    let read = |d: &Path| std::fs::read(find(d, "-consistency.csv")).unwrap();
    assert_eq!(read(a.path()), read(b.path()));
    assert_eq!(files(a.path()), files(b.path()));
    let run = mfctl(&["consistency", "--config", cfg, "--out", c.path().to_str().unwrap(), "--seed", "8"]);
    assert!(run.status.success());
    assert_ne!(files(a.path()), files(c.path()));
    assert_ne!(read(a.path()), read(c.path()));
}

#[test]
fn rate_runs_on_the_quick_sweep() {
    let out = tempfile::tempdir().unwrap();
    let cfg = configs().join("quick-sweep.toml");
    let run = mfctl(&["rate", "--config", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap()]);
    let manifest: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(find(out.path(), "-manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["summary"]["complete"], true);
    assert_eq!(run.status.success(), manifest["passed"].as_bool().unwrap());
    let rows = std::fs::read_to_string(find(out.path(), "-rate.csv")).unwrap();
    assert_eq!(rows.lines().count(), 5);
}

#[test]
fn bad_thread_cap_is_a_config_error() {
    let out = tempfile::tempdir().unwrap();
    let cfg = configs().join("default.toml");
    let run = Command::new(env!("CARGO_BIN_EXE_mfctl"))
        .args(["solve", "--config", cfg.to_str().unwrap(), "--out", out.path().to_str().unwrap()])
        .env("MFCTL_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains("MFCTL_THREADS"));
}
