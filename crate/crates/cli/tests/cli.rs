use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ttrecover(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ttrecover"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

const SMALL: &str = "orders = [2]\ndims = [3]\nranks = [1]\nmeasurements = [30]\ntrials = 3\nmax_iters = 200\n";

#[test]
fn sense_writes_results_and_traces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("run");
    let o = ttrecover(&["sense", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let results = fs::read_to_string(out.join("results.csv")).unwrap();
    assert!(results.starts_with("experiment,grid_id,"));
    assert_eq!(results.lines().count(), 4);
    assert!(results.lines().skip(1).all(|l| l.starts_with("sensing,")));
    assert_eq!(fs::read_dir(out.join("traces")).unwrap().count(), 3);
    assert!(out.join("manifest.toml").is_file());
    assert!(String::from_utf8_lossy(&o.stdout).contains("3/3 ok"));
}

#[test]
fn reruns_are_bitwise_identical_and_seed_sensitive() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let read = |name: &str, seed: &str| {
        let out = dir.path().join(name);
        let o = ttrecover(&[
            "sense",
            "--config",
            &cfg,
            "--seed",
            seed,
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success());
        fs::read(out.join("results.csv")).unwrap()
    };
    let a = read("a", "7");
    assert_eq!(a, read("b", "7"));
    assert_ne!(a, read("c", "8"));
}

#[test]
fn flags_override_the_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("run");
    let o = ttrecover(&[
        "complete",
        "--config",
        &cfg,
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "18446744073709551615",
        "--threads",
        "2",
        "--trace-every",
        "0",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.join("traces").exists());
    let manifest = fs::read_to_string(out.join("manifest.toml")).unwrap();
    assert!(manifest.contains("experiment = \"completion\""));
    assert!(manifest.contains("base_seed = \"18446744073709551615\""), "{manifest}");
    assert!(manifest.contains("threads = 2"));
}

#[test]
fn rip_probe_prints_delta_hat() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "orders = [3]\ndims = [3]\nmeasurements = [200]\nrip_trials = 30\n",
    );
    let out = dir.path().join("rip");
    let o = ttrecover(&["rip-probe", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("delta_hat="), "{stdout}");
    assert!(out.join("rip.csv").is_file());
}

#[test]
fn config_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = write_config(dir.path(), "orders = [2]\nunknown_key = 3\n");
    let o = ttrecover(&["sense", "--config", &bad]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown_key"));
    let o = ttrecover(&["sense", "--config", dir.path().join("missing.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(ttrecover(&["sense", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(ttrecover(&["factorise"]).status.code(), Some(2));
}

#[test]
fn all_numerical_failures_exit_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &format!("{SMALL}mu = 1000.0\n"));
    let out = dir.path().join("run");
    let o = ttrecover(&["sense", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    // the failed trials are still written out
    let results = fs::read_to_string(out.join("results.csv")).unwrap();
    assert!(
        results
            .lines()
            .skip(1)
            .all(|l| l.contains(",diverged,") || l.contains(",singular,")),
        "{results}"
    );
}
