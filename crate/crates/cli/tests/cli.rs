use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn uturnlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_uturnlab"))
        .args(args)
        .env_remove("UTURNLAB_THREADS")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// report.json without its timing field.
fn report(dir: &Path) -> Value {
    let mut v: Value = serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap();
    v.as_object_mut()
        .unwrap()
        .remove("wall_clock_seconds")
        .expect("timing field present");
    v
}

fn csvs(dir: &Path) -> Vec<(String, String)> {
    let mut out: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read_to_string(&p).unwrap(),
            )
        })
        .collect();
    out.sort();
    out
}

fn out_arg(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_string_lossy().into_owned()
}

#[test]
fn predict_prints_the_orbit_length() {
    let tmp = TempDir::new().unwrap();
    let o = uturnlab(&[
        "predict",
        "--target",
        "two_scale:1,2500,200,4000",
        "--h",
        "0.0014921",
        "--kmax",
        "8",
        "-o",
        &out_arg(&tmp, "p"),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(
        stdout(&o).contains("t* = 0.094, k* = 6, capped = false"),
        "{}",
        stdout(&o)
    );
    let menu = fs::read_to_string(tmp.path().join("p/menu.csv")).unwrap();
    assert!(menu.starts_with("seed,k,t,f_unif\n"));
    assert_eq!(menu.lines().count(), 9);
}

#[test]
fn phase_of_comparable_scales() {
    let tmp = TempDir::new().unwrap();
    let o = uturnlab(&["phase", "--kappa", "2", "--ratio", "10", "-o", &out_arg(&tmp, "ph")]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("accelerated: true"));
}

#[test]
fn missing_field_is_a_config_error() {
    let tmp = TempDir::new().unwrap();
    let o = uturnlab(&[
        "predict",
        "--target",
        "isotropic:1,10",
        "--h",
        "0.1",
        "-o",
        &out_arg(&tmp, "x"),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("k_max"), "{}", stderr(&o));
    assert!(!tmp.path().join("x").exists());
}

#[test]
fn unknown_fields_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg = tmp.path().join("c.json");
    fs::write(&cfg, r#"{"seed": 1, "params": {"kappa": 9, "ratio": 1, "ratoi": 2}}"#).unwrap();
    let o = uturnlab(&["phase", "--config", cfg.to_str().unwrap(), "-o", &out_arg(&tmp, "x")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("ratoi"), "{}", stderr(&o));

    fs::write(&cfg, r#"{"seed": 1, "treads": 2, "params": {}}"#).unwrap();
    let o = uturnlab(&["phase", "--config", cfg.to_str().unwrap(), "-o", &out_arg(&tmp, "x")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("treads"), "{}", stderr(&o));
}

#[test]
fn preconditions_are_config_errors() {
    let tmp = TempDir::new().unwrap();
    // h^2 m = 4.84 is past the leapfrog stability limit
    let o = uturnlab(&[
        "orbits",
        "--target",
        "isotropic:1,10",
        "--h",
        "2.2",
        "--kmax",
        "4",
        "--flow",
        "leapfrog",
        "--transitions",
        "10",
        "-o",
        &out_arg(&tmp, "x"),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn failed_tolerance_exits_with_one() {
    let tmp = TempDir::new().unwrap();
    let o = uturnlab(&[
        "sample",
        "--target",
        "isotropic:1,5",
        "--kernel",
        "nuts",
        "--h",
        "0.3",
        "--kmax",
        "5",
        "--chains",
        "50",
        "--transitions",
        "3",
        "--ks-tolerance",
        "0",
        "-o",
        &out_arg(&tmp, "s"),
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stdout(&o).contains("FAIL ks_block_0"));
    assert!(tmp.path().join("s/report.json").exists());
}

/// A small config for every subcommand.
fn configs() -> Vec<(&'static str, &'static str)> {
    vec![
        (
            "sample",
            r#"{"seed": 3, "params": {"target": {"kind": "two_scale", "m1": 1, "m2": 16, "d1": 5, "d2": 5},
                "kernel": {"kind": "nuts", "h": 0.1, "k_max": 6}, "n_chains": 64, "n_transitions": 4, "trace": true}}"#,
        ),
        (
            "concentration",
            r#"{"seed": 4, "params": {"target": {"kind": "isotropic", "m": 1, "d": 50}, "n_draws": 300, "grid_points": 8}}"#,
        ),
        (
            "orbits",
            r#"{"seed": 5, "params": {"target": {"kind": "isotropic", "m": 1, "d": 50}, "h": 0.2, "k_max": 6,
                "flow": "leapfrog", "n_transitions": 100}}"#,
        ),
        ("phase", r#"{"seed": 6, "params": {"kappa": 100, "ratio": 3}}"#),
        (
            "contraction",
            r#"{"seed": 7, "params": {"target": {"kind": "isotropic", "m": 1, "d": 8},
                "law": {"variant": "triangular", "h": 0.3, "k_star": 3}, "n_pairs": 100, "n_steps": 3,
                "shifts": [0.5, 1.0], "n_meet_trials": 200}}"#,
        ),
        (
            "mixing",
            r#"{"seed": 8, "params": {"target": {"kind": "isotropic", "m": 1, "d": 10},
                "kernel": {"kind": "hmc", "law": {"variant": "exponential", "lambda": 1.0}},
                "n_replicas": 100, "horizon": 6, "start": "zero"}}"#,
        ),
        (
            "predict",
            r#"{"seed": 9, "params": {"target": {"kind": "two_scale", "m1": 1, "m2": 2500, "d1": 2000, "d2": 2000},
                "h": 0.026, "k_max": 8}}"#,
        ),
    ]
}

#[test]
fn reports_do_not_depend_on_thread_count() {
    let tmp = TempDir::new().unwrap();
    for (cmd, cfg) in configs() {
        let path = tmp.path().join(format!("{cmd}.json"));
        fs::write(&path, cfg).unwrap();
        let mut seen = Vec::new();
        for threads in ["1", "3", "auto"] {
            let dir = tmp.path().join(format!("{cmd}-{threads}"));
            let o = uturnlab(&[
                cmd,
                "--config",
                path.to_str().unwrap(),
                "--threads",
                threads,
                "-o",
                dir.to_str().unwrap(),
            ]);
            assert!(o.status.code().is_some_and(|c| c < 2), "{cmd}: {}", stderr(&o));
            seen.push((report(&dir), csvs(&dir)));
        }
        assert_eq!(seen[0], seen[1], "{cmd}");
        assert_eq!(seen[0], seen[2], "{cmd}");
    }
}

#[test]
fn echoed_config_reruns_to_the_same_results() {
    let tmp = TempDir::new().unwrap();
    for (cmd, cfg) in configs() {
        let path = tmp.path().join(format!("{cmd}.json"));
        fs::write(&path, cfg).unwrap();
        let first = tmp.path().join(format!("{cmd}-a"));
        let o = uturnlab(&[cmd, "--config", path.to_str().unwrap(), "-o", first.to_str().unwrap()]);
        assert!(o.status.code().is_some_and(|c| c < 2), "{cmd}: {}", stderr(&o));

        let echo = first.join("config.json");
        let second = tmp.path().join(format!("{cmd}-b"));
        let o = uturnlab(&[cmd, "--config", echo.to_str().unwrap(), "-o", second.to_str().unwrap()]);
        assert!(o.status.code().is_some_and(|c| c < 2), "{cmd}: {}", stderr(&o));
        assert_eq!(report(&first), report(&second), "{cmd}");
        assert_eq!(csvs(&first), csvs(&second), "{cmd}");
        assert_eq!(
            fs::read_to_string(&echo).unwrap(),
            fs::read_to_string(second.join("config.json")).unwrap()
        );

        // the report's own config echo is a valid parameter set as well
        let rep = report(&first);
        let rebuilt = serde_json::json!({"seed": rep["seed"], "params": rep["config"]});
        let path = tmp.path().join(format!("{cmd}-echo.json"));
        fs::write(&path, rebuilt.to_string()).unwrap();
        let third = tmp.path().join(format!("{cmd}-c"));
        let o = uturnlab(&[cmd, "--config", path.to_str().unwrap(), "-o", third.to_str().unwrap()]);
        assert!(o.status.code().is_some_and(|c| c < 2), "{cmd}: {}", stderr(&o));
        assert_eq!(report(&first), report(&third), "{cmd}");
    }
}

#[test]
fn flags_override_the_config_file() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("p.json");
    fs::write(
        &path,
        r#"{"experiment": "predict", "seed": 1, "params": {"target": {"kind": "isotropic", "m": 1, "d": 100}, "h": 0.15, "k_max": 4}}"#,
    )
    .unwrap();
    let dir = tmp.path().join("o");
    let o = uturnlab(&[
        "predict",
        "--config",
        path.to_str().unwrap(),
        "--kmax",
        "6",
        "--seed",
        "12",
        "-o",
        dir.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rep = report(&dir);
    assert_eq!(rep["config"]["k_max"], 6);
    assert_eq!(rep["seed"], 12);
    // lengths 0.15 (2^k - 1); the first one past pi is k = 5
    assert_eq!(rep["summary"]["k_star"], 5);
    assert_eq!(rep["summary"]["capped"], false);

    let o = uturnlab(&[
        "mixing",
        "--config",
        path.to_str().unwrap(),
        "-o",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("experiment"));
}

#[test]
fn threads_fall_back_to_the_environment() {
    let tmp = TempDir::new().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_uturnlab"))
        .args(["phase", "--kappa", "9", "--ratio", "1", "-o", &out_arg(&tmp, "x")])
        .env("UTURNLAB_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
    let o = Command::new(env!("CARGO_BIN_EXE_uturnlab"))
        .args(["phase", "--kappa", "9", "--ratio", "1", "-o", &out_arg(&tmp, "x")])
        .env("UTURNLAB_THREADS", "2")
        .output()
        .unwrap();
    assert!(o.status.success());
    let echo = fs::read_to_string(tmp.path().join("x/config.json")).unwrap();
    assert!(echo.contains("\"threads\": 2"), "{echo}");
}

#[test]
fn marginal_steps_warn() {
    let tmp = TempDir::new().unwrap();
    let o = uturnlab(&[
        "predict",
        "--target",
        "isotropic:1,10",
        "--h",
        "1.5",
        "--kmax",
        "3",
        "--flow",
        "leapfrog",
        "-o",
        &out_arg(&tmp, "x"),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("warning"));
}
