use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const CONFIG: &str = r#"
[regimes]
count = 2

[dynamics]
b.0 = 0.0
b.1 = 0.1
sigma.0 = 0.2
sigma.1 = 0.3

[profit]
form = "arctan"

[cost]
form = "inverse_quadratic"

[kernel]
p = [[0.0, 1.0], [1.0, 0.0]]
m_lo = -1.0
m_hi = 1.0
jump_std = 1.0

[discount]
beta = 0.5

[grid]
x_lo = -6.0
x_hi = 8.0
n = 71
dt = 0.1

[solve]
tol = 1e-7

[mc]
n_paths = 64
horizon = 3.0
dt = 0.02
seed = 9
record_paths = 2

[audit]
n_states = 3
n_paths = 1000

[fseries]
order = 6

[strategy]
kind = "cadence"
t0 = 0.5
m = 0.2
start_x = 1.0
"#;

fn impulse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_impulse")).args(args).output().expect("binary runs")
}

fn impulse_env(args: &[&str], threads: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_impulse"))
        .args(args)
        .env("IMPULSE_THREADS", threads)
        .output()
        .expect("binary runs")
}

fn setup(config: &str) -> (TempDir, String) {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("problem.toml");
    fs::write(&path, config).unwrap();
    let p = path.to_str().unwrap().to_string();
    (dir, p)
}

fn error_record(out: &Output) -> Value {
    let line = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(line.trim()).unwrap_or_else(|e| panic!("stderr is not one JSON record ({e}): {line}"))
}

fn out_dir(dir: &TempDir, name: &str) -> String {
    dir.path().join(name).to_str().unwrap().to_string()
}

fn solve(dir: &TempDir, cfg: &str, extra: &[&str]) -> String {
    let out = out_dir(dir, "solve");
    let mut args = vec!["solve", "-c", cfg, "-o", &out];
    args.extend_from_slice(extra);
    let res = impulse(&args);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    out
}

#[test]
fn missing_config_is_a_usage_error() {
    let dir = TempDir::new().unwrap();
    let out = out_dir(&dir, "o");
    let res = impulse(&["solve", "-c", "/nonexistent/problem.toml", "-o", &out]);
    assert_eq!(res.status.code(), Some(2));
    let rec = error_record(&res);
    assert_eq!(rec["error"], "FileNotFound");
    assert_eq!(rec["exit_code"], 2);
}

#[test]
fn unknown_key_is_rejected() {
    let (dir, cfg) = setup(&CONFIG.replace("beta = 0.5", "beta = 0.5\nrate = 2.0"));
    let res = impulse(&["solve", "-c", &cfg, "-o", &out_dir(&dir, "o")]);
    assert_eq!(res.status.code(), Some(2));
    assert_eq!(error_record(&res)["error"], "ParseError");
}

#[test]
fn solve_writes_artifacts_and_records_overrides() {
    let (dir, cfg) = setup(CONFIG);
    let out = solve(&dir, &cfg, &["--tol", "1e-6", "--n", "57"]);
    let manifest: Value =
        serde_json::from_str(&fs::read_to_string(Path::new(&out).join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["tol"], 1e-6);
    assert_eq!(manifest["n_points"], 57);
    assert!(manifest["residual"].as_f64().unwrap() <= 1e-6);
    assert_eq!(manifest["spec_hash"].as_str().unwrap().len(), 64);
    let values = fs::read_to_string(Path::new(&out).join("values.csv")).unwrap();
    assert!(values.contains("# tol = 0.000001"));
    assert_eq!(values.lines().filter(|l| !l.starts_with('#')).count(), 1 + 2 * 57);
    assert!(Path::new(&out).join("regions.csv").exists());
}

#[test]
fn repeated_seed_gives_identical_files() {
    let (dir, cfg) = setup(CONFIG);
    let a = out_dir(&dir, "a");
    let b = out_dir(&dir, "b");
    let c = out_dir(&dir, "c");
    assert!(impulse_env(&["simulate", "-c", &cfg, "-o", &a], "1").status.success());
    assert!(impulse_env(&["simulate", "-c", &cfg, "-o", &b], "1").status.success());
    assert!(impulse_env(&["simulate", "-c", &cfg, "-o", &c], "3").status.success());
    for f in ["traces.csv", "episodes.csv", "gain.csv", "paths.csv"] {
        let fa = fs::read(Path::new(&a).join(f)).unwrap();
        assert_eq!(fa, fs::read(Path::new(&b).join(f)).unwrap(), "{f}");
        assert_eq!(fa, fs::read(Path::new(&c).join(f)).unwrap(), "{f} with 3 threads");
    }
    let d = out_dir(&dir, "d");
    assert!(impulse(&["simulate", "-c", &cfg, "-o", &d, "--seed", "10"]).status.success());
    assert_ne!(fs::read(Path::new(&a).join("gain.csv")).unwrap(), fs::read(Path::new(&d).join("gain.csv")).unwrap());
}

#[test]
fn one_path_is_insufficient() {
    let (dir, cfg) = setup(CONFIG);
    let res = impulse(&["simulate", "-c", &cfg, "-o", &out_dir(&dir, "o"), "--n-paths", "1"]);
    assert_eq!(res.status.code(), Some(2));
    assert_eq!(error_record(&res)["error"], "InsufficientPaths");
}

#[test]
fn optimal_strategy_needs_fields() {
    let (dir, cfg) = setup(&CONFIG.replace("kind = \"cadence\"", "kind = \"optimal\""));
    let res = impulse(&["simulate", "-c", &cfg, "-o", &out_dir(&dir, "o")]);
    assert_eq!(res.status.code(), Some(2));
    assert_eq!(error_record(&res)["error"], "MissingFields");

    let solved = solve(&dir, &cfg, &[]);
    let values = format!("{solved}/values.csv");
    let sim = out_dir(&dir, "sim");
    let res = impulse(&["simulate", "-c", &cfg, "-o", &sim, "--fields", &values]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(fs::read_to_string(Path::new(&sim).join("gain.csv")).unwrap().contains("optimal"));
}

#[test]
fn fields_from_another_spec_are_refused() {
    let (dir, cfg) = setup(CONFIG);
    let solved = solve(&dir, &cfg, &[]);
    let other = dir.path().join("other.toml");
    fs::write(&other, CONFIG.replace("beta = 0.5", "beta = 0.6")).unwrap();
    let res = impulse(&[
        "verify",
        "-c",
        other.to_str().unwrap(),
        "-o",
        &out_dir(&dir, "v"),
        "--fields",
        &format!("{solved}/values.csv"),
    ]);
    assert_eq!(res.status.code(), Some(2));
    assert_eq!(error_record(&res)["error"], "SpecMismatch");
}

fn corrupt(values: &str) -> String {
    let mut header_seen = false;
    let mut done = false;
    values
        .lines()
        .map(|line| {
            if line.starts_with('#') {
                return line.to_string();
            }
            if !header_seen {
                header_seen = true;
                return line.to_string();
            }
            let mut cols: Vec<String> = line.split(',').map(str::to_string).collect();
            let x: f64 = cols[1].parse().unwrap();
            if !done && cols[0] == "0" && x >= 4.0 {
                let rp: f64 = cols[2].parse().unwrap();
                cols[2] = format!("{}", rp * 0.9);
                done = true;
            }
            cols.join(",")
        })
        .collect::<Vec<_>>()
        .join("\n")
        + "\n"
}

#[test]
fn verify_passes_clean_fields_and_fails_corrupted_ones() {
    let (dir, cfg) = setup(CONFIG);
    let solved = solve(&dir, &cfg, &[]);
    let values = format!("{solved}/values.csv");

    let good = out_dir(&dir, "good");
    let res = impulse(&["verify", "-c", &cfg, "-o", &good, "--fields", &values]);
    let report = fs::read_to_string(Path::new(&good).join("verify.csv")).unwrap();
    assert_eq!(res.status.code(), Some(0), "{report}");
    assert!(report.contains("check,value,threshold,pass"));
    assert!(report.contains("fseries_vs_mc"));
    assert!(!report.contains(",false"));

    let bad_values = dir.path().join("bad.csv");
    fs::write(&bad_values, corrupt(&fs::read_to_string(&values).unwrap())).unwrap();
    let bad = out_dir(&dir, "bad");
    let res = impulse(&["verify", "-c", &cfg, "-o", &bad, "--fields", bad_values.to_str().unwrap()]);
    assert_eq!(res.status.code(), Some(1));
    let report = fs::read_to_string(Path::new(&bad).join("verify.csv")).unwrap();
    assert!(report.contains("rho_is_max,") && report.contains(",false"), "{report}");
}

#[test]
fn regions_and_export_read_saved_fields() {
    let (dir, cfg) = setup(CONFIG);
    let solved = solve(&dir, &cfg, &[]);
    let values = format!("{solved}/values.csv");
    let out = out_dir(&dir, "post");
    assert!(impulse(&["regions", "--fields", &values, "-o", &out]).status.success());
    let body = |p: String| -> Vec<String> {
        fs::read_to_string(p).unwrap().lines().filter(|l| !l.starts_with('#')).map(str::to_string).collect()
    };
    let rows = body(format!("{out}/regions.csv"));
    assert!(rows.len() > 1);
    assert_eq!(rows, body(format!("{solved}/regions.csv")));
    assert!(impulse(&["export", "--fields", &values, "-o", &out]).status.success());
    let plot = fs::read_to_string(format!("{out}/plot.csv")).unwrap();
    let header = plot.lines().find(|l| !l.starts_with('#')).unwrap();
    assert!(header.starts_with("x,") && header.contains("rho_plus_1") && header.contains("label_0"));
    assert_eq!(plot.lines().filter(|l| !l.starts_with('#')).count(), 1 + 71);

    let res = impulse(&["export", "--fields", "/nonexistent/values.csv", "-o", &out]);
    assert_eq!(res.status.code(), Some(2));
    assert_eq!(error_record(&res)["error"], "FileNotFound");
}
