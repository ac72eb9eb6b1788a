use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn dicke_in(dir: &Path, args: &[&str], env: &[(&str, &Path)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_dicke"));
    cmd.current_dir(dir)
        .env_remove("DICKE_CACHE_DIR")
        .args(args);
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn sidecar(dir: &Path) -> Value {
    serde_json::from_slice(&fs::read(dir.join("run.json")).expect("sidecar")).expect("json")
}

fn read(path: impl AsRef<Path>) -> Vec<u8> {
    fs::read(path.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

const SPECTRUM: [&str; 7] = [
    "spectrum",
    "--n-atoms",
    "4",
    "--lambda",
    "0.7",
    "--n-max",
    "8",
];

#[test]
fn cache_reuse_skips_solves() {
    let tmp = TempDir::new().unwrap();
    let run = |out: &str| {
        let mut args = vec!["--out", out, "--cache-dir", "c"];
        args.extend(SPECTRUM);
        dicke_in(tmp.path(), &args, &[])
    };
    assert_eq!(code(&run("a")), 0);
    let first = sidecar(&tmp.path().join("a"));
    assert!(first["cache"]["solves"].as_u64().unwrap() > 0);
    assert_eq!(code(&run("b")), 0);
    let second = sidecar(&tmp.path().join("b"));
    assert_eq!(second["cache"]["solves"], 0);
    assert!(second["cache"]["hits"].as_u64().unwrap() > 0);
    assert_eq!(
        read(tmp.path().join("a/spectrum.csv")),
        read(tmp.path().join("b/spectrum.csv"))
    );
}

#[test]
fn cached_and_uncached_outputs_match() {
    let tmp = TempDir::new().unwrap();
    let pd = [
        "phase-diagram",
        "--n-atoms",
        "4",
        "--lambdas",
        "0.8,1.0,1.2",
        "--n-max",
        "20",
    ];
    let mut cached = vec!["--out", "a", "--cache-dir", "c"];
    cached.extend(pd);
    let mut plain = vec!["--out", "b", "--no-cache"];
    plain.extend(pd);
    assert_eq!(code(&dicke_in(tmp.path(), &cached, &[])), 0);
    assert_eq!(code(&dicke_in(tmp.path(), &plain, &[])), 0);
    for f in ["doublet_map.csv", "critical_line.csv"] {
        assert_eq!(
            read(tmp.path().join("a").join(f)),
            read(tmp.path().join("b").join(f)),
            "{f}"
        );
    }
    assert_eq!(sidecar(&tmp.path().join("b"))["cache"]["enabled"], false);
}

#[test]
fn truncated_cache_entries_are_recomputed() {
    let tmp = TempDir::new().unwrap();
    let mut args = vec!["--out", "a", "--cache-dir", "c"];
    args.extend(SPECTRUM);
    assert_eq!(code(&dicke_in(tmp.path(), &args, &[])), 0);
    let mut truncated = 0;
    for entry in fs::read_dir(tmp.path().join("c")).unwrap() {
        let path = entry.unwrap().path();
        let bytes = read(&path);
        fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        truncated += 1;
    }
    assert!(truncated > 0);
    let mut again = vec!["--out", "b", "--cache-dir", "c"];
    again.extend(SPECTRUM);
    let o = dicke_in(tmp.path(), &again, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let meta = sidecar(&tmp.path().join("b"));
    assert!(meta["cache"]["solves"].as_u64().unwrap() > 0);
    assert!(!meta["cache"]["warnings"].as_array().unwrap().is_empty());
    assert_eq!(
        read(tmp.path().join("a/spectrum.csv")),
        read(tmp.path().join("b/spectrum.csv"))
    );
}

#[test]
fn cache_dir_from_environment() {
    let tmp = TempDir::new().unwrap();
    let env_dir = tmp.path().join("env-cache");
    let mut args = vec!["--out", "a"];
    args.extend(SPECTRUM);
    assert_eq!(
        code(&dicke_in(
            tmp.path(),
            &args,
            &[("DICKE_CACHE_DIR", &env_dir)]
        )),
        0
    );
    assert!(fs::read_dir(&env_dir).unwrap().count() > 0);
    assert!(!tmp.path().join("cache").exists());
}

#[test]
fn dry_run_writes_nothing() {
    let tmp = TempDir::new().unwrap();
    let mut args = vec!["--out", "a", "--no-cache", "--dry-run"];
    args.extend(SPECTRUM);
    let o = dicke_in(tmp.path(), &args, &[]);
    assert_eq!(code(&o), 0);
    assert!(String::from_utf8_lossy(&o.stderr).contains("dry run"));
    assert!(!tmp.path().join("a").exists());
}

#[test]
fn existing_outputs_need_force() {
    let tmp = TempDir::new().unwrap();
    let mut args = vec!["--out", "a", "--no-cache"];
    args.extend(SPECTRUM);
    assert_eq!(code(&dicke_in(tmp.path(), &args, &[])), 0);
    assert_eq!(code(&dicke_in(tmp.path(), &args, &[])), 4);
    args.insert(0, "--force");
    assert_eq!(code(&dicke_in(tmp.path(), &args, &[])), 0);
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    assert_eq!(
        code(&dicke_in(
            dir,
            &["--no-cache", "spectrum", "--bogus", "1"],
            &[]
        )),
        2
    );
    assert_eq!(
        code(&dicke_in(
            dir,
            &["--no-cache", "spectrum", "--lambda", "-0.5"],
            &[]
        )),
        2
    );
    assert_eq!(
        code(&dicke_in(
            dir,
            &["--no-cache", "--solver", "nope", "spectrum"],
            &[]
        )),
        2
    );
    assert_eq!(
        code(&dicke_in(
            dir,
            &["--config", "missing.json", "spectrum"],
            &[]
        )),
        2
    );
    let quench = [
        "--no-cache",
        "--out",
        "q",
        "quench",
        "--n-atoms",
        "4",
        "--lambda-i",
        "1.5",
        "--lambda-f",
        "1.0",
        "--n-max",
        "3",
    ];
    assert_eq!(code(&dicke_in(dir, &quench, &[])), 3);
    assert_eq!(code(&dicke_in(dir, &["--help"], &[])), 0);
}

#[test]
fn config_file_and_flag_precedence() {
    let tmp = TempDir::new().unwrap();
    fs::write(
        tmp.path().join("run.json"),
        r#"{"n_atoms": 2, "lambda": 0.3, "n_max": 3, "sector": "plus"}"#,
    )
    .unwrap();
    let o = dicke_in(
        tmp.path(),
        &[
            "--config",
            "run.json",
            "--out",
            "a",
            "--no-cache",
            "spectrum",
            "--n-max",
            "5",
        ],
        &[],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = &sidecar(&tmp.path().join("a"))["run_config"]["command"];
    assert_eq!(cfg["n_atoms"], 2);
    assert_eq!(cfg["n_max"], 5);
    assert_eq!(cfg["sector"], "plus");
}

#[test]
fn sidecar_command_line_regenerates_outputs() {
    let tmp = TempDir::new().unwrap();
    let pd = [
        "phase-diagram",
        "--n-atoms",
        "4",
        "--lambdas",
        "0.9:1.3:0.2",
        "--n-max",
        "16",
    ];
    let mut args = vec!["--out", "a", "--no-cache"];
    args.extend(pd);
    assert_eq!(code(&dicke_in(tmp.path(), &args, &[])), 0);
    let line: Vec<String> = sidecar(&tmp.path().join("a"))["command_line"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_owned())
        .collect();
    assert_eq!(line[0], "dicke");
    let replay: Vec<&str> = line[1..]
        .iter()
        .map(|a| {
            if a.starts_with("--out=") {
                "--out=b"
            } else {
                a.as_str()
            }
        })
        .collect();
    let o = dicke_in(tmp.path(), &replay, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["doublet_map.csv", "critical_line.csv"] {
        assert_eq!(
            read(tmp.path().join("a").join(f)),
            read(tmp.path().join("b").join(f)),
            "{f}"
        );
    }
    assert_eq!(
        sidecar(&tmp.path().join("a"))["run_config"]["command"],
        sidecar(&tmp.path().join("b"))["run_config"]["command"]
    );
}

#[test]
fn quench_writes_series_and_summary() {
    let tmp = TempDir::new().unwrap();
    let args = [
        "--out",
        "q",
        "--no-cache",
        "quench",
        "--n-atoms",
        "4",
        "--lambda-i",
        "0.6",
        "--lambda-f",
        "1.0",
        "--t-max",
        "20",
        "--samples",
        "201",
    ];
    let o = dicke_in(tmp.path(), &args, &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = String::from_utf8(read(tmp.path().join("q/series.csv"))).unwrap();
    assert_eq!(csv.lines().count(), 202);
    let r = &sidecar(&tmp.path().join("q"))["results"];
    for key in [
        "lambda_i",
        "lambda_f",
        "branch",
        "N",
        "n_max",
        "E_over_J_formula",
        "E_over_J_numeric",
        "steady_mean",
        "steady_rms",
        "classification",
    ] {
        assert!(!r[key].is_null(), "missing {key}");
    }
    let (a, b) = (
        r["E_over_J_formula"].as_f64().unwrap(),
        r["E_over_J_numeric"].as_f64().unwrap(),
    );
    assert!((a - b).abs() < 1e-6);
}

#[test]
fn mean_field_outputs() {
    let tmp = TempDir::new().unwrap();
    let surface = [
        "--out",
        "s",
        "meanfield-surface",
        "--n-atoms",
        "20",
        "--lambda",
        "1.0",
        "--resolution",
        "64",
    ];
    assert_eq!(code(&dicke_in(tmp.path(), &surface, &[])), 0);
    let s = String::from_utf8(read(tmp.path().join("s/surface.csv"))).unwrap();
    assert_eq!(s.lines().count(), 64 * 64 + 1);
    assert!(read(tmp.path().join("s/contours.csv")).len() > 30);
    let map = [
        "--out",
        "m",
        "quench-map",
        "--n-atoms",
        "20",
        "--resolution",
        "16",
    ];
    assert_eq!(code(&dicke_in(tmp.path(), &map, &[])), 0);
    let m = String::from_utf8(read(tmp.path().join("m/quench_map.csv"))).unwrap();
    assert_eq!(m.lines().count(), 16 * 16 + 1);
    assert!(tmp.path().join("m/critical_contour.csv").exists());
}
