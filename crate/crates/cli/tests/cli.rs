use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_orthoinfer"));
    c.env("ORTHOINFER_THREADS", "2");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

/// Small deterministic pseudo-random stream for fixtures.
struct Lcg(u64);

impl Lcg {
    fn uniform(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((self.0 >> 11) as f64 + 0.5) / (1u64 << 53) as f64
    }

    fn normal(&mut self) -> f64 {
        let (u, v) = (self.uniform(), self.uniform());
        (-2.0 * u.ln()).sqrt() * (2.0 * std::f64::consts::PI * v).cos()
    }
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<f64>]) {
    let mut s = header.join(",") + "\n";
    for r in rows {
        let cells: Vec<String> = r.iter().map(|v| format!("{v:?}")).collect();
        s.push_str(&(cells.join(",") + "\n"));
    }
    std::fs::write(path, s).unwrap();
}

/// `n × p` Gaussian design with `y = x0 + x1 + x2 + ε`.
fn random_fixture(dir: &Path, n: usize, p: usize, seed: u64) -> PathBuf {
    let mut g = Lcg(seed);
    let mut header: Vec<String> = (0..p).map(|j| format!("x{j}")).collect();
    header.push("y".into());
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let mut r: Vec<f64> = (0..p).map(|_| g.normal()).collect();
            let y = r[0] + r[1] + r[2] + g.normal();
            r.push(y);
            r
        })
        .collect();
    let path = dir.join("data.csv");
    write_csv(&path, &header, &rows);
    path
}

/// Walsh columns on 8 rows: mutually orthogonal and centered.
fn orthogonal_fixture(dir: &Path) -> (PathBuf, Vec<f64>, Vec<[f64; 3]>) {
    let cols: Vec<[f64; 8]> = vec![
        [1., -1., 1., -1., 1., -1., 1., -1.],
        [1., 1., -1., -1., 1., 1., -1., -1.],
        [1., 1., 1., 1., -1., -1., -1., -1.],
    ];
    let y = [3.1, 0.4, -1.2, 2.2, 0.9, -0.7, 1.5, -2.0];
    let header = vec!["a".into(), "b".into(), "c".into(), "y".into()];
    let rows: Vec<Vec<f64>> = (0..8)
        .map(|i| vec![cols[0][i], cols[1][i], cols[2][i], y[i]])
        .collect();
    let path = dir.join("orth.csv");
    write_csv(&path, &header, &rows);
    let ybar = y.iter().sum::<f64>() / 8.0;
    let est: Vec<f64> = cols
        .iter()
        .map(|c| c.iter().zip(&y).map(|(a, b)| a * (b - ybar)).sum::<f64>() / 8.0)
        .collect();
    let intervals = est
        .iter()
        .map(|&e| {
            let hw = 1.959963984540054 * (1.0f64 / 8.0).sqrt();
            [e, e - hw, e + hw]
        })
        .collect();
    (path, est, intervals)
}

fn parse_report_csv(path: &Path) -> Vec<Vec<f64>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|c| c.parse().unwrap_or(f64::NAN)).collect())
        .collect()
}

#[test]
fn infer_on_orthogonal_design_matches_least_squares() {
    let dir = tempfile::tempdir().unwrap();
    let (data, est, ivs) = orthogonal_fixture(dir.path());
    let out = dir.path().join("out");
    let o = run(&[
        "infer", "--data", data.to_str().unwrap(), "--response", "y", "--tau", "1", "--seed", "3",
        "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = parse_report_csv(&out.join("report.csv"));
    assert_eq!(rows.len(), 3);
    for (r, (e, iv)) in rows.iter().zip(est.iter().zip(&ivs)) {
        assert!((r[1] - e).abs() < 1e-10, "{} vs {e}", r[1]);
        assert!((r[2] - iv[1]).abs() < 1e-10);
        assert!((r[3] - iv[2]).abs() < 1e-10);
    }
    let m = read_json(&out.join("manifest.json"));
    assert_eq!(m["command"], "infer");
    assert_eq!(m["seeds"]["master"], 3);
    assert_eq!(m["seed_source"], "flag");
    let rj = read_json(&out.join("report.json"));
    assert_eq!(rj["manifest"], "manifest.json");
    assert!(out.join("collapse.json").exists());
}

#[test]
fn same_seed_gives_identical_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = random_fixture(dir.path(), 40, 60, 11);
    let run_once = |name: &str| {
        let out = dir.path().join(name);
        let o = run(&[
            "infer", "--data", data.to_str().unwrap(), "--response", "y", "--seed", "99",
            "--out", out.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        out
    };
    let a = run_once("a");
    let b = run_once("b");
    let ma = read_json(&a.join("manifest.json"));
    let mb = read_json(&b.join("manifest.json"));
    assert_eq!(ma["digest"], mb["digest"]);
    assert_eq!(ma["outputs"], mb["outputs"]);
    assert_eq!(
        std::fs::read(a.join("report.csv")).unwrap(),
        std::fs::read(b.join("report.csv")).unwrap()
    );
    assert_eq!(ma["notes"]["variance"]["method"], "refitted_cross_validation");
}

#[test]
fn unseeded_run_records_drawn_seed() {
    let dir = tempfile::tempdir().unwrap();
    let data = random_fixture(dir.path(), 30, 20, 5);
    let out = dir.path().join("out");
    let o = run(&["infer", "--data", data.to_str().unwrap(), "--response", "y", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = read_json(&out.join("manifest.json"));
    assert_eq!(m["seed_source"], "drawn");
    assert!(m["seeds"]["master"].is_u64());
}

#[test]
fn invalid_inputs_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = random_fixture(dir.path(), 20, 10, 1);
    let d = data.to_str().unwrap();
    let out = dir.path().join("out");
    let o = run(&["infer", "--data", d, "--response", "y", "--alpha", "1.5", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("alpha"));
    let o = run(&["infer", "--data", d, "--response", "nope", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("nope"));
    let o = run(&["infer", "--response", "y"]);
    assert_eq!(code(&o), 2);
    let o = run(&["models", "--data", d, "--response", "y", "--s-hat", "x0,zz", "--tau", "1", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
}

#[test]
fn models_enumerates_and_filters() {
    let dir = tempfile::tempdir().unwrap();
    let data = random_fixture(dir.path(), 60, 8, 21);
    let out = dir.path().join("out");
    let o = run(&[
        "models", "--data", data.to_str().unwrap(), "--response", "y", "--s-hat", "x0,x1,x5",
        "--max-size", "2", "--tau", "1", "--seed", "4", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m = read_json(&out.join("manifest.json"));
    assert_eq!(m["notes"]["candidates"], 6);
    let models = read_json(&out.join("models.json"));
    assert_eq!(models["candidates"], 6);
    let table = std::fs::read_to_string(out.join("models.csv")).unwrap();
    assert!(table.starts_with("model,x0,x1,x5\n"), "{table}");
    for f in ["compatible.csv", "inference.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let compat = std::fs::read_to_string(out.join("compatible.csv")).unwrap();
    assert!(compat.lines().count() <= table.lines().count());
}

#[test]
fn models_with_indices_and_stability_screen() {
    let dir = tempfile::tempdir().unwrap();
    let data = random_fixture(dir.path(), 60, 30, 8);
    let out = dir.path().join("idx");
    let o = run(&[
        "models", "--data", data.to_str().unwrap(), "--response", "y", "--s-hat", "0,1,2,3",
        "--max-size", "3", "--tau", "1", "--seed", "4", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_json(&out.join("manifest.json"))["notes"]["candidates"], 14);

    let out = dir.path().join("screen");
    let o = run(&[
        "models", "--data", data.to_str().unwrap(), "--response", "y", "--screen",
        "--stability-reps", "40", "--max-size", "3", "--tau", "1", "--seed", "4",
        "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let sel = read_json(&out.join("stability.json"));
    let chosen: Vec<u64> = sel["selected"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).collect();
    for j in 0..3 {
        assert!(chosen.contains(&j), "signal {j} missing from {chosen:?}");
    }
}

#[test]
fn oversized_enumeration_exits_with_code_four() {
    let dir = tempfile::tempdir().unwrap();
    let data = random_fixture(dir.path(), 80, 40, 2);
    let s: Vec<String> = (0..35).map(|j| format!("x{j}")).collect();
    let out = dir.path().join("out");
    let o = run(&[
        "models", "--data", data.to_str().unwrap(), "--response", "y", "--s-hat", &s.join(","),
        "--max-size", "10", "--tau", "1", "--seed", "1", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("candidate"));
}

#[test]
fn twenty_two_variables_up_to_five_give_35442_candidates() {
    let dir = tempfile::tempdir().unwrap();
    let data = random_fixture(dir.path(), 60, 25, 9);
    let s: Vec<String> = (0..22).map(|j| format!("x{j}")).collect();
    let out = dir.path().join("out");
    let o = run(&[
        "models", "--data", data.to_str().unwrap(), "--response", "y", "--s-hat", &s.join(","),
        "--max-size", "5", "--tau", "1", "--seed", "1", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(read_json(&out.join("manifest.json"))["notes"]["candidates"], 35442);
}

#[test]
fn simulate_from_config_on_independent_design() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.json");
    std::fs::write(&cfg, r#"{"rho": 0.0, "n": 32, "p": 8, "s": 2, "reps": 400, "master_seed": 17}"#).unwrap();
    let out = dir.path().join("out");
    let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&out.join("simulation.json"));
    let cov = r["aggregates"]["median_coverage"].as_f64().unwrap();
    assert!((cov - 0.95).abs() < 0.04, "median coverage {cov}");
    let m = read_json(&out.join("manifest.json"));
    assert_eq!(m["seed_source"], "config");
    assert_eq!(m["seeds"]["master"], 17);
    let fig = std::fs::read_to_string(out.join("simulation_figure.csv")).unwrap();
    assert_eq!(fig.lines().count(), 9);
    assert!(out.join("table1.csv").exists());
}

#[test]
fn simulate_rejects_bad_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("sim.json");
    let out = dir.path().join("out");
    for bad in [
        r#"{"rho": 0.2, "n": 32, "p": 8, "colour": 1}"#,
        r#"{"schema": 2, "rho": 0.2, "n": 32, "p": 8}"#,
        r#"{"rho": 1.5, "n": 32, "p": 8}"#,
        "not json",
    ] {
        std::fs::write(&cfg, bad).unwrap();
        let o = run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(code(&o), 2, "{bad}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn table1_preset_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = run(&["simulate", "--table1", "--reps", "4", "--seed", "2", "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let t = std::fs::read_to_string(out.join("table1.csv")).unwrap();
    assert_eq!(t.lines().count(), 9);
    let m = read_json(&out.join("manifest.json"));
    assert_eq!(m["seeds"].as_object().unwrap().len(), 9);
    assert!(out.join("effects.csv").exists() || m["notes"]["effects_error"].is_string());
}
