use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ekl"))
}

fn config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/quartic1d.json")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn ekl")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn result_of(path: &Path) -> serde_json::Value {
    let v: serde_json::Value = serde_json::from_slice(&fs::read(path).unwrap()).unwrap();
    v["result"].clone()
}

fn table_of(path: &Path) -> String {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn missing_config_is_exit_2() {
    let o = run(&["predict", "-c", "/definitely/not/here.json"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn unknown_field_is_exit_2_and_named() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.json");
    fs::write(
        &p,
        r#"{"potential": {"family": "quartic-double-well-1d", "dimension": 1}, "epsilon": 0.1, "gama": 1}"#,
    )
    .unwrap();
    let o = run(&[
        "predict",
        "-c",
        p.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("gama"));
}

#[test]
fn out_of_range_epsilon_is_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "predict",
        "-c",
        config().to_str().unwrap(),
        "--epsilon",
        "2",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn non_double_well_is_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.json");
    // convex: one minimum, no saddle
    fs::write(
        &p,
        r#"{"potential": {"family": "polynomial-custom", "dimension": 1, "parameters": [0, 0, 0.5]}, "epsilon": 0.1}"#,
    )
    .unwrap();
    let o = run(&[
        "predict",
        "-c",
        p.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 1, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn predict_quartic() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "predict",
        "-c",
        config().to_str().unwrap(),
        "--epsilon",
        "0.15",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(dir.path().join("predictions.csv"))
        .unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(&rows[0][2], "underdamped");
    let t: f64 = rows[0][5].parse().unwrap();
    // 2π/μ · √(|U"(σ)|/U"(m)) · e^{0.25/0.15}, U"(σ) = -1, U"(m) = 2, μ = (√5 - 1)/2
    let mu = (5f64.sqrt() - 1.0) / 2.0;
    let expect = 2.0 * std::f64::consts::PI / mu / 2f64.sqrt() * (0.25f64 / 0.15).exp();
    assert!((t / expect - 1.0).abs() < 1e-9, "{t} vs {expect}");
    assert!((t - 38.06).abs() < 0.01);
}

#[test]
fn set_override_and_seed_flag() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let c = config();
    let o = run(&[
        "simulate",
        "-c",
        c.to_str().unwrap(),
        "--epsilon",
        "0.3",
        "--set",
        "ensemble.n_traj=40",
        "--seed",
        "7",
        "--out",
        d,
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = result_of(&dir.path().join("hitting.json"));
    assert_eq!(r["runs"][0]["stats"]["n_traj"], 40);
    assert_eq!(r["runs"][0]["stats"]["base_seed"], 7);
    assert!(r.get("slope_fit").is_none());
}

#[test]
fn reports_are_byte_stable() {
    let c = config();
    let mut results = Vec::new();
    for jobs in ["1", "3"] {
        let dir = tempfile::tempdir().unwrap();
        let d = dir.path().to_str().unwrap();
        let o = run(&[
            "simulate",
            "-c",
            c.to_str().unwrap(),
            "--set",
            "ensemble.n_traj=60",
            "--jobs",
            jobs,
            "--dump-trajectories",
            "--out",
            d,
        ]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let o = run(&["analyze", "-c", c.to_str().unwrap(), "--out", d]);
        assert_eq!(code(&o), 0);
        results.push((
            result_of(&dir.path().join("hitting.json")).to_string(),
            table_of(&dir.path().join("trajectories.csv")),
            result_of(&dir.path().join("landscape.json")).to_string(),
        ));
    }
    assert_eq!(results[0], results[1]);
    assert!(results[0].0.contains("slope_fit"));
}

#[test]
fn verify_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let o = run(&["verify", "--only", "1", "--out", d]);
    assert_eq!(code(&o), 0);
    let r = result_of(&dir.path().join("verify.json"));
    assert_eq!(r["all_pass"], true);
    let o = run(&["verify", "--only", "4", "--out", d]);
    assert_eq!(code(&o), 1);
    let o = run(&["verify", "--only", "nope", "--out", d]);
    assert_eq!(code(&o), 2);
}
