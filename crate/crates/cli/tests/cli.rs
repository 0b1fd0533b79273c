use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_obs-forge");

const REFERENCE: &str = r#"{
  "plant": {"A_p": [[-6, 2], [-5, -1]], "B_p": [[1], [1]], "Q_p": [[0.5, 0], [0, 0.5]]},
  "controller": {"A_c": [[-7, 4], [-8, -7]], "B_c": [[1], [1]], "C_c": [[1, 0]], "D_c": 1.0}
}"#;

/// Small attack with observer poles at `σ(A + 2BH̄)`, i.e. `L ≈ 0`.
const FEASIBLE_POLES: &str = "-3.601971+1.743772j,-3.601971-1.743772j,-6.983033+5.671129j,-6.983033-5.671129j";

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .arg("--out")
        .arg(dir)
        .env_remove("OBS_FORGE_LOG")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write_system(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn validate_reference_passes() {
    let tmp = TempDir::new().unwrap();
    let out = run(tmp.path(), &["validate"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = json(&tmp.path().join("assumptions.json"));
    assert_eq!(report["spectra_disjoint"], true);
    assert!(tmp.path().join("meta.json").exists());
}

#[test]
fn validate_shared_pole_exits_one() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_system(
        tmp.path(),
        "shared.json",
        r#"{"plant": {"A_p": [[-1, 0], [0, -2]], "B_p": [[1], [1]], "Q_p": [[1, 0], [0, 1]]},
            "controller": {"A_c": [[-1, 1], [0, -3]], "B_c": [[1], [1]], "C_c": [[1, 0]], "D_c": 0.0}}"#,
    );
    let out = run(tmp.path(), &["validate", "--config", &cfg]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("Assumption 3(i)"), "{}", stderr(&out));
}

#[test]
fn truncated_json_exits_two() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_system(tmp.path(), "bad.json", &REFERENCE[..REFERENCE.len() / 2]);
    for cmd in ["validate", "synthesize", "reproduce-paper"] {
        let out = run(tmp.path(), &[cmd, "--config", &cfg]);
        assert_eq!(code(&out), 2, "{cmd}: {}", stderr(&out));
        assert!(stderr(&out).contains("line"), "{}", stderr(&out));
    }
}

#[test]
fn invalid_arguments_exit_two() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(code(&run(tmp.path(), &["synthesize", "--gamma-fraction", "1.5"])), 2);
    assert_eq!(code(&run(tmp.path(), &["synthesize", "--poles", "-1,banana,-2,-3"])), 2);
    assert_eq!(code(&run(tmp.path(), &["synthesize", "--pi", "1,2,3"])), 2);
    let missing = tmp.path().join("missing.json");
    assert_eq!(code(&run(tmp.path(), &["validate", "--config", missing.to_str().unwrap()])), 2);
}

#[test]
fn zero_weight_aborts_synthesis() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_system(tmp.path(), "q0.json", &REFERENCE.replace("[[0.5, 0], [0, 0.5]]", "[[0, 0], [0, 0]]"));
    let out = run(tmp.path(), &["synthesize", "--config", &cfg]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    let out = run(tmp.path(), &["synthesize", "--config", &cfg, "--pi", "1,-3"]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    assert!(!tmp.path().join("bundle.json").exists());
}

#[test]
fn reference_synthesis_writes_bundle_and_reports_infeasible_region() {
    let tmp = TempDir::new().unwrap();
    let out = run(tmp.path(), &["synthesize"]);
    assert_eq!(code(&out), 3, "{}", stderr(&out));
    assert!(stderr(&out).contains("observer gain"));
    let bundle = json(&tmp.path().join("bundle.json"));
    let gmax = bundle["attack"]["gamma_max"].as_f64().unwrap();
    assert!((gmax - 0.85).abs() < 0.02);
    assert_eq!(bundle["verification"]["roa_feasible"], false);
    assert_eq!(bundle["verification"]["placement_ok"], true);
}

#[test]
fn synthesis_is_byte_identical_across_runs() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    for dir in [a.path(), b.path()] {
        run(dir, &["synthesize", "--seed", "9", "--config", &write_system(dir, "s.json", REFERENCE)]);
    }
    let x = fs::read(a.path().join("bundle.json")).unwrap();
    let y = fs::read(b.path().join("bundle.json")).unwrap();
    assert!(!x.is_empty());
    assert_eq!(x, y);
}

#[test]
fn feasible_design_synthesizes_and_certifies() {
    let tmp = TempDir::new().unwrap();
    let out = run(tmp.path(), &["synthesize", "--gamma-fraction", "0.05", "--poles", FEASIBLE_POLES]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let bundle = tmp.path().join("bundle.json");
    let out = run(
        tmp.path(),
        &["roa", "--bundle", bundle.to_str().unwrap(), "--horizon", "1", "--dt", "0.005"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = json(&tmp.path().join("roa.json"));
    let decay = &report["decay"];
    assert_eq!(decay["satisfied"], decay["n_samples"]);
    assert_eq!(report["box_check"]["diverged"], 0);
}

#[test]
fn simulate_writes_trajectory_and_fit() {
    let tmp = TempDir::new().unwrap();
    let out = run(tmp.path(), &["simulate"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = fs::read_to_string(tmp.path().join("trajectory.csv")).unwrap();
    assert!(csv.starts_with("t,z1,z2,z3,z4,zhat1"));
    assert_eq!(csv.lines().count(), 5002);
    assert!(tmp.path().join("trajectory.gp").exists());
    let report = json(&tmp.path().join("simulation.json"));
    assert!(report["error_fit"]["alpha"].as_f64().unwrap() > 0.0);
    assert!(report["state_fit"]["alpha"].as_f64().unwrap() > 0.0);
}

#[test]
fn simulate_from_origin_is_zero() {
    let tmp = TempDir::new().unwrap();
    let out = run(
        tmp.path(),
        &["simulate", "--z0", "0,0,0,0", "--zhat0", "0,0,0,0", "--horizon", "0.05"],
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let csv = fs::read_to_string(tmp.path().join("trajectory.csv")).unwrap();
    for line in csv.lines().skip(1) {
        assert!(line.split(',').skip(1).all(|v| v.parse::<f64>().unwrap() == 0.0), "{line}");
    }
}

#[test]
fn simulate_far_outside_region_diverges_gracefully() {
    let tmp = TempDir::new().unwrap();
    let out = run(tmp.path(), &["simulate", "--z0", "50,-50,50,-50", "--zhat0", "0,0,0,0"]);
    match code(&out) {
        4 => assert!(stderr(&out).contains("t = "), "{}", stderr(&out)),
        0 => {}
        other => panic!("exit {other}: {}", stderr(&out)),
    }
}

#[test]
fn simulate_reuses_written_bundle() {
    let tmp = TempDir::new().unwrap();
    run(tmp.path(), &["synthesize"]);
    let bundle = tmp.path().join("bundle.json");
    let out = run(tmp.path(), &["simulate", "--bundle", bundle.to_str().unwrap(), "--horizon", "1"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(fs::read_to_string(tmp.path().join("trajectory.csv")).unwrap().lines().count(), 1002);
}

#[test]
fn reproduce_passes_and_is_deterministic() {
    let a = TempDir::new().unwrap();
    let b = TempDir::new().unwrap();
    let out = run(a.path(), &["reproduce-paper"]);
    assert_eq!(code(&out), 0, "{}\n{}", String::from_utf8_lossy(&out.stdout), stderr(&out));
    assert_eq!(code(&run(b.path(), &["reproduce-paper", "--sequential"])), 0);
    assert_eq!(
        fs::read(a.path().join("reproduction.json")).unwrap(),
        fs::read(b.path().join("reproduction.json")).unwrap()
    );
}

#[test]
fn reproduce_flags_perturbed_plant() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_system(tmp.path(), "perturbed.json", &REFERENCE.replace("[[-6, 2], [-5, -1]]", "[[-6, 2], [-5, -1.5]]"));
    let out = run(tmp.path(), &["reproduce-paper", "--config", &cfg]);
    assert_eq!(code(&out), 5, "{}", stderr(&out));
    assert!(stderr(&out).contains("closed-loop spectrum"), "{}", stderr(&out));
}
