use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn instance(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("instances").join(name)
}

fn hvopt(args: &[&str]) -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_hvopt"));
    c.args(args).env_remove("HVOPT_OUT");
    c
}

fn run_in(out: &Path, args: &[&str]) -> Output {
    hvopt(args).arg("--out").arg(out).output().unwrap()
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn csv_rows(dir: &Path, name: &str) -> Vec<Vec<String>> {
    csv::Reader::from_path(dir.join(name)).unwrap().records().map(|r| r.unwrap().iter().map(String::from).collect()).collect()
}

#[test]
fn compare_agrees_on_the_scalar_l0_instance() {
    let dir = TempDir::new().unwrap();
    let o = run_in(dir.path(), &["compare", instance("l0-scalar.toml").to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(dir.path(), "compare.csv");
    assert_eq!(rows.len(), 3);
    for r in &rows {
        let value: f64 = r[2].parse().unwrap();
        assert!((value - 0.5).abs() < 1e-6, "{r:?}");
        assert_eq!(r[4], "true", "{r:?}");
    }
    assert_eq!(rows[0][0], "grid-global-minimum");
    assert!(rows[1..].iter().all(|r| r[5] == "pseudo-b-stationary"), "{rows:?}");
    assert!(read(dir.path(), "compare.txt").starts_with("# hvopt-report 1\n"));
}

#[test]
fn negative_l0_weight_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let src = fs::read_to_string(instance("l0-scalar.toml")).unwrap().replace("weights = [0.5]", "weights = [-1.0]");
    let file = dir.path().join("bad.toml");
    fs::write(&file, src).unwrap();
    let o = run_in(&dir.path().join("out"), &["validate", file.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("l0.weights") && err.contains("nonnegative"), "{err}");
}

#[test]
fn missing_problem_file_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let o = run_in(dir.path(), &["validate", dir.path().join("absent.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn truncated_hinge_fails_the_convergence_axiom_at_zero() {
    let dir = TempDir::new().unwrap();
    let o = run_in(dir.path(), &["approx-suite", "--family", "truncated-hinge"]);
    assert!(o.status.success());
    let axioms = csv_rows(dir.path(), "axioms.csv");
    let a1 = axioms.iter().find(|r| r[0] == "A1").unwrap();
    assert_eq!(a1[1], "false");
    assert!(axioms.iter().filter(|r| r[0] != "A1").all(|r| r[1] == "true"), "{axioms:?}");
    let limits = csv_rows(dir.path(), "limits.csv");
    let at_zero = limits.iter().find(|r| r[0] == "0").unwrap();
    assert_eq!(at_zero[2], "0.5");
}

#[test]
fn assert_flag_turns_a_failed_certificate_into_exit_4() {
    let dir = TempDir::new().unwrap();
    let file = instance("l0-scalar.toml");
    let args = ["check", file.to_str().unwrap(), "--point", "0.5"];
    assert!(run_in(dir.path(), &args).status.success());
    let mut strict = args.to_vec();
    strict.push("--assert");
    assert_eq!(run_in(dir.path(), &strict).status.code(), Some(4));
    let at_min = ["check", file.to_str().unwrap(), "--point", "1", "--assert"];
    assert!(run_in(dir.path(), &at_min).status.success());
}

#[test]
fn output_directory_comes_from_the_environment() {
    let dir = TempDir::new().unwrap();
    let o = hvopt(&["approx-suite"]).env("HVOPT_OUT", dir.path()).output().unwrap();
    assert!(o.status.success());
    assert!(dir.path().join("axioms.csv").exists());
}

#[test]
fn single_thread_reports_match_the_parallel_ones() {
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let file = instance("budget-plane.toml");
    let base = ["bruteforce", file.to_str().unwrap(), "--grid", "41"];
    assert!(run_in(a.path(), &base).status.success());
    let mut seq = base.to_vec();
    seq.extend(["--threads", "1"]);
    assert!(run_in(b.path(), &seq).status.success());
    for name in ["grid.csv", "equivalence.csv", "bruteforce.json", "bruteforce.txt"] {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name}");
    }
}
